"""Hot loops for valid convolution and PReLU.

Each kernel exists twice: a numba version (``*_nb``) and a pure-numpy version
(``*_np``). The public names at the bottom of the module are bound to one or
the other according to :data:`specrecon._accel.USE_NUMBA`; both variants stay
importable so the benchmark and the tests can compare them directly.

Column layout used by im2col/col2im: ``col[(ci*kh + p)*kw + q, s*L + i*ow + j]
= x[s, ci, i + p, j + q]`` with ``L = oh*ow``. Convolution then reduces to one
GEMM ``W.reshape(c_out, -1) @ col``.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._accel import USE_NUMBA, njit

# ---------------------------------------------------------------- im2col

@njit
def im2col_nb(x, kh, kw, col):
    n, c, h, w = x.shape
    oh = h - kh + 1
    ow = w - kw + 1
    L = oh * ow
    for ci in range(c):
        for p in range(kh):
            for q in range(kw):
                row = (ci * kh + p) * kw + q
                for s in range(n):
                    base = s * L
                    for i in range(oh):
                        off = base + i * ow
                        for j in range(ow):
                            col[row, off + j] = x[s, ci, i + p, j + q]
    return col


def im2col_np(x, kh, kw, col):
    n, c, h, w = x.shape
    oh, ow = h - kh + 1, w - kw + 1
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))  # n, c, oh, ow, kh, kw
    col.reshape(c, kh, kw, n, oh, ow)[...] = win.transpose(1, 4, 5, 0, 2, 3)
    return col


@njit
def col2im_nb(col, kh, kw, gx):
    """Scatter-add ``col`` back into ``gx`` (which must be zeroed by the caller)."""
    n, c, h, w = gx.shape
    oh = h - kh + 1
    ow = w - kw + 1
    L = oh * ow
    for s in range(n):
        base = s * L
        for ci in range(c):
            for p in range(kh):
                for q in range(kw):
                    row = (ci * kh + p) * kw + q
                    for i in range(oh):
                        off = base + i * ow
                        for j in range(ow):
                            gx[s, ci, i + p, j + q] += col[row, off + j]
    return gx


def col2im_np(col, kh, kw, gx):
    n, c, h, w = gx.shape
    oh, ow = h - kh + 1, w - kw + 1
    g = col.reshape(c, kh, kw, n, oh, ow)
    for p in range(kh):
        for q in range(kw):
            gx[:, :, p:p + oh, q:q + ow] += g[:, p, q].transpose(1, 0, 2, 3)
    return gx


# ---------------------------------------------------------------- direct conv

@njit
def conv_direct_nb(x, weight, bias, out):
    n, c, h, w = x.shape
    co, _, kh, kw = weight.shape
    oh = h - kh + 1
    ow = w - kw + 1
    for s in range(n):
        for o in range(co):
            for i in range(oh):
                for j in range(ow):
                    acc = bias[o] * 0
                    for ci in range(c):
                        for p in range(kh):
                            for q in range(kw):
                                acc += weight[o, ci, p, q] * x[s, ci, i + p, j + q]
                    out[s, o, i, j] = acc + bias[o]
    return out


def conv_direct_np(x, weight, bias, out):
    kh, kw = weight.shape[2:]
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    out[...] = np.einsum("ncijpq,ocpq->noij", win, weight, optimize=False)
    out += bias[None, :, None, None]
    return out


# ---------------------------------------------------------------- PReLU

@njit
def prelu_fwd_nb(x, a, out):
    n, c, h, w = x.shape
    for s in range(n):
        for ci in range(c):
            slope = a[ci]
            for i in range(h):
                for j in range(w):
                    v = x[s, ci, i, j]
                    out[s, ci, i, j] = v if v > 0 else slope * v
    return out


def prelu_fwd_np(x, a, out):
    np.multiply(x, a[None, :, None, None], out=out)
    np.copyto(out, x, where=x > 0)
    return out


@njit
def prelu_bwd_nb(x, a, g, gx, ga):
    n, c, h, w = x.shape
    for ci in range(c):
        slope = a[ci]
        acc = ga[ci] * 0
        for s in range(n):
            for i in range(h):
                for j in range(w):
                    v = x[s, ci, i, j]
                    if v > 0:
                        gx[s, ci, i, j] = g[s, ci, i, j]
                    else:
                        gx[s, ci, i, j] = slope * g[s, ci, i, j]
                        acc += v * g[s, ci, i, j]
        ga[ci] = acc
    return gx, ga


def prelu_bwd_np(x, a, g, gx, ga):
    pos = x > 0
    np.multiply(g, a[None, :, None, None], out=gx)
    np.copyto(gx, g, where=pos)
    ga[...] = np.where(pos, 0, x * g).sum(axis=(0, 2, 3))
    return gx, ga


if USE_NUMBA:
    im2col, col2im, conv_direct = im2col_nb, col2im_nb, conv_direct_nb
    prelu_fwd, prelu_bwd = prelu_fwd_nb, prelu_bwd_nb
else:
    im2col, col2im, conv_direct = im2col_np, col2im_np, conv_direct_np
    prelu_fwd, prelu_bwd = prelu_fwd_np, prelu_bwd_np

BACKEND = "numba" if USE_NUMBA else "numpy"
