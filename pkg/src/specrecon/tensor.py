"""Differentiable primitives on NCHW arrays.

Every network tensor is a plain C-contiguous ``numpy.ndarray`` of shape
``(n, c, h, w)``. Convolution weights are ``(c_out, c_in, kh, kw)`` with a
length ``c_out`` bias. All ops follow the dtype of their input, so the same
code runs in float32 for training and float64 for gradient checks.

Convolution is cross-correlation with no padding, stride 1 and no dilation.
"""
import numpy as np

from . import kernels
from .errors import ShapeError

#: Upper bound on im2col buffer size (elements); larger batches are chunked.
MAX_COL_ELEMENTS = 1 << 23


def _check4(x, name="x"):
    if x.ndim != 4:
        raise ShapeError(f"{name} must be 4-D (n, c, h, w), got shape {x.shape}", axis="ndim")


def _check_filter(x, weight, bias):
    _check4(x)
    if weight.ndim != 4:
        raise ShapeError(f"weight must be 4-D (c_out, c_in, kh, kw), got {weight.shape}", axis="ndim")
    co, ci, kh, kw = weight.shape
    if kh < 1 or kw < 1 or kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"kernel size must be odd and >= 1, got {kh}x{kw}", axis="kernel")
    if bias is not None and bias.shape != (co,):
        raise ShapeError(f"bias must have shape ({co},), got {bias.shape}", axis="c_out")
    if x.shape[1] != ci:
        raise ShapeError(f"input has {x.shape[1]} channels, filter expects {ci}", axis="c")
    if x.shape[2] < kh:
        raise ShapeError(f"input height {x.shape[2]} smaller than kernel height {kh}", axis="h")
    if x.shape[3] < kw:
        raise ShapeError(f"input width {x.shape[3]} smaller than kernel width {kw}", axis="w")


def conv_output_shape(x_shape, w_shape):
    n, _, h, w = x_shape
    co, _, kh, kw = w_shape
    return n, co, h - kh + 1, w - kw + 1


def _sample_chunks(n, per_sample):
    step = max(1, MAX_COL_ELEMENTS // max(per_sample, 1))
    for s0 in range(0, n, step):
        yield s0, min(n, s0 + step)


def conv2d_valid_forward(x, weight, bias, method="gemm"):
    """Valid cross-correlation plus bias.

    ``method="gemm"`` packs windows with im2col and issues one matrix multiply
    per chunk of samples; ``method="direct"`` runs the naive loop nest and is
    kept as the reference route.
    """
    _check_filter(x, weight, bias)
    x = np.ascontiguousarray(x)
    n, c, h, w = x.shape
    co, _, kh, kw = weight.shape
    oh, ow = h - kh + 1, w - kw + 1
    out = np.empty((n, co, oh, ow), dtype=x.dtype)
    if method == "direct":
        return kernels.conv_direct(x, weight.astype(x.dtype, copy=False),
                                   bias.astype(x.dtype, copy=False), out)
    if method != "gemm":
        raise ValueError(f"unknown conv method {method!r}")

    w2 = weight.reshape(co, -1).astype(x.dtype, copy=False)
    if kh == 1 and kw == 1:
        np.matmul(w2, x.reshape(n, c, h * w), out=out.reshape(n, co, oh * ow))
    else:
        K, L = c * kh * kw, oh * ow
        for s0, s1 in _sample_chunks(n, K * L):
            col = np.empty((K, (s1 - s0) * L), dtype=x.dtype)
            kernels.im2col(x[s0:s1], kh, kw, col)
            y = w2 @ col
            out[s0:s1] = y.reshape(co, s1 - s0, oh, ow).transpose(1, 0, 2, 3)
    out += bias.astype(x.dtype, copy=False)[None, :, None, None]
    return out


def conv2d_valid_backward(x, weight, grad_out):
    """Gradients of a scalar loss w.r.t. input, weight and bias.

    Returns ``(grad_input, grad_weight, grad_bias)``.
    """
    _check_filter(x, weight, None)
    expected = conv_output_shape(x.shape, weight.shape)
    if grad_out.shape != expected:
        axis = next((a for a, g, e in zip("nchw", grad_out.shape, expected) if g != e), "ndim")
        raise ShapeError(f"grad_out shape {grad_out.shape} != forward output {expected}", axis=axis)
    x = np.ascontiguousarray(x)
    grad_out = np.ascontiguousarray(grad_out, dtype=x.dtype)
    n, c, h, w = x.shape
    co, _, kh, kw = weight.shape
    oh, ow = expected[2:]
    w2 = weight.reshape(co, -1).astype(x.dtype, copy=False)

    grad_b = grad_out.sum(axis=(0, 2, 3))
    gx = np.zeros_like(x)
    if kh == 1 and kw == 1:
        g3 = grad_out.reshape(n, co, oh * ow)
        x3 = x.reshape(n, c, h * w)
        gw = np.zeros((co, c), dtype=x.dtype)
        for s in range(n):
            gw += g3[s] @ x3[s].T
        np.matmul(w2.T, g3, out=gx.reshape(n, c, h * w))
        return gx, gw.reshape(weight.shape), grad_b

    K, L = c * kh * kw, oh * ow
    gw = np.zeros((co, K), dtype=x.dtype)
    for s0, s1 in _sample_chunks(n, K * L):
        m = s1 - s0
        col = np.empty((K, m * L), dtype=x.dtype)
        kernels.im2col(x[s0:s1], kh, kw, col)
        g2 = grad_out[s0:s1].transpose(1, 0, 2, 3).reshape(co, m * L)
        gw += g2 @ col.T
        gcol = np.matmul(w2.T, g2, out=col)
        kernels.col2im(gcol, kh, kw, gx[s0:s1])
    return gx, gw.reshape(weight.shape), grad_b


def _check_slopes(x, slopes):
    _check4(x)
    if slopes.ndim != 1 or slopes.shape[0] != x.shape[1]:
        raise ShapeError(f"expected {x.shape[1]} PReLU slopes, got shape {slopes.shape}", axis="c")


def prelu_forward(x, slopes):
    """``x`` where ``x > 0``, ``slopes[c] * x`` elsewhere (zero takes the slope branch)."""
    _check_slopes(x, slopes)
    x = np.ascontiguousarray(x)
    return kernels.prelu_fwd(x, slopes.astype(x.dtype, copy=False), np.empty_like(x))


def prelu_backward(x, slopes, grad_out):
    """Returns ``(grad_x, grad_slopes)``."""
    _check_slopes(x, slopes)
    if grad_out.shape != x.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} != input shape {x.shape}")
    x = np.ascontiguousarray(x)
    grad_out = np.ascontiguousarray(grad_out, dtype=x.dtype)
    gx = np.empty_like(x)
    ga = np.zeros(x.shape[1], dtype=x.dtype)
    kernels.prelu_bwd(x, slopes.astype(x.dtype, copy=False), grad_out, gx, ga)
    return gx, ga


def _crop_offsets(shape, target_h, target_w):
    h, w = shape[2], shape[3]
    if target_h > h or target_w > w:
        raise ShapeError(f"crop target {target_h}x{target_w} larger than source {h}x{w}",
                         axis="h" if target_h > h else "w")
    if (h - target_h) % 2 or (w - target_w) % 2:
        raise ShapeError(f"crop {h}x{w} -> {target_h}x{target_w} is not symmetric",
                         axis="h" if (h - target_h) % 2 else "w")
    return (h - target_h) // 2, (w - target_w) // 2


def center_crop(x, target_h, target_w):
    """Centered spatial window of ``x`` (a copy)."""
    _check4(x)
    dy, dx = _crop_offsets(x.shape, target_h, target_w)
    return x[:, :, dy:dy + target_h, dx:dx + target_w].copy()


def center_crop_backward(grad_out, source_shape):
    """Route ``grad_out`` to the interior window of a zero array of ``source_shape``."""
    dy, dx = _crop_offsets(source_shape, grad_out.shape[2], grad_out.shape[3])
    g = np.zeros(source_shape, dtype=grad_out.dtype)
    g[:, :, dy:dy + grad_out.shape[2], dx:dx + grad_out.shape[3]] = grad_out
    return g


def add(x, y):
    if x.shape != y.shape:
        axis = next((a for a, p, q in zip("nchw", x.shape, y.shape) if p != q), "ndim")
        raise ShapeError(f"cannot add shapes {x.shape} and {y.shape}", axis=axis)
    return x + y
