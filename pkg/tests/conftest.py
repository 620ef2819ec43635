import numpy as np
import pytest


def brute_conv(x, w, b):
    """Quadruple-loop valid cross-correlation, pure Python arithmetic."""
    n, c, h, wd = x.shape
    co, _, kh, kw = w.shape
    out = np.zeros((n, co, h - kh + 1, wd - kw + 1))
    for s in range(n):
        for o in range(co):
            for i in range(h - kh + 1):
                for j in range(wd - kw + 1):
                    acc = float(b[o])
                    for ci in range(c):
                        for p in range(kh):
                            for q in range(kw):
                                acc += float(w[o, ci, p, q]) * float(x[s, ci, i + p, j + q])
                    out[s, o, i, j] = acc
    return out


def fd_grad(f, arr, step=1e-6):
    """Central differences of scalar f() over every entry of arr (perturbed in place)."""
    g = np.zeros_like(arr, dtype=np.float64)
    flat, gflat = arr.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f()
        flat[i] = orig - step
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * step)
    return g


def max_rel(a, b, floor=1e-3):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def smooth_noise(rng, shape, passes=3):
    """Spatially correlated noise in [0, 1] via repeated 3x3 box blurs (edge-padded)."""
    x = rng.uniform(0, 1, shape)
    for _ in range(passes):
        p = np.pad(x, [(0, 0)] * (x.ndim - 2) + [(1, 1), (1, 1)], mode="edge")
        x = sum(p[..., i:i + shape[-2], j:j + shape[-1]] for i in range(3) for j in range(3)) / 9
    lo = x.min(axis=(-2, -1), keepdims=True)
    hi = x.max(axis=(-2, -1), keepdims=True)
    return (x - lo) / (hi - lo)


def small_config(**kw):
    from specrecon.model import ModelConfig
    base = dict(n_features=8, n_bottleneck=4, out_channels=5)
    base.update(kw)
    return ModelConfig(**base)
