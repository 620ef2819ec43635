"""Central finite-difference checks for every backward pass, in float64."""
import contextlib
from dataclasses import dataclass
from unittest import mock

import numpy as np

from . import model as model_mod
from . import tensor
from .model import ModelConfig, backward, forward, init_params, l2_loss

REL_TOL = 1e-4
ABS_FLOOR = 1e-7
STEP = 1e-6


@dataclass
class CheckResult:
    op: str
    max_rel_err: float
    n_checked: int

    @property
    def passed(self):
        return self.max_rel_err < REL_TOL


def rel_err(analytic, numeric):
    """Relative error; below magnitude 1e-3 the denominator is clamped so the
    tolerance becomes an absolute ``ABS_FLOOR``."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), ABS_FLOOR / REL_TOL)


def numeric_grad(f, arr, indices, step=STEP, signature=None):
    """Central differences of scalar ``f()`` w.r.t. ``arr.flat[i]`` (``arr`` is perturbed in place).

    ``signature()``, when given, fingerprints the active PReLU branches; a
    difference whose two evaluations straddle a kink is retried with a step
    100x smaller (twice at most).
    """
    flat = arr.reshape(-1)
    out = []
    for i in indices:
        orig = flat[i]
        h = step
        for _ in range(3):
            flat[i] = orig + h
            up = f()
            sig_up = signature() if signature else None
            flat[i] = orig - h
            down = f()
            same = signature is None or signature() == sig_up
            flat[i] = orig
            if same:
                break
            h /= 100
        out.append((up - down) / (2 * h))
    return np.array(out)


def _worst(analytic, arr, f, rng, max_entries=None, signature=None):
    n = arr.size
    idx = np.arange(n) if max_entries is None or n <= max_entries else rng.choice(n, max_entries, replace=False)
    num = numeric_grad(f, arr, idx, signature=signature)
    ana = analytic.reshape(-1)[idx]
    return max((rel_err(a, b) for a, b in zip(ana, num)), default=0.0), len(idx)


def _away_from_zero(rng, shape, margin=1e-3):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin * 10, x)


def check_conv(rng, x_shape=(2, 3, 7, 6), w_shape=(4, 3, 3, 3), name="conv2d_valid_backward"):
    x = rng.standard_normal(x_shape)
    w = rng.standard_normal(w_shape)
    b = rng.standard_normal(w_shape[0])
    g = rng.standard_normal(tensor.conv_output_shape(x_shape, w_shape))
    gx, gw, gb = tensor.conv2d_valid_backward(x, w, g)

    def f():
        return float(np.sum(tensor.conv2d_valid_forward(x, w, b) * g))

    errs = [_worst(gx, x, f, rng), _worst(gw, w, f, rng), _worst(gb, b, f, rng)]
    return CheckResult(name, max(e for e, _ in errs), sum(n for _, n in errs))


def check_prelu(rng, shape=(2, 4, 5, 5)):
    x = _away_from_zero(rng, shape)
    a = rng.uniform(-0.5, 0.5, shape[1])
    g = rng.standard_normal(shape)
    gx, ga = tensor.prelu_backward(x, a, g)

    def f():
        return float(np.sum(tensor.prelu_forward(x, a) * g))

    errs = [_worst(gx, x, f, rng), _worst(ga, a, f, rng)]
    return CheckResult("prelu_backward", max(e for e, _ in errs), sum(n for _, n in errs))


def check_crop(rng, shape=(2, 3, 9, 7), target=(5, 3)):
    x = rng.standard_normal(shape)
    g = rng.standard_normal(shape[:2] + target)
    gx = tensor.center_crop_backward(g, shape)

    def f():
        return float(np.sum(tensor.center_crop(x, *target) * g))

    err, n = _worst(gx, x, f, rng)
    return CheckResult("center_crop_backward", err, n)


def check_add(rng, shape=(2, 3, 4, 4)):
    x, y = rng.standard_normal(shape), rng.standard_normal(shape)
    g = rng.standard_normal(shape)

    def f():
        return float(np.sum(tensor.add(x, y) * g))

    errs = [_worst(g, x, f, rng), _worst(g, y, f, rng)]
    return CheckResult("add_backward", max(e for e, _ in errs), sum(n for _, n in errs))


def check_l2(rng, shape=(2, 5, 3, 3)):
    pred, label = rng.standard_normal(shape), rng.standard_normal(shape)
    _, grad = l2_loss(pred, label)
    err, n = _worst(grad, pred, lambda: l2_loss(pred, label)[0], rng)
    return CheckResult("l2_loss", err, n)


def check_model(rng, config, input_shape=(1, 3, 20, 20), max_entries=None, name="model"):
    params = init_params(config, seed=int(rng.integers(2**31)), dtype=np.float64)
    # Nonzero biases and varied slopes so every branch of the graph carries signal.
    for k in params:
        if not k.endswith(".weight"):
            params[k] = params[k] + rng.uniform(-0.1, 0.1, params[k].shape)
    x = rng.uniform(0, 1, input_shape)
    g = rng.standard_normal(forward(params, x).shape)
    grads, gx = backward(params, x, g, return_input_grad=True)

    last = {}

    def f():
        out, cache = forward(params, x, return_cache=True)
        last["cache"] = cache
        return float(np.sum(out * g))

    def signature():
        cache = last["cache"]
        return b"".join(np.packbits(v[1] > 0).tobytes() for v in cache.values()
                        if isinstance(v, tuple) and len(v) == 2 and v[1] is not None)

    worst, total = 0.0, 0
    for k in params:
        e, n = _worst(grads[k], params[k], f, rng, max_entries, signature)
        worst, total = max(worst, e), total + n
    e, n = _worst(gx, x, f, rng, max_entries, signature)
    return CheckResult(name, max(worst, e), total + n)


def run_gradcheck(seed=0, full_width=True):
    """All checks with a seeded generator; returns a list of :class:`CheckResult`."""
    rng = np.random.default_rng(seed)
    results = [
        check_conv(rng),
        check_conv(rng, (2, 5, 4, 4), (3, 5, 1, 1), name="conv2d_valid_backward_1x1"),
        check_prelu(rng),
        check_crop(rng),
        check_add(rng),
        check_l2(rng),
        check_model(rng, ModelConfig(n_features=6, n_bottleneck=4, out_channels=5), name="model_small"),
        check_model(rng, ModelConfig(n_features=6, n_bottleneck=4, out_channels=5, long_skip=True),
                    name="model_small_long_skip"),
    ]
    if full_width:
        results.append(check_model(rng, ModelConfig(), max_entries=6, name="model_default"))
    return results


FAULTS = ("conv_backward", "prelu_backward")


@contextlib.contextmanager
def inject_fault(fault):
    """Corrupt one backward op (test hook for the checker itself)."""
    if fault is None:
        yield
        return
    if fault == "conv_backward":
        real = tensor.conv2d_valid_backward

        def bad(x, w, g):
            gx, gw, gb = real(x, w, g)
            return gx * 1.01, gw, gb

        targets = [(tensor, "conv2d_valid_backward"), (model_mod, "conv2d_valid_backward")]
    elif fault == "prelu_backward":
        real = tensor.prelu_backward

        def bad(x, a, g):
            gx, ga = real(x, a, g)
            return gx, ga * 1.01

        targets = [(tensor, "prelu_backward"), (model_mod, "prelu_backward")]
    else:
        raise ValueError(f"unknown fault {fault!r}; choose from {FAULTS}")
    with contextlib.ExitStack() as stack:
        for mod, attr in targets:
            stack.enter_context(mock.patch.object(mod, attr, bad))
        yield


def summary(results):
    lines = []
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{status} {r.op:<28} max_rel_err={r.max_rel_err:.3e} checked={r.n_checked}")
    return "\n".join(lines)
