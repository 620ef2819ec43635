"""Adam, the step-decay learning-rate schedule, and the training loop."""
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ShapeError, TrainingDiverged
from .formats import load_params, save_params
from .model import backward, forward, l2_loss, receptive_field, zeros_like_params

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr0: float = 0.0005
    decay_factor: float = 0.93
    decay_every: int = 50000
    total_iters: int = 400000
    batch_size: int = 64
    patch_in: int = 36
    patch_out: int = 20
    stride: int = 20
    seed: int = 0
    log_every: int = 100
    checkpoint_every: int = 50000


def lr_at(config, iteration):
    """``lr0 * decay_factor ** floor(iteration / decay_every)``."""
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    return config.lr0 * config.decay_factor ** (iteration // config.decay_every)


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def fresh(cls, params, **hyper):
        return cls(zeros_like_params(params), zeros_like_params(params), **hyper)

    def save(self, path, iteration=0):
        arrays = {f"m/{k}": v for k, v in self.m.items()}
        arrays.update({f"v/{k}": v for k, v in self.v.items()})
        np.savez(path, t=self.t, iteration=iteration,
                 hyper=np.array([self.beta1, self.beta2, self.epsilon]), **arrays)

    @classmethod
    def load(cls, path):
        """Returns ``(state, iteration)``."""
        with np.load(path) as z:
            m = {k[2:]: z[k] for k in z.files if k.startswith("m/")}
            v = {k[2:]: z[k] for k in z.files if k.startswith("v/")}
            b1, b2, eps = z["hyper"].tolist()
            return cls(m, v, int(z["t"]), b1, b2, eps), int(z["iteration"])


def adam_step(params, grads, state, lr):
    """Bias-corrected Adam update, in place on ``params`` and ``state``."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    for k in params:
        if grads[k].shape != params[k].shape or state.m[k].shape != params[k].shape:
            raise ShapeError(f"{k}: param {params[k].shape}, grad {grads[k].shape}, "
                             f"moment {state.m[k].shape}", axis=k)
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for k in params:
        g = grads[k]
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        params[k] -= (lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)).astype(params[k].dtype)
    return params, state


@dataclass
class TrainResult:
    params: object
    state: AdamState
    history: list = field(default_factory=list)  # (iteration, lr, loss)


def _batch_rng(seed, iteration):
    # Seeding per iteration makes a resumed run draw the same batches as an uninterrupted one.
    return np.random.default_rng([seed, iteration])


def train(params, config, dataset, run_dir=None, start_iter=0, state=None, on_log=None):
    """Minimize l2 loss with Adam from ``start_iter`` up to ``config.total_iters``.

    ``params`` is not modified; the trained copy is returned in a
    :class:`TrainResult`. When ``run_dir`` is given, ``loss.csv`` receives an
    ``iter,lr,loss`` line every ``log_every`` iterations and checkpoints land
    in ``run_dir/checkpoints`` every ``checkpoint_every`` iterations and at the end.
    """
    if len(dataset) == 0:
        raise ValueError("training dataset is empty")
    shrink = receptive_field(params.config) - 1
    if config.patch_in - config.patch_out != shrink:
        raise ShapeError(f"patch_in - patch_out = {config.patch_in - config.patch_out}, "
                         f"model shrinks by {shrink}", axis="patch")
    if dataset.rgb.shape[2] != config.patch_in or dataset.label.shape[2] != config.patch_out:
        raise ShapeError(f"dataset patches {dataset.rgb.shape[2:]} -> {dataset.label.shape[2:]} "
                         f"do not match config {config.patch_in} -> {config.patch_out}", axis="patch")
    params = params.copy()
    state = state or AdamState.fresh(params)
    history = []
    loss_fh = ckpt_dir = None
    if run_dir is not None:
        run_dir = Path(run_dir)
        ckpt_dir = run_dir / "checkpoints"
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        new_file = not (run_dir / "loss.csv").exists()
        loss_fh = open(run_dir / "loss.csv", "a")
        if new_file:
            loss_fh.write("iter,lr,loss\n")
    try:
        for it in range(start_iter, config.total_iters):
            lr = lr_at(config, it)
            x, y = dataset.sample(_batch_rng(config.seed, it), config.batch_size)
            pred, cache = forward(params, x, return_cache=True)
            loss, grad = l2_loss(pred, y)
            if not math.isfinite(loss):
                raise TrainingDiverged(it, loss)
            grads = backward(params, x, grad, cache=cache)
            adam_step(params, grads, state, lr)
            history.append((it, lr, loss))
            if config.log_every and (it % config.log_every == 0 or it == config.total_iters - 1):
                log.info("iter %d lr %.6g loss %.6g", it, lr, loss)
                if loss_fh:
                    loss_fh.write(f"{it},{lr!r},{loss!r}\n")
                    loss_fh.flush()
                if on_log:
                    on_log(it, lr, loss)
            done = it + 1
            if ckpt_dir is not None and config.checkpoint_every and done % config.checkpoint_every == 0:
                save_checkpoint(ckpt_dir, params, state, done)
        last_saved = config.checkpoint_every and config.total_iters % config.checkpoint_every == 0
        if ckpt_dir is not None and config.total_iters > start_iter and not last_saved:
            save_checkpoint(ckpt_dir, params, state, config.total_iters)
    finally:
        if loss_fh:
            loss_fh.close()
    return TrainResult(params, state, history)


def checkpoint_path(ckpt_dir, iteration):
    return Path(ckpt_dir) / f"iter_{iteration:08d}.srck"


def save_checkpoint(ckpt_dir, params, state, iteration):
    path = checkpoint_path(ckpt_dir, iteration)
    save_params(params, path)
    state.save(path.with_suffix(".adam.npz"), iteration)
    return path


def load_checkpoint(path):
    """Returns ``(params, adam_state_or_None, iteration)`` for an ``iter_*.srck`` file."""
    path = Path(path)
    params = load_params(path)
    adam = path.with_suffix(".adam.npz")
    if adam.exists():
        state, iteration = AdamState.load(adam)
        return params, state, iteration
    digits = "".join(ch for ch in path.stem if ch.isdigit())
    return params, None, int(digits) if digits else 0
