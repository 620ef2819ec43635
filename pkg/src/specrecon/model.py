"""The shallow residual spectral-reconstruction network.

Topology (all convolutions valid, PReLU after every conv except ``recon`` and
``skip``)::

    rgb -> feat 5x5 (F) -> shrink 1x1 (B) -> [res block] x N -> expand 1x1 (F)
        -> recon 5x5 (31) --+--> output
    rgb -> skip 7x7 (31) -> center crop --+

A residual block is ``conv 3x3 -> PReLU -> conv 3x3 -> PReLU`` plus its input
center-cropped by two pixels per side. With the defaults (F=128, B=32, N=2)
the main path shrinks every side by 8 pixels: a 36x36 patch maps to 20x20.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .tensor import (add, center_crop, center_crop_backward, conv2d_valid_backward,
                     conv2d_valid_forward, prelu_backward, prelu_forward)

PRELU_INIT = 0.25

#: Number of forward passes run since import (or the last reset).
pass_counter = {"forward": 0}


@dataclass(frozen=True)
class ModelConfig:
    n_res_blocks: int = 2
    n_features: int = 128
    n_bottleneck: int = 32
    out_channels: int = 31
    # Adds the pre-shrink feature maps (cropped) to the expansion output.
    long_skip: bool = False

    def __post_init__(self):
        if self.n_res_blocks < 0:
            raise ValueError("n_res_blocks must be >= 0")
        if not self.n_features >= self.n_bottleneck >= 1:
            raise ValueError("need n_features >= n_bottleneck >= 1")
        if self.out_channels < 1:
            raise ValueError("out_channels must be >= 1")


def layer_table(config):
    """Ordered ``(name, c_out, c_in, k, has_prelu)`` rows for every conv layer."""
    F, B = config.n_features, config.n_bottleneck
    rows = [("feat", F, 3, 5, True), ("shrink", B, F, 1, True)]
    for i in range(1, config.n_res_blocks + 1):
        rows.append((f"res{i}_conva", B, B, 3, True))
        rows.append((f"res{i}_convb", B, B, 3, True))
    rows += [
        ("expand", F, B, 1, True),
        ("recon", config.out_channels, F, 5, False),
        ("skip", config.out_channels, 3, 7, False),
    ]
    return rows


def param_shapes(config):
    """Ordered mapping of parameter name to shape; this order is the checkpoint order."""
    shapes = {}
    for name, co, ci, k, act in layer_table(config):
        shapes[f"{name}.weight"] = (co, ci, k, k)
        shapes[f"{name}.bias"] = (co,)
        if act:
            shapes[f"{name}.prelu"] = (co,)
    return shapes


def receptive_field(config):
    return 1 + sum(k - 1 for name, _, _, k, _ in layer_table(config) if name != "skip")


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.tensors[name]

    def __setitem__(self, name, value):
        self.tensors[name] = value

    def __iter__(self):
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def astype(self, dtype):
        return ModelParams(self.config, {k: v.astype(dtype) for k, v in self.tensors.items()})

    def copy(self):
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def validate(self):
        expected = param_shapes(self.config)
        if list(self.tensors) != list(expected):
            raise ShapeError(f"parameter names {list(self.tensors)} do not match config")
        for k, shape in expected.items():
            if self.tensors[k].shape != shape:
                raise ShapeError(f"{k} has shape {self.tensors[k].shape}, expected {shape}", axis=k)


def init_params(config=None, seed=0, dtype=np.float32):
    """Xavier-uniform weights, zero biases, PReLU slopes at 0.25."""
    config = config or ModelConfig()
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, co, ci, k, act in layer_table(config):
        fan_in, fan_out = ci * k * k, co * k * k
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        tensors[f"{name}.weight"] = rng.uniform(-bound, bound, (co, ci, k, k)).astype(dtype)
        tensors[f"{name}.bias"] = np.zeros(co, dtype=dtype)
        if act:
            tensors[f"{name}.prelu"] = np.full(co, PRELU_INIT, dtype=dtype)
    return ModelParams(config, tensors)


def zeros_like_params(params):
    return {k: np.zeros_like(v) for k, v in params.items()}


def _check_input(params, rgb):
    if rgb.ndim != 4:
        raise ShapeError(f"input must be (n, 3, h, w), got {rgb.shape}", axis="ndim")
    if rgb.shape[1] != 3:
        raise ShapeError(f"input must have 3 channels, got {rgb.shape[1]}", axis="c")
    rf = receptive_field(params.config)
    for axis, size in zip("hw", rgb.shape[2:]):
        if size < rf:
            raise ShapeError(f"input {axis}={size} smaller than receptive field {rf}", axis=axis)


def forward(params, rgb, return_cache=False):
    """Run the network on ``rgb`` of shape ``(n, 3, h, w)``.

    Output has shape ``(n, out_channels, h - rf + 1, w - rf + 1)``. With
    ``return_cache`` the intermediate activations needed by :func:`backward`
    are returned as well.
    """
    _check_input(params, rgb)
    pass_counter["forward"] += 1
    cfg = params.config
    rgb = np.ascontiguousarray(rgb, dtype=params.dtype)
    cache = {"rgb": rgb}

    def conv(name, x):
        return conv2d_valid_forward(x, params[f"{name}.weight"], params[f"{name}.bias"])

    def conv_act(name, x):
        z = conv(name, x)
        cache[name] = (x, z)
        return prelu_forward(z, params[f"{name}.prelu"])

    h1 = conv_act("feat", rgb)
    r = conv_act("shrink", h1)
    for i in range(1, cfg.n_res_blocks + 1):
        t = conv_act(f"res{i}_conva", r)
        t = conv_act(f"res{i}_convb", t)
        r = add(t, center_crop(r, t.shape[2], t.shape[3]))
    h3 = conv_act("expand", r)
    if cfg.long_skip:
        cache["long_skip"] = h1.shape
        h3 = add(h3, center_crop(h1, h3.shape[2], h3.shape[3]))
    cache["recon"] = (h3, None)
    main = conv("recon", h3)
    sk = conv("skip", rgb)
    cache["skip_shape"] = sk.shape
    out = add(main, center_crop(sk, main.shape[2], main.shape[3]))
    if return_cache:
        return out, cache
    return out


def backward(params, rgb, grad_out, cache=None, return_input_grad=False):
    """Gradients of a scalar loss w.r.t. every parameter, given ``dL/d(output)``.

    Returns a dict keyed like ``params`` (and the input gradient as a second
    value when ``return_input_grad`` is set). Pass the ``cache`` from
    ``forward(..., return_cache=True)`` to skip recomputing the forward pass.
    """
    if cache is None:
        out, cache = forward(params, rgb, return_cache=True)
        out_shape = out.shape
    else:
        rgb = cache["rgb"]
        n, _, h, w = rgb.shape
        s = receptive_field(params.config) - 1
        out_shape = (n, params.config.out_channels, h - s, w - s)
    if grad_out.shape != tuple(out_shape):
        raise ShapeError(f"grad_out shape {grad_out.shape} != output shape {tuple(out_shape)}")
    cfg = params.config
    grad_out = np.ascontiguousarray(grad_out, dtype=params.dtype)
    grads = {}

    def conv_back(name, x, g):
        gx, gw, gb = conv2d_valid_backward(x, params[f"{name}.weight"], g)
        grads[f"{name}.weight"] = gw
        grads[f"{name}.bias"] = gb
        return gx

    def act_back(name, g):
        x, z = cache[name]
        gz, ga = prelu_backward(z, params[f"{name}.prelu"], g)
        grads[f"{name}.prelu"] = ga
        return conv_back(name, x, gz)

    g_rgb = conv_back("skip", rgb, center_crop_backward(grad_out, cache["skip_shape"]))
    g_h3 = conv_back("recon", cache["recon"][0], grad_out)
    g_r = act_back("expand", g_h3)
    for i in range(cfg.n_res_blocks, 0, -1):
        r_in = cache[f"res{i}_conva"][0]
        g_t = act_back(f"res{i}_convb", g_r)
        g_t = act_back(f"res{i}_conva", g_t)
        g_r = g_t + center_crop_backward(g_r, r_in.shape)
    g_h1 = act_back("shrink", g_r)
    if cfg.long_skip:
        g_h1 += center_crop_backward(g_h3, cache["long_skip"])
    g_rgb += act_back("feat", g_h1)

    ordered = {k: grads[k] for k in params}
    if return_input_grad:
        return ordered, g_rgb
    return ordered


def l2_loss(pred, label):
    """Mean squared error and its gradient w.r.t. ``pred``."""
    if pred.shape != label.shape:
        raise ShapeError(f"prediction shape {pred.shape} != label shape {label.shape}")
    diff = pred - label.astype(pred.dtype, copy=False)
    loss = float(np.mean(np.square(diff, dtype=np.float64)))
    return loss, (2.0 / diff.size) * diff
