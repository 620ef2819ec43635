import numpy as np
import pytest

from specrecon.errors import ShapeError
from specrecon.model import (ModelConfig, backward, forward, init_params, l2_loss, param_shapes,
                             pass_counter, receptive_field)

from conftest import fd_grad, max_rel, small_config


@pytest.fixture(scope="module")
def default_params():
    return init_params(ModelConfig(), seed=0)


@pytest.mark.parametrize("size, out", [(17, 1), (36, 20), (64, 48)])
def test_output_shapes(default_params, size, out):
    x = np.random.default_rng(0).uniform(0, 1, (1, 3, size, size)).astype(np.float32)
    assert forward(default_params, x).shape == (1, 31, out, out)


def test_non_square_batch(default_params):
    x = np.zeros((3, 3, 36, 40), np.float32)
    assert forward(default_params, x).shape == (3, 31, 20, 24)


@pytest.mark.parametrize("shape, axis", [((1, 3, 16, 36), "h"), ((1, 3, 36, 16), "w"),
                                         ((1, 4, 36, 36), "c"), ((3, 36, 36), "ndim")])
def test_rejects_bad_inputs(default_params, shape, axis):
    with pytest.raises(ShapeError) as info:
        forward(default_params, np.zeros(shape, np.float32))
    assert info.value.axis == axis


@pytest.mark.parametrize("blocks, rf", [(0, 9), (1, 13), (2, 17), (3, 21)])
def test_receptive_field_formula(blocks, rf):
    assert receptive_field(ModelConfig(n_res_blocks=blocks)) == rf


@pytest.mark.parametrize("blocks", [0, 2, 3])
def test_receptive_field_empirical(blocks):
    cfg = small_config(n_res_blocks=blocks)
    rf = receptive_field(cfg)
    params = init_params(cfg, seed=3, dtype=np.float64)
    x = np.random.default_rng(1).uniform(0, 1, (1, 3, rf + 12, rf + 12))
    g = np.zeros((1, cfg.out_channels, 13, 13))
    g[0, 2, 6, 6] = 1.0
    _, gx = backward(params, x, g, return_input_grad=True)
    rows, cols = np.nonzero(np.abs(gx[0]).sum(axis=0))
    assert rows.min() == 6 and rows.max() == 6 + rf - 1
    assert cols.min() == 6 and cols.max() == 6 + rf - 1


def test_xavier_bounds_and_init_values():
    params = init_params(ModelConfig(), seed=5)
    bound = np.sqrt(6 / (3 * 25 + 128 * 25))
    w = params["feat.weight"]
    assert np.abs(w).max() <= bound and np.abs(w).max() > 0.9 * bound
    assert not params["feat.bias"].any()
    np.testing.assert_array_equal(params["shrink.prelu"], np.full(32, 0.25, np.float32))
    assert "recon.prelu" not in params.tensors and "skip.prelu" not in params.tensors


def test_param_order_and_count():
    shapes = param_shapes(ModelConfig())
    names = list(shapes)
    assert names[:3] == ["feat.weight", "feat.bias", "feat.prelu"]
    assert names[-2:] == ["skip.weight", "skip.bias"]
    assert sum(int(np.prod(s)) for s in shapes.values()) == (
        128 * 75 + 128 * 2 + 32 * 128 + 32 * 2 + 4 * (32 * 32 * 9 + 32 * 2)
        + 128 * 32 + 128 * 2 + 31 * 128 * 25 + 31 + 31 * 3 * 49 + 31)


def test_deterministic_init_and_forward():
    a, b = init_params(seed=11), init_params(seed=11)
    for k in a:
        np.testing.assert_array_equal(a[k], b[k])
    x = np.random.default_rng(0).uniform(0, 1, (2, 3, 20, 20)).astype(np.float32)
    np.testing.assert_array_equal(forward(a, x), forward(b, x))
    assert not np.array_equal(init_params(seed=12)["feat.weight"], a["feat.weight"])


def test_zero_weights_give_bias_only_output():
    params = init_params(small_config(), seed=0, dtype=np.float64)
    for k in params:
        params[k] = np.zeros_like(params[k])
    params["recon.bias"] = np.arange(5.0)
    out = forward(params, np.random.default_rng(0).uniform(0, 1, (1, 3, 20, 20)))
    np.testing.assert_array_equal(out[0, :, 0, 0], np.arange(5.0))
    assert np.all(out == out[:, :, :1, :1])


def test_skip_only_network_is_linear():
    # With the main path zeroed the model is the cropped 7x7 skip conv: superposition holds.
    params = init_params(small_config(), seed=0, dtype=np.float64)
    params["recon.weight"] = np.zeros_like(params["recon.weight"])
    rng = np.random.default_rng(2)
    x, y = rng.standard_normal((2, 1, 3, 19, 19))
    f = lambda v: forward(params, v)
    np.testing.assert_allclose(f(2 * x + 3 * y), 2 * f(x) + 3 * f(y), rtol=1e-10, atol=1e-12)
    grads = backward(params, x, np.ones((1, 5, 3, 3)))
    assert not grads["feat.weight"].any()
    assert grads["skip.weight"].any()


@pytest.mark.parametrize("long_skip", [False, True])
def test_model_backward_finite_differences(long_skip):
    rng = np.random.default_rng(7)
    cfg = small_config(n_features=4, n_bottleneck=3, out_channels=2, n_res_blocks=1, long_skip=long_skip)
    params = init_params(cfg, seed=1, dtype=np.float64)
    for k in params:
        if not k.endswith(".weight"):
            params[k] = params[k] + rng.uniform(-0.1, 0.1, params[k].shape)
    x = rng.uniform(0, 1, (1, 3, 14, 14))
    g = rng.standard_normal((1, 2, 2, 2))
    grads, gx = backward(params, x, g, return_input_grad=True)
    f = lambda: float(np.sum(forward(params, x) * g))
    for k in ("feat.weight", "res1_convb.prelu", "expand.bias", "skip.weight"):
        assert max_rel(grads[k], fd_grad(f, params[k])) < 1e-4, k
    assert max_rel(gx, fd_grad(f, x)) < 1e-4


def test_cached_backward_matches_uncached():
    params = init_params(small_config(), seed=0, dtype=np.float64)
    x = np.random.default_rng(0).uniform(0, 1, (2, 3, 20, 20))
    out, cache = forward(params, x, return_cache=True)
    g = np.random.default_rng(1).standard_normal(out.shape)
    a, b = backward(params, x, g), backward(params, x, g, cache=cache)
    assert list(a) == list(params)
    for k in a:
        np.testing.assert_array_equal(a[k], b[k])


def test_pass_counter_counts_forward_calls():
    params = init_params(small_config(), seed=0)
    x = np.zeros((1, 3, 17, 17), np.float32)
    before = pass_counter["forward"]
    forward(params, x)
    forward(params, x)
    assert pass_counter["forward"] - before == 2


def test_l2_loss_values():
    loss, grad = l2_loss(np.array([1.0, 3.0]), np.array([0.0, 1.0]))
    assert loss == 2.5
    np.testing.assert_array_equal(grad, [1.0, 2.0])
    with pytest.raises(ShapeError):
        l2_loss(np.zeros(2), np.zeros(3))


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(n_features=4, n_bottleneck=8)
    with pytest.raises(ValueError):
        ModelConfig(n_res_blocks=-1)
