import numpy as np
import pytest

from metriclab.autograd import Tensor, as_tensor, backward
from metriclab.errors import ConfigError, ShapeError
from metriclab.nn import (
    BatchNorm,
    CenterPredictor,
    Linear,
    MLP,
    load_checkpoint,
    save_checkpoint,
)

from fd_utils import central_diff, max_rel_err


def test_linear_applies_affine_map(rng):
    layer = Linear(3, 2, rng)
    layer.weight.data[:] = [[1.0, 0.0, 2.0], [0.0, -1.0, 0.0]]
    layer.bias.data[:] = [[1.0], [2.0]]
    x = np.array([[1.0], [2.0], [3.0]])
    out = layer(as_tensor(x))
    assert np.array_equal(out.data, [[8.0], [0.0]])


def test_linear_init_bounds(rng):
    layer = Linear(16, 64, rng)
    bound = np.sqrt(1.0 / 16)
    assert np.abs(layer.weight.data).max() <= bound
    assert np.array_equal(layer.bias.data, np.zeros((64, 1)))


def test_linear_rejects_wrong_input_rows(rng):
    layer = Linear(3, 2, rng)
    with pytest.raises(ShapeError):
        layer(as_tensor(np.zeros((4, 1))))


def test_batchnorm_two_point_batch_closed_form():
    bn = BatchNorm(1)
    out = bn(as_tensor([[1.0, 3.0]]))
    expect = 1.0 / np.sqrt(1.0 + bn.eps)  # mean 2, biased var 1
    assert out.data[0, 0] == pytest.approx(-expect, rel=1e-12)
    assert out.data[0, 1] == pytest.approx(expect, rel=1e-12)


@pytest.mark.parametrize("n", [2, 4, 16, 64])
def test_batchnorm_standardizes_batch(n, rng):
    bn = BatchNorm(5)
    x = rng.normal(3.0, 2.5, (5, n))
    out = bn(as_tensor(x)).data
    assert np.abs(out.mean(axis=1)).max() < 1e-6
    # biased variance of the output approaches 1 as eps vanishes
    assert np.abs(out.var(axis=1) - 1.0).max() < 1e-4


def test_batchnorm_constant_batch_maps_to_zero():
    bn = BatchNorm(2)
    out = bn(as_tensor(np.full((2, 6), 7.0)))
    assert np.array_equal(out.data, np.zeros((2, 6)))


def test_batchnorm_train_needs_two_samples():
    bn = BatchNorm(2)
    with pytest.raises(ShapeError):
        bn(as_tensor(np.ones((2, 1))))


def test_batchnorm_eval_identity_at_default_stats():
    bn = BatchNorm(3)
    bn.eval()
    x = np.array([[1.0, -2.0], [0.5, 4.0], [0.0, 9.0]])
    out = bn(as_tensor(x)).data
    assert np.allclose(out, x / np.sqrt(1.0 + bn.eps), atol=1e-12)


def test_batchnorm_updates_running_stats_only_in_train(rng):
    bn = BatchNorm(2)
    x = rng.normal(5.0, 1.0, (2, 8))
    bn(as_tensor(x))
    rm, rv = bn.running_mean.copy(), bn.running_var.copy()
    assert not np.array_equal(rm, np.zeros((2, 1)))
    bn.eval()
    bn(as_tensor(rng.normal(0, 1, (2, 8))))
    assert np.array_equal(bn.running_mean, rm)
    assert np.array_equal(bn.running_var, rv)


def test_batchnorm_gradients_match_fd(rng):
    bn = BatchNorm(3)
    bn.gamma.data[:] = rng.uniform(0.5, 1.5, (3, 1))
    bn.beta.data[:] = rng.uniform(-0.5, 0.5, (3, 1))
    x = Tensor(rng.uniform(-2, 2, (3, 6)), requires_grad=True)
    r = as_tensor(rng.uniform(-1, 1, (3, 6)))

    def forward():
        out = bn(x)
        return (out * r + out * out).sum()

    analytic = backward(forward())
    for leaf in (x, bn.gamma, bn.beta):
        assert max_rel_err(analytic[leaf], central_diff(forward, leaf)) < 1e-4


def test_mlp_shapes_and_gradients(rng):
    mlp = MLP(4, (8, 8), 3, rng)
    x = Tensor(rng.uniform(-2, 2, (4, 5)), requires_grad=True)
    out = mlp(x)
    assert out.shape == (3, 5)
    grads = backward((out * out).sum())
    for name, p in mlp.params():
        assert p in grads, f"parameter {name} got no gradient"
        assert np.linalg.norm(grads[p]) > 0, f"parameter {name} gradient is zero"


def test_predictor_identity_init_is_exact_identity(rng):
    pred = CenterPredictor(dim=3, hidden=8, rng=rng, depth=2)
    pred.init_identity()
    x = rng.uniform(-5, 5, (3, 7))
    assert np.allclose(pred(as_tensor(x)).data, x, atol=1e-12)


def test_predictor_identity_init_depth4(rng):
    pred = CenterPredictor(dim=2, hidden=6, rng=rng, depth=4)
    pred.init_identity()
    x = rng.uniform(-5, 5, (2, 9))
    assert np.allclose(pred(as_tensor(x)).data, x, atol=1e-12)


def test_predictor_identity_init_needs_width(rng):
    pred = CenterPredictor(dim=4, hidden=6, rng=rng, depth=2)
    with pytest.raises(ConfigError):
        pred.init_identity()


def test_predictor_rejects_bad_depth(rng):
    with pytest.raises(ConfigError):
        CenterPredictor(dim=3, hidden=8, rng=rng, depth=3)


def test_predictor_bn_flags_off_matches_plain_mlp(rng):
    pred = CenterPredictor(dim=3, hidden=8, rng=np.random.default_rng(0), depth=2)
    twin = MLP(3, (8,), 3, np.random.default_rng(0))
    x = rng.uniform(-1, 1, (3, 5))
    assert np.allclose(pred(as_tensor(x)).data, twin(as_tensor(x)).data, atol=1e-12)


def test_predictor_bn_variants_forward_and_grads(rng):
    pred = CenterPredictor(dim=3, hidden=8, rng=rng, depth=2, bn_hidden=True, bn_output=True)
    x = Tensor(rng.uniform(-2, 2, (3, 6)), requires_grad=True)
    out = pred(x)
    assert out.shape == (3, 6)
    grads = backward((out * out).sum())
    for name, p in pred.params():
        assert p in grads and np.linalg.norm(grads[p]) > 0, name


def test_predictor_eval_mode_uses_running_stats(rng):
    pred = CenterPredictor(dim=2, hidden=4, rng=rng, depth=2, bn_hidden=True)
    x = rng.uniform(-1, 1, (2, 6))
    pred(as_tensor(x))  # train-mode pass updates running stats
    pred.eval()
    single = pred(as_tensor(x[:, :1]))  # eval works on batch of 1
    assert single.shape == (2, 1)


def test_checkpoint_round_trip_exact(tmp_path, rng):
    mlp = MLP(3, (5,), 2, rng)
    named = {f"extractor.{n}": p for n, p in mlp.params()}
    named["centers"] = rng.normal(0, 1, (2, 4))
    path = tmp_path / "ckpt.txt"
    save_checkpoint(path, named)
    loaded = load_checkpoint(path)
    assert set(loaded) == set(named)
    for name, ref in named.items():
        ref = ref.data if hasattr(ref, "data") else ref
        assert np.array_equal(loaded[name], ref), name


def test_checkpoint_rejects_wrong_header(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("something else\n")
    with pytest.raises(ConfigError):
        load_checkpoint(p)
