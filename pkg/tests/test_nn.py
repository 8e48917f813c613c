import math
import os

import numpy as np
import pytest

from voldiff.check import gradcheck
from voldiff.nn import Adam, MlpSpec, NonFiniteGradient, ParameterStore, cosine_lr, init_mlp, mlp_forward
from voldiff.nn import tensor as tt
from voldiff.nn.checkpoint import CheckpointError, load_checkpoint, save_checkpoint


def _store(spec, seed=0, dtype=np.float64):
    s = ParameterStore(dtype)
    init_mlp(s, "net", spec, np.random.default_rng(seed))
    return s


def test_zero_weights_give_zero_output():
    spec = MlpSpec((4,), (8, 8), out_width=3)
    s = _store(spec)
    s.load_state({k: np.zeros_like(v) for k, v in s.state().items()})
    out = mlp_forward(spec, s, "net", [np.random.default_rng(0).normal(size=(5, 4))])
    assert np.all(out.data == 0)


def test_identity_linear_layer():
    spec = MlpSpec((3,), (), out_width=3)
    s = _store(spec)
    s.load_state({"net.out.in0": np.eye(3), "net.out.b": np.zeros(3)})
    x = np.random.default_rng(1).normal(size=(6, 3))
    np.testing.assert_array_equal(mlp_forward(spec, s, "net", [x]).data, x)


def test_two_layer_relu_matches_plain_numpy():
    spec = MlpSpec((5,), (7,), out_width=2)
    s = _store(spec, seed=4)
    x = np.random.default_rng(2).normal(size=(9, 5))
    st = s.state()
    h = np.maximum(x @ st["net.l0.in0"] + st["net.l0.b"], 0.0)
    ref = h @ st["net.out.w"] + st["net.out.b"]
    np.testing.assert_allclose(mlp_forward(spec, s, "net", [x]).data, ref, rtol=0, atol=1e-12)


def test_per_ray_groups_broadcast_over_samples():
    spec = MlpSpec((3, 2), (6,), out_width=1)
    s = _store(spec, seed=5)
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(4 * 5, 3))
    code = rng.normal(size=(4, 2))
    out = mlp_forward(spec, s, "net", [pts, code]).data
    ref = mlp_forward(spec, s, "net", [pts, np.repeat(code, 5, axis=0)]).data
    np.testing.assert_allclose(out, ref, atol=1e-13)


def test_skip_connection_layer():
    spec = MlpSpec((3,), (4, 4, 4), out_width=1, skips=(2,))
    s = _store(spec)
    assert "net.l2.in0" in s and "net.l2.w" in s
    assert mlp_forward(spec, s, "net", [np.ones((2, 3))]).shape == (2, 1)


def test_shape_mismatch_rejected():
    spec = MlpSpec((4,), (8,), out_width=1)
    s = _store(spec)
    with pytest.raises(ValueError):
        mlp_forward(spec, s, "net", [np.zeros((3, 5))])
    with pytest.raises(ValueError):
        MlpSpec((0,), (8,))


def test_identity_gradient_passes_upstream():
    x = tt.Tensor(np.arange(4.0), requires_grad=True)
    y = x * 1.0
    g = np.array([0.5, -1.0, 2.0, 3.0])
    tt.backward(y, g)
    np.testing.assert_array_equal(x.grad, g)


def test_relu_gradient_zero_for_negative():
    x = tt.Tensor(np.array([-2.0, -0.1, 0.3]), requires_grad=True)
    tt.backward(tt.tsum(tt.relu(x)))
    np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])


def test_backward_rejects_bad_upstream_shape():
    x = tt.Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        tt.backward(x * 2.0, np.ones(4))


@pytest.mark.parametrize("seed", range(5))
def test_random_three_layer_net_gradcheck(seed):
    spec = MlpSpec((4,), (6, 6, 6), out_width=2)
    s = _store(spec, seed=seed)
    rng = np.random.default_rng(100 + seed)
    x = rng.normal(size=(3, 4))
    names = s.names()

    def fn(x, **params):
        st = ParameterStore(np.float64)
        for k in names:
            st._params[k] = params[k.replace(".", "_")]
        return tt.tsum(tt.square(mlp_forward(spec, st, "net", [x])))

    inputs = {"x": x, **{k.replace(".", "_"): v for k, v in s.state().items()}}
    assert gradcheck(fn, inputs) < 1e-4


def test_cosine_schedule_values():
    assert cosine_lr(0, 100) == pytest.approx(5e-4, abs=1e-18)
    assert cosine_lr(100, 100) == pytest.approx(0.0, abs=1e-18)
    assert cosine_lr(50, 100) == pytest.approx(2.5e-4, rel=1e-12)
    with pytest.raises(ValueError):
        cosine_lr(0, 0)
    with pytest.raises(ValueError):
        cosine_lr(101, 100)


def _one_param(value):
    s = ParameterStore(np.float64)
    s.add("w", np.asarray(value, dtype=float))
    return s


def test_adam_zero_gradient_keeps_parameters():
    s = _one_param([1.0, -2.0])
    opt = Adam(s, total_steps=10)
    s["w"].grad = np.zeros(2)
    opt.update()
    np.testing.assert_array_equal(s["w"].data, [1.0, -2.0])
    assert np.all(opt.m["w"] == 0) and np.all(opt.v["w"] == 0)


def test_adam_first_step_moves_by_learning_rate():
    s = _one_param([0.0, 0.0])
    opt = Adam(s, total_steps=10, lr0=1e-3)
    s["w"].grad = np.array([0.7, -3.0])
    opt.update()
    # m̂ = g, v̂ = g², step = lr·g/(|g| + ε)
    expect = -1e-3 * np.array([0.7, -3.0]) / (np.abs([0.7, -3.0]) + 1e-8)
    np.testing.assert_allclose(s["w"].data, expect, rtol=1e-12)


def test_adam_rejects_non_finite_gradient():
    s = _one_param([1.0])
    opt = Adam(s, total_steps=5)
    s["w"].grad = np.array([np.nan])
    with pytest.raises(NonFiniteGradient, match="'w'"):
        opt.update()
    assert s["w"].data[0] == 1.0 and opt.step == 0


def _train_steps(seed, steps=25):
    spec = MlpSpec((3,), (8, 8), out_width=1)
    s = _store(spec, seed=seed)
    opt = Adam(s, total_steps=steps)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(16, 3))
    y = np.sin(x.sum(1, keepdims=True))
    for _ in range(steps):
        s.zero_grad()
        loss = tt.mean(tt.square(mlp_forward(spec, s, "net", [x]) - y))
        tt.backward(loss)
        opt.update()
    return s.state()


def test_training_is_bit_reproducible():
    a, b = _train_steps(3), _train_steps(3)
    for k in a:
        np.testing.assert_array_equal(a[k], b[k])


def test_checkpoint_round_trip(tmp_path):
    arrays = {"a": np.arange(6.0).reshape(2, 3), "b": np.array(3.5), "c": np.zeros((0, 4))}
    p = tmp_path / "x.ckpt"
    save_checkpoint(p, arrays, {"variant": "nerf", "step": 7}, precision="float64")
    with open(p, "rb") as fh:
        assert fh.readline() == b"VOLDIFF-CKPT-1\n"
    got, manifest = load_checkpoint(p)
    assert manifest["step"] == 7 and manifest["precision"] == "float64"
    for k, v in arrays.items():
        np.testing.assert_array_equal(got[k], v)
    assert not [f for f in os.listdir(tmp_path) if f.startswith(".ckpt-")]


def test_checkpoint_rejects_foreign_file(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"NOT-A-CKPT\n{}\n")
    with pytest.raises(CheckpointError):
        load_checkpoint(p)


def test_checkpoint_rejects_truncation(tmp_path):
    p = tmp_path / "t.ckpt"
    save_checkpoint(p, {"a": np.ones(100)})
    raw = p.read_bytes()
    p.write_bytes(raw[:-40])
    with pytest.raises(CheckpointError):
        load_checkpoint(p)
