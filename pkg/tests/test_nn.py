import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gfnkit import rng
from gfnkit.nn import (MlpSpec, Schedule, adam_init, adam_step, ema_init, ema_update, grad, load_checkpoint,
                       logsumexp, masked_log_softmax, mlp_forward, mlp_init, numerical_grad,
                       save_checkpoint, schedule_value)
from gfnkit.nn.autograd import Tensor


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


# -- autograd ------------------------------------------------------------------

def test_square_gradient():
    value, g = grad(lambda p: p["w"].square().sum(), {"w": np.array(3.0)})
    assert value == 9.0 and g["w"] == 6.0


def test_constant_has_zero_gradient():
    _, g = grad(lambda p: Tensor(5.0) + (p["w"] * 0.0).sum(), {"w": np.ones(3)})
    assert np.all(g["w"] == 0)


def test_matmul_relu_logsumexp_against_finite_differences():
    gen = rng.generator(rng.key(1))
    params = {"a": gen.normal(size=(4, 3)), "b": gen.normal(size=(3, 5))}
    mask = gen.random((4, 5)) < 0.7
    mask[:, 0] = True

    def f(p):
        h = (p["a"] @ p["b"]).relu()
        return (logsumexp(h, axis=1, mask=mask) + masked_log_softmax(h, mask)[:, 0]).sum()

    _, g = grad(f, params)
    num = numerical_grad(lambda p: f({k: Tensor(v) for k, v in p.items()}).item(), params)
    for k in params:
        assert np.allclose(g[k], num[k], rtol=1e-4, atol=1e-7)


def test_getitem_gather_gradient_accumulates():
    _, g = grad(lambda p: p["x"][np.array([0, 0, 2])].sum(), {"x": np.zeros(3)})
    assert g["x"].tolist() == [2.0, 0.0, 1.0]


def test_non_finite_loss_raises():
    with pytest.raises(FloatingPointError):
        grad(lambda p: p["x"] * np.inf, {"x": np.array(1.0)})


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31))
def test_masked_log_softmax_finite_on_fuzzed_logits(width, seed):
    gen = np.random.default_rng(seed)
    logits = gen.normal(scale=gen.choice([1.0, 50.0, 700.0]), size=(8, width))
    mask = gen.random((8, width)) < 0.5
    mask[np.arange(8), gen.integers(0, width, 8)] = True
    lp = masked_log_softmax(Tensor(logits), mask).data
    assert np.all(np.isfinite(lp))
    probs = np.where(mask, np.exp(lp), 0.0)
    assert np.allclose(probs.sum(1), 1.0, atol=1e-12)
    lse = logsumexp(Tensor(logits), axis=1, mask=mask).data
    assert np.all(np.isfinite(lse))


# -- MLP -------------------------------------------------------------------------

def test_mlp_zero_width_rejected():
    with pytest.raises(ValueError):
        MlpSpec(4, (0,), 2, 2)


def test_mlp_init_deterministic_and_default_width():
    spec = MlpSpec(6, (256, 256), 3, 2)
    a, b = mlp_init(spec, rng.key(0)), mlp_init(spec, rng.key(0))
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert a["W0"].shape == (6, 256) and a["W1"].shape == (256, 256)


def test_mlp_zero_weights_give_uniform_legal_policy():
    spec = MlpSpec(3, (4,), 3, 1)
    params = {k: np.zeros_like(v) for k, v in mlp_init(spec, rng.key(0)).items()}
    heads = mlp_forward(params, np.ones((2, 3)), spec)
    mask = np.array([[True, True, False], [True, True, True]])
    p = np.exp(masked_log_softmax(Tensor(heads.fwd_logits), mask).data) * mask
    assert np.allclose(p, [[0.5, 0.5, 0], [1 / 3, 1 / 3, 1 / 3]])


def test_mlp_forward_matches_naive_matmul_and_rows_independent():
    spec = MlpSpec(5, (7, 6), 3, 2)
    params = mlp_init(spec, rng.key(2))
    x = rng.generator(rng.key(3)).normal(size=(4, 5))
    heads = mlp_forward(params, x, spec)
    h = np.maximum(naive_matmul(x, params["W0"]) + params["b0"], 0)
    h = np.maximum(naive_matmul(h, params["W1"]) + params["b1"], 0)
    out = naive_matmul(h, params["W2"]) + params["b2"]
    got = np.concatenate([heads.fwd_logits, heads.bwd_logits, heads.log_flow[:, None]], 1)
    assert np.max(np.abs(got - out)) < 1e-12
    single = mlp_forward(params, x[2:3], spec)
    assert np.allclose(single.fwd_logits[0], heads.fwd_logits[2], atol=1e-14)


# -- optimizer and schedules ---------------------------------------------------

def test_adam_first_step_hand_value():
    state = adam_init({"w": np.array(0.0)}, lr=0.1, betas=(0.9, 0.999), eps=1e-8)
    _, p = adam_step(state, {"w": np.array(0.0)}, {"w": np.array(1.0)})
    # m_hat = 1, v_hat = 1 after bias correction
    assert abs(p["w"] - (-0.1 / (1.0 + 1e-8))) < 1e-12


def test_adam_zero_gradient_keeps_params():
    params = {"w": np.array([1.0, -2.0])}
    _, p = adam_step(adam_init(params, lr=0.1), params, {"w": np.zeros(2)})
    assert np.array_equal(p["w"], params["w"])


def test_adamw_without_decay_is_adam_bitwise():
    params = {"w": np.array([0.3, -1.2])}
    g = {"w": np.array([0.5, 2.0])}
    _, a = adam_step(adam_init(params, lr=0.01, weight_decay=0.0, decoupled=True), params, g)
    _, b = adam_step(adam_init(params, lr=0.01, weight_decay=0.0, decoupled=False), params, g)
    assert a["w"].tobytes() == b["w"].tobytes()


def test_adam_lr_override_for_logz():
    params = {"w": np.array(0.0), "logZ": np.array(0.0)}
    state = adam_init(params, lr=1e-3, lr_overrides={"logZ": 0.1})
    _, p = adam_step(state, params, {"w": np.array(1.0), "logZ": np.array(1.0)})
    assert np.isclose(p["w"], -1e-3, rtol=1e-6) and np.isclose(p["logZ"], -0.1, rtol=1e-6)


def test_schedules():
    assert schedule_value(Schedule("linear", 1.0, 0.0, 0, 100), 50) == 0.5
    assert np.isclose(schedule_value(Schedule("cosine", 3e-4, 1e-5, 0, 1000), 1000), 1e-5)
    assert schedule_value(Schedule("cosine", 3e-4, 1e-5, 5000, 1000), 2500) == 1.5e-4
    assert schedule_value(Schedule("constant", 0.2), 10**6) == 0.2


def test_ema():
    live = {"w": np.array(2.0)}
    assert ema_update(ema_init({"w": np.array(0.0)}, tau=1.0), live).shadow["w"] == 2.0
    assert ema_update(ema_init({"w": np.array(0.0)}, tau=0.0), live).shadow["w"] == 0.0
    assert ema_update(ema_init({"w": np.array(0.0)}, tau=0.5), live).shadow["w"] == 1.0


def test_checkpoint_round_trip(tmp_path):
    spec = MlpSpec(3, (4,), 2, 2)
    params = mlp_init(spec, rng.key(0))
    adam = adam_init(params, lr=Schedule("cosine", 1e-3, 1e-5, 10, 100), lr_overrides={"logZ": 0.1})
    adam, params = adam_step(adam, params, {k: np.ones_like(v) for k, v in params.items()})
    path = save_checkpoint(tmp_path / "c.npz", params, adam, {"step": 1})
    p2, a2, meta = load_checkpoint(path)
    assert all(np.array_equal(params[k], p2[k]) for k in params)
    assert a2["t"] == 1
    assert all(np.array_equal(adam.m[k], a2["m"][k]) and np.array_equal(adam.v[k], a2["v"][k]) for k in params)
    assert meta["step"] == 1
