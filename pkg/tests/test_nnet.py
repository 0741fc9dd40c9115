import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from irecgan.nnet import (
    GRU,
    Adam,
    GradientTape,
    NonFiniteGradient,
    ParamSet,
    RecurrentState,
    forward_sequence,
    log_softmax,
    rnn_step,
    sigmoid,
    softmax,
    softmax_xent_grad,
)
from irecgan.nnet import checkpoint, kernels
from irecgan.nnet.kernels import get_backend

from _util import coordinate_fd_error


def test_softmax_uniform():
    assert np.allclose(softmax([0.0, 0.0, 0.0]), [1 / 3] * 3, atol=1e-12)


def test_softmax_two_to_one():
    assert np.allclose(softmax([math.log(2), 0.0]), [2 / 3, 1 / 3], atol=1e-12)


def test_softmax_rejects_empty_and_nan():
    with pytest.raises(ValueError):
        softmax([])
    with pytest.raises(ValueError):
        softmax([0.0, float("nan")])


def test_softmax_masked_entries():
    p = softmax([0.0, -np.inf, 0.0])
    assert p[1] == 0.0 and np.isclose(p[0], 0.5)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(1, 8), elements=st.floats(-50, 50)),
       st.floats(-100, 100))
def test_softmax_shift_invariant(x, c):
    a = softmax(x)
    b = softmax(x + c)
    assert np.allclose(a, b, atol=1e-12)
    assert abs(a.sum() - 1.0) < 1e-12


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(1, 8), elements=st.floats(-30, 30)))
def test_log_softmax_matches_softmax(x):
    assert np.allclose(np.exp(log_softmax(x)), softmax(x), atol=1e-12)


def test_sigmoid_extremes_stay_finite():
    s = sigmoid(np.array([-800.0, 0.0, 800.0]))
    assert np.all(np.isfinite(s))
    assert s[1] == 0.5 and s[0] == 0.0 and s[2] == 1.0


def test_xent_grad_uniform():
    n = 5
    g = softmax_xent_grad(np.zeros(n), 2)
    expect = np.full(n, 1 / n)
    expect[2] -= 1
    assert np.allclose(g, expect, atol=1e-15)


def _cell(din=3, h=4, layers=1, seed=0, scale=0.3):
    cell = GRU("g", din, h, layers)
    params = ParamSet()
    cell.init_params(params, np.random.default_rng(seed), scale)
    for layer in range(layers):
        params[cell.names(layer)[2]] = np.random.default_rng(seed + 1).uniform(-0.3, 0.3, 3 * h)
    return cell, params


def test_zero_params_give_zero_state():
    cell = GRU("g", 3, 4)
    params = ParamSet()
    cell.init_params(params, np.random.default_rng(0), 0.0)
    h = rnn_step(params, cell, np.zeros(4), np.ones(3))
    assert np.all(h == 0.0)


def test_hand_computed_cell():
    cell = GRU("g", 1, 1)
    params = ParamSet()
    cell.init_params(params, np.random.default_rng(0), 0.0)
    w, u, b = cell.names(0)
    params[w] = np.array([[0.5, -0.5, 1.0]])
    params[u] = np.array([[0.2, 0.3, -0.4]])
    params[b] = np.array([0.1, 0.0, -0.2])
    x, h = 0.7, 0.6
    z = 1 / (1 + math.exp(-(0.5 * x + 0.2 * h + 0.1)))
    r = 1 / (1 + math.exp(-(-0.5 * x + 0.3 * h)))
    n = math.tanh(1.0 * x + r * h * -0.4 - 0.2)
    expect = (1 - z) * n + z * h
    got = rnn_step(params, cell, np.array([h]), np.array([x]))
    assert abs(got[0] - expect) < 1e-14


def test_sequence_matches_manual_unroll():
    cell, params = _cell()
    rng = np.random.default_rng(3)
    xs = rng.normal(size=(6, 3))
    seq = forward_sequence(params, cell, xs)
    h = np.zeros(4)
    for t, x in enumerate(xs):
        h = rnn_step(params, cell, h, x)
        assert np.allclose(seq[t], h, atol=1e-14)


def test_prefix_composition():
    cell, params = _cell()
    xs = np.random.default_rng(4).normal(size=(5, 3))
    full = forward_sequence(params, cell, xs)
    head = forward_sequence(params, cell, xs[:2])
    tail = forward_sequence(params, cell, xs[2:], h0=head[-1])
    assert np.allclose(full[2:], tail, atol=1e-14)


def test_mask_carries_state():
    cell, params = _cell()
    x = np.random.default_rng(5).normal(size=(1, 4, 3))
    mask = np.array([[1.0, 1.0, 0.0, 0.0]])
    hs, _ = cell.forward(params, x, mask)
    assert np.array_equal(hs[0, 2], hs[0, 1])
    assert np.array_equal(hs[0, 3], hs[0, 1])


def test_step_shape_errors():
    cell, params = _cell()
    with pytest.raises(ValueError):
        rnn_step(params, cell, np.zeros(5), np.zeros(3))
    with pytest.raises(ValueError):
        rnn_step(params, cell, np.zeros(4), np.zeros(2))


def test_backward_without_forward_raises():
    cell, params = _cell()
    with pytest.raises(RuntimeError):
        cell.backward(params, None, np.zeros((1, 1, 4)), GradientTape(params))


@pytest.mark.parametrize("layers", [1, 2])
def test_gru_gradient_matches_finite_differences(layers):
    cell, params = _cell(layers=layers)
    rng = np.random.default_rng(6)
    x = rng.normal(size=(2, 5, 3))
    mask = np.array([[1, 1, 1, 1, 1], [1, 1, 1, 0, 0]], dtype=float)
    wts = rng.normal(size=(2, 5, 4))

    def loss():
        hs, _ = cell.forward(params, x, mask)
        return float(np.sum(wts * hs))

    hs, cache = cell.forward(params, x, mask)
    tape = GradientTape(params)
    cell.backward(params, cache, wts, tape)
    for name in params.names():
        for _ in range(3):
            idx = tuple(int(rng.integers(s)) for s in params[name].shape)
            assert coordinate_fd_error(loss, params, tape, name, idx) < 1e-6


def test_constant_loss_gives_zero_tape():
    cell, params = _cell()
    hs, cache = cell.forward(params, np.ones((1, 3, 3)), np.ones((1, 3)))
    tape = GradientTape(params)
    cell.backward(params, cache, np.zeros_like(hs), tape)
    assert np.all(tape.flat() == 0.0)


@pytest.mark.skipif(kernels.BACKEND != "compiled", reason="compiled kernel not built")
def test_backends_agree():
    rng = np.random.default_rng(8)
    B, T, H = 3, 7, 5
    xw = rng.normal(size=(B, T, 3 * H))
    mask = (rng.random((B, T)) < 0.8).astype(float)
    h0 = rng.normal(size=(B, H))
    U = rng.normal(size=(H, 3 * H)) * 0.3
    dhs = rng.normal(size=(B, T, H))
    out = {}
    for name in ("python", "compiled"):
        fwd, bwd = get_backend(name)
        f = fwd(xw, mask, h0, U)
        b = bwd(mask, h0, U, *f, dhs)
        out[name] = (f, b)
    for a, b in zip(out["python"][0] + tuple(out["python"][1]),
                    out["compiled"][0] + tuple(out["compiled"][1])):
        assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


def test_unknown_backend():
    with pytest.raises(ValueError):
        get_backend("fortran")


def test_adam_zero_gradient_is_noop():
    params = ParamSet([("x", np.array([1.5, -2.0]))])
    opt = Adam(params, lr=0.1)
    opt.step(params, GradientTape(params))
    assert np.array_equal(params["x"], [1.5, -2.0])


def test_adam_first_step_is_lr_sized():
    params = ParamSet([("x", np.array([1.0]))])
    opt = Adam(params, lr=0.01)
    tape = GradientTape(params)
    tape.add("x", 2 * params["x"])
    opt.step(params, tape)
    # bias-corrected first step moves by lr * sign(g)
    assert abs(params["x"][0] - 0.99) < 1e-9


def test_adam_converges_on_quadratic():
    params = ParamSet([("x", np.array([1.0, -1.0]))])
    opt = Adam(params, lr=0.05)
    for _ in range(200):
        tape = GradientTape(params)
        tape.add("x", 2 * params["x"])
        opt.step(params, tape)
    assert np.all(np.abs(params["x"]) < 1e-2)


def test_adam_rejects_nonfinite():
    params = ParamSet([("x", np.array([1.0]))])
    opt = Adam(params)
    tape = GradientTape(params)
    tape.add("x", np.array([np.nan]))
    with pytest.raises(NonFiniteGradient):
        opt.step(params, tape)
    assert params["x"][0] == 1.0


def test_adam_clips_global_norm():
    params = ParamSet([("x", np.array([0.0]))])
    opt = Adam(params, lr=1.0, clip_norm=1.0)
    tape = GradientTape(params)
    tape.add("x", np.array([100.0]))
    assert opt.step(params, tape) == 100.0


def test_paramset_rejects_bad_values():
    with pytest.raises(ValueError):
        ParamSet([("x", np.array([np.inf]))])
    p = ParamSet([("x", np.zeros(2))])
    with pytest.raises(KeyError):
        p.add("x", np.zeros(2))
    with pytest.raises(ValueError):
        p["x"] = np.zeros(3)


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(9)
    arrays = [("a", rng.normal(size=(3, 4))), ("b.c", np.array([np.pi, -0.0, 1e-300])),
              ("empty", np.zeros((0, 2)))]
    path = tmp_path / "x.bin"
    checkpoint.save(path, arrays)
    back = checkpoint.load(path)
    assert list(back) == ["a", "b.c", "empty"]
    for name, value in arrays:
        assert back[name].tobytes() == value.tobytes()
        assert back[name].shape == value.shape
    assert checkpoint.dumps(arrays) == path.read_bytes()


def test_checkpoint_rejects_corruption(tmp_path):
    data = checkpoint.dumps([("a", np.ones(3))])
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(b"XXXX" + data[4:])
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(data[:-5])


def test_recurrent_state_take_and_copy():
    s = RecurrentState([np.arange(6.0).reshape(3, 2)])
    t = s.take(np.array([2, 0]))
    assert np.array_equal(t.hidden, [[4, 5], [0, 1]])
    c = s.copy()
    c.layers[0][0, 0] = 99
    assert s.layers[0][0, 0] == 0
