import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from coopo import approximator as nn
from coopo.errors import InputError, NumericError


def _params_from(spec, layers):
    return np.concatenate([np.concatenate([np.ravel(W), np.ravel(b)]) for W, b in layers])


def test_zero_weights_give_zero_output():
    spec = nn.MlpSpec(3, 2, 8, 2)
    out = nn.forward(spec, np.zeros(spec.n_params), np.array([1.0, -2.0, 5.0]))
    assert np.array_equal(out, np.zeros(2))


def test_identity_linear_net():
    spec = nn.MlpSpec(1, 0, 1, 1)
    p = _params_from(spec, [(np.eye(1), np.zeros(1))])
    assert nn.forward(spec, p, np.array([2.0])) == pytest.approx([2.0])


def test_single_relu_unit_hand_value():
    spec = nn.MlpSpec(1, 1, 1, 1)
    p = _params_from(spec, [([[1.0]], [-1.0]), ([[2.0]], [0.0])])
    assert nn.forward(spec, p, np.array([3.0])) == pytest.approx([4.0])


def test_layer_major_layout():
    spec = nn.MlpSpec(2, 1, 3, 1)
    assert spec.n_params == 2 * 3 + 3 + 3 * 1 + 1
    layers = nn.unpack(spec, np.arange(spec.n_params, dtype=float))
    assert layers[0][0].shape == (3, 2)
    assert layers[0][0][0, 1] == 1.0
    assert np.array_equal(layers[0][1], [6.0, 7.0, 8.0])


def test_quadratic_gradient():
    # f(theta) = theta^2 through a 1x1 linear net with input 1: out = theta
    spec = nn.MlpSpec(1, 0, 1, 1)
    p = np.array([3.0, 0.0])
    _, g = nn.grad(spec, p, np.array([[1.0]]), lambda out: (float(out[0, 0] ** 2), 2 * out))
    assert g[0] == pytest.approx(6.0)


def test_constant_loss_zero_gradient(rng):
    spec = nn.MlpSpec(3, 2, 8, 2)
    p = nn.init_params(spec, rng)
    _, g = nn.grad(spec, p, rng.normal(size=(4, 3)), lambda out: (5.0, np.zeros_like(out)))
    assert np.array_equal(g, np.zeros_like(p))


def _kink_free(spec, rng, x):
    for _ in range(100):
        p = nn.init_params(spec, rng)
        if nn.min_abs_preactivation(spec, p, x) > 1e-3:
            return p
    raise AssertionError("no kink-free draw")


@pytest.mark.parametrize("activation", ["relu", "tanh"])
def test_random_net_matches_finite_differences(rng, activation):
    spec = nn.MlpSpec(4, 2, 16, 3, activation)
    x = rng.normal(size=(6, 4))
    p = _kink_free(spec, rng, x)
    target = rng.normal(size=(6, 3))
    loss = lambda out: (float(np.sum((out - target) ** 2)), 2 * (out - target))
    rep = nn.finite_diff_check(spec, p, x, loss, tolerance=1e-4, rng=rng, h=1e-5)
    assert rep.passed and rep.max_rel_error < 1e-4


def test_quadratic_finite_difference_is_tight():
    f = lambda p: float(np.sum(p ** 2))
    p = np.array([0.3, -1.2, 2.0])
    rep = nn.check_gradient(f, p, 2 * p, tolerance=1e-6)
    assert rep.max_rel_error < 1e-8


def test_corrupted_gradient_fails(rng):
    spec = nn.MlpSpec(3, 1, 8, 1, "tanh")
    x = rng.normal(size=(5, 3))
    p = nn.init_params(spec, rng)
    loss = lambda out: (float(np.sum(out ** 2)), 2 * out)
    _, g = nn.grad(spec, p, x, loss)
    g_bad = g.copy()
    g_bad[0] += 1.0
    f = lambda q: loss(nn.forward(spec, q, x))[0]
    rep = nn.check_gradient(f, p, g_bad, 1e-4, n_coords=spec.n_params)
    assert not rep.passed


def test_adam_zero_gradient_keeps_params():
    p = np.array([1.0, -2.0])
    st0 = nn.OptimizerState.for_params(p, lr=1e-3)
    p1, st1 = nn.optimizer_step(st0, p, np.zeros(2))
    assert np.array_equal(p1, p)
    assert st1.step_count == 1


def test_adam_first_step_magnitude():
    p = np.array([0.0])
    p1, _ = nn.optimizer_step(nn.OptimizerState.for_params(p, lr=1e-3), p, np.array([0.5]))
    assert p1[0] == pytest.approx(-1e-3, rel=1e-6)


def test_adam_constant_gradient_moves_monotonically():
    p = np.array([0.0])
    st = nn.OptimizerState.for_params(p, lr=1e-2)
    traj = [p[0]]
    for _ in range(2):
        p, st = nn.optimizer_step(st, p, np.array([-0.7]))
        traj.append(p[0])
    assert traj[0] < traj[1] < traj[2]


def test_adam_rejects_bad_gradients():
    p = np.zeros(2)
    st = nn.OptimizerState.for_params(p)
    with pytest.raises(NumericError):
        nn.optimizer_step(st, p, np.array([np.nan, 0.0]))
    with pytest.raises(InputError):
        nn.optimizer_step(st, p, np.zeros(3))


def test_forward_reports_failing_layer():
    spec = nn.MlpSpec(1, 1, 2, 1)
    p = np.full(spec.n_params, 1e200)
    with pytest.raises(NumericError, match="layer"):
        nn.forward(spec, p, np.array([1e200]))


def test_spec_validation():
    with pytest.raises(InputError):
        nn.MlpSpec(0)
    with pytest.raises(InputError):
        nn.MlpSpec(2, activation="gelu")
    with pytest.raises(InputError):
        nn.forward(nn.MlpSpec(2), np.zeros(3), np.zeros(2))


def test_checkpoint_round_trip(tmp_path, rng):
    spec = nn.MlpSpec(3, 2, 5, 2, "tanh")
    p = nn.init_params(spec, rng)
    path = tmp_path / "m.ckpt"
    nn.save_checkpoint(path, spec, p, np.array([0.1, -0.2]))
    spec2, p2, extra = nn.load_checkpoint(path)
    assert spec2 == spec
    assert np.array_equal(p2, p)
    assert np.array_equal(extra, [0.1, -0.2])


@given(st.integers(1, 4), st.integers(0, 2), st.integers(1, 6), st.integers(1, 3), st.integers(0, 2 ** 31))
def test_backward_input_gradient_matches_fd(d_in, layers, units, d_out, seed):
    rng = np.random.default_rng(seed)
    spec = nn.MlpSpec(d_in, layers, units, d_out, "tanh")
    p = nn.init_params(spec, rng)
    x = rng.normal(size=(2, d_in))
    w = rng.normal(size=(2, d_out))
    out, cache = nn.forward_cache(spec, p, x)
    _, d_x = nn.backward(spec, p, cache, w)
    h = 1e-6
    for i in range(d_in):
        e = np.zeros_like(x)
        e[:, i] = h
        num = (np.sum(w * nn.forward(spec, p, x + e)) - np.sum(w * nn.forward(spec, p, x - e))) / (2 * h)
        assert d_x[:, i].sum() == pytest.approx(num, rel=1e-5, abs=1e-8)
