import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from coopo import approximator as nn
from coopo import policy as P
from coopo.errors import InputError

ONE = np.array([1.0])  # single one-hot state


def gaussian(mu, log_std):
    # zero-weight linear net with bias = mu, input dim 1
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    spec = nn.MlpSpec(1, 0, 1, len(mu))
    params = np.concatenate([np.zeros(len(mu)), mu])
    return P.DiagGaussianPolicy(spec, params, np.full(len(mu), log_std, dtype=float))


def categorical(probs):
    return P.CategoricalPolicy.from_table(np.atleast_2d(probs))


def test_categorical_log_prob_uniform():
    assert P.log_prob(categorical([0.5, 0.5]), ONE, 0) == pytest.approx(-0.6931, abs=1e-4)


def test_gaussian_log_prob_values():
    g = gaussian(0.0, 0.0)
    assert P.log_prob(g, ONE, np.array([0.0])) == pytest.approx(-0.9189, abs=1e-4)
    assert P.log_prob(g, ONE, np.array([1.0])) == pytest.approx(-1.4189, abs=1e-4)


def test_kl_values():
    p = categorical([0.8808, 0.1192])
    assert P.kl(p, p, ONE) == 0.0
    assert P.kl(p, categorical([0.5, 0.5]), ONE) == pytest.approx(0.3278, abs=1e-4)
    assert P.kl(gaussian(0.0, 0.0), gaussian(1.0, 0.0), ONE) == pytest.approx(0.5)


def test_tv_values():
    p = categorical([0.8808, 0.1192])
    assert P.tv(p, p, ONE) == 0.0
    assert P.tv(p, categorical([0.5, 0.5]), ONE) == pytest.approx(0.3808, abs=1e-12)


def test_family_mismatch():
    with pytest.raises(InputError):
        P.kl(categorical([0.5, 0.5]), gaussian([0.0, 0.0], 0.0), ONE)


def test_degenerate_categorical_samples():
    pol = categorical([1.0, 0.0])
    rng = np.random.default_rng(0)
    assert all(P.sample(pol, ONE, rng) == 0 for _ in range(100))


def test_clamped_gaussian_is_near_deterministic():
    g = gaussian([0.3, -0.2], np.log(1e-9))
    a = P.sample(g, ONE, np.random.default_rng(0))
    assert np.allclose(a, [0.3, -0.2], atol=1e-3)
    assert g.clamp_warnings > 0


def test_gaussian_sample_mean_clt():
    g = gaussian(0.7, 0.0)
    rng = np.random.default_rng(5)
    n = 100_000
    mean = np.mean(P.sample(g, np.ones((n, 1)), rng))
    assert abs(mean - 0.7) < 3 / np.sqrt(n)


def test_entropy_values():
    assert P.entropy(categorical([0.25] * 4), ONE) == pytest.approx(1.3863, abs=1e-4)
    assert P.entropy(categorical([1.0, 0.0, 0.0]), ONE) == pytest.approx(0.0, abs=1e-12)
    assert P.entropy(gaussian(0.0, 0.0), ONE) == pytest.approx(1.4189, abs=1e-4)


def test_tabular_policy_is_table():
    table = np.array([[0.2, 0.8], [0.6, 0.4], [0.5, 0.5]])
    pol = P.CategoricalPolicy.from_table(table)
    assert np.allclose(pol.table(), table)


probs = st.lists(st.floats(0.01, 1.0), min_size=2, max_size=6)


@given(probs, probs)
def test_pinsker_categorical(p, q):
    n = min(len(p), len(q))
    p = np.array(p[:n]) / np.sum(p[:n])
    q = np.array(q[:n]) / np.sum(q[:n])
    assert P.categorical_tv(p, q) <= np.sqrt(P.categorical_kl(p, q) / 2) + 1e-12


@given(st.floats(-3, 3), st.floats(-2, 1), st.floats(-3, 3), st.floats(-2, 1))
def test_gaussian_kl_nonnegative_and_zero_on_self(m1, s1, m2, s2):
    a, b = gaussian(m1, s1), gaussian(m2, s2)
    assert P.kl(a, b, ONE) >= -1e-12
    assert P.kl(a, a, ONE) == pytest.approx(0.0, abs=1e-12)
    assert P.tv(a, b, ONE) <= 1.0


@given(st.integers(0, 2 ** 31))
def test_log_prob_terms_gradients(seed):
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=(3, 4))
    acts = rng.integers(4, size=3)
    pol = categorical([0.25] * 4)
    lp, d = pol.log_prob_terms(logits, acts)
    h = 1e-6
    for j in range(4):
        e = np.zeros_like(logits)
        e[:, j] = h
        num = (pol.log_prob_terms(logits + e, acts)[0] - pol.log_prob_terms(logits - e, acts)[0]) / (2 * h)
        assert np.allclose(d[:, j], num, atol=1e-7)
