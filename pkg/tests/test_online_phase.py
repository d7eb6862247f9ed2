import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from coopo import approximator as nn
from coopo.environments import TabularMdp, make_benchmark
from coopo.errors import InputError
from coopo.models import make_agent
from coopo.online_phase import (InteractionCounter, OnlineConfig, RolloutBuffer, advantages,
                                clipped_objective, collect, compute_rtg, normalize,
                                ppo_loss_and_grad, reward_to_go, run_online, value_update)
from coopo.policy import CategoricalPolicy


def agent(env, seed=0, lr=3e-4):
    return make_agent(env, np.random.default_rng(seed), lr=lr)


def test_reward_to_go_examples():
    assert reward_to_go([1, 1, 1], 0.5) == pytest.approx([1.75, 1.5, 1.0])
    assert np.array_equal(reward_to_go([3.0, -1.0, 2.0], 0.0), [3.0, -1.0, 2.0])
    assert np.array_equal(reward_to_go([0.0, 0.0], 0.9), [0.0, 0.0])


def _buffer(rtg, v_vals, env):
    st_ = agent(env)
    st_.v = st_.v.with_params(np.concatenate([v_vals, [0.0]]))
    n = len(rtg)
    buf = RolloutBuffer(obs=env.encode(np.arange(n)), rtg=np.asarray(rtg, float), lengths=[n])
    return buf, st_


def test_advantages_subtract_value():
    env = make_benchmark("chain5")
    buf, st_ = _buffer([2.0, 1.0], np.array([1.0, 1.0, 0, 0, 0]), env)
    assert advantages(buf, st_, False) == pytest.approx([1.0, 0.0])
    buf, st_ = _buffer([2.0, 1.0], np.array([2.0, 1.0, 0, 0, 0]), env)
    assert np.all(advantages(buf, st_, False) == 0)


@given(st.lists(st.floats(-100, 100), min_size=2, max_size=50))
def test_normalized_advantages(xs):
    x = np.array(xs)
    if np.std(x) < 1e-3:
        return
    z = normalize(x)
    assert abs(z.mean()) < 1e-10 and abs(z.std() - 1) < 1e-8


def test_clipped_objective_examples():
    assert clipped_objective(np.array([1.3]), np.array([1.0]), 0.2)[0] == pytest.approx(1.2)
    assert clipped_objective(np.array([0.7]), np.array([-1.0]), 0.2)[0] == pytest.approx(-0.8)


def test_identity_ratio_is_vanilla_policy_gradient(rng):
    spec = nn.MlpSpec(3, 1, 8, 4, "tanh")
    pol = CategoricalPolicy(spec, nn.init_params(spec, rng))
    obs = rng.normal(size=(10, 3))
    acts = rng.integers(4, size=10)
    adv = rng.normal(size=10)
    logp = pol.log_prob(obs, acts)
    loss, g, frac, excl = ppo_loss_and_grad(pol, obs, acts, logp, adv, 0.2)
    assert loss == pytest.approx(-adv.mean()) and frac == 0 and excl == 0
    # vanilla gradient of -mean(A log pi)
    out, cache = pol.forward(obs)
    _, dlogp = pol.log_prob_terms(out, acts)
    g_pg = pol.param_grad(cache, -(adv / 10)[:, None] * dlogp)
    assert np.allclose(g, g_pg)


def test_extreme_ratios_are_excluded(rng):
    spec = nn.MlpSpec(3, 0, 1, 2)
    pol = CategoricalPolicy(spec, nn.init_params(spec, rng))
    obs = rng.normal(size=(4, 3))
    acts = np.array([0, 1, 0, 1])
    logp_old = pol.log_prob(obs, acts)
    logp_old[0] -= 30.0
    _, g, _, excl = ppo_loss_and_grad(pol, obs, acts, logp_old, np.ones(4), 0.2)
    assert excl == 1 and np.all(np.isfinite(g))


def test_value_update_constant_model_mean():
    env = make_benchmark("bandit2")
    st_ = agent(env, lr=0.05)
    buf = RolloutBuffer(obs=env.encode([0, 0]), rtg=np.array([0.0, 2.0]), lengths=[2])
    for _ in range(100):
        value_update(buf, st_, 10, 2, np.random.default_rng(0))
    assert st_.v(env.encode([0]))[0] == pytest.approx(1.0, abs=1e-3)


def test_value_update_zero_loss_at_target():
    env = make_benchmark("chain5")
    st_ = agent(env)
    st_.v = st_.v.with_params(np.array([1.0, 2, 3, 4, 5, 0]))
    buf = RolloutBuffer(obs=env.encode([0, 1]), rtg=np.array([1.0, 2.0]), lengths=[2])
    assert value_update(buf, st_, 1, 2, np.random.default_rng(0)) == 0.0


def test_value_loss_non_increasing_full_batch():
    env = make_benchmark("pointmass")
    st_ = make_agent(env, np.random.default_rng(0), hidden_units=16, lr=1e-3)
    rng = np.random.default_rng(1)
    buf = RolloutBuffer(obs=rng.normal(size=(32, 4)), rtg=rng.normal(size=32), lengths=[32])
    losses = [value_update(buf, st_, 1, 32, rng) for _ in range(50)]
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


def test_collect_accounting_and_defaults():
    env = make_benchmark("chain5")
    counter = InteractionCounter()
    buf = collect(env, agent(env), 5, np.random.default_rng(0), counter)
    assert buf.n_steps == sum(buf.lengths) == len(buf.rewards) == counter.env_steps == 5 * env.horizon
    assert counter.trajectories == 5
    cfg = OnlineConfig()
    assert (cfg.iterations, cfg.episodes_per_iter, cfg.batch, cfg.clip, cfg.epochs_per_update) == (5, 5, 64, 0.2, 5)


def test_deterministic_env_and_policy_repeat():
    n = 3
    P = np.zeros((n, 2, n))
    for s in range(n):
        P[s, 0, s] = 1
        P[s, 1, (s + 1) % n] = 1
    env = TabularMdp(P, np.zeros((n, 2)), np.eye(n)[0], 0.9, 6)
    st_ = agent(env)
    st_.policy = CategoricalPolicy.tabular(n, 2, np.tile([0.0, 50.0], (n, 1)))
    buf = collect(env, st_, 4, np.random.default_rng(0))
    eps = np.array(buf.states).reshape(4, 6)
    assert np.all(eps == eps[0])


def test_budget_cuts_collection():
    env = make_benchmark("chain5")
    counter = InteractionCounter(budget=450)
    buf = collect(env, agent(env), 5, np.random.default_rng(0), counter)
    assert counter.env_steps == 450 and buf.lengths == [200, 200, 50]


def test_run_online_freezes_q_and_counts_steps():
    env = make_benchmark("pointmass")
    st_ = make_agent(env, np.random.default_rng(0), hidden_units=16)
    q0 = st_.q.params.copy()
    counter = InteractionCounter()
    st_, rows = run_online(env, st_, OnlineConfig(iterations=2, episodes_per_iter=2), np.random.default_rng(1),
                           counter)
    assert np.array_equal(q0, st_.q.params)
    assert counter.env_steps == sum(r["steps"] for r in rows) == 2 * 2 * env.horizon
    assert rows[-1]["traj_cum"] == 4


def test_buffer_size_caps_round():
    env = make_benchmark("pointmass")
    st_ = make_agent(env, np.random.default_rng(0), hidden_units=8)
    buf = collect(env, st_, 5, np.random.default_rng(0), max_steps=120)
    assert buf.lengths == [50, 50, 50]


def test_online_config_validation():
    with pytest.raises(InputError):
        OnlineConfig(clip=1.5)
    with pytest.raises(InputError):
        OnlineConfig(iterations=0)
