import json

import numpy as np
import pytest

from coopo.cycle import (CoopoConfig, ModelConfig, evaluate, init_agent, run_coopo, run_ppo_baseline)
from coopo.environments import TabularMdp, make_benchmark
from coopo.errors import InputError, NumericError
from coopo.metrics import read_metrics
from coopo.offline_data import BehaviorPolicyDescriptor, generate
from coopo.offline_phase import OfflineConfig
from coopo.online_phase import OnlineConfig
from coopo.policy import CategoricalPolicy
from coopo.theory import exact_eval, theorem1_check


def small_cfg(env_name, cycles=2, **kw):
    env = make_benchmark(env_name)
    base = dict(cycles=cycles, env=env_name, eval_episodes=3, eval_every_iteration=False,
                offline=OfflineConfig(epochs=2, batch=64, lam=1.0, gamma=env.gamma, lr=0.05),
                online=OnlineConfig(iterations=1, episodes_per_iter=2, gamma=env.gamma, lr=0.05))
    base.update(kw)
    return CoopoConfig(**base), env


def medium(env, n=300, seed=0):
    return generate(env, BehaviorPolicyDescriptor.from_tier(env, "medium"), n, seed)


def test_handoff_checksums_chain():
    cfg, env = small_cfg("chain5", cycles=3)
    _, reps = run_coopo(cfg, medium(env), env=env)
    for prev, nxt in zip(reps, reps[1:]):
        assert nxt.checksums["incoming"] == prev.checksums["outgoing"]
    for r in reps:
        # Q leaves the offline phase and is carried unchanged through the online phase
        assert r.checksums["outgoing"]["q"] == r.checksums["after_offline"]["q"] == r.checksums["q_offline_last"]


def test_single_cycle_is_hybrid_baseline(tmp_path):
    cfg, env = small_cfg("chain5", cycles=1)
    _, reps = run_coopo(cfg, medium(env), env=env, out_dir=tmp_path)
    assert len(reps) == 1
    rows = read_metrics(tmp_path / "metrics.csv")
    assert {r["phase"] for r in rows} == {"offline", "online", "eval"}


def test_many_cycles_supported():
    env = make_benchmark("bandit2")
    cfg = CoopoConfig(cycles=500, env="bandit2", eval_episodes=1, eval_every_iteration=False,
                      offline=OfflineConfig(epochs=1, batch=8, lam=1.0, gamma=env.gamma, lr=0.05),
                      online=OnlineConfig(iterations=1, episodes_per_iter=1, batch=1, epochs_per_update=1,
                                          gamma=env.gamma, lr=0.05))
    _, reps = run_coopo(cfg, medium(env, n=8), env=env)
    assert len(reps) == 500


def test_bandit_cycles_respect_improvement_bound():
    cfg, env = small_cfg("bandit2", cycles=5)
    _, reps = run_coopo(cfg, medium(env, n=200), env=env)
    for r in reps:
        t = r.tables
        assert theorem1_check(env, t["pi_k"], t["pi_half"], t["pi_next"], 1.0, t["adv_hat"]).satisfied


def test_ppo_baseline_deterministic(tmp_path):
    cfg, env = small_cfg("pointmass", cycles=2, model=ModelConfig(hidden_units=16))
    run_ppo_baseline(cfg, out_dir=tmp_path / "a")
    run_ppo_baseline(cfg, out_dir=tmp_path / "b")
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_shared_trajectory_accounting(tmp_path):
    cfg, env = small_cfg("pointmass", cycles=2, model=ModelConfig(hidden_units=16))
    run_ppo_baseline(cfg, out_dir=tmp_path / "ppo")
    run_coopo(cfg, medium(env, n=200), out_dir=tmp_path / "coopo")
    last = lambda p: read_metrics(p)[-1]
    a, b = last(tmp_path / "ppo" / "metrics.csv"), last(tmp_path / "coopo" / "metrics.csv")
    assert (a["env_steps_cum"], a["traj_cum"]) == (b["env_steps_cum"], b["traj_cum"]) == ("200", "4")


def test_budget_enforced(tmp_path):
    cfg, env = small_cfg("pointmass", cycles=10, model=ModelConfig(hidden_units=16),
                         online=OnlineConfig(iterations=2, episodes_per_iter=2, total_step_budget=330))
    _, reps = run_coopo(cfg, medium(env, n=200), env=env, out_dir=tmp_path)
    rows = read_metrics(tmp_path / "metrics.csv")
    assert max(int(r["env_steps_cum"]) for r in rows) == 330
    assert sum(r.env_steps_this_cycle for r in reps) == 330


def test_metrics_counters_monotone_and_offline_static(tmp_path):
    cfg, env = small_cfg("chain5", cycles=2)
    run_coopo(cfg, medium(env), env=env, out_dir=tmp_path)
    rows = read_metrics(tmp_path / "metrics.csv")
    prev = (0, 0)
    for r in rows:
        cur = (int(r["env_steps_cum"]), int(r["traj_cum"]))
        assert cur >= prev and cur[0] >= prev[0] and cur[1] >= prev[1]
        if r["phase"] == "offline":
            assert cur == prev
        prev = cur
    reps = [json.loads(l) for l in (tmp_path / "reports.jsonl").read_text().splitlines()]
    assert [r["k"] for r in reps] == [0, 1]
    assert (tmp_path / "cycle_1" / "pi.ckpt").exists()


def test_zero_reward_env_evaluates_to_zero():
    P = np.ones((1, 2, 1))
    env = TabularMdp(P, np.zeros((1, 2)), [1.0], 0.9, 5)
    res = evaluate(CategoricalPolicy.tabular(1, 2), env, 4, seed=0)
    assert res.mean == 0.0 and res.std == 0.0


def test_monte_carlo_matches_dp():
    env = make_benchmark("chain5")
    pi = np.tile([0.3, 0.7], (5, 1))
    n = 400
    res = evaluate(CategoricalPolicy.from_table(pi), env, n, seed=1)
    J = exact_eval(env, pi).J
    assert abs(res.discounted_mean - J) < 3 * res.discounted_std / np.sqrt(n) + 1e-12


def test_config_defaults_and_validation():
    c = CoopoConfig()
    assert c.eval_episodes == 20 and c.cycles == 500
    with pytest.raises(InputError):
        CoopoConfig(cycles=0)


def test_numeric_failure_names_cycle(monkeypatch):
    cfg, env = small_cfg("chain5", cycles=2)
    import coopo.cycle as cyc

    calls = {"n": 0}
    real = cyc.run_offline

    def flaky(*a, **kw):
        calls["n"] += 1
        if calls["n"] == 2:
            raise NumericError("non-finite Q loss")
        return real(*a, **kw)

    monkeypatch.setattr(cyc, "run_offline", flaky)
    with pytest.raises(NumericError, match="cycle 1 offline"):
        run_coopo(cfg, medium(env), env=env)


def test_experimental_online_append_grows_dataset():
    cfg, env = small_cfg("chain5", cycles=2, append_online_experimental=True)
    data = medium(env)
    _, reps = run_coopo(cfg, data, env=env)
    assert len(reps) == 2 and len(data) == 300  # caller's dataset untouched


def test_dataset_required():
    cfg, env = small_cfg("chain5")
    with pytest.raises(InputError):
        run_coopo(cfg, None, env=env)
