"""Numerical verification suites behind ``coopo verify``.

Each suite returns a JSON-ready dict with at least ``suite``, ``instances``
and ``pass``, plus ``max_residual`` or ``satisfaction_rate``.
"""
from __future__ import annotations

import math

import numpy as np

from . import approximator as nn
from .cycle import CoopoConfig, ModelConfig, run_coopo
from .environments import make_benchmark, random_mdp
from .errors import InputError
from .models import QFunction, ValueFunction
from .offline_data import Batch, BehaviorPolicyDescriptor, generate
from .offline_phase import OfflineConfig, actor_loss_and_grad, actor_update
from .online_phase import OnlineConfig, ppo_loss_and_grad
from .policy import CategoricalPolicy, DiagGaussianPolicy, categorical_kl, categorical_tv
from .seeding import make_rng
from .theory import (awac_closed_form, exact_eval, lemma1_check, optimal_return, run_exact_mode,
                     theorem1_check, theorem2_trace)

LAMBDAS = (0.05, 1.0, 9.0)
PINSKER_SLACK = 1e-12


def _random_table(rng, S, A):
    return rng.dirichlet(np.ones(A), size=S)


def lemma1(n_instances=200, seed=0):
    """Closed-form identity on random tabular instances plus the 2-armed bandit."""
    rng = make_rng(seed, "lemma1")
    worst = 0.0
    count = 0
    for _ in range(n_instances):
        S, A = int(rng.integers(1, 7)), int(rng.integers(2, 6))
        mdp = random_mdp(rng, S, A)
        pi = _random_table(rng, S, A)
        adv = exact_eval(mdp, pi).A
        for lam in LAMBDAS:
            worst = max(worst, float(np.max(lemma1_check(pi, adv, lam))))
            count += 1
    b = make_benchmark("bandit2")
    res = lemma1_check(np.full((1, 2), 0.5), exact_eval(b, np.full((1, 2), 0.5)).A, 1.0)
    worst = max(worst, float(np.max(res)))
    return {"suite": "lemma1", "instances": count + 1, "max_residual": worst, "pass": worst < 1e-9}


def train_to_closed_form(mdp, lam=1.0, pi_old=None, steps=4000, lr=0.02, seed=0):
    """Full-batch tabular actor, exact advantages, no KL penalty.

    Every (s, a) pair is one row weighted by d^{pi_old}(s) pi_old(a|s), so the
    population objective is the advantage-weighted likelihood whose maximizer
    is the closed form. Returns (learned table, closed-form table).
    """
    S, A = mdp.P.shape[0], mdp.P.shape[1]
    if pi_old is None:
        pi_old = np.full((S, A), 1.0 / A)
    ev = exact_eval(mdp, pi_old)
    target = awac_closed_form(pi_old, ev.A, lam).policy
    s = np.repeat(np.arange(S), A)
    a = np.tile(np.arange(A), S)
    batch = Batch(s, a, np.zeros(S * A), s.copy(), np.zeros(S * A, dtype=bool), np.arange(S * A))
    # floor keeps states the old policy never reaches in the objective
    d = np.maximum(ev.d_pi, 1e-6)
    sample_weight = (d[:, None] * pi_old).reshape(-1)
    policy = CategoricalPolicy.from_table(pi_old)
    from .models import AgentState
    state = AgentState(policy, None, None, nn.OptimizerState.for_params(policy.flat, lr=lr),
                       None, None, mdp.encode, True)
    ref = policy.copy()
    adv = ev.A.reshape(-1)
    for t in range(steps):
        if t == steps // 2:
            state.opt_pi = nn.OptimizerState.for_params(state.policy.flat, lr=lr / 10)
        actor_update(batch, state, ref, lam, w_max=1e12, kl_coef=0.0, adv=adv,
                     sample_weight=sample_weight)
    return state.policy.table(), target


def closed_form(seed=0):
    """Gradient-trained tabular actor reaches the closed-form policy (TV <= 1e-3)."""
    worst = 0.0
    for name in ("bandit2", "chain5"):
        mdp = make_benchmark(name)
        learned, target = train_to_closed_form(mdp, seed=seed)
        worst = max(worst, float(np.max(categorical_tv(learned, target))))
    return {"suite": "closed_form", "instances": 2, "max_residual": worst, "pass": worst <= 1e-3}


# -- gradients ---------------------------------------------------------------

def _draw_net(rng, spec, x, min_gap=1e-3, tries=50):
    """Parameters whose ReLU pre-activations stay clear of the kink at x."""
    for _ in range(tries):
        p = nn.init_params(spec, rng)
        if spec.activation != "relu" or nn.min_abs_preactivation(spec, p, x) >= min_gap:
            return p
    raise InputError("could not draw a kink-free network instance")


def _gradient_instances(kind, rng, n=8):
    obs_dim, n_actions, act_dim = 4, 3, 2
    obs = rng.normal(size=(n, obs_dim))
    if kind == "q":
        discrete = bool(rng.integers(2))
        if discrete:
            spec = nn.MlpSpec(obs_dim, 2, 16, n_actions)
            acts = rng.integers(n_actions, size=n)
            x = obs
        else:
            spec = nn.MlpSpec(obs_dim + act_dim, 2, 16, 1)
            acts = rng.normal(size=(n, act_dim))
            x = np.concatenate([obs, acts], axis=1)
        p = _draw_net(rng, spec, x)
        y = rng.normal(size=n)
        qf = QFunction(spec, p, discrete)
        f = lambda q: qf.with_params(q).mse_and_grad(obs, acts, y)[0]
        return f, p, qf.mse_and_grad(obs, acts, y)[1]
    if kind in ("v", "online_v"):
        spec = nn.MlpSpec(obs_dim, 2, 16, 1)
        p = _draw_net(rng, spec, obs)
        # offline V regresses onto TD targets, online V onto reward-to-go
        y = rng.normal(size=n) if kind == "v" else np.cumsum(rng.normal(size=n))[::-1].copy()
        vf = ValueFunction(spec, p)
        f = lambda q: vf.with_params(q).mse_and_grad(obs, y)[0]
        return f, p, vf.mse_and_grad(obs, y)[1]
    pol, acts = _random_policy(rng, obs, obs_dim, n_actions, act_dim, n)
    if kind == "actor":
        ref = pol.with_flat(pol.flat + 0.1 * rng.normal(size=pol.flat.shape))
        w = np.exp(rng.normal(size=n))
        coef = float(rng.uniform(0.05, 2.0))
        f = lambda q: actor_loss_and_grad(pol.with_flat(q), ref, obs, acts, w, coef)[0]
        return f, pol.flat, actor_loss_and_grad(pol, ref, obs, acts, w, coef)[1]
    if kind == "ppo":
        clip = 0.2
        logp = pol.log_prob(obs, acts)
        # old log-probs chosen so ratios sit away from the clip boundaries
        ratio = rng.choice([0.5, 0.95, 1.05, 1.6], size=n) * np.exp(rng.uniform(-0.02, 0.02, size=n))
        logp_old = logp - np.log(ratio)
        adv = rng.normal(size=n)
        f = lambda q: ppo_loss_and_grad(pol.with_flat(q), obs, acts, logp_old, adv, clip)[0]
        return f, pol.flat, ppo_loss_and_grad(pol, obs, acts, logp_old, adv, clip)[1]
    raise InputError(f"unknown gradient target {kind!r}")


def _random_policy(rng, obs, obs_dim, n_actions, act_dim, n):
    if rng.integers(2):
        spec = nn.MlpSpec(obs_dim, 2, 16, n_actions)
        pol = CategoricalPolicy(spec, _draw_net(rng, spec, obs))
        return pol, rng.integers(n_actions, size=n)
    spec = nn.MlpSpec(obs_dim, 2, 16, act_dim)
    pol = DiagGaussianPolicy(spec, _draw_net(rng, spec, obs), rng.uniform(-1.0, 0.5, size=act_dim))
    return pol, rng.normal(size=(n, act_dim))


GRADIENT_TARGETS = ("q", "v", "actor", "ppo", "online_v")


def gradients(n_instances=20, tolerance=1e-4, seed=0):
    """Finite-difference checks of every trained loss."""
    rng = make_rng(seed, "gradients")
    worst, per = 0.0, {}
    for kind in GRADIENT_TARGETS:
        kw = 0.0
        for _ in range(n_instances):
            f, p, g = _gradient_instances(kind, rng)
            rep = nn.check_gradient(f, p, g, tolerance, rng=rng, h=1e-6)
            kw = max(kw, rep.max_rel_error)
        per[kind] = kw
        worst = max(worst, kw)
    return {"suite": "gradients", "instances": n_instances * len(GRADIENT_TARGETS),
            "max_residual": worst, "per_loss": per, "pass": worst <= tolerance}


# -- runs on the tabular fixtures -------------------------------------------

TABULAR_RUNS = (("bandit2", 0), ("bandit2", 1), ("chain5", 0), ("chain5", 1), ("chain5", 2),
                ("chain5", 3), ("grid4x4", 0), ("grid4x4", 1), ("grid4x4", 2), ("grid4x4", 3))


def tabular_run(name, seed, cycles=3, lam=1.0, out_dir=None):
    """A small COOPO run on a tabular fixture with a medium-tier dataset."""
    env = make_benchmark(name)
    data = generate(env, BehaviorPolicyDescriptor.from_tier(env, "medium"), 2000, seed)
    cfg = CoopoConfig(cycles=cycles, env=name, seed=seed, eval_episodes=5,
                      eval_every_iteration=False,
                      offline=OfflineConfig(epochs=5, batch=256, lam=lam, gamma=env.gamma, lr=0.05),
                      online=OnlineConfig(iterations=2, episodes_per_iter=4, gamma=env.gamma, lr=0.05),
                      model=ModelConfig())
    _, reports = run_coopo(cfg, data, env=env, out_dir=out_dir)
    return env, reports


def consecutive_pairs(reports):
    for r in reports:
        t = r.tables
        yield t["pi_k"], t["pi_half"]
        yield t["pi_half"], t["pi_next"]


def pinsker(runs=TABULAR_RUNS):
    """TV <= sqrt(KL/2) for every consecutive policy pair of several tabular runs."""
    violations, pairs, worst = 0, 0, -np.inf
    for name, seed in runs:
        _, reports = tabular_run(name, seed)
        for p, q in consecutive_pairs(reports):
            gap = categorical_tv(q, p) - np.sqrt(categorical_kl(q, p) / 2.0)
            violations += int(np.sum(gap > PINSKER_SLACK))
            pairs += gap.size
            worst = max(worst, float(gap.max()))
    return {"suite": "pinsker", "instances": pairs, "violations": violations,
            "max_residual": worst, "pass": violations == 0}


def theorem1(n_mdps=100, cycles=1, seed=0, empirical=True):
    """Exact-mode cycles against the one-cycle improvement bound.

    Exact mode: closed-form offline step on exact advantages, then a
    TV-limited online step. When ``empirical`` is set, the bound is also
    evaluated on real COOPO cycles (estimated advantages) and only the
    satisfaction rate is reported.
    """
    rng = make_rng(seed, "theorem1")
    held = total = 0
    worst_margin = np.inf
    for i in range(n_mdps):
        S, A = int(rng.integers(2, 7)), int(rng.integers(2, 5))
        mdp = random_mdp(rng, S, A, gamma=float(rng.choice([0.8, 0.9])))
        lam = float(rng.choice(LAMBDAS))
        run = run_exact_mode(mdp, _random_table(rng, S, A), lam, cycles,
                             online_step=float(rng.uniform(0.2, 2.0)), max_tv=float(rng.uniform(0.01, 0.2)))
        for rep in run.reports:
            total += 1
            held += rep.satisfied
            worst_margin = min(worst_margin, rep.lhs - rep.rhs)
    out = {"suite": "theorem1", "instances": total, "satisfaction_rate": held / total,
           "min_margin": worst_margin, "pass": held == total}
    if empirical:
        emp_held = emp_total = 0
        for name, s in (("chain5", 0), ("grid4x4", 0)):
            env, reports = tabular_run(name, s)
            for r in reports:
                t = r.tables
                rep = theorem1_check(env, t["pi_k"], t["pi_half"], t["pi_next"], 1.0, t["adv_hat"], k=r.k)
                emp_total += 1
                emp_held += rep.satisfied
        out["empirical_satisfaction_rate"] = emp_held / emp_total
        out["empirical_instances"] = emp_total
    return out


def theorem2(cycles=60, lambdas=LAMBDAS):
    """Geometric envelope of the suboptimality trace on chain5 exact-mode runs."""
    mdp = make_benchmark("chain5")
    J_star = optimal_return(mdp)
    pi0 = np.full((mdp.P.shape[0], mdp.P.shape[1]), 0.5)
    traces = []
    ok = True
    for lam in lambdas:
        run = run_exact_mode(mdp, pi0, lam, cycles)
        tr = theorem2_trace(run.J, J_star, run.G_off)
        good = (not math.isnan(tr.rho_hat)) and tr.rho_hat < 1 and tr.dominated and tr.monotone_outside_floor
        ok &= good
        traces.append({"lambda": lam, "rho_hat": tr.rho_hat, "b_hat": tr.b_hat,
                       "kappa_hat": tr.kappa_hat, "dominated": tr.dominated,
                       "monotone": tr.monotone_outside_floor, "pass": good})
    return {"suite": "theorem2", "instances": len(traces),
            "max_residual": max(t["rho_hat"] for t in traces), "traces": traces, "pass": bool(ok)}


SUITES = {"lemma1": lemma1, "closed_form": closed_form, "gradients": gradients,
          "pinsker": pinsker, "theorem1": theorem1, "theorem2": theorem2}


def run_suite(name):
    if name not in SUITES:
        raise InputError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    return SUITES[name]()
