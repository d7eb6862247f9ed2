"""Exact tabular oracles.

Finite-horizon dynamic programming for V, Q, A and the discounted state
distribution; the exponential-tilting solution of the KL-regularized AWAC
step; and numerical checks of the per-cycle improvement bound and the
geometric convergence envelope. All arithmetic is float64 and exponentials
go through log-sum-exp.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from .policy import categorical_kl, categorical_tv

BOUND_SLACK = 1e-9


@dataclass
class ExactEval:
    V: np.ndarray        # [S] at h = 0
    Q: np.ndarray        # [S][A] at h = 0
    A: np.ndarray        # Q - V
    d_pi: np.ndarray     # discounted state distribution, renormalized
    J: float
    V_h: np.ndarray = field(repr=False)   # [H+1][S], V_h[H] = 0
    Q_h: np.ndarray = field(repr=False)   # [H][S][A]


def _check_table(mdp, pi):
    pi = np.asarray(pi, dtype=np.float64)
    if pi.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(f"policy table must be [{mdp.n_states}][{mdp.n_actions}], got {pi.shape}")
    return pi


def state_occupancy(mdp, pi):
    """p(s_h = s) for h = 0..H-1, shape [H][S]."""
    pi = _check_table(mdp, pi)
    P_pi = np.einsum("sa,sat->st", pi, mdp.P)
    p = np.empty((mdp.horizon, mdp.n_states))
    p[0] = mdp.d0
    for h in range(1, mdp.horizon):
        p[h] = p[h - 1] @ P_pi
    return p


def discounted_state_distribution(mdp, pi):
    """(1 - gamma) sum_h gamma^h p(s_h = s) over the episode, renormalized to sum to 1."""
    p = state_occupancy(mdp, pi)
    w = (1.0 - mdp.gamma) * mdp.gamma ** np.arange(mdp.horizon)
    d = w @ p
    return d / d.sum()


def visitation_distribution(mdp, pi):
    """Undiscounted state frequencies over full episodes: the large-N limit of
    the state column of a dataset generated by ``pi``."""
    return state_occupancy(mdp, pi).mean(axis=0)


def exact_eval(mdp, pi) -> ExactEval:
    """Backward DP over h = H-1 .. 0 for the (stationary) policy table ``pi``."""
    pi = _check_table(mdp, pi)
    H, S, A = mdp.horizon, mdp.n_states, mdp.n_actions
    V_h = np.zeros((H + 1, S))
    Q_h = np.empty((H, S, A))
    for h in range(H - 1, -1, -1):
        Q_h[h] = mdp.r + mdp.gamma * mdp.P @ V_h[h + 1]
        V_h[h] = np.sum(pi * Q_h[h], axis=1)
    V, Q = V_h[0], Q_h[0]
    return ExactEval(V, Q, Q - V[:, None], discounted_state_distribution(mdp, pi),
                     float(mdp.d0 @ V), V_h, Q_h)


def value_iteration(mdp):
    """Optimal finite-horizon values: (V*_h [H+1][S], Q*_h [H][S][A])."""
    H, S, A = mdp.horizon, mdp.n_states, mdp.n_actions
    V_h = np.zeros((H + 1, S))
    Q_h = np.empty((H, S, A))
    for h in range(H - 1, -1, -1):
        Q_h[h] = mdp.r + mdp.gamma * mdp.P @ V_h[h + 1]
        V_h[h] = Q_h[h].max(axis=1)
    return V_h, Q_h


def optimal_return(mdp):
    V_h, _ = value_iteration(mdp)
    return float(mdp.d0 @ V_h[0])


# -- closed-form offline step -----------------------------------------------

class ClosedForm(NamedTuple):
    policy: np.ndarray
    Z: np.ndarray
    log_Z: np.ndarray


def awac_closed_form(pi_old, advantages, lam) -> ClosedForm:
    """pi*(a|s) = pi_old(a|s) exp(A(s,a)/lam) / Z(s), computed in log space."""
    if lam <= 0:
        raise ValueError("lambda must be > 0")
    pi_old = np.asarray(pi_old, dtype=np.float64)
    with np.errstate(divide="ignore"):
        logits = np.log(pi_old) + np.asarray(advantages, dtype=np.float64) / lam
    log_Z = logsumexp(logits, axis=-1)
    pi_star = np.exp(logits - log_Z[..., None])
    pi_star /= pi_star.sum(axis=-1, keepdims=True)
    with np.errstate(over="ignore"):
        Z = np.exp(log_Z)
    return ClosedForm(pi_star, Z, log_Z)


def lemma1_check(pi_old, advantages, lam):
    """|E_{pi*}[A] - (lam KL(pi* || pi_old) + lam log Z)| per state."""
    pi_star, _, log_Z = awac_closed_form(pi_old, advantages, lam)
    lhs = np.sum(pi_star * advantages, axis=-1)
    rhs = lam * categorical_kl(pi_star, pi_old) + lam * log_Z
    return np.abs(lhs - rhs)


# -- coverage ---------------------------------------------------------------

@dataclass
class Concentrability:
    C: float
    finite: bool
    offending_state: int | None = None


def concentrability(mdp, pi, beta) -> Concentrability:
    """max_s d^pi(s) / rho_beta(s).

    ``beta`` is a behavior table [S][A] (exact d^{pi_beta}), a state
    distribution [S], or a tabular Dataset (empirical frequencies).
    """
    from .offline_data import Dataset, empirical_state_distribution

    if isinstance(beta, Dataset):
        rho = empirical_state_distribution(beta, mdp)
    else:
        beta = np.asarray(beta, dtype=np.float64)
        rho = discounted_state_distribution(mdp, beta) if beta.ndim == 2 else beta
    d = discounted_state_distribution(mdp, pi)
    support = d > 0
    bad = np.flatnonzero(support & (rho <= 0))
    if bad.size:
        return Concentrability(np.inf, False, int(bad[0]))
    return Concentrability(float(np.max(d[support] / rho[support])), True, None)


# -- one-cycle improvement bound ---------------------------------------------

@dataclass
class BoundReport:
    k: int
    G_off: float
    eps_adv: float
    eps_k: float
    zeta_k: float
    alpha_k: float
    Lambda_k: float
    lhs: float
    rhs: float
    satisfied: bool
    J_k: float = 0.0
    J_half: float = 0.0
    J_next: float = 0.0

    def to_dict(self):
        return {k: (bool(v) if isinstance(v, (bool, np.bool_)) else float(v) if k != "k" else int(v))
                for k, v in self.__dict__.items()}


def theorem1_check(mdp, pi_k, pi_half, pi_next, lam, advantage_estimate=None, k=0) -> BoundReport:
    """J(pi_next) - J(pi_k) >= lam/(1-gamma) G_off - Lambda_k, every term exact.

    ``advantage_estimate`` is the estimated advantage of pi_k used by the
    offline step; None means the exact advantage (eps_adv = 0).
    """
    g = mdp.gamma
    ev_k = exact_eval(mdp, pi_k)
    J_half = exact_eval(mdp, pi_half).J
    J_next = exact_eval(mdp, pi_next).J
    G_off = float(ev_k.d_pi @ categorical_kl(pi_half, pi_k))
    eps_adv = 0.0 if advantage_estimate is None else float(np.max(np.abs(advantage_estimate - ev_k.A)))
    eps_k = float(np.max(np.abs(ev_k.A)))
    zeta = float(np.max(categorical_tv(pi_half, pi_k)))
    alpha = float(np.max(categorical_tv(pi_next, pi_half)))
    Lam = eps_adv / (1 - g) + 2 * g * eps_k * zeta / (1 - g) ** 2 + 4 * eps_k * g * alpha ** 2 / (1 - g) ** 2
    lhs = J_next - ev_k.J
    rhs = lam / (1 - g) * G_off - Lam
    return BoundReport(k, G_off, eps_adv, eps_k, zeta, alpha, Lam, lhs, rhs,
                       bool(lhs >= rhs - BOUND_SLACK), ev_k.J, J_half, J_next)


def tv_projected_step(mdp, pi, step_size, max_tv):
    """Trust-region online improvement used by the exact harness.

    Tilts ``pi`` by exp(step_size * A^pi) and then mixes back toward ``pi``
    so that max_s TV(new, pi) <= max_tv. Mixing keeps
    E_{a~new}[A^pi(s, a)] >= 0 at every state.
    """
    A = exact_eval(mdp, pi).A
    target = awac_closed_form(pi, A, 1.0 / step_size).policy
    tv = np.max(categorical_tv(target, pi))
    beta = 1.0 if tv <= max_tv else max_tv / tv
    new = (1.0 - beta) * pi + beta * target
    return new / new.sum(axis=1, keepdims=True)


@dataclass
class ExactRun:
    policies: list          # pi_0, pi_1, ..., pi_K
    halves: list            # pi_{k+1/2}
    reports: list
    J: list                 # J(pi_k), k = 0..K
    G_off: list


def run_exact_mode(mdp, pi0, lam, cycles, online_step=1.0, max_tv=0.1, adv_noise=0.0, rng=None):
    """Closed-form offline step with (optionally perturbed) exact advantages,
    then a TV-projected online step, for ``cycles`` cycles."""
    pi = np.asarray(pi0, dtype=np.float64)
    policies, halves, reports, G = [pi], [], [], []
    for k in range(cycles):
        A = exact_eval(mdp, pi).A
        A_hat = A if adv_noise == 0 else A + rng.uniform(-adv_noise, adv_noise, size=A.shape)
        half = awac_closed_form(pi, A_hat, lam).policy
        nxt = tv_projected_step(mdp, half, online_step, max_tv) if max_tv > 0 else half
        rep = theorem1_check(mdp, pi, half, nxt, lam, None if adv_noise == 0 else A_hat, k=k)
        reports.append(rep)
        G.append(rep.G_off)
        halves.append(half)
        policies.append(nxt)
        pi = nxt
    J = [r.J_k for r in reports] + [reports[-1].J_next] if reports else [exact_eval(mdp, pi).J]
    return ExactRun(policies, halves, reports, J, G)


# -- contraction envelope ----------------------------------------------------

@dataclass
class ConvergenceTrace:
    Delta: np.ndarray
    rho_hat: float
    b_hat: float
    kappa_hat: float = float("nan")
    dominated: bool = True
    monotone_outside_floor: bool = True


def fit_envelope(Delta, tol=1e-12):
    """Floor b = final suboptimality; smallest rho with Delta_k <= rho^k Delta_0 + b for all k."""
    Delta = np.asarray(Delta, dtype=np.float64)
    b = float(max(Delta[-1], 0.0))
    d0 = Delta[0]
    if d0 <= tol:
        return float("nan"), b
    rho = 0.0
    for k in range(1, len(Delta)):
        excess = Delta[k] - b
        if excess > tol:
            rho = max(rho, (excess / d0) ** (1.0 / k))
    return float(rho), b


def theorem2_trace(J, J_star, G_off=None, tol=1e-9) -> ConvergenceTrace:
    """Suboptimality trace Delta_k = J* - J_k with a fitted geometric envelope."""
    Delta = float(J_star) - np.asarray(J, dtype=np.float64)
    rho, b = fit_envelope(Delta)
    if np.isnan(rho):
        dominated = bool(np.all(Delta <= b + tol))
    else:
        ks = np.arange(len(Delta))
        dominated = bool(np.all(Delta <= rho ** ks * Delta[0] + b + tol))
    above = Delta[:-1] > b + tol
    monotone = bool(np.all(np.diff(Delta)[above] <= tol))
    kappa = float("nan")
    if G_off is not None:
        G = np.asarray(G_off, dtype=np.float64)
        mask = Delta[:len(G)] > tol
        if mask.any():
            kappa = float(np.min(G[mask] / Delta[:len(G)][mask]))
    return ConvergenceTrace(Delta, rho, b, kappa, dominated, monotone)
