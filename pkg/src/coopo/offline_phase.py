"""KL-regularized advantage-weighted actor-critic on a fixed dataset."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import approximator as nn
from .errors import InputError, NumericError
from .models import AgentState
from .offline_data import sample_batch
from .policy import kl as policy_kl

log = logging.getLogger(__name__)

OfflineState = AgentState
KL_PROBE_ROWS = 2048  # dataset rows used for the per-epoch KL diagnostic


@dataclass
class OfflineConfig:
    epochs: int = 100
    batch: int = 512
    lam: float = 0.05
    weight_clip: float = 20.0
    gamma: float = 0.99
    lr: float = 3e-4
    kl_weight: float | None = None  # None: use lam, as in the actor objective
    steps_per_epoch: int | None = None  # None: ceil(|D| / batch)

    def __post_init__(self):
        if self.epochs < 1:
            raise InputError("offline.epochs must be >= 1")
        if self.batch < 1:
            raise InputError("offline.batch must be >= 1")
        if not self.lam > 0:
            raise InputError("offline.lambda must be > 0")
        if self.weight_clip < 1:
            raise InputError("offline.weight_clip must be >= 1")
        if self.kl_weight is not None and self.kl_weight < 0:
            raise InputError("offline.kl_weight must be >= 0")

    @property
    def kl_coef(self):
        return self.lam if self.kl_weight is None else self.kl_weight


def td_target(batch, state: AgentState, gamma, rng=None):
    """y = r + gamma E_{a'~pi}[Q(s', a')], and y = r on terminal transitions.

    Discrete actions use the exact expectation over a'; continuous ones a
    single sample a' ~ pi(.|s').
    """
    obs2 = state.encode(batch.s2)
    if state.discrete:
        q_next = np.sum(state.policy.probs(obs2) * state.q.all_actions(obs2), axis=1)
    else:
        a2 = state.policy.sample(obs2, rng)
        q_next = state.q(obs2, a2)
    return batch.r + gamma * (1.0 - batch.done.astype(np.float64)) * q_next


def update_q(batch, state: AgentState, y, weights=None):
    """One Adam step on mean (Q(s,a) - y)^2; returns pre-step loss."""
    loss, g = state.q.mse_and_grad(state.encode(batch.s), batch.a, y, weights)
    if not np.isfinite(loss):
        raise NumericError("non-finite Q loss")
    params, state.opt_q = nn.optimizer_step(state.opt_q, state.q.params, g)
    state.q = state.q.with_params(params)
    return loss


def update_v(batch, state: AgentState, y, weights=None):
    """Regress V(s) onto the same targets as Q."""
    loss, g = state.v.mse_and_grad(state.encode(batch.s), y, weights)
    if not np.isfinite(loss):
        raise NumericError("non-finite V loss")
    params, state.opt_v = nn.optimizer_step(state.opt_v, state.v.params, g)
    state.v = state.v.with_params(params)
    return loss


def advantage_hat(state: AgentState, s, a):
    obs = state.encode(s)
    return state.q(obs, a) - state.v(obs)


def advantage_weights(adv, lam, w_max):
    """min(exp(A/lam), w_max), evaluated without overflow; also returns clip count."""
    z = np.asarray(adv, dtype=np.float64) / lam
    cap = math.log(w_max)
    clipped = z > cap
    return np.exp(np.minimum(z, cap)), int(clipped.sum())


def actor_loss_and_grad(policy, ref, obs, actions, weights, kl_coef, sample_weight=None):
    """Loss = -E[w log pi(a|s)] + kl_coef E[KL(pi(.|s) || ref(.|s))], weighted mean over rows.

    Returns (loss, grad wrt policy.flat, mean KL).
    """
    n = len(obs)
    c = np.full(n, 1.0 / n) if sample_weight is None else np.asarray(sample_weight) / np.sum(sample_weight)
    out, cache = policy.forward(obs)
    ref_out, _ = ref.forward(obs)
    if policy.family == "categorical":
        logp, dlogp = policy.log_prob_terms(out, actions)
        kl, dkl = policy.kl_terms(out, ref_out)
        d_out = -(c * weights)[:, None] * dlogp + kl_coef * c[:, None] * dkl
        d_ls = None
    else:
        logp, dlogp_mu, dlogp_ls = policy.log_prob_terms(out, actions)
        kl, dkl_mu, dkl_ls = policy.kl_terms(out, ref_out, ref.log_std)
        d_out = -(c * weights)[:, None] * dlogp_mu + kl_coef * c[:, None] * dkl_mu
        d_ls = (-(c * weights)[:, None] * dlogp_ls + kl_coef * c[:, None] * dkl_ls).sum(axis=0)
    loss = float(-np.sum(c * weights * logp) + kl_coef * np.sum(c * kl))
    if not np.isfinite(loss):
        raise NumericError("non-finite actor loss")
    return loss, policy.param_grad(cache, d_out, d_ls), float(np.sum(c * kl))


def actor_update(batch, state: AgentState, ref_policy, lam, w_max, kl_coef=None, adv=None,
                 sample_weight=None):
    """One ascent step on the advantage-weighted likelihood minus the KL penalty.

    ``adv`` defaults to Q(s,a) - V(s) from the current critics. Returns
    (loss, batch KL to the reference before the step, number of clipped weights).
    """
    kl_coef = lam if kl_coef is None else kl_coef
    if adv is None:
        adv = advantage_hat(state, batch.s, batch.a)
    w, n_clipped = advantage_weights(adv, lam, w_max)
    if n_clipped:
        log.debug("advantage weight clip active on %d/%d samples", n_clipped, len(w))
    if not np.any(w > 0):
        log.warning("degenerate batch: all advantage weights are zero; actor step skipped")
        return float("nan"), float("nan"), n_clipped
    obs = state.encode(batch.s)
    loss, g, kl = actor_loss_and_grad(state.policy, ref_policy, obs, batch.a, w, kl_coef,
                                      sample_weight)
    flat, state.opt_pi = nn.optimizer_step(state.opt_pi, state.policy.flat, g)
    state.policy = state.policy.with_flat(flat)
    return loss, kl, n_clipped


def run_offline(dataset, state: AgentState, config: OfflineConfig, rng, on_epoch=None):
    """E epochs of: sample batch -> TD target -> Q step -> V step -> actor step.

    The KL reference is the policy at the start of each epoch. ``on_epoch``
    receives each per-epoch metrics dict as it is produced.
    """
    steps = config.steps_per_epoch or math.ceil(len(dataset) / config.batch)
    batch_size = min(config.batch, len(dataset))
    metrics = []
    for _ in range(config.epochs):
        ref = state.policy.copy()
        q_l, v_l, pi_l, kls, adv_mean, adv_max, clipped = [], [], [], [], [], 0.0, 0
        for _ in range(steps):
            batch = sample_batch(dataset, batch_size, rng)
            y = td_target(batch, state, config.gamma, rng)
            q_l.append(update_q(batch, state, y))
            v_l.append(update_v(batch, state, y))
            adv = advantage_hat(state, batch.s, batch.a)
            loss, kl, nc = actor_update(batch, state, ref, config.lam, config.weight_clip,
                                        config.kl_coef, adv=adv)
            pi_l.append(loss)
            kls.append(kl)
            clipped += nc
            adv_mean.append(float(np.mean(adv)))
            adv_max = max(adv_max, float(np.max(np.abs(adv))))
        state.epoch += 1
        obs_all = state.encode(dataset.s[:KL_PROBE_ROWS])
        row = {"epoch": state.epoch, "q_loss": float(np.mean(q_l)), "v_loss": float(np.mean(v_l)),
               "policy_loss": float(np.nanmean(pi_l)), "batch_kl": float(np.nanmean(kls)),
               "kl_to_epoch_start": float(np.mean(policy_kl(state.policy, ref, obs_all))),
               "adv_mean": float(np.mean(adv_mean)), "adv_absmax": adv_max,
               "weight_clipped": clipped}
        state.history.append(row)
        metrics.append(row)
        if on_epoch is not None:
            on_epoch(row)
    return state, metrics
