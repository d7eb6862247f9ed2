"""Clipped-surrogate policy fine-tuning with a reward-to-go value baseline.

The Q critic is never touched here.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import approximator as nn
from .errors import InputError, NumericError
from .models import AgentState

RATIO_LOG_LIMIT = 20.0
STD_FLOOR = 1e-8


@dataclass
class OnlineConfig:
    iterations: int = 5          # T: collect/update rounds per cycle
    episodes_per_iter: int = 5   # trajectories collected per round
    batch: int = 64
    clip: float = 0.2
    epochs_per_update: int = 5
    gamma: float = 0.99
    lr: float = 3e-4
    adv_normalize: bool = True
    gae_lambda: float | None = None  # off: advantages are reward-to-go minus V
    total_step_budget: int | None = None
    buffer_size: int | None = None  # stop starting new episodes once a round holds this many steps

    def __post_init__(self):
        if self.iterations < 1:
            raise InputError("online.iterations must be >= 1")
        if self.episodes_per_iter < 1:
            raise InputError("online.episodes_per_iter must be >= 1")
        if not 0.0 < self.clip < 1.0:
            raise InputError("online.clip must be in (0, 1)")
        if self.batch < 1 or self.epochs_per_update < 1:
            raise InputError("online.batch and online.epochs_per_update must be >= 1")
        if self.buffer_size is not None and self.buffer_size < 1:
            raise InputError("online.buffer_size must be >= 1")
        if self.total_step_budget is not None and self.total_step_budget < 1:
            raise InputError("online.total_step_budget must be >= 1")


@dataclass
class InteractionCounter:
    """Cumulative environment interactions across a whole run."""

    env_steps: int = 0
    trajectories: int = 0
    budget: int | None = None

    @property
    def exhausted(self):
        return self.budget is not None and self.env_steps >= self.budget


@dataclass
class RolloutBuffer:
    states: list = field(default_factory=list)
    next_states: list = field(default_factory=list)
    dones: list = field(default_factory=list)
    obs: np.ndarray | None = None
    actions: np.ndarray | None = None
    rewards: np.ndarray | None = None
    logp_old: np.ndarray | None = None
    v_old: np.ndarray | None = None
    lengths: list = field(default_factory=list)
    returns: list = field(default_factory=list)
    rtg: np.ndarray | None = None
    adv: np.ndarray | None = None

    @property
    def n_steps(self):
        return int(sum(self.lengths))

    def traj_slices(self):
        start = 0
        for n in self.lengths:
            yield slice(start, start + n)
            start += n


def collect(env, state: AgentState, n_episodes, rng, counter: InteractionCounter | None = None,
            max_steps=None):
    """Roll out the current policy from reset to done.

    log pi_old and V_old are evaluated with the collection-time parameters,
    once per finished trajectory. With a budget, the last trajectory is cut
    when the budget is reached.
    """
    if n_episodes < 1:
        raise InputError("n_episodes must be >= 1")
    policy = state.policy
    obs_l, act_l, rew_l, states_l, lengths, rets = [], [], [], [], [], []
    next_l, done_l = [], []
    for ep in range(n_episodes):
        if counter is not None and counter.exhausted:
            break
        if max_steps is not None and len(states_l) >= max_steps:
            break
        s = env.reset(seed=int(rng.integers(2 ** 62)))
        ep_obs, ep_act, ep_rew = [], [], []
        ret = 0.0
        while True:
            o = state.encode(s)
            a = policy.sample(o, rng)
            try:
                res = env.step(a)
            except NumericError as exc:
                raise NumericError(f"trajectory {ep}: {exc}") from exc
            states_l.append(s)
            next_l.append(res.next_state)
            done_l.append(bool(res.done))
            ep_obs.append(o); ep_act.append(a); ep_rew.append(res.reward)
            ret += res.reward
            s = res.next_state
            if counter is not None:
                counter.env_steps += 1
            if res.done or (counter is not None and counter.exhausted):
                done_l[-1] = True
                break
        if counter is not None:
            counter.trajectories += 1
        obs_l.extend(ep_obs); act_l.extend(ep_act); rew_l.extend(ep_rew)
        lengths.append(len(ep_rew))
        rets.append(ret)
    buf = RolloutBuffer(states=states_l, next_states=next_l, dones=done_l, lengths=lengths,
                        returns=rets)
    if not lengths:
        return buf
    buf.obs = np.asarray(obs_l, dtype=np.float64)
    buf.actions = np.asarray(act_l)
    buf.rewards = np.asarray(rew_l, dtype=np.float64)
    buf.logp_old = policy.log_prob(buf.obs, buf.actions)
    buf.v_old = state.v(buf.obs)
    return buf


def reward_to_go(rewards, gamma):
    """R_h = r_h + gamma R_{h+1}, backwards over one trajectory."""
    rewards = np.asarray(rewards, dtype=np.float64)
    out = np.empty_like(rewards)
    acc = 0.0
    for h in range(len(rewards) - 1, -1, -1):
        acc = rewards[h] + gamma * acc
        out[h] = acc
    return out


def compute_rtg(buffer: RolloutBuffer, gamma):
    buffer.rtg = np.concatenate([reward_to_go(buffer.rewards[sl], gamma)
                                 for sl in buffer.traj_slices()])
    return buffer.rtg


def normalize(x):
    return (x - x.mean()) / max(float(x.std()), STD_FLOOR)


def advantages(buffer: RolloutBuffer, state: AgentState, normalize_adv, gamma=None,
               gae_lambda=None):
    """A_h = R_h - V(s_h) (optionally GAE), optionally standardized."""
    v = state.v(buffer.obs)
    if gae_lambda is None:
        adv = buffer.rtg - v
    else:
        adv = np.empty_like(v)
        for sl in buffer.traj_slices():
            r, vs = buffer.rewards[sl], v[sl]
            nxt = np.append(vs[1:], 0.0)
            delta = r + gamma * nxt - vs
            adv[sl] = reward_to_go(delta, gamma * gae_lambda)
    buffer.adv = normalize(adv) if normalize_adv else adv
    return buffer.adv


def clipped_objective(ratio, adv, clip):
    """Per-sample min(c A, clip(c, 1-clip, 1+clip) A)."""
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv)


def ppo_loss_and_grad(policy, obs, actions, logp_old, adv, clip):
    """Negative mean clipped surrogate and its gradient wrt policy.flat.

    Samples whose log-ratio exceeds RATIO_LOG_LIMIT in magnitude are dropped.
    Returns (loss, grad, fraction_clipped, n_excluded).
    """
    out, cache = policy.forward(obs)
    terms = policy.log_prob_terms(out, actions)
    diff = terms[0] - logp_old
    keep = np.abs(diff) <= RATIO_LOG_LIMIT
    n_excl = int((~keep).sum())
    n = max(int(keep.sum()), 1)
    ratio = np.exp(np.where(keep, diff, 0.0))
    obj = clipped_objective(ratio, adv, clip)
    unclipped_active = (ratio * adv <= np.clip(ratio, 1 - clip, 1 + clip) * adv) & keep
    # d obj / d logp = ratio * adv on the unclipped branch, 0 on the clipped one
    coef = np.where(unclipped_active, ratio * adv, 0.0) / n
    if policy.family == "categorical":
        d_out = -coef[:, None] * terms[1]
        d_ls = None
    else:
        d_out = -coef[:, None] * terms[1]
        d_ls = -(coef[:, None] * terms[2]).sum(axis=0)
    loss = -float(np.sum(np.where(keep, obj, 0.0)) / n)
    frac = float(np.mean((np.abs(ratio - 1.0) > clip) & keep))
    return loss, policy.param_grad(cache, d_out, d_ls), frac, n_excl


def ppo_actor_update(buffer: RolloutBuffer, state: AgentState, clip, epochs_per_update, batch, rng):
    """Minibatch ascent on the clipped surrogate.

    Returns (mean objective over the last pass, fraction clipped over the
    last pass, excluded-sample count).
    """
    n = buffer.n_steps
    if n == 0:
        raise InputError("empty rollout buffer")
    objs, fracs, excluded = [], [], 0
    for epoch in range(epochs_per_update):
        perm = rng.permutation(n)
        objs, fracs = [], []
        for start in range(0, n, batch):
            idx = perm[start:start + batch]
            loss, g, frac, n_excl = ppo_loss_and_grad(state.policy, buffer.obs[idx],
                                                      buffer.actions[idx], buffer.logp_old[idx],
                                                      buffer.adv[idx], clip)
            excluded += n_excl
            flat, state.opt_pi = nn.optimizer_step(state.opt_pi, state.policy.flat, g)
            state.policy = state.policy.with_flat(flat)
            objs.append(-loss * len(idx))
            fracs.append(frac * len(idx))
    return sum(objs) / n, sum(fracs) / n, excluded


def value_update(buffer: RolloutBuffer, state: AgentState, epochs_per_update, batch, rng):
    """Minibatch regression of V onto the reward-to-go; returns mean pre-step loss."""
    n = buffer.n_steps
    losses = []
    for _ in range(epochs_per_update):
        perm = rng.permutation(n)
        for start in range(0, n, batch):
            idx = perm[start:start + batch]
            loss, g = state.v.mse_and_grad(buffer.obs[idx], buffer.rtg[idx])
            if not np.isfinite(loss):
                raise NumericError("non-finite value loss")
            params, state.opt_v = nn.optimizer_step(state.opt_v, state.v.params, g)
            state.v = state.v.with_params(params)
            losses.append(loss)
    return float(np.mean(losses))


def run_online(env, state: AgentState, config: OnlineConfig, rng,
               counter: InteractionCounter | None = None, on_iteration=None, keep_buffers=None):
    """T rounds of collect -> reward-to-go -> advantages -> actor step -> value step.

    Collected buffers are appended to ``keep_buffers`` when a list is given.
    """
    counter = counter if counter is not None else InteractionCounter(budget=config.total_step_budget)
    metrics = []
    for t in range(config.iterations):
        if counter.exhausted:
            break
        buf = collect(env, state, config.episodes_per_iter, rng, counter, config.buffer_size)
        if buf.n_steps == 0:
            break
        if keep_buffers is not None:
            keep_buffers.append(buf)
        compute_rtg(buf, config.gamma)
        adv_raw = buf.rtg - buf.v_old
        advantages(buf, state, config.adv_normalize, config.gamma, config.gae_lambda)
        obj, frac, excl = ppo_actor_update(buf, state, config.clip, config.epochs_per_update,
                                           config.batch, rng)
        v_loss = value_update(buf, state, config.epochs_per_update, config.batch, rng)
        row = {"iteration": t + 1, "mean_return": float(np.mean(buf.returns)),
               "policy_objective": obj, "fraction_clipped": frac, "ratio_excluded": excl,
               "v_loss": v_loss, "adv_mean": float(np.mean(adv_raw)),
               "adv_absmax": float(np.max(np.abs(adv_raw))), "steps": buf.n_steps,
               "episodes": len(buf.lengths), "env_steps_cum": counter.env_steps,
               "traj_cum": counter.trajectories}
        metrics.append(row)
        if on_iteration is not None:
            on_iteration(row)
    return state, metrics
