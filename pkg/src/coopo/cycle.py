"""K cycles of offline AWAC then online PPO, with exact parameter handoffs.

Per cycle k (models pi, Q, V enter from the previous cycle):

    offline: E epochs on the fixed dataset  -> pi_{k+1/2}, Q_E, V_E
    online:  T rounds starting from pi_{k+1/2}, V_E; Q frozen -> pi_{k+1}, V_T
    carry:   Q_{k+1} = Q_E, V_{k+1} = V_T, pi_{k+1} = pi_T
"""
from __future__ import annotations

import copy
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import approximator as nn
from .environments import make_benchmark
from .errors import InputError, NumericError
from .metrics import MetricRow, MetricsWriter
from .models import AgentState, checksum, make_agent
from .offline_data import Dataset
from .offline_data import load as load_dataset
from .offline_phase import OfflineConfig, run_offline
from .online_phase import InteractionCounter, OnlineConfig, run_online
from .policy import kl as policy_kl
from .policy import tv as policy_tv
from .seeding import make_rng

log = logging.getLogger(__name__)


@dataclass
class ModelConfig:
    hidden_layers: int = 2
    hidden_units: int = 64
    activation: str = "relu"
    tabular: bool | None = None  # None: table-like models on tabular envs


@dataclass
class CoopoConfig:
    cycles: int = 500
    offline: OfflineConfig = field(default_factory=OfflineConfig)
    online: OnlineConfig = field(default_factory=OnlineConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    env: str = "pointmass"
    dataset: str | None = None
    seed: int = 0
    eval_episodes: int = 20
    eval_every_iteration: bool = True
    early_stop: bool = False
    early_stop_window: int = 10
    early_stop_rel: float = 1e-3
    append_online_experimental: bool = False
    record_wall_time: bool = False
    beta_extra: float = 0.99  # listed hyperparameter of unknown role; unused

    def __post_init__(self):
        if self.cycles < 1:
            raise InputError("cycles must be >= 1")
        if self.eval_episodes < 1:
            raise InputError("eval_episodes must be >= 1")


@dataclass
class CycleReport:
    k: int
    J_before: float
    J_mid: float
    J_after: float
    mean_kl_offline: float
    env_steps_this_cycle: int
    wall_ms: float
    checksums: dict = field(default_factory=dict)
    dataset_checksum: str = ""
    # tabular runs only: policy tables pi_k, pi_{k+1/2}, pi_{k+1} and the
    # offline advantage estimate for pi_k
    tables: dict | None = field(default=None, repr=False)

    def to_json(self):
        d = asdict(self)
        d.pop("tables")
        return d


@dataclass
class EvalResult:
    mean: float
    std: float
    discounted_mean: float
    discounted_std: float
    n: int


def evaluate(policy, env, n_episodes, seed, stochastic=None, encode=None) -> EvalResult:
    """Monte-Carlo returns on a private copy of ``env``.

    Tabular policies act stochastically by default (to match exact DP),
    continuous ones use the mean action.
    """
    if n_episodes < 1:
        raise InputError("n_episodes must be >= 1")
    env = copy.deepcopy(env)
    stochastic = env.discrete if stochastic is None else stochastic
    encode = encode or env.encode
    rng = np.random.default_rng(seed)
    gamma = getattr(env, "gamma", 1.0)
    undisc, disc = [], []
    for _ in range(n_episodes):
        s = env.reset(seed=int(rng.integers(2 ** 62)))
        total, dtotal, g = 0.0, 0.0, 1.0
        while True:
            o = encode(s)
            a = policy.sample(o, rng) if stochastic else policy.mode(o)
            res = env.step(a)
            total += res.reward
            dtotal += g * res.reward
            g *= gamma
            s = res.next_state
            if res.done:
                break
        undisc.append(total)
        disc.append(dtotal)
    return EvalResult(float(np.mean(undisc)), float(np.std(undisc)), float(np.mean(disc)),
                      float(np.std(disc)), n_episodes)


def _eval_score(res: EvalResult, env):
    # discounted J for tabular fixtures (what the DP oracle computes), plain return otherwise
    return res.discounted_mean if env.discrete else res.mean


def save_models(out_dir, k, state: AgentState):
    d = os.path.join(out_dir, f"cycle_{k}")
    os.makedirs(d, exist_ok=True)
    pol = state.policy
    nn.save_checkpoint(os.path.join(d, "pi.ckpt"), pol.spec, pol.params,
                       getattr(pol, "log_std", None))
    nn.save_checkpoint(os.path.join(d, "q.ckpt"), state.q.spec, state.q.params)
    nn.save_checkpoint(os.path.join(d, "v.ckpt"), state.v.spec, state.v.params)


class Run:
    """Shared bookkeeping for COOPO and the PPO baseline."""

    def __init__(self, config: CoopoConfig, env=None, out_dir=None, writer=None, run_id=None):
        self.config = config
        self.env = env if env is not None else make_benchmark(config.env)
        self.out_dir = out_dir
        self.run_id = run_id or f"{config.env}-s{config.seed}"
        self.writer = writer
        if writer is None and out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
            self.writer = MetricsWriter(os.path.join(out_dir, "metrics.csv"))
        self.counter = InteractionCounter(budget=config.online.total_step_budget)
        self.t0 = time.perf_counter()
        self.reports = []
        self._reports_fh = open(os.path.join(out_dir, "reports.jsonl"), "w") if out_dir else None

    def wall(self):
        return (time.perf_counter() - self.t0) * 1000.0 if self.config.record_wall_time else 0.0

    def emit(self, **kw):
        if self.writer is not None:
            self.writer.write(MetricRow(run_id=self.run_id, env_steps_cum=self.counter.env_steps,
                                        traj_cum=self.counter.trajectories, wall_ms=self.wall(), **kw))

    def eval_policy(self, policy, k, tag):
        res = evaluate(policy, self.env, self.config.eval_episodes,
                       int(make_rng(self.config.seed, k, "eval", tag).integers(2 ** 62)))
        return _eval_score(res, self.env)

    def report(self, rep: CycleReport):
        self.reports.append(rep)
        if self._reports_fh is not None:
            self._reports_fh.write(json.dumps(rep.to_json()) + "\n")
            self._reports_fh.flush()

    def close(self):
        if self._reports_fh is not None:
            self._reports_fh.close()
        if self.writer is not None and self.out_dir is not None:
            self.writer.close()

    def plateaued(self):
        c = self.config
        if not c.early_stop or len(self.reports) < c.early_stop_window + 1:
            return False
        old = self.reports[-c.early_stop_window - 1].J_after
        new = self.reports[-1].J_after
        return (new - old) < c.early_stop_rel * max(abs(old), 1e-12)


def _online_logger(run, k, state_ref):
    """Per-iteration hook: KL/TV to the pre-update policy and optional evaluation."""

    def hook(row, before, buf_obs):
        pol = state_ref.policy
        klv = float(np.mean(policy_kl(pol, before, buf_obs)))
        tvv = float(np.mean(policy_tv(pol, before, buf_obs)))
        run.emit(cycle=k, phase="online", step=row["iteration"], mean_return=row["mean_return"],
                 policy_loss=-row["policy_objective"], v_loss=row["v_loss"], kl_to_prev=klv,
                 tv_to_prev=tvv, adv_mean=row["adv_mean"], adv_absmax=row["adv_absmax"])
        if run.config.eval_every_iteration:
            run.emit(cycle=k, phase="eval", step=row["iteration"],
                     mean_return=run.eval_policy(pol, k, f"it{row['iteration']}"))

    return hook


def _run_online_logged(run, state, k, rng, keep_buffers=None):
    """run_online, one round at a time so every round can be logged and evaluated."""
    cfg = run.config.online
    one = OnlineConfig(**{**asdict(cfg), "iterations": 1})
    hook = _online_logger(run, k, state)
    done = 0
    for t in range(cfg.iterations):
        if run.counter.exhausted:
            break
        before = state.policy.copy()
        _, rows = run_online(run.env, state, one, rng, run.counter, keep_buffers=keep_buffers)
        if not rows:
            break
        rows[0]["iteration"] = t + 1
        obs = state.encode(_probe_states(run.env, rows, state))
        hook(rows[0], before, obs)
        done = t + 1
    return done


def _probe_states(env, rows, state):
    # fixed probe set for the KL/TV diagnostics of online updates
    if env.discrete:
        return np.arange(env.n_states)
    rng = np.random.default_rng(12345)
    pos = rng.uniform(-0.5, 1.5, size=(256, 2))
    vel = rng.uniform(-1.0, 1.0, size=(256, 2))
    return np.concatenate([pos, vel], axis=1)


def _fresh_optimizers(state, lr):
    state.opt_pi = nn.OptimizerState.for_params(state.policy.flat, lr=lr)
    state.opt_q = nn.OptimizerState.for_params(state.q.params, lr=lr)
    state.opt_v = nn.OptimizerState.for_params(state.v.params, lr=lr)


def _tables(env, state):
    return state.policy.probs(env.encode(np.arange(env.n_states)))


def _advantage_table(env, state):
    obs = env.encode(np.arange(env.n_states))
    return state.q.all_actions(obs) - state.v(obs)[:, None]


def append_buffers(dataset, buffers):
    """Experimental: a new Dataset with online transitions appended."""
    cols = {"s": [dataset.s], "a": [dataset.a], "r": [dataset.r], "s2": [dataset.s2],
            "done": [dataset.done]}
    for b in buffers:
        cols["s"].append(np.asarray(b.states, dtype=dataset.s.dtype))
        cols["a"].append(np.asarray(b.actions, dtype=dataset.a.dtype).reshape((-1,) + dataset.a.shape[1:]))
        cols["r"].append(b.rewards)
        cols["s2"].append(np.asarray(b.next_states, dtype=dataset.s2.dtype))
        cols["done"].append(np.asarray(b.dones, dtype=bool))
    meta = {**dataset.meta, "augmented_online": True}
    return Dataset(*(np.concatenate(cols[k]) for k in ("s", "a", "r", "s2", "done")), meta=meta)


def init_agent(config: CoopoConfig, env):
    m = config.model
    rng = make_rng(config.seed, 0, "init")
    return make_agent(env, rng, m.hidden_layers, m.hidden_units, m.activation,
                      lr=config.offline.lr, tabular=m.tabular)


def _load_dataset(config, dataset):
    if isinstance(dataset, Dataset):
        return dataset
    path = dataset or config.dataset
    if path is None:
        raise InputError("COOPO needs an offline dataset")
    return load_dataset(path)


def run_coopo(config: CoopoConfig, dataset=None, env=None, out_dir=None, writer=None,
              state=None, run_id=None):
    """Run K offline/online cycles. Returns (final AgentState, list of CycleReport).

    A sub-phase failure is re-raised with the cycle index after the reports
    gathered so far have been flushed.
    """
    data = _load_dataset(config, dataset)
    run = Run(config, env, out_dir, writer, run_id)
    env = run.env
    state = state or init_agent(config, env)
    ds_sum = data.checksum()
    work = data
    try:
        for k in range(config.cycles):
            if run.counter.exhausted:
                break
            t_cycle = time.perf_counter()
            steps0 = run.counter.env_steps
            if not config.append_online_experimental and work.checksum() != ds_sum:
                raise RuntimeError("offline dataset changed between cycles")
            pi_k_table = _tables(env, state) if env.discrete else None
            J_before = run.eval_policy(state.policy, k, "before")
            run.emit(cycle=k, phase="eval", step=-1, mean_return=J_before)
            incoming = state.checksums()

            # offline
            _fresh_optimizers(state, config.offline.lr)
            probe = state.encode(work.s[:2048])

            def on_epoch(row, k=k):
                run.emit(cycle=k, phase="offline", step=row["epoch"], policy_loss=row["policy_loss"],
                         q_loss=row["q_loss"], v_loss=row["v_loss"],
                         kl_to_prev=row["kl_to_epoch_start"], adv_mean=row["adv_mean"],
                         adv_absmax=row["adv_absmax"])

            pi_start = state.policy.copy()
            state.epoch = 0
            try:
                _, off_rows = run_offline(work, state, config.offline, make_rng(config.seed, k, "offline"),
                                          on_epoch=on_epoch)
            except NumericError as exc:
                raise NumericError(f"cycle {k} offline phase: {exc}") from exc
            mean_kl = float(np.mean(policy_kl(state.policy, pi_start, probe)))
            q_off = checksum(state.q.params)
            after_offline = state.checksums()
            half_table = _tables(env, state) if env.discrete else None
            adv_table = _advantage_table(env, state) if env.discrete else None
            J_mid = run.eval_policy(state.policy, k, "mid")
            run.emit(cycle=k, phase="eval", step=0, mean_return=J_mid)

            # online: V and pi continue from the offline phase, Q stays frozen
            _fresh_optimizers(state, config.online.lr)
            q_frozen = state.q.params.copy()
            buffers = [] if config.append_online_experimental else None
            try:
                n_it = _run_online_logged(run, state, k, make_rng(config.seed, k, "online"), buffers)
            except NumericError as exc:
                raise NumericError(f"cycle {k} online phase: {exc}") from exc
            if not np.array_equal(q_frozen, state.q.params):
                raise RuntimeError("Q parameters changed during the online phase")
            if buffers:
                log.warning("append_online_experimental is on: online data is mixed into the dataset")
                work = append_buffers(work, buffers)
            J_after = run.eval_policy(state.policy, k, "after")
            if not config.eval_every_iteration and n_it:
                run.emit(cycle=k, phase="eval", step=n_it, mean_return=J_after)
            outgoing = state.checksums()
            sums = {"incoming": incoming, "after_offline": after_offline, "outgoing": outgoing,
                    "q_offline_last": q_off}
            tables = None
            if env.discrete:
                tables = {"pi_k": pi_k_table, "pi_half": half_table,
                          "pi_next": _tables(env, state), "adv_hat": adv_table}
            rep = CycleReport(k, J_before, J_mid, J_after, mean_kl, run.counter.env_steps - steps0,
                              (time.perf_counter() - t_cycle) * 1000.0, sums, ds_sum, tables)
            run.report(rep)
            if out_dir is not None:
                save_models(out_dir, k, state)
            if run.plateaued():
                log.info("early stop at cycle %d", k)
                break
    finally:
        run.close()
    return state, run.reports


def run_ppo_baseline(config: CoopoConfig, env=None, out_dir=None, writer=None, run_id=None):
    """Same online machinery and accounting, random init, no offline phases."""
    run = Run(config, env, out_dir, writer, run_id)
    env = run.env
    state = init_agent(config, env)
    try:
        for k in range(config.cycles):
            if run.counter.exhausted:
                break
            t_cycle = time.perf_counter()
            steps0 = run.counter.env_steps
            J_before = run.eval_policy(state.policy, k, "before")
            run.emit(cycle=k, phase="eval", step=-1, mean_return=J_before)
            _fresh_optimizers(state, config.online.lr)
            incoming = state.checksums()
            n_it = _run_online_logged(run, state, k, make_rng(config.seed, k, "online"))
            J_after = run.eval_policy(state.policy, k, "after")
            if not config.eval_every_iteration and n_it:
                run.emit(cycle=k, phase="eval", step=n_it, mean_return=J_after)
            rep = CycleReport(k, J_before, J_before, J_after, 0.0, run.counter.env_steps - steps0,
                              (time.perf_counter() - t_cycle) * 1000.0,
                              {"incoming": incoming, "outgoing": state.checksums()}, "")
            run.report(rep)
    finally:
        run.close()
    return state, run.reports
