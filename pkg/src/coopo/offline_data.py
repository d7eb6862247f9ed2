"""Offline transition datasets: generation, JSONL persistence, batching."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import approximator as nn
from .errors import InputError, ParseError, SchemaError, UnsupportedError

# Stand-ins for D4RL quality tiers (repo convention, not taken from any benchmark).
TIERS = {"expert": 0.05, "medium": 0.3, "random": 1.0}

PD_GAINS = (2.0, 2.5)  # proportional, derivative
BASE_NOISE = 0.1  # Gaussian std of the continuous base policy before inflation


@dataclass(frozen=True)
class Transition:
    s: object
    a: object
    r: float
    s2: object
    done: bool


@dataclass(frozen=True)
class BehaviorPolicyDescriptor:
    """``base`` is a fixture policy name ("uniform", "optimal", "pd") or a
    checkpoint path. With probability ``epsilon`` the action is replaced by a
    uniformly random one; continuous bases also get Gaussian noise of std
    BASE_NOISE * sigma_factor."""

    base: str
    epsilon: float = 0.0
    sigma_factor: float = 1.0
    tier: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise InputError(f"epsilon must be in [0, 1], got {self.epsilon}")
        if self.sigma_factor < 1.0:
            raise InputError(f"sigma_factor must be >= 1, got {self.sigma_factor}")

    @classmethod
    def from_tier(cls, env, tier):
        if tier not in TIERS:
            raise InputError(f"unknown tier {tier!r}; choose from {sorted(TIERS)}")
        base = "optimal" if env.discrete else "pd"
        return cls(base, TIERS[tier], 1.0, tier)

    def to_dict(self):
        return {"base": self.base, "epsilon": self.epsilon, "sigma_factor": self.sigma_factor,
                "tier": self.tier, "note": "synthetic stand-in behavior policy"}


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    done: np.ndarray
    idx: np.ndarray | None = None

    def __len__(self):
        return len(self.r)


@dataclass
class Dataset:
    """Column-major transition store; meta carries env, behavior, seed, n."""

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    done: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.r)
        if n < 1:
            raise SchemaError("dataset must contain at least one transition")
        for name in ("s", "a", "s2", "done"):
            if len(getattr(self, name)) != n:
                raise SchemaError(f"column {name} has {len(getattr(self, name))} rows, expected {n}")
        if self.s.shape != self.s2.shape:
            raise SchemaError("s and s2 shapes differ")
        if not np.all(np.isfinite(self.r)):
            raise SchemaError("rewards must be finite")
        self.meta = dict(self.meta)
        self.meta["n"] = n

    @property
    def discrete(self):
        return self.s.ndim == 1

    def __len__(self):
        return len(self.r)

    def __getitem__(self, i):
        conv = (lambda x: int(x)) if self.discrete else (lambda x: x.copy())
        aconv = (lambda x: int(x)) if self.a.ndim == 1 else (lambda x: x.copy())
        return Transition(conv(self.s[i]), aconv(self.a[i]), float(self.r[i]), conv(self.s2[i]),
                          bool(self.done[i]))

    @property
    def transitions(self):
        return [self[i] for i in range(len(self))]

    def as_batch(self):
        return Batch(self.s, self.a, self.r, self.s2, self.done, np.arange(len(self)))

    def checksum(self):
        h = hashlib.sha256()
        for arr in (self.s, self.a, self.r, self.s2, self.done):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.meta == other.meta and all(
            np.array_equal(getattr(self, k), getattr(other, k)) for k in ("s", "a", "r", "s2", "done"))


# -- behavior policies -------------------------------------------------------

def pd_action(env, state):
    kp, kd = PD_GAINS
    return kp * (env.goal - state[:2]) - kd * state[2:]


def behavior_table(env, behavior: BehaviorPolicyDescriptor):
    """Exact pi_beta as an [S][A] table for tabular environments."""
    from .theory import value_iteration

    S, A = env.n_states, env.n_actions
    if behavior.base == "uniform":
        base = np.full((S, A), 1.0 / A)
    elif behavior.base == "optimal":
        _, q_star = value_iteration(env)
        base = np.eye(A)[np.argmax(q_star[0], axis=1)]
    elif behavior.base.endswith(".ckpt"):
        from .policy import CategoricalPolicy
        spec, params, _ = nn.load_checkpoint(behavior.base)
        base = CategoricalPolicy(spec, params).probs(env.encode(np.arange(S)))
    else:
        raise InputError(f"unknown tabular base policy {behavior.base!r}")
    return (1.0 - behavior.epsilon) * base + behavior.epsilon / A


def _continuous_actor(env, behavior):
    if behavior.base == "pd":
        return lambda s: pd_action(env, s)
    if behavior.base.endswith(".ckpt"):
        spec, params, _ = nn.load_checkpoint(behavior.base)
        return lambda s: nn.forward(spec, params, s)
    raise InputError(f"unknown continuous base policy {behavior.base!r}")


def generate(env, behavior: BehaviorPolicyDescriptor, n_transitions: int, seed: int) -> Dataset:
    """Roll out pi_beta (episodes truncated at the env horizon) until exactly n transitions."""
    n = int(n_transitions)
    if n < 1:
        raise InputError("n_transitions must be >= 1")
    rng = np.random.default_rng(seed)
    env.reset(seed=int(rng.integers(2 ** 62)))
    if env.discrete:
        table = behavior_table(env, behavior)
        cdf = np.cumsum(table, axis=1)
        s = np.empty(n, np.int64); a = np.empty(n, np.int64); s2 = np.empty(n, np.int64)
    else:
        actor = _continuous_actor(env, behavior)
        sigma = BASE_NOISE * behavior.sigma_factor
        s = np.empty((n, env.obs_dim)); a = np.empty((n, env.action_dim)); s2 = np.empty((n, env.obs_dim))
    r = np.empty(n)
    done = np.zeros(n, dtype=bool)
    state = env.reset()
    for i in range(n):
        if env.discrete:
            act = min(int(np.searchsorted(cdf[state], rng.random(), side="right")), env.n_actions - 1)
        elif rng.random() < behavior.epsilon:
            act = rng.uniform(-env.max_accel, env.max_accel, size=env.action_dim)
        else:
            act = actor(state) + sigma * rng.standard_normal(env.action_dim)
        res = env.step(act)
        s[i], a[i], r[i], s2[i], done[i] = state, act, res.reward, res.next_state, res.done
        state = env.reset() if res.done else res.next_state
    meta = {"env": env.name, "behavior": behavior.to_dict(), "seed": int(seed), "n": n}
    return Dataset(s, a, r, s2, done, meta)


def sample_batch(dataset: Dataset, batch_size: int, rng: np.random.Generator) -> Batch:
    """Uniform with replacement."""
    if dataset is None or len(dataset) == 0:
        raise InputError("cannot sample from an empty dataset")
    if not 1 <= batch_size <= len(dataset):
        raise InputError(f"batch_size must be in [1, {len(dataset)}], got {batch_size}")
    idx = rng.integers(0, len(dataset), size=batch_size)
    return Batch(dataset.s[idx], dataset.a[idx], dataset.r[idx], dataset.s2[idx],
                 dataset.done[idx], idx)


# -- persistence --------------------------------------------------------------

def _encode(x):
    return int(x) if np.ndim(x) == 0 else [float(v) for v in x]


def save(dataset: Dataset, path):
    with open(path, "w") as fh:
        meta = {k: dataset.meta.get(k) for k in ("env", "behavior", "seed")}
        meta["n"] = len(dataset)
        fh.write(json.dumps(meta) + "\n")
        for i in range(len(dataset)):
            rec = {"s": _encode(dataset.s[i]), "a": _encode(dataset.a[i]), "r": float(dataset.r[i]),
                   "s2": _encode(dataset.s2[i]), "done": bool(dataset.done[i])}
            fh.write(json.dumps(rec) + "\n")


def load(path) -> Dataset:
    rows = []
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise SchemaError(f"{path}: empty file")
    try:
        meta = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad meta object: {exc.msg}", line=1) from exc
    if not isinstance(meta, dict):
        raise SchemaError("first line must be a meta object")
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed transition: {exc.msg}", line=lineno) from exc
        if not isinstance(rec, dict) or set(rec) != {"s", "a", "r", "s2", "done"}:
            raise SchemaError(f"line {lineno}: transition needs exactly keys s, a, r, s2, done")
        rows.append(rec)
    if not rows:
        raise SchemaError(f"{path}: no transitions after header")
    kinds = {(isinstance(x["s"], int), isinstance(x["a"], int)) for x in rows}
    if len(kinds) != 1:
        raise SchemaError("mixed integer/array encodings within one dataset")
    try:
        s = np.array([x["s"] for x in rows], dtype=np.int64 if isinstance(rows[0]["s"], int) else np.float64)
        s2 = np.array([x["s2"] for x in rows], dtype=s.dtype)
        a = np.array([x["a"] for x in rows], dtype=np.int64 if isinstance(rows[0]["a"], int) else np.float64)
        r = np.array([x["r"] for x in rows], dtype=np.float64)
        done = np.array([x["done"] for x in rows], dtype=bool)
    except (ValueError, TypeError) as exc:
        raise SchemaError(f"inconsistent transition shapes: {exc}") from exc
    if s.ndim != s2.ndim or s.dtype == object or a.dtype == object:
        raise SchemaError("inconsistent transition shapes")
    if "n" in meta and meta["n"] != len(rows):
        raise SchemaError(f"meta.n = {meta['n']} but file holds {len(rows)} transitions")
    return Dataset(s, a, r, s2, done, meta)


def empirical_state_distribution(dataset: Dataset, env) -> np.ndarray:
    """Normalized visit frequencies of ``s`` over the tabular state space."""
    if not dataset.discrete or not getattr(env, "discrete", False):
        raise UnsupportedError("state frequencies need a tabular dataset")
    counts = np.bincount(dataset.s, minlength=env.n_states).astype(np.float64)
    return counts / counts.sum()
