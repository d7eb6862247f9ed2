"""Tabular MDPs and a 2-D point-mass behind one reset/step interface."""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import InputError, NumericError, SchemaError

ROW_TOL = 1e-12
BENCHMARKS = ("chain5", "grid4x4", "bandit2", "pointmass")


@dataclass
class StepResult:
    next_state: object
    reward: float
    done: bool
    info: int  # index of the step just taken, 1-based


class TabularMdp:
    """Finite MDP with explicit arrays.

    P[s, a, s'] transition probabilities, r[s, a] rewards, d0 initial
    distribution. Episodes last exactly ``horizon`` steps.
    """

    discrete = True

    def __init__(self, P, r, d0, gamma, horizon, name="tabular"):
        self.P = np.asarray(P, dtype=np.float64)
        self.r = np.asarray(r, dtype=np.float64)
        self.d0 = np.asarray(d0, dtype=np.float64)
        self.gamma = float(gamma)
        self.horizon = int(horizon)
        self.name = name
        self._validate()
        self.n_states, self.n_actions = self.r.shape
        self._cdf = np.cumsum(self.P, axis=2)
        self._rng = np.random.default_rng(0)
        self._state = None
        self._t = 0

    def _validate(self):
        if self.P.ndim != 3 or self.P.shape[0] != self.P.shape[2]:
            raise SchemaError(f"P must be [S][A][S], got {self.P.shape}")
        S, A, _ = self.P.shape
        if self.r.shape != (S, A):
            raise SchemaError(f"r must be [{S}][{A}], got {self.r.shape}")
        if self.d0.shape != (S,):
            raise SchemaError(f"d0 must have {S} entries, got {self.d0.shape}")
        if np.any(self.P < 0) or np.any(np.abs(self.P.sum(axis=2) - 1.0) > ROW_TOL):
            raise SchemaError("every P[s][a] must be a probability vector")
        if np.any(self.d0 < 0) or abs(self.d0.sum() - 1.0) > ROW_TOL:
            raise SchemaError("d0 must be a probability vector")
        if not np.all(np.isfinite(self.r)):
            raise SchemaError("rewards must be finite")
        if not 0.0 <= self.gamma < 1.0:
            raise SchemaError(f"gamma must be in [0, 1), got {self.gamma}")
        if self.horizon < 1:
            raise SchemaError("horizon must be >= 1")

    # observation encoding for networks
    @property
    def obs_dim(self):
        return self.n_states

    @property
    def action_dim(self):
        return self.n_actions

    def encode(self, states):
        return np.eye(self.n_states)[np.asarray(states, dtype=np.int64)]

    def reset(self, seed=None):
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        self._state = int(np.searchsorted(np.cumsum(self.d0), self._rng.random(), side="right"))
        self._state = min(self._state, self.n_states - 1)
        self._t = 0
        return self._state

    def step(self, action):
        if self._state is None:
            raise InputError("step() before reset()")
        if isinstance(action, float) and np.isnan(action):
            raise NumericError("NaN action")
        a = int(action)
        if a != action or not 0 <= a < self.n_actions:
            raise InputError(f"action {action!r} out of range [0, {self.n_actions})")
        s = self._state
        u = self._rng.random()
        nxt = int(np.searchsorted(self._cdf[s, a], u, side="right"))
        nxt = min(nxt, self.n_states - 1)
        self._t += 1
        self._state = nxt
        return StepResult(nxt, float(self.r[s, a]), self._t >= self.horizon, self._t)

    def to_dict(self):
        return dict(n_states=self.n_states, n_actions=self.n_actions, P=self.P.tolist(),
                    r=self.r.tolist(), d0=self.d0.tolist(), gamma=self.gamma, horizon=self.horizon)

    @classmethod
    def from_dict(cls, d, name="tabular"):
        keys = {"n_states", "n_actions", "P", "r", "d0", "gamma", "horizon"}
        missing = keys - set(d)
        if missing:
            raise SchemaError(f"fixture missing keys: {sorted(missing)}")
        mdp = cls(d["P"], d["r"], d["d0"], d["gamma"], d["horizon"], name=name)
        if (mdp.n_states, mdp.n_actions) != (d["n_states"], d["n_actions"]):
            raise SchemaError("n_states/n_actions disagree with array shapes")
        return mdp

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh), name=str(path))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)


class PointMass:
    """2-D point mass with Euler integration.

    State is (x, y, vx, vy); the action is an acceleration, clamped to
    [-max_accel, max_accel] per axis inside step(). Reward is evaluated at
    the pre-step position: -|pos - goal|^2 - 0.01 |a|^2.
    """

    discrete = False
    name = "pointmass"

    def __init__(self, goal=(1.0, 1.0), dt=0.1, max_accel=1.0, horizon=50, start_noise=0.05,
                 gamma=0.99):
        self.goal = np.asarray(goal, dtype=np.float64)
        self.dt = float(dt)
        self.max_accel = float(max_accel)
        self.horizon = int(horizon)
        self.start_noise = float(start_noise)
        self.gamma = float(gamma)
        self._rng = np.random.default_rng(0)
        self._state = None
        self._t = 0

    obs_dim = 4
    action_dim = 2

    def encode(self, states):
        return np.asarray(states, dtype=np.float64)

    def clamp(self, action):
        return np.clip(action, -self.max_accel, self.max_accel)

    def reward(self, state, action):
        a = self.clamp(np.asarray(action, dtype=np.float64))
        d = state[:2] - self.goal
        return float(-(d @ d) - 0.01 * (a @ a))

    def dynamics(self, state, action):
        """Deterministic Euler update; returns (next_state, reward)."""
        a = np.asarray(action, dtype=np.float64)
        if a.shape != (2,):
            raise InputError(f"action must have shape (2,), got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise NumericError("non-finite action")
        a = self.clamp(a)
        pos, vel = state[:2], state[2:]
        nxt = np.concatenate([pos + self.dt * vel, vel + self.dt * a])
        return nxt, self.reward(state, a)

    def reset(self, seed=None):
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        pos = self._rng.uniform(-self.start_noise, self.start_noise, size=2)
        self._state = np.concatenate([pos, np.zeros(2)])
        self._t = 0
        return self._state.copy()

    def step(self, action):
        if self._state is None:
            raise InputError("step() before reset()")
        nxt, rew = self.dynamics(self._state, action)
        self._state = nxt
        self._t += 1
        return StepResult(nxt.copy(), rew, self._t >= self.horizon, self._t)


def make_benchmark(name: str):
    """Build one of the fixed fixtures: chain5, grid4x4, bandit2, pointmass."""
    if name == "pointmass":
        return PointMass()
    if name not in BENCHMARKS:
        raise InputError(f"unknown benchmark {name!r}; choose from {BENCHMARKS}")
    text = resources.files("coopo.fixtures").joinpath(f"{name}.json").read_text()
    return TabularMdp.from_dict(json.loads(text), name=name)


def random_mdp(rng, n_states, n_actions, gamma=0.9, horizon=None, reward_scale=1.0):
    """Dense random MDP. Default horizon makes gamma**H negligible (< 1e-14)."""
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    P /= P.sum(axis=2, keepdims=True)
    r = rng.uniform(-reward_scale, reward_scale, size=(n_states, n_actions))
    d0 = rng.dirichlet(np.ones(n_states))
    d0 /= d0.sum()
    if horizon is None:
        horizon = int(np.ceil(np.log(1e-14) / np.log(gamma))) if gamma > 0 else 1
    return TabularMdp(P, r, d0, gamma, horizon, name="random")
