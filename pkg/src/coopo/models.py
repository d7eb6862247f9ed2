"""Critic networks and the bundle of models carried across cycles."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import approximator as nn
from .policy import CategoricalPolicy, DiagGaussianPolicy


def checksum(arr) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr, dtype=np.float64).tobytes()).hexdigest()[:16]


class QFunction:
    """Q(s, a). Discrete actions: one output per action. Continuous: (s, a) -> scalar."""

    def __init__(self, spec: nn.MlpSpec, params, discrete: bool):
        self.spec = spec
        self.params = np.asarray(params, dtype=np.float64)
        self.discrete = discrete

    def with_params(self, params):
        return QFunction(self.spec, params, self.discrete)

    def _inputs(self, obs, actions):
        if self.discrete:
            return obs
        return np.concatenate([obs, np.asarray(actions, dtype=np.float64).reshape(len(obs), -1)], axis=1)

    def all_actions(self, obs):
        """[N][A] table of Q values (discrete only)."""
        return nn.forward(self.spec, self.params, np.atleast_2d(obs))

    def __call__(self, obs, actions):
        obs = np.atleast_2d(obs)
        out = nn.forward(self.spec, self.params, self._inputs(obs, actions))
        if self.discrete:
            return out[np.arange(len(obs)), np.asarray(actions, dtype=np.int64).reshape(-1)]
        return out[:, 0]

    def mse_and_grad(self, obs, actions, y, weights=None):
        """Mean (Q(s,a) - y)^2 and its gradient; y is treated as a constant."""
        obs = np.atleast_2d(obs)
        n = len(obs)
        w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights) / np.sum(weights)
        x = self._inputs(obs, actions)
        rows = np.arange(n)
        act = np.asarray(actions, dtype=np.int64).reshape(-1) if self.discrete else None

        def loss(out):
            q = out[rows, act] if self.discrete else out[:, 0]
            err = q - y
            d = np.zeros_like(out)
            if self.discrete:
                d[rows, act] = 2.0 * w * err
            else:
                d[:, 0] = 2.0 * w * err
            return float(np.sum(w * err * err)), d

        return nn.grad(self.spec, self.params, x, loss)


class ValueFunction:
    def __init__(self, spec: nn.MlpSpec, params):
        self.spec = spec
        self.params = np.asarray(params, dtype=np.float64)

    def with_params(self, params):
        return ValueFunction(self.spec, params)

    def __call__(self, obs):
        return nn.forward(self.spec, self.params, np.atleast_2d(obs))[:, 0]

    def mse_and_grad(self, obs, y, weights=None):
        obs = np.atleast_2d(obs)
        n = len(obs)
        w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights) / np.sum(weights)

        def loss(out):
            err = out[:, 0] - y
            d = np.zeros_like(out)
            d[:, 0] = 2.0 * w * err
            return float(np.sum(w * err * err)), d

        return nn.grad(self.spec, self.params, obs, loss)


@dataclass
class AgentState:
    """pi_theta, Q_phi, V_psi plus one Adam state each.

    ``encode`` maps raw env states to network inputs.
    """

    policy: object
    q: QFunction
    v: ValueFunction
    opt_pi: nn.OptimizerState
    opt_q: nn.OptimizerState
    opt_v: nn.OptimizerState
    encode: object
    discrete: bool
    epoch: int = 0
    history: list = field(default_factory=list)

    def checksums(self):
        return {"pi": checksum(self.policy.flat), "q": checksum(self.q.params),
                "v": checksum(self.v.params)}


def make_agent(env, rng, hidden_layers=2, hidden_units=64, activation="relu", lr=3e-4,
               tabular=None, beta1=0.9, beta2=0.999):
    """Fresh models for ``env``. Tabular environments default to table-like
    critics and a logits-table policy (one-hot input, no hidden layers)."""
    discrete = env.discrete
    if tabular is None:
        tabular = discrete
    hl = 0 if tabular else hidden_layers
    if discrete:
        pspec = nn.MlpSpec(env.obs_dim, hl, hidden_units, env.n_actions, activation)
        policy = CategoricalPolicy.tabular(env.n_states, env.n_actions) if tabular \
            else CategoricalPolicy.create(pspec, rng)
        qspec = nn.MlpSpec(env.obs_dim, hl, hidden_units, env.n_actions, activation)
    else:
        pspec = nn.MlpSpec(env.obs_dim, hl, hidden_units, env.action_dim, activation)
        policy = DiagGaussianPolicy.create(pspec, rng)
        qspec = nn.MlpSpec(env.obs_dim + env.action_dim, hl, hidden_units, 1, activation)
    vspec = nn.MlpSpec(env.obs_dim, hl, hidden_units, 1, activation)
    q = QFunction(qspec, nn.init_params(qspec, rng), discrete)
    v = ValueFunction(vspec, nn.init_params(vspec, rng))
    hyper = dict(lr=lr, beta1=beta1, beta2=beta2)
    return AgentState(policy, q, v,
                      nn.OptimizerState.for_params(policy.flat, **hyper),
                      nn.OptimizerState.for_params(q.params, **hyper),
                      nn.OptimizerState.for_params(v.params, **hyper),
                      env.encode, discrete)
