"""Categorical and diagonal-Gaussian policies on top of the numpy MLP.

Every policy exposes a flat parameter vector (``flat``) so one Adam state
can drive it. Losses are written against the network outputs (logits or
mean) and pushed back through ``param_grad``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import approximator as nn
from .errors import InputError

LOG_2PI = np.log(2.0 * np.pi)
LOG_STD_MIN = np.log(1e-4)
LOG_STD_MAX = np.log(10.0)


# -- array-level distribution math --------------------------------------------

def categorical_kl(p, q):
    """KL(p || q) along the last axis; 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(q)), 0.0)
    return np.maximum(terms.sum(axis=-1), 0.0)


def categorical_tv(p, q):
    return 0.5 * np.abs(np.asarray(p) - np.asarray(q)).sum(axis=-1)


def categorical_entropy(p):
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        return -np.where(p > 0, p * np.log(p), 0.0).sum(axis=-1)


def gaussian_kl(mu_p, log_std_p, mu_q, log_std_q):
    """KL between diagonal Gaussians, summed over the last axis."""
    var_p = np.exp(2 * log_std_p)
    var_q = np.exp(2 * log_std_q)
    return np.sum(log_std_q - log_std_p + (var_p + (mu_p - mu_q) ** 2) / (2 * var_q) - 0.5, axis=-1)


def gaussian_log_prob(mu, log_std, a):
    z = (a - mu) / np.exp(log_std)
    return np.sum(-0.5 * z * z - log_std - 0.5 * LOG_2PI, axis=-1)


def log_softmax(logits):
    return logits - logsumexp(logits, axis=-1, keepdims=True)


# -- policies -----------------------------------------------------------------

class CategoricalPolicy:
    """Softmax over MLP logits. With a one-hot input and no hidden layers
    this is exactly a logits table."""

    family = "categorical"

    def __init__(self, spec: nn.MlpSpec, params):
        self.spec = spec
        self.params = np.asarray(params, dtype=np.float64)

    @classmethod
    def create(cls, spec, rng):
        return cls(spec, nn.init_params(spec, rng))

    @classmethod
    def tabular(cls, n_states, n_actions, logits=None):
        """Logits table policy (one-hot input, linear, zero bias)."""
        spec = nn.MlpSpec(n_states, 0, 1, n_actions)
        logits = np.zeros((n_states, n_actions)) if logits is None else np.asarray(logits, float)
        W, b = logits.T, np.zeros(n_actions)
        return cls(spec, np.concatenate([W.ravel(), b]))

    @classmethod
    def from_table(cls, probs):
        probs = np.asarray(probs, dtype=np.float64)
        return cls.tabular(*probs.shape, logits=np.log(np.maximum(probs, 1e-300)))

    @property
    def flat(self):
        return self.params

    def with_flat(self, flat):
        return CategoricalPolicy(self.spec, np.array(flat, dtype=np.float64))

    def copy(self):
        return self.with_flat(self.params.copy())

    def forward(self, obs):
        return nn.forward_cache(self.spec, self.params, obs)

    def param_grad(self, cache, d_out, d_log_std=None):
        g, _ = nn.backward(self.spec, self.params, cache, d_out)
        return g

    def probs(self, obs):
        return np.exp(log_softmax(nn.forward(self.spec, self.params, obs)))

    def table(self):
        """Action probabilities for every one-hot state, shape [S][A]."""
        return self.probs(np.eye(self.spec.input_dim))

    def log_prob(self, obs, actions):
        logits, _ = self.forward(obs)
        lp = self.log_prob_terms(logits, actions)[0]
        return float(lp[0]) if np.ndim(obs) == 1 else lp

    def log_prob_terms(self, logits, actions):
        """log pi(a|s) per row and its gradient wrt the logits."""
        actions = np.asarray(actions, dtype=np.int64).reshape(-1)
        if np.any(actions < 0) or np.any(actions >= logits.shape[1]):
            raise InputError("action index out of range")
        lsm = log_softmax(logits)
        rows = np.arange(len(actions))
        d = -np.exp(lsm)
        d[rows, actions] += 1.0
        return lsm[rows, actions], d

    def kl_terms(self, logits, ref_logits):
        """KL(self || ref) per row and its gradient wrt self's logits."""
        lp = log_softmax(logits)
        lq = log_softmax(ref_logits)
        p = np.exp(lp)
        kl = np.sum(p * (lp - lq), axis=1)
        d = p * (lp - lq - kl[:, None])
        return np.maximum(kl, 0.0), d

    def dist(self, obs):
        return nn.forward(self.spec, self.params, obs)

    def sample(self, obs, rng):
        p = self.probs(obs)
        single = p.ndim == 1
        p = np.atleast_2d(p)
        u = rng.random(p.shape[0])
        a = (np.cumsum(p, axis=1) < u[:, None]).sum(axis=1)
        a = np.minimum(a, p.shape[1] - 1)
        return int(a[0]) if single else a

    def mode(self, obs):
        return np.argmax(self.probs(obs), axis=-1)

    def entropy(self, obs):
        return categorical_entropy(self.probs(obs))


@dataclass
class ClampCounter:
    count: int = 0


class DiagGaussianPolicy:
    """MLP mean with a state-independent learnable log-std.

    The std is clamped to [1e-4, 10]; every evaluation that hits the clamp
    bumps ``clamp_warnings``.
    """

    family = "gaussian"

    def __init__(self, spec: nn.MlpSpec, params, log_std, counter=None):
        self.spec = spec
        self.params = np.asarray(params, dtype=np.float64)
        self.log_std = np.asarray(log_std, dtype=np.float64)
        if self.log_std.shape != (spec.output_dim,):
            raise InputError("log_std must have one entry per action dimension")
        self._counter = counter if counter is not None else ClampCounter()

    @classmethod
    def create(cls, spec, rng, init_log_std=np.log(0.5)):
        return cls(spec, nn.init_params(spec, rng), np.full(spec.output_dim, init_log_std))

    @property
    def clamp_warnings(self):
        return self._counter.count

    @property
    def flat(self):
        return np.concatenate([self.params, self.log_std])

    def with_flat(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        n = self.spec.n_params
        return DiagGaussianPolicy(self.spec, flat[:n].copy(), flat[n:].copy(), self._counter)

    def copy(self):
        return self.with_flat(self.flat)

    def clamped_log_std(self):
        ls = np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX)
        if np.any(ls != self.log_std):
            self._counter.count += 1
        return ls

    def _ls_mask(self):
        return ((self.log_std >= LOG_STD_MIN) & (self.log_std <= LOG_STD_MAX)).astype(float)

    def forward(self, obs):
        return nn.forward_cache(self.spec, self.params, obs)

    def param_grad(self, cache, d_out, d_log_std=None):
        g, _ = nn.backward(self.spec, self.params, cache, d_out)
        if d_log_std is None:
            d_log_std = np.zeros_like(self.log_std)
        return np.concatenate([g, np.asarray(d_log_std) * self._ls_mask()])

    def log_prob(self, obs, actions):
        mu, _ = self.forward(obs)
        lp = self.log_prob_terms(mu, actions)[0]
        return float(lp[0]) if np.ndim(obs) == 1 else lp

    def log_prob_terms(self, mu, actions):
        """log pi(a|s) per row, d/dmu per row, d/dlog_std per row."""
        ls = self.clamped_log_std()
        a = np.asarray(actions, dtype=np.float64).reshape(mu.shape)
        inv_var = np.exp(-2 * ls)
        diff = a - mu
        logp = np.sum(-0.5 * diff * diff * inv_var - ls - 0.5 * LOG_2PI, axis=1)
        return logp, diff * inv_var, diff * diff * inv_var - 1.0

    def kl_terms(self, mu, ref_mu, ref_log_std):
        """KL(self || ref) per row, d/dmu per row, d/dlog_std per row."""
        ls = self.clamped_log_std()
        ref_ls = np.clip(ref_log_std, LOG_STD_MIN, LOG_STD_MAX)
        ref_var = np.exp(2 * ref_ls)
        kl = gaussian_kl(mu, ls, ref_mu, ref_ls)
        d_mu = (mu - ref_mu) / ref_var
        d_ls = np.broadcast_to(np.exp(2 * ls) / ref_var - 1.0, mu.shape)
        return kl, d_mu, d_ls

    def dist(self, obs):
        return nn.forward(self.spec, self.params, obs), self.clamped_log_std()

    def sample(self, obs, rng):
        mu, ls = self.dist(obs)
        return mu + np.exp(ls) * rng.standard_normal(mu.shape)

    def mode(self, obs):
        return self.dist(obs)[0]

    def entropy(self, obs):
        mu, ls = self.dist(obs)
        e = np.sum(ls + 0.5 * (LOG_2PI + 1.0))
        return np.full(mu.shape[0], e) if mu.ndim == 2 else float(e)


# -- spec-level operations ----------------------------------------------------

def _check_pair(p, q):
    if p.family != q.family:
        raise InputError(f"family mismatch: {p.family} vs {q.family}")
    if p.spec.output_dim != q.spec.output_dim or p.spec.input_dim != q.spec.input_dim:
        raise InputError("policies disagree on dimensions")


def log_prob(policy, obs, action):
    return policy.log_prob(obs, action)


def kl(p, q, obs):
    """Exact KL(p(.|s) || q(.|s)) for each observation row."""
    _check_pair(p, q)
    if p.family == "categorical":
        return categorical_kl(p.probs(obs), q.probs(obs))
    mu_p, ls_p = p.dist(obs)
    mu_q, ls_q = q.dist(obs)
    return gaussian_kl(mu_p, ls_p, mu_q, ls_q)


def tv(p, q, obs):
    """Exact TV for categorical; Pinsker bound sqrt(KL/2) (capped at 1) for Gaussians."""
    _check_pair(p, q)
    if p.family == "categorical":
        return categorical_tv(p.probs(obs), q.probs(obs))
    return np.minimum(1.0, np.sqrt(kl(p, q, obs) / 2.0))


def sample(policy, obs, rng):
    return policy.sample(obs, rng)


def entropy(policy, obs):
    return policy.entropy(obs)
