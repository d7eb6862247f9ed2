"""Small numpy MLP with hand-written reverse-mode gradients and Adam.

Parameters live in one flat float64 vector, layer-major: for each layer the
weight matrix (out x in, row-major) followed by its bias. Everything that
learns in this package (policy means and logits, Q and V critics) is an
MLP of this kind, so the same gradient check covers all of them.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InputError, NumericError

ACTIVATIONS = ("relu", "tanh")
CHECKPOINT_MAGIC = b"COOPO1"


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_layers: int = 2
    hidden_units: int = 64
    output_dim: int = 1
    activation: str = "relu"

    def __post_init__(self):
        for name in ("input_dim", "hidden_units", "output_dim"):
            if int(getattr(self, name)) < 1:
                raise InputError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.hidden_layers < 0:
            raise InputError(f"hidden_layers must be >= 0, got {self.hidden_layers}")
        if self.activation not in ACTIVATIONS:
            raise InputError(f"unknown activation {self.activation!r}")

    def layer_dims(self):
        dims = [self.input_dim] + [self.hidden_units] * self.hidden_layers + [self.output_dim]
        return list(zip(dims[:-1], dims[1:]))

    @property
    def n_params(self):
        return sum(i * o + o for i, o in self.layer_dims())


def init_params(spec: MlpSpec, rng: np.random.Generator) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""
    chunks = []
    for fan_in, fan_out in spec.layer_dims():
        bound = 1.0 / np.sqrt(fan_in)
        chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        chunks.append(rng.uniform(-bound, bound, size=fan_out))
    return np.concatenate(chunks).astype(np.float64)


def unpack(spec: MlpSpec, params: np.ndarray):
    """Return [(W, b), ...] as views into ``params``."""
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (spec.n_params,):
        raise InputError(f"expected {spec.n_params} parameters, got shape {params.shape}")
    layers, i = [], 0
    for fan_in, fan_out in spec.layer_dims():
        W = params[i:i + fan_in * fan_out].reshape(fan_out, fan_in)
        i += fan_in * fan_out
        b = params[i:i + fan_out]
        i += fan_out
        layers.append((W, b))
    return layers


def _act(name, z):
    return np.maximum(z, 0.0) if name == "relu" else np.tanh(z)


def _act_grad(name, z, a):
    # relu subgradient at exactly 0 is 0
    return (z > 0.0).astype(np.float64) if name == "relu" else 1.0 - a * a


def _as_batch(spec, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise InputError(f"input must have {spec.input_dim} features, got shape {np.shape(x)}")
    return x, single


def forward_cache(spec: MlpSpec, params: np.ndarray, x):
    """Batched forward pass that keeps what backward() needs."""
    X, _ = _as_batch(spec, x)
    layers = unpack(spec, params)
    cache = [X]
    a = X
    last = len(layers) - 1
    for idx, (W, b) in enumerate(layers):
        with np.errstate(over="ignore", invalid="ignore"):
            z = a @ W.T + b
        a = z if idx == last else _act(spec.activation, z)
        if not np.all(np.isfinite(a)):
            raise NumericError(f"non-finite activation in layer {idx}", layer=idx)
        cache.append((z, a))
    return a, cache


def forward(spec: MlpSpec, params: np.ndarray, x) -> np.ndarray:
    """Evaluate the network on one input vector or a (batch, input_dim) array."""
    X, single = _as_batch(spec, x)
    out, _ = forward_cache(spec, params, X)
    return out[0] if single else out


def backward(spec: MlpSpec, params: np.ndarray, cache, d_out: np.ndarray):
    """Pull ``d_out`` (dLoss/dOutputs) back to (dLoss/dParams, dLoss/dInputs)."""
    layers = unpack(spec, params)
    g = np.empty(spec.n_params)
    offsets = []
    i = 0
    for fan_in, fan_out in spec.layer_dims():
        offsets.append(i)
        i += fan_in * fan_out + fan_out
    delta = np.asarray(d_out, dtype=np.float64).reshape(cache[-1][1].shape)
    last = len(layers) - 1
    for idx in range(last, -1, -1):
        W, _ = layers[idx]
        z, a = cache[idx + 1]
        if idx != last:
            delta = delta * _act_grad(spec.activation, z, a)
        a_prev = cache[0] if idx == 0 else cache[idx][1]
        fan_out, fan_in = W.shape
        o = offsets[idx]
        g[o:o + fan_in * fan_out] = (delta.T @ a_prev).ravel()
        g[o + fan_in * fan_out:o + fan_in * fan_out + fan_out] = delta.sum(axis=0)
        delta = delta @ W
    return g, delta


def grad(spec: MlpSpec, params: np.ndarray, x, loss):
    """Value and parameter gradient of ``loss`` applied to the batch outputs.

    ``loss(outputs) -> (value, d_value/d_outputs)``.
    """
    out, cache = forward_cache(spec, params, x)
    value, d_out = loss(out)
    if not np.isfinite(value):
        raise NumericError(f"non-finite loss {value}")
    g, _ = backward(spec, params, cache, d_out)
    return float(value), g


def min_abs_preactivation(spec: MlpSpec, params: np.ndarray, x) -> float:
    """Distance of the nearest hidden pre-activation from the relu kink."""
    _, cache = forward_cache(spec, params, x)
    hidden = [np.abs(z).min() for z, _ in cache[1:-1]]
    return float(min(hidden)) if hidden else np.inf


# -- optimizer -------------------------------------------------------------

@dataclass
class OptimizerState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, **hyper):
        n = np.asarray(params).shape[0]
        return cls(np.zeros(n), np.zeros(n), **hyper)


def optimizer_step(state: OptimizerState, params: np.ndarray, gradient: np.ndarray):
    """One bias-corrected Adam step on a descent direction; returns new copies.

    A non-finite gradient raises before anything is modified.
    """
    params = np.asarray(params, dtype=np.float64)
    gradient = np.asarray(gradient, dtype=np.float64)
    if gradient.shape != params.shape or state.first_moment.shape != params.shape:
        raise InputError(f"shape mismatch: params {params.shape}, grad {gradient.shape}, "
                         f"moments {state.first_moment.shape}")
    if not np.all(np.isfinite(gradient)):
        raise NumericError("non-finite gradient; step skipped")
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * gradient
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * gradient * gradient
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, replace(state, first_moment=m, second_moment=v, step_count=t)


# -- gradient verification --------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    coords: np.ndarray = field(repr=False)
    analytic: np.ndarray = field(repr=False)
    numeric: np.ndarray = field(repr=False)

    @property
    def pass_(self):
        return self.passed


def check_gradient(f, params, analytic, tolerance, rng=None, n_coords=32, h=1e-5,
                   abs_floor=1e-6):
    """Compare ``analytic`` with central differences of scalar ``f`` on a coordinate subset.

    Relative error per coordinate is |a - n| / max(|a|, |n|, abs_floor).
    """
    if tolerance <= 0:
        raise InputError("tolerance must be > 0")
    params = np.array(params, dtype=np.float64)
    analytic = np.asarray(analytic, dtype=np.float64)
    n = params.shape[0]
    rng = np.random.default_rng(0) if rng is None else rng
    coords = np.arange(n) if n <= n_coords else np.sort(rng.choice(n, size=n_coords, replace=False))
    numeric = np.empty(len(coords))
    for j, c in enumerate(coords):
        orig = params[c]
        params[c] = orig + h
        f_plus = f(params)
        params[c] = orig - h
        f_minus = f(params)
        params[c] = orig
        numeric[j] = (f_plus - f_minus) / (2.0 * h)
    a = analytic[coords]
    denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), abs_floor)
    rel = np.abs(a - numeric) / denom
    max_rel = float(rel.max()) if len(rel) else 0.0
    ok = bool(np.isfinite(max_rel) and max_rel <= tolerance)
    return GradCheckReport(max_rel, ok, coords, a, numeric)


def finite_diff_check(spec: MlpSpec, params, x, loss, tolerance=1e-4, rng=None, h=1e-5):
    """Check grad(spec, params, x, loss) against central differences."""
    _, g = grad(spec, params, x, loss)

    def f(p):
        return loss(forward(spec, p, x))[0]

    return check_gradient(f, params, g, tolerance, rng=rng, h=h)


# -- checkpoints ------------------------------------------------------------

_HEADER = struct.Struct("<6s5q")


def save_checkpoint(path, spec: MlpSpec, params: np.ndarray, extra=None):
    """Write header + little-endian float64 parameters.

    ``extra`` (e.g. a Gaussian log-std) is appended after the network weights.
    """
    params = np.asarray(params, dtype="<f8")
    extra = np.zeros(0) if extra is None else np.asarray(extra, dtype="<f8")
    if params.shape != (spec.n_params,):
        raise InputError("parameter vector does not match spec")
    head = _HEADER.pack(CHECKPOINT_MAGIC, spec.input_dim, spec.hidden_layers,
                        spec.hidden_units, spec.output_dim, ACTIVATIONS.index(spec.activation))
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(struct.pack("<q", extra.shape[0]))
        fh.write(params.tobytes())
        fh.write(extra.astype("<f8").tobytes())


def load_checkpoint(path):
    """Return (spec, params, extra)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size + 8:
        raise InputError(f"{path}: truncated checkpoint")
    magic, i, hl, hu, o, act = _HEADER.unpack_from(raw, 0)
    if magic != CHECKPOINT_MAGIC:
        raise InputError(f"{path}: bad magic {magic!r}")
    spec = MlpSpec(i, hl, hu, o, ACTIVATIONS[act])
    (n_extra,) = struct.unpack_from("<q", raw, _HEADER.size)
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size + 8)
    if body.shape[0] != spec.n_params + n_extra:
        raise InputError(f"{path}: expected {spec.n_params + n_extra} values, found {body.shape[0]}")
    params = body[:spec.n_params].astype(np.float64)
    extra = body[spec.n_params:].astype(np.float64)
    return spec, params, extra
