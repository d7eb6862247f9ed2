"""JSON run configuration: strict parsing, defaults, and provenance echo.

Layout (every key optional)::

    {
      "cycles": 500, "env": "pointmass", "dataset": null, "seed": 0,
      "eval_episodes": 20, "out": "runs/default",
      "offline": {"epochs": 100, "batch": 512, "lambda": 0.05, ...},
      "online":  {"iterations": 5, "episodes_per_iter": 5, "batch": 64, ...},
      "model":   {"hidden_layers": 2, "hidden_units": 64, ...},
      "optim":   {"beta_extra": 0.99},
      "experiment": {"seeds": [0, 1, 2, 3, 4], "threshold": -35.0, ...}
    }
"""
from __future__ import annotations

import json
import os
import types
import typing
from dataclasses import MISSING, asdict, dataclass, field, fields

from .cycle import CoopoConfig, ModelConfig
from .errors import InputError, ParseError
from .offline_phase import OfflineConfig
from .online_phase import OnlineConfig

SEED_ENV = "COOPO_SEED"

# JSON key -> dataclass attribute, where they differ
_RENAMES = {OfflineConfig: {"lambda": "lam"}}


@dataclass
class OptimConfig:
    beta_extra: float = 0.99


@dataclass
class ExperimentConfig:
    """Settings for multi-seed experiments (``compare`` and the ablation scripts)."""

    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    algos: list = field(default_factory=lambda: ["ppo", "coopo"])
    threshold: float = -35.0
    tier: str = "medium"
    dataset_n: int = 5000


@dataclass
class RunConfig:
    coopo: CoopoConfig = field(default_factory=CoopoConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    out: str = "runs/default"

    @property
    def seed(self):
        return self.coopo.seed

    def to_dict(self):
        """Nested dict using the JSON key names; parse_config(to_dict()) round-trips."""
        c = self.coopo
        top = {k: v for k, v in asdict(c).items() if k not in ("offline", "online", "model", "beta_extra")}
        return {**top, "out": self.out,
                "offline": _to_json_keys(c.offline),
                "online": asdict(c.online),
                "model": asdict(c.model),
                "optim": {"beta_extra": c.beta_extra},
                "experiment": asdict(self.experiment)}


def _to_json_keys(obj):
    back = {v: k for k, v in _RENAMES.get(type(obj), {}).items()}
    return {back.get(k, k): v for k, v in asdict(obj).items()}


def _type_ok(value, tp):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        return any(_type_ok(value, a) for a in typing.get_args(tp))
    if tp is type(None):
        return value is None
    if tp is bool:
        return isinstance(value, bool)
    if tp is int:
        return isinstance(value, int) and not isinstance(value, bool)
    if tp is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if tp is str:
        return isinstance(value, str)
    if tp is list or origin is list:
        return isinstance(value, list)
    return True


def _build(cls, raw, prefix, nested=None):
    """Instantiate ``cls`` from ``raw``, rejecting unknown keys and type mismatches."""
    nested = nested or {}
    if not isinstance(raw, dict):
        raise ParseError(f"{prefix or 'config'}: expected an object", key=prefix or None)
    renames = _RENAMES.get(cls, {})
    hints = typing.get_type_hints(cls)
    names = {f.name for f in fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        attr = renames.get(key, key)
        full = f"{prefix}.{key}" if prefix else key
        hidden = key in renames.values() and key not in renames
        if attr not in names or attr in nested or hidden:
            raise ParseError(f"unknown key {full!r}", key=full)
        if not _type_ok(value, hints[attr]):
            raise ParseError(f"key {full!r}: expected {hints[attr]}, got {type(value).__name__}",
                             key=full)
        kwargs[attr] = float(value) if hints[attr] is float else value
    for attr, sub_cls in nested.items():
        kwargs[attr] = sub_cls
    try:
        return cls(**kwargs)
    except InputError as exc:
        raise ParseError(f"{prefix or 'config'}: {exc}", key=prefix or None) from exc


def parse_dict(raw: dict, base_dir=".") -> RunConfig:
    """Validate a config object. Relative paths resolve against ``base_dir``."""
    if not isinstance(raw, dict):
        raise ParseError("config root must be a JSON object")
    raw = dict(raw)
    sections = {"offline": OfflineConfig, "online": OnlineConfig, "model": ModelConfig}
    built = {name: _build(cls, raw.pop(name, {}), name) for name, cls in sections.items()}
    optim = _build(OptimConfig, raw.pop("optim", {}), "optim")
    exp = _build(ExperimentConfig, raw.pop("experiment", {}), "experiment")
    out = raw.pop("out", "runs/default")
    if not isinstance(out, str):
        raise ParseError("key 'out': expected str", key="out")
    if "beta_extra" in raw:
        raise ParseError("unknown key 'beta_extra' (use optim.beta_extra)", key="beta_extra")
    coopo = _build(CoopoConfig, raw, "", nested=built)
    coopo.beta_extra = optim.beta_extra
    if coopo.dataset is not None:
        path = coopo.dataset if os.path.isabs(coopo.dataset) else os.path.join(base_dir, coopo.dataset)
        if not os.path.exists(path):
            raise ParseError(f"key 'dataset': file not found: {coopo.dataset}", key="dataset")
        coopo.dataset = path
    env_seed = os.environ.get(SEED_ENV)
    if env_seed is not None:
        try:
            coopo.seed = int(env_seed)
        except ValueError as exc:
            raise ParseError(f"{SEED_ENV} must be an integer, got {env_seed!r}", key="seed") from exc
    return RunConfig(coopo, exp, out)


def parse_config(path, write_resolved=True) -> RunConfig:
    """Read and validate a JSON config file; echo the resolved config to ``<out>``."""
    if not os.path.exists(path):
        raise ParseError(f"config file not found: {path}", key="config")
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno) from exc
    cfg = parse_dict(raw, base_dir=os.getcwd())
    if write_resolved:
        write_resolved_config(cfg)
    return cfg


def write_resolved_config(cfg: RunConfig, out=None):
    out = out or cfg.out
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "resolved_config.json")
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def default_fields(cls):
    """Attribute -> default value, for documentation and tests."""
    out = {}
    for f in fields(cls):
        if f.default is not MISSING:
            out[f.name] = f.default
        elif f.default_factory is not MISSING:
            out[f.name] = f.default_factory()
    return out
