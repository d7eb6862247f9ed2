"""Multi-seed experiments: COOPO vs. PPO, the lambda sweep, and the cycle-structure ablation.

Every run writes ``<out>/<curve>__seed<k>.csv`` so ``export_plots`` can
band the seeds of each curve.
"""
from __future__ import annotations

import logging
import os
import shutil
from dataclasses import dataclass, replace

import numpy as np

from .cycle import CoopoConfig, run_coopo, run_ppo_baseline
from .environments import make_benchmark
from .errors import InputError
from .metrics import read_metrics
from .offline_data import BehaviorPolicyDescriptor, generate
from .offline_data import load as load_dataset

log = logging.getLogger(__name__)

ALGOS = ("ppo", "coopo")


def first_crossing(rows, threshold):
    """Cumulative online trajectories at the first post-update evaluation >= threshold.

    Only evaluations taken after an online round (step >= 1) count, so an
    offline-only policy is never credited. None if never reached.
    """
    for r in rows:
        if r["phase"] == "eval" and int(r["step"]) >= 1 and float(r["mean_return"]) >= threshold:
            return int(r["traj_cum"])
    return None


def final_eval(rows):
    """Last evaluation return in a metrics file."""
    evals = [float(r["mean_return"]) for r in rows if r["phase"] == "eval"]
    if not evals:
        raise InputError("no evaluation rows")
    return evals[-1]


def censored_median(values, cap):
    """Median with never-reached runs counted at ``cap`` (a lower bound on their true value)."""
    return float(np.median([cap if v is None else v for v in values]))


def dataset_for(config: CoopoConfig, seed, tier="medium", n=5000, env=None):
    if config.dataset is not None:
        return load_dataset(config.dataset)
    env = env or make_benchmark(config.env)
    return generate(env, BehaviorPolicyDescriptor.from_tier(env, tier), n, seed)


def _csv(out_dir, curve, seed):
    return os.path.join(out_dir, f"{curve}__seed{seed}.csv")


def _run_to_csv(fn, out_dir, curve, seed, *args, **kw):
    """Run into a scratch directory, then keep only the metrics CSV under a banded name."""
    scratch = os.path.join(out_dir, f".{curve}__seed{seed}")
    fn(*args, out_dir=scratch, run_id=f"{curve}-s{seed}", **kw)
    path = _csv(out_dir, curve, seed)
    os.replace(os.path.join(scratch, "metrics.csv"), path)
    shutil.rmtree(scratch)
    return path


@dataclass
class CompareResult:
    threshold: float
    crossings: dict          # algo -> [traj or None per seed]
    medians: dict            # algo -> censored median
    budget_trajectories: int
    ratio: float
    paths: dict


def compare(config: CoopoConfig, out_dir, seeds=(0, 1, 2, 3, 4), threshold=-35.0, algos=ALGOS,
            tier="medium", n=5000):
    """Same config, seeds and threshold for every algorithm.

    ``ratio`` is median COOPO trajectories over median PPO trajectories
    (runs that never reach the threshold count at the full budget).
    """
    for a in algos:
        if a not in ALGOS:
            raise InputError(f"unknown algorithm {a!r}; choose from {ALGOS}")
    os.makedirs(out_dir, exist_ok=True)
    env = make_benchmark(config.env)
    crossings = {a: [] for a in algos}
    paths = {a: [] for a in algos}
    for seed in seeds:
        cfg = replace(config, seed=seed)
        for algo in algos:
            if algo == "ppo":
                p = _run_to_csv(run_ppo_baseline, out_dir, "ppo", seed, cfg, env=env)
            else:
                data = dataset_for(cfg, seed, tier, n, env)
                p = _run_to_csv(run_coopo, out_dir, "coopo", seed, cfg, data, env=env)
            paths[algo].append(p)
            crossings[algo].append(first_crossing(read_metrics(p), threshold))
    cap = config.cycles * config.online.iterations * config.online.episodes_per_iter
    medians = {a: censored_median(v, cap) for a, v in crossings.items()}
    ratio = float("nan")
    if "ppo" in medians and "coopo" in medians and medians["ppo"] > 0:
        ratio = medians["coopo"] / medians["ppo"]
    return CompareResult(threshold, crossings, medians, cap, ratio, paths)


def lambda_ablation(config: CoopoConfig, out_dir, lambdas=(1.0, 3.0, 9.0), seeds=(0, 1, 2, 3, 4),
                    tier="medium", n=5000):
    """One curve ``lam<value>`` per lambda; returns {lambda: [final return per seed]}."""
    env = make_benchmark(config.env)
    finals = {}
    for lam in lambdas:
        curve = f"lam{lam:g}"
        finals[lam] = []
        for seed in seeds:
            cfg = replace(config, seed=seed, offline=replace(config.offline, lam=lam))
            p = _run_to_csv(run_coopo, out_dir, curve, seed, cfg, dataset_for(cfg, seed, tier, n, env),
                            env=env)
            finals[lam].append(final_eval(read_metrics(p)))
    return finals


def cycle_ablation(config: CoopoConfig, out_dir, total_iterations=20, cycle_counts=(1, 4, 10),
                   seeds=(0, 1, 2, 3, 4), tier="medium", n=5000, epochs=None):
    """Fixed total online rounds split over K cycles (K=1 is the one-shot hybrid).

    Curves are named ``K<k>_T<t>_E<e>``. Returns {K: [final return per seed]}.
    """
    env = make_benchmark(config.env)
    finals = {}
    for K in cycle_counts:
        if total_iterations % K:
            raise InputError(f"total_iterations={total_iterations} is not divisible by K={K}")
        T = total_iterations // K
        E = epochs or config.offline.epochs
        curve = f"K{K}_T{T}_E{E}"
        finals[K] = []
        for seed in seeds:
            cfg = replace(config, seed=seed, cycles=K, online=replace(config.online, iterations=T),
                          offline=replace(config.offline, epochs=E))
            p = _run_to_csv(run_coopo, out_dir, curve, seed, cfg, dataset_for(cfg, seed, tier, n, env),
                            env=env)
            finals[K].append(final_eval(read_metrics(p)))
    return finals
