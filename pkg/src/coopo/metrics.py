"""Metric rows, the append-only CSV writer, and plot-data export."""
from __future__ import annotations

import csv
import glob
import os
from collections import defaultdict
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import InputError, SchemaError

PHASES = ("offline", "online", "eval")


@dataclass
class MetricRow:
    run_id: str
    cycle: int
    phase: str
    step: int
    mean_return: float | None = None
    policy_loss: float | None = None
    q_loss: float | None = None
    v_loss: float | None = None
    kl_to_prev: float | None = None
    tv_to_prev: float | None = None
    adv_mean: float | None = None
    adv_absmax: float | None = None
    env_steps_cum: int = 0
    traj_cum: int = 0
    wall_ms: float = 0.0

    def __post_init__(self):
        if self.phase not in PHASES:
            raise InputError(f"unknown phase {self.phase!r}")


COLUMNS = [f.name for f in fields(MetricRow)]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class MetricsWriter:
    """One CSV per run; header once, every row flushed as it is written.

    Cumulative interaction columns must never decrease, and offline rows may
    not advance them.
    """

    def __init__(self, path):
        self.path = path
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        self._fh = open(path, "w", newline="")
        self._w = csv.writer(self._fh)
        self._w.writerow(COLUMNS)
        self._fh.flush()
        self._last = (0, 0)
        self.rows = 0

    def write(self, row: MetricRow):
        cur = (row.env_steps_cum, row.traj_cum)
        if cur[0] < self._last[0] or cur[1] < self._last[1]:
            raise InputError("cumulative interaction counters went backwards")
        if row.phase == "offline" and cur != self._last:
            raise InputError("offline rows cannot add environment interactions")
        self._last = cur
        d = asdict(row)
        self._w.writerow([_fmt(d[c]) for c in COLUMNS])
        self._fh.flush()
        self.rows += 1

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != COLUMNS:
            raise SchemaError(f"{path}: columns {reader.fieldnames} do not match {COLUMNS}")
        return list(reader)


# -- plot-data export -------------------------------------------------------

def band(curves):
    """Pointwise mean with min/max envelope across seeds on a shared x grid.

    ``curves`` maps seed -> (xs, ys). Curves are truncated to the shortest.
    """
    n = min(len(xs) for xs, _ in curves.values())
    xs = np.asarray(next(iter(curves.values()))[0][:n], dtype=np.float64)
    Y = np.array([np.asarray(ys[:n], dtype=np.float64) for _, ys in curves.values()])
    return xs, Y.mean(axis=0), Y.min(axis=0), Y.max(axis=0)


def write_bundle(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["curve_id", "x", "y", "y_lo", "y_hi"])
        for r in rows:
            w.writerow([r[0]] + [repr(float(v)) for v in r[1:]])


def _eval_curve(rows, x_key):
    xs, ys = [], []
    for r in rows:
        if r["phase"] == "eval" and r["mean_return"] != "":
            xs.append(float(r[x_key]))
            ys.append(float(r["mean_return"]))
    return xs, ys


def export_plots(metrics_dir, out_dir=None):
    """Turn metrics CSVs into one tidy CSV per figure.

    Files are grouped into curves by the part of their name before
    ``__seed``; e.g. ``coopo_lam3__seed1.csv`` -> curve ``coopo_lam3``.
    Produces ``return_vs_trajectories.csv`` and ``return_vs_env_steps.csv``
    with columns curve_id, x, y, y_lo, y_hi. Curves whose id starts with
    ``lam`` or contains ``_lam`` also go into ``lambda_ablation.csv``;
    ``K``-prefixed ids go into ``cycle_ablation.csv``.
    """
    paths = sorted(glob.glob(os.path.join(metrics_dir, "**", "*.csv"), recursive=True))
    paths = [p for p in paths if os.path.basename(p) not in ("return_vs_trajectories.csv",
             "return_vs_env_steps.csv", "lambda_ablation.csv", "cycle_ablation.csv")]
    if not paths:
        raise InputError(f"no metrics CSVs under {metrics_dir}")
    out_dir = out_dir or metrics_dir
    os.makedirs(out_dir, exist_ok=True)
    groups = defaultdict(dict)
    for p in paths:
        rows = read_metrics(p)
        stem = os.path.splitext(os.path.basename(p))[0]
        curve, _, seed = stem.partition("__seed")
        groups[curve][seed or "0"] = rows
    written = {}
    for fig, x_key in (("return_vs_trajectories", "traj_cum"), ("return_vs_env_steps", "env_steps_cum")):
        out_rows = []
        for curve in sorted(groups):
            curves = {s: _eval_curve(rows, x_key) for s, rows in groups[curve].items()}
            curves = {s: c for s, c in curves.items() if c[0]}
            if not curves:
                continue
            xs, y, lo, hi = band(curves)
            out_rows += [(curve, *t) for t in zip(xs, y, lo, hi)]
        path = os.path.join(out_dir, f"{fig}.csv")
        write_bundle(path, out_rows)
        written[fig] = path
    for fig, pred in (("lambda_ablation", lambda c: c.startswith("lam") or "_lam" in c),
                      ("cycle_ablation", lambda c: c.startswith("K") or "_K" in c)):
        out_rows = []
        for curve in sorted(c for c in groups if pred(c)):
            curves = {s: _eval_curve(rows, "traj_cum") for s, rows in groups[curve].items()}
            curves = {s: c for s, c in curves.items() if c[0]}
            if curves:
                xs, y, lo, hi = band(curves)
                out_rows += [(curve, *t) for t in zip(xs, y, lo, hi)]
        if out_rows:
            path = os.path.join(out_dir, f"{fig}.csv")
            write_bundle(path, out_rows)
            written[fig] = path
    return written
