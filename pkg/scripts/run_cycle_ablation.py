"""Fixed online budget split over K cycles; K=1 is the one-shot offline-then-online hybrid.

Also sweeps the (T, E) pairing at fixed K when --epochs is given several values.
"""
import argparse
import json
import os

import numpy as np

from coopo.config import parse_config
from coopo.experiments import cycle_ablation
from coopo.metrics import export_plots

HERE = os.path.dirname(os.path.abspath(__file__))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=os.path.join(HERE, "..", "configs", "pointmass_cycle_ablation.json"))
    ap.add_argument("--total-iterations", type=int, default=20)
    ap.add_argument("--cycles", default="1,4,10", help="comma-separated K values")
    ap.add_argument("--epochs", default=None, help="comma-separated E values (default: config)")
    ap.add_argument("--out")
    args = ap.parse_args()
    cfg = parse_config(args.config)
    out = args.out or cfg.out
    Ks = [int(x) for x in args.cycles.split(",")]
    Es = [int(x) for x in args.epochs.split(",")] if args.epochs else [None]
    summary = {}
    for E in Es:
        finals = cycle_ablation(cfg.coopo, out, args.total_iterations, Ks, cfg.experiment.seeds,
                                cfg.experiment.tier, cfg.experiment.dataset_n, epochs=E)
        for K, v in finals.items():
            summary[f"K{K}_E{E or cfg.coopo.offline.epochs}"] = {"finals": v, "median": float(np.median(v))}
    print(json.dumps(summary, indent=2))
    print(json.dumps(export_plots(out), indent=2))


if __name__ == "__main__":
    main()
