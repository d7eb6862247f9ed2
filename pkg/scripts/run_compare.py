"""COOPO vs. PPO on pointmass: trajectories to a shared eval threshold, then plot bundles."""
import argparse
import json
import os

from coopo.config import parse_config
from coopo.experiments import compare
from coopo.metrics import export_plots

HERE = os.path.dirname(os.path.abspath(__file__))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=os.path.join(HERE, "..", "configs", "pointmass_compare.json"))
    ap.add_argument("--out")
    args = ap.parse_args()
    cfg = parse_config(args.config)
    out = args.out or cfg.out
    exp = cfg.experiment
    res = compare(cfg.coopo, out, seeds=exp.seeds, threshold=exp.threshold, algos=exp.algos,
                  tier=exp.tier, n=exp.dataset_n)
    print(json.dumps({"crossings": res.crossings, "medians": res.medians, "ratio": res.ratio}, indent=2))
    print(json.dumps(export_plots(out), indent=2))


if __name__ == "__main__":
    main()
