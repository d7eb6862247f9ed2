"""Sweep the offline temperature over {1, 3, 9} on pointmass and export one curve per value."""
import argparse
import json
import os

import numpy as np

from coopo.config import parse_config
from coopo.experiments import lambda_ablation
from coopo.metrics import export_plots

HERE = os.path.dirname(os.path.abspath(__file__))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=os.path.join(HERE, "..", "configs", "pointmass_lambda_ablation.json"))
    ap.add_argument("--lambdas", default="1,3,9")
    ap.add_argument("--out")
    args = ap.parse_args()
    cfg = parse_config(args.config)
    out = args.out or cfg.out
    lams = [float(x) for x in args.lambdas.split(",")]
    finals = lambda_ablation(cfg.coopo, out, lams, cfg.experiment.seeds, cfg.experiment.tier,
                             cfg.experiment.dataset_n)
    print(json.dumps({f"{k:g}": {"finals": v, "median": float(np.median(v))} for k, v in finals.items()},
                     indent=2))
    print(json.dumps(export_plots(out), indent=2))


if __name__ == "__main__":
    main()
