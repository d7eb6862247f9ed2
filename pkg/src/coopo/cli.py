"""``coopo <train|gen-data|verify|compare|export-plots>``.

Exit codes: 0 success, 1 validation failure, 2 numeric abort.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .config import RunConfig, parse_config, parse_dict, write_resolved_config
from .cycle import run_coopo, run_ppo_baseline
from .environments import make_benchmark
from .errors import InputError, NumericError, ParseError, SchemaError, UnsupportedError
from .experiments import ALGOS, compare, dataset_for
from .metrics import export_plots
from .offline_data import BehaviorPolicyDescriptor, TIERS, generate
from .offline_data import save as save_dataset
from .verify import SUITES, run_suite

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2
log = logging.getLogger("coopo")


def _load(args) -> RunConfig:
    # parse_dict also applies the COOPO_SEED override
    cfg = parse_config(args.config, write_resolved=False) if args.config else parse_dict({})
    if getattr(args, "seed", None) is not None:
        cfg.coopo.seed = args.seed
    if getattr(args, "env", None):
        cfg.coopo.env = args.env
    if getattr(args, "out", None):
        cfg.out = args.out
    return cfg


def cmd_train(args):
    cfg = _load(args)
    write_resolved_config(cfg)
    c = cfg.coopo
    if args.algo == "ppo":
        _, reports = run_ppo_baseline(c, out_dir=cfg.out)
    else:
        data = dataset_for(c, c.seed, cfg.experiment.tier, cfg.experiment.dataset_n)
        _, reports = run_coopo(c, data, out_dir=cfg.out)
    last = reports[-1] if reports else None
    print(json.dumps({"out": cfg.out, "cycles": len(reports),
                      "final_return": None if last is None else last.J_after}))
    return EXIT_OK


def cmd_gen_data(args):
    env = make_benchmark(args.env)
    data = generate(env, BehaviorPolicyDescriptor.from_tier(env, args.tier), args.n, args.seed or 0)
    path = args.out or "."
    if not path.endswith(".jsonl"):
        os.makedirs(path, exist_ok=True)
        path = os.path.join(path, f"{args.env}_{args.tier}_{args.n}.jsonl")
    save_dataset(data, path)
    print(json.dumps({"path": path, "n": len(data), "checksum": data.checksum()}))
    return EXIT_OK


def cmd_verify(args):
    ok = True
    for suite in args.suite:
        rep = run_suite(suite)
        ok &= bool(rep["pass"])
        print(json.dumps(rep, default=float))
    return EXIT_OK if ok else EXIT_INVALID


def cmd_compare(args):
    cfg = _load(args)
    write_resolved_config(cfg)
    exp = cfg.experiment
    seeds = [args.seed] if args.seed is not None else exp.seeds
    algos = args.algo or exp.algos
    res = compare(cfg.coopo, cfg.out, seeds=seeds, threshold=exp.threshold, algos=algos,
                  tier=exp.tier, n=exp.dataset_n)
    summary = {"threshold": res.threshold, "crossings": res.crossings, "medians": res.medians,
               "budget_trajectories": res.budget_trajectories, "ratio": res.ratio,
               "paths": res.paths}
    with open(os.path.join(cfg.out, "compare_summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
    print(json.dumps(summary))
    return EXIT_OK


def cmd_export_plots(args):
    written = export_plots(args.metrics, args.out)
    print(json.dumps(written))
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    # usage errors are validation failures; exit code 2 is reserved for numeric aborts
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="coopo", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="run COOPO (or the PPO baseline) from a config")
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.add_argument("--env")
    t.add_argument("--algo", choices=ALGOS, default="coopo")
    t.set_defaults(fn=cmd_train)

    g = sub.add_parser("gen-data", help="write an offline dataset")
    g.add_argument("--env", required=True)
    g.add_argument("--tier", choices=sorted(TIERS), default="medium")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--out")
    g.set_defaults(fn=cmd_gen_data)

    v = sub.add_parser("verify", help="run numerical verification suites")
    v.add_argument("--suite", action="append", choices=sorted(SUITES), required=True)
    v.set_defaults(fn=cmd_verify)

    c = sub.add_parser("compare", help="multi-seed COOPO vs. PPO with a shared threshold")
    c.add_argument("--config")
    c.add_argument("--seed", type=int)
    c.add_argument("--out")
    c.add_argument("--env")
    c.add_argument("--algo", action="append", choices=ALGOS)
    c.set_defaults(fn=cmd_compare)

    e = sub.add_parser("export-plots", help="turn metrics CSVs into per-figure CSV bundles")
    e.add_argument("--metrics", required=True, help="directory holding metrics CSVs")
    e.add_argument("--out")
    e.set_defaults(fn=cmd_export_plots)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ParseError, SchemaError, InputError, UnsupportedError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
