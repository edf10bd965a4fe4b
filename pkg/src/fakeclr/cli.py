"""Command-line entry point: ``fakeclr run | sweep | metrics | selftest``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import data as datasets
from .config import ExperimentConfig
from .gan import load_checkpoint
from .harness import evaluate_model, resolve_seed, run_experiment, sweep

log = logging.getLogger("fakeclr")


def _load_config(path: str | None, cli_seed: int | None) -> ExperimentConfig:
    cfg = ExperimentConfig.load(path) if path else ExperimentConfig()
    seed = resolve_seed(cfg.seed, cli_seed)
    return cfg if seed == cfg.seed else cfg.replace(seed=seed)


def cmd_run(args) -> int:
    cfg = _load_config(args.config, args.seed)
    result = run_experiment(cfg, args.out)
    if not result.ok:
        print(f"run aborted: {result.error}", file=sys.stderr)
        return 1
    f = result.final
    print(f"iteration {f.iteration}  toy_fid {f.toy_fid:.6g}  toy_kid {f.toy_kid:.6g}  "
          f"ppl_w {f.ppl_w_mean:.6g} +- {f.ppl_w_std:.6g}")
    return 0


def cmd_sweep(args) -> int:
    base = _load_config(args.config, None)
    with open(args.grid) as fh:
        grid = json.load(fh)
    rows = sweep(base, grid, args.out, jobs=args.jobs)
    failed = [r for r in rows if not str(r["status"]).startswith("ok")]
    print(f"{len(rows)} runs, {len(failed)} not ok; summary at {Path(args.out) / 'summary.csv'}")
    return 0


def cmd_metrics(args) -> int:
    model, cfg = load_checkpoint(args.ckpt)
    kind, n, seed = datasets.parse_dataset_spec(args.dataset)
    train_set = datasets.make_dataset(kind, n, seed)
    reference = datasets.reference_set(kind, cfg.eval.n_reference, seed)
    metrics = evaluate_model(model, train_set, reference, cfg.eval, cfg.seed)
    print(json.dumps(metrics, indent=2, sort_keys=True))
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run_selftest
    return 0 if run_selftest() else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fakeclr", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train one configuration")
    p.add_argument("--config", help="JSON config; defaults are used for missing fields")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="overrides FAKECLR_SEED and the config seed")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a grid of overrides")
    p.add_argument("--config", help="base JSON config")
    p.add_argument("--grid", required=True, help='JSON object of dotted paths to value lists, plus optional "seeds"')
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("metrics", help="re-evaluate a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--dataset", required=True, help="kind-n[-seed], e.g. ring-100")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("selftest", help="run the built-in oracle checks")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s", stream=sys.stderr)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
