"""Helpers shared by the experiment scripts."""

from __future__ import annotations

import argparse
from collections import defaultdict

import numpy as np

from fakeclr.config import ExperimentConfig
from fakeclr.harness import sweep


def parser(description: str, iterations: int, seeds: list[int]) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--out", required=True, help="sweep directory; completed runs are reused")
    p.add_argument("--iterations", type=int, default=iterations)
    p.add_argument("--seeds", type=int, nargs="+", default=seeds)
    p.add_argument("--jobs", type=int, default=1)
    return p


def run_grid(args, grid: dict, **base_overrides) -> list[dict]:
    base = ExperimentConfig().replace(iterations=args.iterations, eval_interval=args.iterations,
                                      **base_overrides)
    return sweep(base, dict(grid, seeds=args.seeds), args.out, jobs=args.jobs)


def median_table(rows: list[dict], keys: list[str], metrics: list[str]) -> str:
    groups = defaultdict(list)
    for r in rows:
        if r["toy_fid"] != "":
            groups[tuple(r[k] for k in keys)].append(r)
    head = " | ".join(keys + [f"median {m}" for m in metrics] + ["runs"])
    lines = [head, "-" * len(head)]
    for group, rs in groups.items():
        vals = [f"{np.median([float(r[m]) for r in rs]):.4f}" for m in metrics]
        lines.append(" | ".join([str(g) for g in group] + vals + [str(len(rs))]))
    return "\n".join(lines)
