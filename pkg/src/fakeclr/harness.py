"""Run experiments, write metrics/config/checkpoint files and drive sweeps."""

from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data as datasets
from .config import ExperimentConfig, EvalConfig
from .gan import AbortRun, GanModel, Trainer, adversarial_losses, save_checkpoint, train
from .metrics import mmd_poly, nearest_neighbor_report, path_length, toy_fid
from .numerics import make_rng, no_grad

log = logging.getLogger(__name__)

EVAL_STREAM = 999


@dataclass
class MetricsRow:
    iteration: int
    L_D: float
    L_G: float
    contrastive: float
    queue_size: int
    toy_fid: float
    toy_kid: float
    ppl_z_mean: float
    ppl_w_mean: float
    ppl_w_std: float
    nn_min_dist: float

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    def as_strings(self) -> list[str]:
        return [repr(v) if isinstance(v, float) else str(v) for v in dataclasses.astuple(self)]

    @classmethod
    def from_strings(cls, row: dict) -> "MetricsRow":
        kw = {}
        for f in dataclasses.fields(cls):
            kw[f.name] = int(row[f.name]) if f.type in ("int", int) else float(row[f.name])
        return cls(**kw)


def evaluate_model(model: GanModel, train_set: np.ndarray, reference: np.ndarray, cfg: EvalConfig,
                   seed: int) -> dict:
    """Generator-quality metrics of the EMA generator from a fixed evaluation stream."""
    g = model.generator_ema
    rng = make_rng(seed, EVAL_STREAM)
    fake = g.sample(rng.standard_normal((cfg.n_generated, g.z_dim)))
    k = min(cfg.n_kid, len(fake), len(reference))
    kid_idx_f = rng.choice(len(fake), size=k, replace=False)
    kid_idx_r = rng.choice(len(reference), size=k, replace=False)
    ppl_z = path_length(g, "z", cfg.n_paths, cfg.ppl_eps, rng)
    ppl_w = path_length(g, "w", cfg.n_paths, cfg.ppl_eps, rng)
    nn = nearest_neighbor_report(fake, train_set, k=1, delta=cfg.nn_delta)
    return {
        "toy_fid": toy_fid(fake, reference),
        "toy_kid": mmd_poly(fake[kid_idx_f], reference[kid_idx_r]),
        "ppl_z_mean": ppl_z.mean,
        "ppl_w_mean": ppl_w.mean,
        "ppl_w_std": ppl_w.std,
        "nn_min_dist": nn.mean_nearest,
        "nn_fraction_within": nn.fraction_within,
    }


def _initial_losses(trainer: Trainer) -> tuple[float, float]:
    cfg = trainer.cfg
    rng = make_rng(cfg.seed, EVAL_STREAM, 0)
    x_real = trainer.data[rng.integers(0, len(trainer.data), size=cfg.train_batch)]
    z = rng.standard_normal((cfg.train_batch, cfg.model.z_dim))
    with no_grad():
        d = trainer.model.discriminator
        l_d, l_g = adversarial_losses(d.logits(x_real), d.logits(trainer.model.generator.sample(z)))
    return l_d.item(), l_g.item()


class _CsvLog:
    def __init__(self, path: Path):
        self.fh = open(path, "w", newline="")
        self.writer = csv.writer(self.fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
        self.writer.writerow(MetricsRow.columns())
        self.fh.flush()

    def write(self, row: MetricsRow) -> None:
        self.writer.writerow(row.as_strings())
        self.fh.flush()

    def close(self) -> None:
        self.fh.close()


def read_metrics(path) -> list[MetricsRow]:
    with open(path, newline="") as fh:
        return [MetricsRow.from_strings(r) for r in csv.DictReader(fh)]


@dataclass
class RunResult:
    config: ExperimentConfig
    rows: list[MetricsRow]
    model: GanModel | None
    ok: bool = True
    error: str = ""

    @property
    def final(self) -> MetricsRow | None:
        return self.rows[-1] if self.rows else None


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> RunResult:
    """Train one configuration, logging a metrics row per evaluation.

    With ``out_dir`` set (argument or config), writes ``config.json``,
    ``metrics.csv`` and, on success, ``final.ckpt``.  A training abort keeps
    the partial CSV and returns ``ok=False``.
    """
    out_dir = out_dir if out_dir is not None else cfg.out_dir
    ds = cfg.dataset
    train_set = datasets.make_dataset(ds.kind, ds.n_samples, ds.seed)
    reference = datasets.reference_set(ds.kind, cfg.eval.n_reference, ds.seed)

    csv_log = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        cfg.save(out / "config.json")
        csv_log = _CsvLog(out / "metrics.csv")

    rows: list[MetricsRow] = []

    def evaluate(trainer: Trainer, iteration: int, losses):
        if losses is None:
            l_d, l_g = _initial_losses(trainer)
            c = 0.0
        else:
            l_d, l_g, c = losses
        m = evaluate_model(trainer.model, train_set, reference, cfg.eval, cfg.seed)
        row = MetricsRow(iteration, float(l_d), float(l_g), float(c), trainer.queue_size, m["toy_fid"],
                         m["toy_kid"], m["ppl_z_mean"], m["ppl_w_mean"], m["ppl_w_std"], m["nn_min_dist"])
        rows.append(row)
        if csv_log is not None:
            csv_log.write(row)
        log.info("iter %d  fid %.4f  ppl_w %.3f", iteration, row.toy_fid, row.ppl_w_mean)
        return row

    try:
        trainer, _ = train(cfg, train_set, evaluate)
    except AbortRun as exc:
        log.error("run aborted: %s", exc)
        return RunResult(cfg, rows, None, ok=False, error=str(exc))
    finally:
        if csv_log is not None:
            csv_log.close()
    if out_dir is not None:
        save_checkpoint(Path(out_dir) / "final.ckpt", trainer.model, cfg)
    return RunResult(cfg, rows, trainer.model)


# sweeps ------------------------------------------------------------------------------

SUMMARY_METRICS = ["iteration", "L_D", "L_G", "contrastive", "queue_size", "toy_fid", "toy_kid",
                   "ppl_z_mean", "ppl_w_mean", "ppl_w_std", "nn_min_dist"]


def expand_grid(base: ExperimentConfig, grid: dict) -> list[tuple[dict, ExperimentConfig]]:
    """Cartesian product of dotted-path overrides; an optional ``seeds`` list replicates each point."""
    grid = dict(grid)
    seeds = grid.pop("seeds", None)
    if not grid and seeds is None:
        raise ValueError("grid must not be empty")
    keys = list(grid)
    for k in keys:
        if not isinstance(grid[k], list) or not grid[k]:
            raise ValueError(f"grid entry {k!r} must be a non-empty list")
    runs = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        overrides = dict(zip(keys, combo))
        for seed in (seeds if seeds is not None else [None]):
            o = dict(overrides)
            if seed is not None:
                o["seed"] = seed
            runs.append((o, base.replace(**o)))
    return runs


def _run_child(cfg_dict: dict, run_dir: str) -> dict:
    cfg = ExperimentConfig.from_dict(cfg_dict)
    start = time.perf_counter()
    try:
        result = run_experiment(cfg, run_dir)
    except Exception as exc:  # recorded in the summary; the sweep carries on
        return {"status": f"failed: {type(exc).__name__}: {exc}", "runtime_seconds": time.perf_counter() - start}
    status = "ok" if result.ok else f"aborted: {result.error}"
    if result.ok:
        Path(run_dir, "done").write_text("ok\n")
    return {"status": status, "runtime_seconds": time.perf_counter() - start}


def sweep(base: ExperimentConfig, grid: dict, out_dir, jobs: int = 1) -> list[dict]:
    """Run every grid point (skipping completed ones) and write ``summary.csv``."""
    out = Path(out_dir)
    (out / "runs").mkdir(parents=True, exist_ok=True)
    runs = expand_grid(base, grid)
    # the seed already has its own column
    override_keys = sorted({k for o, _ in runs for k in o} - {"seed"})
    pending = {}
    for overrides, cfg in runs:
        h = cfg.config_hash()
        run_dir = out / "runs" / h
        if (run_dir / "done").exists() or h in pending:
            continue
        pending[h] = (cfg.to_dict(), str(run_dir))

    outcomes: dict[str, dict] = {}
    if jobs > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {h: pool.submit(_run_child, *args) for h, args in pending.items()}
            outcomes = {h: f.result() for h, f in futures.items()}
    else:
        outcomes = {h: _run_child(*args) for h, args in pending.items()}

    rows = []
    for overrides, cfg in runs:
        h = cfg.config_hash()
        run_dir = out / "runs" / h
        outcome = outcomes.get(h, {"status": "ok (cached)", "runtime_seconds": ""})
        row = {"config_hash": h, "status": outcome["status"], "seed": cfg.seed}
        row.update({k: json.dumps(overrides.get(k)) for k in override_keys})
        metrics_path = run_dir / "metrics.csv"
        final = read_metrics(metrics_path)[-1] if metrics_path.exists() and (run_dir / "done").exists() else None
        for col in SUMMARY_METRICS:
            row[col] = getattr(final, col) if final is not None else ""
        row["runtime_seconds"] = outcome["runtime_seconds"]
        rows.append(row)

    fids = [r["toy_fid"] for r in rows if r["toy_fid"] != ""]
    best = min(fids) if fids else None
    for r in rows:
        r["is_best_fid"] = int(best is not None and r["toy_fid"] == best)

    columns = ["config_hash", "status", "seed"] + override_keys + SUMMARY_METRICS + ["is_best_fid",
                                                                                     "runtime_seconds"]
    with open(out / "summary.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return rows


def resolve_seed(cfg_seed: int, cli_seed: int | None = None) -> int:
    """CLI flag beats ``FAKECLR_SEED``, which beats the config file."""
    if cli_seed is not None:
        return cli_seed
    env = os.environ.get("FAKECLR_SEED")
    return int(env) if env not in (None, "") else cfg_seed
