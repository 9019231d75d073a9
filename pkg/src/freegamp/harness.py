"""Experiment driver: synthesize trials, run strategies, write CSV/JSONL results."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .config import ExperimentConfig
from .ensembles import synthesize_problem
from .errors import DivergedError, NumericError
from .oracle import check_fixed_point
from .solvers import Trajectory, nmse_db, run

log = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = ("iteration", "mse", "nmse_db", "residual_f1", "residual_f2",
                      "clip_count", "change")
# dense residual check is O(K^3); skipped above this size
RESIDUAL_MAX_K = 2048


@dataclass
class ResultRecord:
    trial: int
    seed: int
    strategy: str
    iterations: int
    converged: bool
    diverged: bool
    nmse_db: float
    mse: float
    wall_time: float
    clip_count: int
    residual_max: float
    residual_f1: float
    residual_f2: float
    message: str = ""

    def to_json(self) -> str:
        d = {k: (None if isinstance(v, float) and not math.isfinite(v) else v)
             for k, v in asdict(self).items()}
        return json.dumps(d, sort_keys=True)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def trajectory_rows(traj: Trajectory) -> List[List[str]]:
    return [[_fmt(getattr(r, c)) for c in TRAJECTORY_COLUMNS] for r in traj.records]


def run_trial(cfg: ExperimentConfig, trial: int, strategy: str):
    """One (trial, strategy) run; returns ``(ResultRecord, trajectory rows)``."""
    seed = cfg.seed + trial
    problem = synthesize_problem(cfg.ensemble, cfg.prior, cfg.likelihood, seed=seed)
    solver = replace(cfg.solver, strategy=replace(cfg.solver.strategy, kind=strategy))
    t0 = time.perf_counter()
    nan = float("nan")
    try:
        traj, state = run(problem, solver)
    except DivergedError as exc:
        wall = time.perf_counter() - t0
        traj = exc.trajectory or Trajectory()
        clips = traj.records[-1].clip_count if traj.records else 0
        rec = ResultRecord(trial, seed, strategy, traj.iterations, False, True, nan, nan, wall,
                           clips, nan, nan, nan, str(exc))
        return rec, trajectory_rows(traj)
    wall = time.perf_counter() - t0
    r_max = r1 = r2 = nan
    if problem.K <= RESIDUAL_MAX_K and traj.iterations:
        try:
            rep = check_fixed_point(state, problem.A, problem.prior, problem.likelihood, problem.y)
            r_max, r1, r2 = rep.max, rep.f1, rep.f2
        except NumericError as exc:
            log.info("trial %d %s: residual check skipped (%s)", trial, strategy, exc)
    x = state.x_hat
    rec = ResultRecord(trial, seed, strategy, traj.iterations, traj.converged, False,
                       nmse_db(x, problem.x_true), float(np.mean((x - problem.x_true) ** 2)),
                       wall, state.clip_count, r_max, r1, r2)
    return rec, trajectory_rows(traj)


def _job(args):
    return run_trial(*args)


def run_experiment(cfg: ExperimentConfig, out_dir: Optional[str] = None) -> List[ResultRecord]:
    """Run trials x strategies; seeds are ``cfg.seed + trial``.

    Results are written in (trial, strategy) order whatever the completion
    order: one trajectory CSV per run and one JSON line per record. Diverged
    runs are recorded, not raised.
    """
    out = Path(out_dir if out_dir is not None else cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    tasks = [(cfg, t, s) for t in range(cfg.trials) for s in cfg.strategies]
    if cfg.jobs > 1 and len(tasks) > 1:
        pool = ProcessPoolExecutor(max_workers=cfg.jobs)
        results = pool.map(_job, tasks)
    else:
        pool = None
        results = map(_job, tasks)
    records = []
    summary = out / cfg.output.summary
    try:
        with open(summary, "w") as fh:
            for (_, trial, strategy), (rec, rows) in zip(tasks, results):
                if cfg.output.trajectories:
                    with open(out / f"trajectory_{strategy}_trial{trial:03d}.csv", "w",
                              newline="") as tf:
                        w = csv.writer(tf, lineterminator="\n")
                        w.writerow(TRAJECTORY_COLUMNS)
                        w.writerows(rows)
                fh.write(rec.to_json() + "\n")
                fh.flush()
                log.info("trial %d %s: %d iterations, nmse %.3f dB%s", trial, strategy,
                         rec.iterations, rec.nmse_db, " (diverged)" if rec.diverged else "")
                records.append(rec)
    finally:
        if pool is not None:
            pool.shutdown()
    write_comparison(out / "comparison.csv", compare_strategies(records))
    return records


def compare_strategies(records: List[ResultRecord]) -> List[Dict]:
    """Per-strategy summary rows, in first-appearance order.

    NMSE and residual statistics are over non-diverged records (NaN if none).
    """
    if not records:
        raise ValueError("no records to summarize")
    groups: Dict[str, List[ResultRecord]] = {}
    for r in records:
        groups.setdefault(r.strategy, []).append(r)
    rows = []
    for name, recs in groups.items():
        ok = [r for r in recs if not r.diverged]

        def stat(fn, attr):
            vals = [getattr(r, attr) for r in ok if math.isfinite(getattr(r, attr))]
            return float(fn(vals)) if vals else float("nan")

        rows.append(dict(
            strategy=name, trials=len(recs),
            mean_nmse_db=stat(np.mean, "nmse_db"), median_nmse_db=stat(np.median, "nmse_db"),
            mean_iterations=float(np.mean([r.iterations for r in recs])),
            median_iterations=float(np.median([r.iterations for r in recs])),
            converged_rate=sum(r.converged for r in recs) / len(recs),
            divergence_rate=sum(r.diverged for r in recs) / len(recs),
            max_residual=stat(np.max, "residual_max"),
        ))
    return rows


COMPARISON_COLUMNS = ("strategy", "trials", "mean_nmse_db", "median_nmse_db", "mean_iterations",
                      "median_iterations", "converged_rate", "divergence_rate", "max_residual")


def write_comparison(path, rows: List[Dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPARISON_COLUMNS)
        for row in rows:
            w.writerow([row["strategy"]] + [_fmt(row[c]) for c in COMPARISON_COLUMNS[1:]])
