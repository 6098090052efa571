"""Study runners: expand a config into sweep points, run trials, write artifacts.

Seeding: the row for (point, trial) carries seed ``base_seed + point *
TRIAL_STRIDE + trial``, which drives the method's own randomness (initial
draw, exploration, k-means restarts, baseline sensor order). The problem
instance (field, fading and noise) depends only on ``(base_seed, k,
placement, trial)``, so methods and parameter values at the same trial
are compared on identical instances. Replaying one row needs only the
config plus its ``point`` and ``trial``: see :func:`replay_trial`.
"""

from __future__ import annotations

import csv
import datetime as _dt
import json
import logging
import platform
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field as dc_field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .. import __version__
from ..adaptive import ChasingConfig
from ..errors import ConfigError
from .config import ExperimentConfig
from .metrics import (
    TRIAL_STRIDE,
    TrialResult,
    adaptive_trial,
    baseline_oneshot,
    baseline_search,
    draw_instance,
    trial_seed,
)

log = logging.getLogger(__name__)

TRIAL_COLUMNS = (
    "study", "point", "trial", "seed", "k", "algorithm",
    "m_used", "rounds", "sad", "converged", "wall_ms",
)
AGGREGATE_COLUMNS = (
    "study", "point", "algorithm", "placement", "k", "param", "value", "trials",
    "m_used_mean", "m_used_median", "m_used_std",
    "m_needed_mean", "m_needed_median",
    "sad_mean", "sad_median", "sad_std",
    "rounds_mean", "rounds_median",
    "converged_rate", "success_rate",
)
ROUND_COLUMNS = ("study", "point", "trial", "round", "kind", "M", "sad", "support_size")


@dataclass(frozen=True)
class SweepPoint:
    index: int
    algorithm: str
    k: int
    placement: str
    param: str
    value: float
    chasing: ChasingConfig
    snr_db: Optional[float] = None
    budget: Optional[int] = None


@dataclass(eq=False)
class StudyResult:
    config: ExperimentConfig
    points: List[SweepPoint]
    rows: List[dict]
    aggregate: List[dict]
    results: Dict[Tuple[int, int], TrialResult]
    paths: Dict[str, Path] = dc_field(default_factory=dict)
    summary: dict = dc_field(default_factory=dict)


def _algorithms(cfg: ExperimentConfig, allowed: Sequence[str]) -> Tuple[str, ...]:
    algs = tuple(a for a in cfg.study_algorithms if a in allowed)
    if not algs:
        raise ConfigError(f"study {cfg.study!r} cannot run algorithms {cfg.study_algorithms}")
    return algs


def sweep_points(cfg: ExperimentConfig) -> List[SweepPoint]:
    """Enumerate the study's sweep grid in its fixed row order."""
    ch = cfg.chasing
    out: List[SweepPoint] = []

    def add(alg, k, placement, param, value, chasing=None, snr_db=None, budget=None):
        chasing = replace(chasing or ch, algorithm=alg if alg != "baseline" else ch.algorithm)
        out.append(SweepPoint(len(out), alg, k, placement, param, float(value), chasing, snr_db, budget))

    s = cfg.study
    if s == "sensors_vs_k":
        for placement in cfg.placements:
            for k in cfg.k_list:
                for alg in _algorithms(cfg, ("ic", "cc", "baseline")):
                    add(alg, k, placement, "k", k)
    elif s == "start_sweep":
        for k in cfg.k_list:
            for f in cfg.m0_list:
                for alg in _algorithms(cfg, ("ic", "cc")):
                    add(alg, k, cfg.placement, "m0_factor", f, replace(ch, m0_factor=f))
    elif s == "alpha_sweep":
        for a in cfg.alpha_list:
            for alg in _algorithms(cfg, ("ic", "cc")):
                add(alg, cfg.k, cfg.placement, "alpha_pct", a, replace(ch, alpha_pct=a))
    elif s == "convergence":
        for k in cfg.k_list:
            for alg in _algorithms(cfg, ("ic", "cc")):
                add(alg, k, cfg.placement, "k", k)
    elif s == "noise":
        budget = min(int(round(cfg.budget_factor * cfg.k)), cfg.field.num_sensors)
        for snr in cfg.snr_list:
            for alg in _algorithms(cfg, ("ic", "cc", "baseline")):
                add(alg, cfg.k, cfg.placement, "snr_db", snr, replace(ch, max_sensors=budget), snr, budget)
    else:  # single_run
        alg = cfg.study_algorithms[0]
        snr = cfg.snr_db
        add(alg, cfg.k, cfg.placement, "snr_db" if snr is not None else "", snr or 0.0, None, snr)
    return out


def trials_for(cfg: ExperimentConfig) -> int:
    """single_run always runs trial 0 only."""
    return 1 if cfg.study == "single_run" else cfg.trials_per_point


def _keep_trace(cfg: ExperimentConfig) -> bool:
    return cfg.write_traces or cfg.study in ("convergence", "single_run")


def run_trial(cfg: ExperimentConfig, point: SweepPoint, trial: int, M: Optional[int] = None) -> TrialResult:
    """One row's result; the baseline needs the sensor count ``M``."""
    seed = trial_seed(cfg.base_seed, point.index, trial)
    inst = draw_instance(cfg, point.k, trial, point.placement, point.snr_db)
    if point.algorithm == "baseline":
        return baseline_oneshot(inst.field, inst.channel, inst.noise, M, cfg.solver, seed, inst.recovery)
    return adaptive_trial(inst, cfg.solver, point.chasing, seed, _keep_trace(cfg))


def replay_trial(cfg: ExperimentConfig, point: int, trial: int, M: Optional[int] = None) -> TrialResult:
    pts = sweep_points(cfg)
    if not 0 <= point < len(pts):
        raise ConfigError(f"point {point} outside [0, {len(pts)})")
    p = pts[point]
    if p.algorithm == "baseline" and M is None:
        M = p.budget
    return run_trial(cfg, p, trial, M)


def _run_trial_args(args):
    return run_trial(*args)


class _Runner:
    """Maps trial jobs in order, in-process or over a process pool."""

    def __init__(self, jobs: int):
        self.pool = ProcessPoolExecutor(jobs) if jobs > 1 else None

    def map(self, args: List[tuple]) -> List[TrialResult]:
        if self.pool is None:
            return [run_trial(*a) for a in args]
        return list(self.pool.map(_run_trial_args, args))

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()


def _point_results(cfg, point, trials, runner) -> List[TrialResult]:
    if point.algorithm != "baseline":
        return runner.map([(cfg, point, t) for t in range(trials)])
    if point.budget is not None:
        return runner.map([(cfg, point, t, point.budget) for t in range(trials)])

    def evaluate(M):
        return runner.map([(cfg, point, t, M) for t in range(trials)])

    best, cache = baseline_search(evaluate, 2 * point.k, cfg.field.num_sensors, cfg.accuracy_sad_tol)
    log.info("point %d: baseline M* = %d after %d probes", point.index, best, len(cache))
    return cache[best]


def _row(cfg, point, trial, res: TrialResult) -> dict:
    return {
        "study": cfg.study,
        "point": point.index,
        "trial": trial,
        "seed": trial_seed(cfg.base_seed, point.index, trial),
        "k": point.k,
        "algorithm": point.algorithm,
        "m_used": res.m_used,
        "rounds": res.rounds,
        "sad": res.sad,
        "converged": bool(res.converged),
        "wall_ms": res.wall_ms,
    }


def point_m_needed(algorithm: str, m_used: int, sad_value: float, num_sensors: int, tol: float) -> int:
    """Baseline rows already sit at the searched ``M``; adaptive failures count as ``|L|``."""
    if algorithm == "baseline":
        return int(m_used)
    return int(m_used) if sad_value <= tol else num_sensors


def aggregate_rows(cfg: ExperimentConfig, points: Sequence[SweepPoint], rows: Sequence[dict]) -> List[dict]:
    """Per-point statistics; std is the population (ddof=0) value."""
    by_point: Dict[int, List[dict]] = {}
    for r in rows:
        by_point.setdefault(int(r["point"]), []).append(r)
    tol, num = cfg.accuracy_sad_tol, cfg.field.num_sensors
    out = []
    for p in points:
        rs = by_point.get(p.index, [])
        if not rs:
            continue
        m = np.array([float(r["m_used"]) for r in rs])
        s = np.array([float(r["sad"]) for r in rs])
        rd = np.array([float(r["rounds"]) for r in rs])
        conv = np.array([_truthy(r["converged"]) for r in rs], dtype=float)
        need = np.array(
            [point_m_needed(p.algorithm, r["m_used"], float(r["sad"]), num, tol) for r in rs], dtype=float
        )
        out.append(
            {
                "study": cfg.study,
                "point": p.index,
                "algorithm": p.algorithm,
                "placement": p.placement,
                "k": p.k,
                "param": p.param,
                "value": p.value,
                "trials": len(rs),
                "m_used_mean": float(m.mean()),
                "m_used_median": float(np.median(m)),
                "m_used_std": float(m.std()),
                "m_needed_mean": float(need.mean()),
                "m_needed_median": float(np.median(need)),
                "sad_mean": float(s.mean()),
                "sad_median": float(np.median(s)),
                "sad_std": float(s.std()),
                "rounds_mean": float(rd.mean()),
                "rounds_median": float(np.median(rd)),
                "converged_rate": float(conv.mean()),
                "success_rate": float((s <= tol).mean()),
            }
        )
    return out


def _truthy(v) -> bool:
    if isinstance(v, str):
        return v.strip().lower() in ("true", "1")
    return bool(v)


def round_rows(cfg: ExperimentConfig, results: Dict[Tuple[int, int], TrialResult]) -> List[dict]:
    out = []
    for (point, trial), res in sorted(results.items()):
        for rec in res.trace:
            out.append(
                {
                    "study": cfg.study,
                    "point": point,
                    "trial": trial,
                    "round": rec["round"],
                    "kind": rec["kind"],
                    "M": rec["M"],
                    "sad": rec["sad"],
                    "support_size": rec["support_size"],
                }
            )
    return out


def provenance() -> dict:
    here = Path(__file__).resolve().parent
    commit = dirty = None
    try:
        commit = subprocess.run(
            ["git", "rev-parse", "HEAD"], cwd=here, capture_output=True, text=True, timeout=5, check=True
        ).stdout.strip()
        dirty = bool(
            subprocess.run(
                ["git", "status", "--porcelain"], cwd=here, capture_output=True, text=True, timeout=5
            ).stdout.strip()
        )
    except (OSError, subprocess.SubprocessError):
        pass
    return {
        "package": "chasecs",
        "version": __version__,
        "git_commit": commit,
        "git_dirty": dirty,
        "created_utc": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "platform": platform.platform(),
        "command": sys.argv,
    }


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return v


def _write_csv(path: Path, columns, rows) -> None:
    try:
        with path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({c: _fmt(r[c]) for c in columns})
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write {path}: {exc.strerror}", str(path)) from exc


def _write_text(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write {path}: {exc.strerror}", str(path)) from exc


def run_study(cfg: ExperimentConfig, write: bool = True) -> StudyResult:
    """Run every sweep point for ``trials_per_point`` trials and write the artifacts.

    Files land in ``cfg.output_dir``: ``trials.csv``, ``aggregate.csv`` and
    ``summary.json`` always; ``rounds.csv`` and ``traces.jsonl`` when traces
    are kept (convergence and single_run studies, or ``write_traces``).
    """
    if cfg.trials_per_point >= TRIAL_STRIDE:
        raise ConfigError(f"trials_per_point must be below {TRIAL_STRIDE}")
    points = sweep_points(cfg)
    trials = trials_for(cfg)
    out_dir = Path(cfg.output_dir)
    if write:
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OSError(exc.errno, f"cannot create {out_dir}: {exc.strerror}", str(out_dir)) from exc

    results: Dict[Tuple[int, int], TrialResult] = {}
    rows: List[dict] = []
    runner = _Runner(cfg.jobs)
    try:
        for p in points:
            log.info("study %s point %d/%d (%s, k=%d, %s=%g)", cfg.study, p.index + 1, len(points), p.algorithm, p.k, p.param or "-", p.value)
            for t, res in enumerate(_point_results(cfg, p, trials, runner)):
                results[(p.index, t)] = res
                rows.append(_row(cfg, p, t, res))
    finally:
        runner.close()

    agg = aggregate_rows(cfg, points, rows)
    result = StudyResult(cfg, points, rows, agg, results)
    result.summary = {
        "study": cfg.study,
        "config": cfg.to_dict(),
        "provenance": provenance(),
        "seeding": {
            "row_seed": "base_seed + point * trial_stride + trial",
            "trial_stride": TRIAL_STRIDE,
            "instance_seed": "SeedSequence([base_seed, k, placement, trial]) spawned into field, channel, noise",
        },
        "trials_per_point": trials,
        "num_points": len(points),
        "num_rows": len(rows),
        "points": agg,
    }
    if write:
        paths = {
            "trials": out_dir / "trials.csv",
            "aggregate": out_dir / "aggregate.csv",
            "summary": out_dir / "summary.json",
        }
        _write_csv(paths["trials"], TRIAL_COLUMNS, rows)
        _write_csv(paths["aggregate"], AGGREGATE_COLUMNS, agg)
        if _keep_trace(cfg):
            paths["rounds"] = out_dir / "rounds.csv"
            paths["traces"] = out_dir / "traces.jsonl"
            _write_csv(paths["rounds"], ROUND_COLUMNS, round_rows(cfg, results))
            lines = []
            for (pt, tr), res in sorted(results.items()):
                for rec in res.trace:
                    lines.append(json.dumps({"point": pt, "trial": tr, **rec}))
            _write_text(paths["traces"], "".join(s + "\n" for s in lines))
        result.summary["files"] = {k: v.name for k, v in paths.items()}
        _write_text(paths["summary"], json.dumps(result.summary, indent=2, default=_json_default) + "\n")
        result.paths = paths
    return result


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
