"""Trial-level metrics, the one-shot random baseline and the sensors-needed search."""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from ..adaptive import ChasingConfig, run_adaptive, solve_plan
from ..channel import ChannelMatrix, build_channel, expected_channel, propagate
from ..errors import ConfigError, DimensionError, MaxRoundsExceeded
from ..field import GridField, generate_field
from ..sensing import NoiseSpec, SamplePlan, take_samples
from ..solver import SolverConfig
from .config import ExperimentConfig

# rows of one sweep point take seeds base + point * TRIAL_STRIDE + trial
TRIAL_STRIDE = 100_000


def sad(s_hat, s) -> float:
    """Sum of absolute differences between an estimate and the truth."""
    a = np.asarray(s_hat, dtype=float)
    b = np.asarray(s, dtype=float)
    if a.shape != b.shape:
        raise DimensionError(f"shapes differ: {a.shape} vs {b.shape}")
    return float(np.abs(a - b).sum())


@dataclass(frozen=True, eq=False)
class TrialResult:
    """Outcome of one trial; ``s_hat`` and ``s_true`` are kept so SAD can be audited."""

    sad: float
    m_used: int
    rounds: int
    converged: bool
    wall_ms: float
    s_hat: Optional[np.ndarray] = None
    s_true: Optional[np.ndarray] = None
    trace: Tuple[dict, ...] = ()

    def __post_init__(self):
        if not self.sad >= 0 or not self.wall_ms >= 0:
            raise ValueError("sad and wall_ms must be nonnegative")


@dataclass(frozen=True, eq=False)
class Instance:
    """One random problem: field, channel, noise and the matrix the solver sees."""

    field: GridField
    channel: ChannelMatrix
    recovery: Optional[ChannelMatrix]
    noise: Optional[NoiseSpec]


def trial_seed(base_seed: int, point: int, trial: int) -> int:
    """Injective for ``0 <= trial < TRIAL_STRIDE``."""
    if not 0 <= trial < TRIAL_STRIDE or point < 0:
        raise ConfigError(f"trial index must lie in [0, {TRIAL_STRIDE})")
    return int(base_seed) + point * TRIAL_STRIDE + trial


def instance_seeds(base_seed: int, k: int, placement: str, trial: int) -> Tuple[int, int, int]:
    """Field, channel and noise seeds shared by every method compared on a trial."""
    tag = 1 if placement == "clustered" else 0
    ss = np.random.SeedSequence([int(base_seed) & 0xFFFFFFFF, int(k), tag, int(trial)])
    return tuple(int(c.generate_state(1)[0]) for c in ss.spawn(3))


def draw_instance(
    cfg: ExperimentConfig,
    k: int,
    trial: int,
    placement: Optional[str] = None,
    snr_db: Optional[float] = None,
) -> Instance:
    placement = placement or cfg.placement
    f_seed, c_seed, n_seed = instance_seeds(cfg.base_seed, k, placement, trial)
    fp, cp = cfg.field, cfg.channel
    fld = generate_field(
        fp.side_len, fp.grid_size_m, k, fp.amp_range, fp.mode(placement), fp.num_sensors, f_seed
    )
    ch = build_channel(fld, cp.beta, cp.sigma0, cp.d_min_m, c_seed)
    recovery = expected_channel(fld, cp.beta, cp.sigma0, cp.d_min_m) if cp.expected_gain_recovery else None
    noise = None if snr_db is None else NoiseSpec(snr_db, n_seed)
    return Instance(fld, ch, recovery, noise)


def baseline_oneshot(
    field: GridField,
    channel: ChannelMatrix,
    noise: Optional[NoiseSpec],
    M: int,
    solver_cfg: Optional[SolverConfig] = None,
    rng_seed: int = 0,
    recovery_channel: Optional[ChannelMatrix] = None,
) -> TrialResult:
    """Task ``M`` uniformly random sensors at once and solve a single time.

    The sensors are a prefix of one seeded permutation of the sensor set,
    so for a fixed seed a larger ``M`` only adds rows.
    """
    if not 1 <= M <= field.num_sensors:
        raise ConfigError(f"M={M} outside [1, {field.num_sensors}]")
    solver_cfg = solver_cfg or SolverConfig()
    t0 = time.perf_counter()
    order = np.random.default_rng(rng_seed).permutation(field.sensor_locations)
    x = propagate(channel, field.signal)
    plan = take_samples(SamplePlan(), order[:M], x, noise, sensors=field.sensor_locations)
    rec = solve_plan(plan, recovery_channel or channel, solver_cfg)
    return TrialResult(
        sad=sad(rec.s_hat, field.signal),
        m_used=plan.m,
        rounds=1,
        converged=rec.converged,
        wall_ms=(time.perf_counter() - t0) * 1e3,
        s_hat=rec.s_hat,
        s_true=field.signal,
    )


def adaptive_trial(
    inst: Instance,
    solver_cfg: SolverConfig,
    chasing_cfg: ChasingConfig,
    rng_seed: int,
    keep_trace: bool = False,
) -> TrialResult:
    """Run IC or CC to termination; a run that hits ``max_rounds`` reports unconverged."""
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MaxRoundsExceeded)
        rec, state, trace = run_adaptive(
            inst.field,
            inst.channel,
            inst.noise,
            solver_cfg,
            chasing_cfg,
            rng_seed,
            recovery_channel=inst.recovery,
        )
    return TrialResult(
        sad=sad(rec.s_hat, inst.field.signal),
        m_used=state.plan.m,
        rounds=state.round,
        converged=state.converged,
        wall_ms=(time.perf_counter() - t0) * 1e3,
        s_hat=rec.s_hat,
        s_true=inst.field.signal,
        trace=tuple(trace) if keep_trace else (),
    )


def m_needed(result: TrialResult, num_sensors: int, tol: float) -> int:
    """Sensors an adaptive trial needed: ``m_used`` on success, the whole set on failure."""
    return result.m_used if result.sad <= tol else num_sensors


Evaluator = Callable[[int], List[TrialResult]]


def baseline_search(evaluate: Evaluator, lo: int, hi: int, tol: float) -> Tuple[int, Dict[int, List[TrialResult]]]:
    """Smallest ``M`` in ``[lo, hi]`` whose median SAD over trials is at most ``tol``.

    ``evaluate(M)`` returns one result per trial. The median is assumed
    nonincreasing in ``M``; when even ``hi`` misses ``tol``, ``hi`` is returned.
    """
    lo = max(1, min(lo, hi))
    cache: Dict[int, List[TrialResult]] = {}

    def ok(M: int) -> bool:
        if M not in cache:
            cache[M] = evaluate(M)
        return float(np.median([r.sad for r in cache[M]])) <= tol

    if not ok(hi):
        return hi, cache
    while lo < hi:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid + 1
    ok(lo)
    return lo, cache


def min_sensors_for_accuracy(
    method: str,
    cfg: ExperimentConfig,
    k: int,
    trials: Optional[int] = None,
    placement: Optional[str] = None,
    accuracy_sad_tol: Optional[float] = None,
) -> int:
    """Median sensors ``method`` needs for SAD within tolerance on seeded instances.

    Adaptive methods count failed trials at the full sensor set; the
    baseline reports the binary-searched smallest ``M`` in ``[2k, |L|]``.
    """
    tol = cfg.accuracy_sad_tol if accuracy_sad_tol is None else accuracy_sad_tol
    if not tol > 0:
        raise ConfigError("accuracy_sad_tol must be positive")
    trials = cfg.trials_per_point if trials is None else trials
    insts = [draw_instance(cfg, k, t, placement) for t in range(trials)]
    num_sensors = cfg.field.num_sensors
    if method == "baseline":
        def evaluate(M):
            return [
                baseline_oneshot(i.field, i.channel, i.noise, M, cfg.solver, trial_seed(cfg.base_seed, 0, t), i.recovery)
                for t, i in enumerate(insts)
            ]

        best, _ = baseline_search(evaluate, 2 * k, num_sensors, tol)
        return best
    if method not in ("ic", "cc"):
        raise ConfigError(f"unknown method {method!r}")
    chasing = replace(cfg.chasing, algorithm=method)
    needs = [
        m_needed(adaptive_trial(i, cfg.solver, chasing, trial_seed(cfg.base_seed, 0, t)), num_sensors, tol)
        for t, i in enumerate(insts)
    ]
    # an even trial count can give a half-integer median; round it up
    return int(np.ceil(np.median(needs)))

