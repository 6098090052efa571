"""Adaptive chasing: choose each round's sensors from the previous estimate.

A run starts from ``m0_factor * k`` random sensors. Every later round trims
the last estimate, tasks sensors near its support (one per support grid for
Individual Chasing, a density-scaled count per cluster for Centroid
Chasing), re-solves on all samples gathered so far and compares the new
trimmed estimate with the old one. The first time the two agree a batch of
random unused sensors is added; the next agreement ends the run.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field as dc_field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .channel import ChannelMatrix, propagate
from .errors import ConfigError, DimensionError, EmptySupportError, MaxRoundsExceeded
from .field import GridField
from .sensing import NoiseSpec, SamplePlan, effective_sensing_matrix, take_samples
from .solver import Reconstruction, SolverConfig, l1_reconstruct

INDIVIDUAL = "ic"
CENTROID = "cc"


@dataclass(frozen=True)
class ChasingConfig:
    """Knobs of the adaptive loop.

    ``exploration_count=None`` means ``max(1, ceil(k / 4))``.
    ``exploration_cycles`` is how many agreements trigger exploration before
    one is accepted as final. ``max_sensors`` caps the total budget.
    """

    alpha_pct: float = 1.0
    delta_pct: float = 5.0
    m0_factor: float = 2.0
    exploration_count: Optional[int] = None
    exploration_cycles: int = 1
    max_rounds: int = 50
    algorithm: str = INDIVIDUAL
    max_sensors: Optional[int] = None
    cluster_restarts: int = 10
    cluster_penalty: float = 1.0

    def __post_init__(self):
        if not 0 < self.alpha_pct < 100:
            raise ConfigError("alpha_pct must be in (0, 100)")
        if not 0 < self.delta_pct < 100:
            raise ConfigError("delta_pct must be in (0, 100)")
        if not self.m0_factor > 0:
            raise ConfigError("m0_factor must be positive")
        if self.algorithm not in (INDIVIDUAL, CENTROID):
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.max_rounds < 1 or self.exploration_cycles < 0:
            raise ConfigError("max_rounds must be >= 1 and exploration_cycles >= 0")
        if self.exploration_count is not None and self.exploration_count < 1:
            raise ConfigError("exploration_count must be positive")

    def explore_count(self, k: int) -> int:
        if self.exploration_count is not None:
            return self.exploration_count
        return max(1, math.ceil(k / 4))


@dataclass(frozen=True, eq=False)
class AdaptiveState:
    """Snapshot after a round.

    ``s_trim`` is the trimmed estimate whose nonzeros form ``support``;
    ``s_hat`` is the raw solver output it came from.
    """

    round: int
    plan: SamplePlan
    s_hat: Optional[np.ndarray] = None
    s_trim: Optional[np.ndarray] = None
    support: Tuple[int, ...] = ()
    reconstruction: Optional[Reconstruction] = None
    history: Tuple[dict, ...] = ()
    satisfied: int = 0
    converged: bool = False
    stop_reason: str = ""


@dataclass(frozen=True)
class Cluster:
    members: Tuple[int, ...]
    centroid: Tuple[float, float]
    rows: Tuple[int, int]
    cols: Tuple[int, int]

    @property
    def region_size(self) -> int:
        return (self.rows[1] - self.rows[0] + 1) * (self.cols[1] - self.cols[0] + 1)

    @property
    def density(self) -> float:
        return len(self.members) / self.region_size


# -- estimate post-processing -------------------------------------------------


def trim(s_hat, alpha_pct: float) -> np.ndarray:
    """Zero negatives, then positives below ``alpha_pct`` percent of the largest."""
    s = np.maximum(np.asarray(s_hat, dtype=float), 0.0)
    top = s.max() if s.size else 0.0
    if top > 0:
        s[s < alpha_pct / 100.0 * top] = 0.0
    return s


def check_termination(s_curr, s_prev, delta_pct: float) -> bool:
    """Same nonzero positions and every value within ``delta_pct`` % of the old one."""
    a = np.asarray(s_curr, dtype=float)
    b = np.asarray(s_prev, dtype=float)
    if a.shape != b.shape:
        raise DimensionError(f"shapes differ: {a.shape} vs {b.shape}")
    sup = np.flatnonzero(a)
    if not np.array_equal(sup, np.flatnonzero(b)):
        return False
    return bool(np.all(np.abs(a[sup] - b[sup]) <= delta_pct / 100.0 * np.abs(b[sup])))


# -- sensor geometry ----------------------------------------------------------


def nearest_sensors(point, field: GridField, count: int = 1) -> np.ndarray:
    """The ``count`` sensor grids closest to ``point`` (meters), ties by lower index."""
    sensors = field.sensor_locations
    if count <= 0 or len(sensors) == 0:
        return np.empty(0, dtype=np.int64)
    d = np.linalg.norm(field.centers(sensors) - np.asarray(point, dtype=float), axis=1)
    order = np.lexsort((sensors, d))
    return sensors[order[:count]]


def nearest_sensor(grid: int, field: GridField) -> int:
    return int(nearest_sensors(field.centers([grid])[0], field, 1)[0])


# -- clustering ---------------------------------------------------------------


def initial_cluster_count(support_size: int) -> float:
    """Empirical starting number of clusters, sqrt(|T| / 2)."""
    return math.sqrt(support_size / 2)


def cluster_count_window(support_size: int) -> range:
    hi = min(support_size, math.ceil(2 * initial_cluster_count(support_size)))
    return range(1, max(hi, 1) + 1)


def _lloyd(pts, c, rng, max_iter=100):
    n = len(pts)
    centers = pts[rng.choice(n, size=c, replace=False)]
    labels = np.full(n, -1)
    for _ in range(max_iter):
        d2 = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
        new = np.argmin(d2, axis=1)
        for t in range(c):
            if not np.any(new == t):
                # reseed an empty cluster at the worst-served point of a cluster
                # that can spare one
                sizes = np.bincount(new, minlength=c)
                cost = np.where(sizes[new] > 1, d2[np.arange(n), new], -1.0)
                new[int(np.argmax(cost))] = t
        if np.array_equal(new, labels):
            break
        labels = new
        centers = np.stack([pts[labels == t].mean(axis=0) for t in range(c)])
    inertia = float(((pts - centers[labels]) ** 2).sum())
    return labels, centers, inertia


def kmeans(pts, c, rng, restarts=10):
    """Best-of-``restarts`` Lloyd clustering by within-cluster squared error."""
    best = None
    for _ in range(restarts):
        res = _lloyd(pts, c, rng)
        if best is None or res[2] < best[2]:
            best = res
    return best[0], best[1]


def clustering_score(pts, labels, centers, grid_size_m, penalty=1.0) -> float:
    """Mean point-to-centroid distance plus ``penalty`` grid edges per cluster."""
    spread = np.linalg.norm(pts - centers[labels], axis=1).mean()
    return float(spread + penalty * len(centers) * grid_size_m)


def cluster_support(
    support: Sequence[int],
    field: GridField,
    rng_seed=0,
    restarts: int = 10,
    penalty: float = 1.0,
) -> List[Cluster]:
    """Group support grids by k-means on grid centers, choosing the count by score.

    Candidate counts run from 1 to ``ceil(2 sqrt(|T|/2))`` (capped at
    ``|T|``); the count minimizing :func:`clustering_score` wins, the
    smaller count on ties.
    """
    sup = np.array(sorted(int(g) for g in support), dtype=np.int64)
    if len(sup) == 0:
        raise EmptySupportError("cannot cluster an empty support")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    pts = field.centers(sup)
    best = None
    for c in cluster_count_window(len(sup)):
        labels, centers = kmeans(pts, c, rng, restarts)
        score = clustering_score(pts, labels, centers, field.grid_size_m, penalty)
        if best is None or score < best[0] - 1e-9:
            best = (score, labels, centers)
    _, labels, centers = best
    out = []
    for t in range(len(centers)):
        members = sup[labels == t]
        rows, cols = np.divmod(members, field.side_len)
        out.append(
            Cluster(
                tuple(int(m) for m in members),
                (float(centers[t][0]), float(centers[t][1])),
                (int(rows.min()), int(rows.max())),
                (int(cols.min()), int(cols.max())),
            )
        )
    out.sort(key=lambda cl: cl.members[0])
    return out


def cc_raw_count(members: int, region_size: int) -> float:
    """Density-scaled sensor count ``|T| (1 - |T| / R)`` before rounding."""
    return members * (1.0 - members / region_size)


def cc_sensor_count(members: int, region_size: int) -> int:
    """Rounded (half up) raw count, at least one sensor per cluster."""
    return max(1, int(math.floor(cc_raw_count(members, region_size) + 0.5)))


# -- rounds -------------------------------------------------------------------


def solve_plan(plan: SamplePlan, channel: ChannelMatrix, solver_cfg: SolverConfig) -> Reconstruction:
    """Solve on every sample in ``plan``; the residual bound covers the recorded noise."""
    eps = max(solver_cfg.epsilon, math.sqrt(sum(plan.noise_var)))
    cfg = solver_cfg if eps == solver_cfg.epsilon else solver_cfg.replace(epsilon=eps)
    return l1_reconstruct(effective_sensing_matrix(plan, channel), plan.y(), cfg)


def _budget_left(plan: SamplePlan, cfg: ChasingConfig) -> Optional[int]:
    if cfg.max_sensors is None:
        return None
    return max(cfg.max_sensors - plan.m, 0)


def _clip_to_budget(picks, plan, cfg):
    """Dedup ``picks`` against the plan, keeping order, and cut at the budget."""
    seen = set(plan.tasked)
    fresh = []
    for g in picks:
        g = int(g)
        if g not in seen:
            seen.add(g)
            fresh.append(g)
    left = _budget_left(plan, cfg)
    return fresh if left is None else fresh[:left]


def _record(state: AdaptiveState, field: GridField, kind: str, added: int) -> dict:
    s = state.s_hat
    nz = np.flatnonzero(s)
    return {
        "round": state.round,
        "kind": kind,
        "M": state.plan.m,
        "added": added,
        "support": [int(i) for i in state.support],
        "support_size": len(state.support),
        "sad": float(np.abs(s - field.signal).sum()),
        "s_hat": [[int(i), float(s[i])] for i in nz],
    }


def _advance(
    state, field, channel, noise, solver_cfg, cfg, picks, kind, recovery=None
) -> AdaptiveState:
    x = propagate(channel, field.signal)
    fresh = _clip_to_budget(picks, state.plan, cfg)
    plan = take_samples(
        state.plan, fresh, x, noise, sensors=field.sensor_locations, round_number=state.round + 1
    )
    rec = solve_plan(plan, channel if recovery is None else recovery, solver_cfg)
    s_trim = trim(rec.s_hat, cfg.alpha_pct)
    new = replace(
        state,
        round=state.round + 1,
        plan=plan,
        s_hat=rec.s_hat,
        s_trim=s_trim,
        support=tuple(int(i) for i in np.flatnonzero(s_trim)),
        reconstruction=rec,
    )
    # measured against the last record so exploration samples are counted
    prev_m = state.history[-1]["M"] if state.history else state.plan.m
    return replace(new, history=state.history + (_record(new, field, kind, plan.m - prev_m),))


def individual_picks(support: Sequence[int], field: GridField) -> List[int]:
    """Nearest sensor for every support grid, in ascending grid order."""
    return [nearest_sensor(int(g), field) for g in sorted(support)]


def centroid_picks(
    support: Sequence[int], field: GridField, rng_seed=0, restarts=10, penalty=1.0
) -> List[int]:
    """For every cluster, the ``cc_sensor_count`` sensors nearest its centroid."""
    picks: List[int] = []
    for cl in cluster_support(support, field, rng_seed, restarts, penalty):
        m_t = cc_sensor_count(len(cl.members), cl.region_size)
        picks.extend(int(g) for g in nearest_sensors(cl.centroid, field, m_t))
    return picks


def individual_chasing_round(
    state: AdaptiveState,
    field: GridField,
    channel: ChannelMatrix,
    noise: Optional[NoiseSpec],
    solver_cfg: SolverConfig,
    cfg: ChasingConfig,
    recovery_channel: Optional[ChannelMatrix] = None,
) -> AdaptiveState:
    picks = individual_picks(state.support, field)
    return _advance(
        state, field, channel, noise, solver_cfg, cfg, picks, "chase", recovery_channel
    )


def centroid_chasing_round(
    state: AdaptiveState,
    field: GridField,
    channel: ChannelMatrix,
    noise: Optional[NoiseSpec],
    solver_cfg: SolverConfig,
    cfg: ChasingConfig,
    rng_seed=0,
    recovery_channel: Optional[ChannelMatrix] = None,
) -> AdaptiveState:
    picks = centroid_picks(
        state.support, field, rng_seed, cfg.cluster_restarts, cfg.cluster_penalty
    )
    return _advance(
        state, field, channel, noise, solver_cfg, cfg, picks, "chase", recovery_channel
    )


def exploration_picks(plan: SamplePlan, field: GridField, count: int, rng) -> List[int]:
    used = set(plan.tasked)
    pool = np.array([g for g in field.sensor_locations if int(g) not in used], dtype=np.int64)
    if len(pool) == 0 or count <= 0:
        return []
    return [int(g) for g in rng.choice(pool, size=min(count, len(pool)), replace=False)]


def random_exploration(
    state: AdaptiveState,
    field: GridField,
    channel: ChannelMatrix,
    noise: Optional[NoiseSpec],
    count: int,
    rng_seed=0,
) -> AdaptiveState:
    """Task up to ``count`` unused sensors at random; no solve is run.

    The returned plan carries the new samples into the next round's solve.
    """
    rng = np.random.default_rng([int(rng_seed), state.round, state.plan.m])
    picks = exploration_picks(state.plan, field, count, rng)
    if not picks:
        return state
    x = propagate(channel, field.signal)
    plan = take_samples(
        state.plan, picks, x, noise, sensors=field.sensor_locations, round_number=state.round
    )
    return replace(state, plan=plan)


# -- driver -------------------------------------------------------------------


def run_adaptive(
    field: GridField,
    channel: ChannelMatrix,
    noise: Optional[NoiseSpec] = None,
    solver_cfg: Optional[SolverConfig] = None,
    cfg: Optional[ChasingConfig] = None,
    rng_seed: int = 0,
    k_hint: Optional[int] = None,
    recovery_channel: Optional[ChannelMatrix] = None,
) -> Tuple[Reconstruction, AdaptiveState, List[dict]]:
    """Run chasing rounds until the termination check holds after exploration.

    Parameters
    ----------
    field, channel : GridField, ChannelMatrix
        Ground truth; samples are drawn from ``propagate(channel, field.signal)``.
    noise : NoiseSpec, optional
        Sample noise. With noise, the solver's residual bound becomes the
        root of the summed per-sample noise variances.
    solver_cfg, cfg : SolverConfig, ChasingConfig
    rng_seed : int
        Drives the initial draw, exploration and clustering restarts.
    k_hint : int, optional
        Sparsity used to size the first round and explorations; defaults to
        the true k of ``field``.
    recovery_channel : ChannelMatrix, optional
        Matrix the solver inverts, when it differs from the one that
        generated the samples (model-mismatch runs).

    Returns
    -------
    (Reconstruction, AdaptiveState, list of dict)
        Final solve, final state and one trace record per round.
    """
    solver_cfg = solver_cfg or SolverConfig()
    cfg = cfg or ChasingConfig()
    k = field.k if k_hint is None else k_hint
    rng = np.random.default_rng(rng_seed)
    if field.num_sensors == 0:
        raise ConfigError("field has no sensors")

    m0 = max(1, int(round(cfg.m0_factor * k)))
    if cfg.max_sensors is not None:
        m0 = min(m0, cfg.max_sensors)
    m0 = min(m0, field.num_sensors)
    start = [int(g) for g in rng.choice(field.sensor_locations, size=m0, replace=False)]
    state = AdaptiveState(round=-1, plan=SamplePlan())
    rc = recovery_channel
    state = _advance(state, field, channel, noise, solver_cfg, cfg, start, "init", rc)

    explore_n = cfg.explore_count(k)
    explore_seed = int(rng.integers(2**63))
    stop = "max_rounds"
    converged = False
    for _ in range(cfg.max_rounds):
        left = _budget_left(state.plan, cfg)
        if left == 0:
            stop = "budget"
            break
        prev = state
        if not prev.support:
            pre = random_exploration(prev, field, channel, noise, explore_n, explore_seed)
            state = _advance(pre, field, channel, noise, solver_cfg, cfg, [], "explore", rc)
            was_exploration = True
        elif cfg.algorithm == CENTROID:
            state = centroid_chasing_round(
                prev, field, channel, noise, solver_cfg, cfg, rng, rc
            )
            was_exploration = False
        else:
            state = individual_chasing_round(prev, field, channel, noise, solver_cfg, cfg, rc)
            was_exploration = False

        if check_termination(state.s_trim, prev.s_trim, cfg.delta_pct):
            satisfied = prev.satisfied + 1
            state = replace(state, satisfied=satisfied)
            done = satisfied > cfg.exploration_cycles or (
                was_exploration and satisfied >= cfg.exploration_cycles
            )
            if done:
                converged, stop = True, "converged"
                break
            explored = random_exploration(state, field, channel, noise, explore_n, explore_seed)
            if explored.plan.m == state.plan.m and _budget_left(state.plan, cfg) != 0:
                # nothing left to explore: the estimate cannot change any more
                converged, stop = True, "exhausted"
                break
            state = explored
        else:
            state = replace(state, satisfied=prev.satisfied)
    if stop == "max_rounds":
        warnings.warn(f"no termination within {cfg.max_rounds} rounds", MaxRoundsExceeded)
    state = replace(state, converged=converged, stop_reason=stop)
    rec = state.reconstruction
    if not converged:
        rec = replace(rec, converged=False)
    return rec, state, list(state.history)


def trace_to_jsonl(trace: Sequence[dict]) -> str:
    return "".join(json.dumps(rec) + "\n" for rec in trace)
