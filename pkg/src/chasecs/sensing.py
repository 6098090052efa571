"""Measurement bookkeeping: selector matrices, accumulated samples and noise."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Tuple

import numpy as np

from .channel import ChannelMatrix
from .errors import ConfigError, DimensionError, UnknownSensorError


@dataclass(frozen=True)
class NoiseSpec:
    """Additive white Gaussian noise at ``snr_db`` (None: noise-free)."""

    snr_db: Optional[float] = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.snr_db is not None and not np.isfinite(self.snr_db):
            raise ConfigError("snr_db must be finite")


@dataclass(frozen=True)
class SamplePlan:
    """Append-only record of tasked sensors and their readings.

    ``noise_var`` holds the variance of the noise drawn for each sample
    (zero when noise-free); it lets the solver size its residual bound.
    """

    tasked: Tuple[int, ...] = ()
    samples: Tuple[float, ...] = ()
    rounds: Tuple[Tuple[int, int], ...] = ()
    noise_var: Tuple[float, ...] = ()

    def __post_init__(self):
        if len(self.tasked) != len(self.samples):
            raise DimensionError("tasked and samples differ in length")
        if len(set(self.tasked)) != len(self.tasked):
            raise ConfigError("a sensor may be tasked only once")
        if not self.noise_var:
            object.__setattr__(self, "noise_var", (0.0,) * len(self.tasked))

    @property
    def m(self) -> int:
        return len(self.tasked)

    def y(self) -> np.ndarray:
        return np.array(self.samples, dtype=float)

    def to_dict(self) -> dict:
        return {
            "tasked": list(self.tasked),
            "samples": list(self.samples),
            "rounds": [list(r) for r in self.rounds],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SamplePlan":
        return cls(
            tuple(int(i) for i in doc["tasked"]),
            tuple(float(v) for v in doc["samples"]),
            tuple((int(r), int(c)) for r, c in doc.get("rounds", [])),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "SamplePlan":
        return cls.from_dict(json.loads(text))


def phi_matrix(plan: SamplePlan, n: int) -> np.ndarray:
    """Binary row selector with a single 1 per row at the tasked grid."""
    idx = np.asarray(plan.tasked, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"tasked grid outside [0, {n})")
    phi = np.zeros((len(idx), n))
    phi[np.arange(len(idx)), idx] = 1.0
    return phi


def noise_variance(clean: np.ndarray, snr_db: float) -> float:
    """Noise power ``mean(clean**2) * 10**(-snr_db/10)``."""
    return float(np.mean(np.square(clean)) * 10.0 ** (-snr_db / 10.0))


def take_samples(
    plan: SamplePlan,
    new_indices: Iterable[int],
    x: np.ndarray,
    noise: Optional[NoiseSpec] = None,
    sensors=None,
    round_number: Optional[int] = None,
) -> SamplePlan:
    """Return ``plan`` extended with readings at the not-yet-tasked grids.

    Parameters
    ----------
    plan : SamplePlan
        Existing samples; never modified.
    new_indices : iterable of int
        Requested grids. Already-tasked grids and repeats are skipped.
    x : ndarray (n,)
        Clean received strength at every grid.
    noise : NoiseSpec, optional
        Noise level. Its variance is set from the clean power of the whole
        accumulated plan; earlier readings keep their original noise.
    sensors : array-like of int, optional
        Legal sensor grids; an index outside it raises UnknownSensorError.
    round_number : int, optional
        Label for the round record, defaults to the number of prior rounds.
    """
    x = np.asarray(x, dtype=float)
    have = set(plan.tasked)
    fresh: List[int] = []
    legal = None if sensors is None else set(int(s) for s in np.asarray(sensors).ravel())
    for g in new_indices:
        g = int(g)
        if legal is not None and g not in legal:
            raise UnknownSensorError(f"grid {g} hosts no sensor")
        if g in have:
            continue
        have.add(g)
        fresh.append(g)
    rnd = len(plan.rounds) if round_number is None else round_number
    if not fresh:
        return SamplePlan(plan.tasked, plan.samples, plan.rounds + ((rnd, 0),), plan.noise_var)

    values = x[fresh]
    var = 0.0
    if noise is not None and noise.snr_db is not None:
        clean_all = x[list(plan.tasked) + fresh]
        var = noise_variance(clean_all, noise.snr_db)
        rng = np.random.default_rng([noise.rng_seed, plan.m])
        values = values + rng.normal(0.0, np.sqrt(var), size=len(fresh))
    return SamplePlan(
        plan.tasked + tuple(fresh),
        plan.samples + tuple(float(v) for v in values),
        plan.rounds + ((rnd, len(fresh)),),
        plan.noise_var + (var,) * len(fresh),
    )


def effective_sensing_matrix(plan: SamplePlan, channel: ChannelMatrix) -> np.ndarray:
    """``A = Phi @ Psi``: the channel rows of the tasked grids, in tasking order."""
    if plan.m == 0:
        raise DimensionError("plan has no samples")
    idx = np.asarray(plan.tasked, dtype=np.int64)
    if idx.min() < 0 or idx.max() >= channel.n:
        raise IndexError("tasked grid outside the channel")
    return channel.psi[idx]
