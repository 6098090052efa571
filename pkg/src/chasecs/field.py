"""Grid sensing domain: geometry, sparse source vectors and sensor deployments.

Grids are indexed row-major from the top-left corner, so grid ``g`` sits at
row ``g // side_len`` and column ``g % side_len``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class Uniform:
    """Sources on distinct grids drawn uniformly at random."""


@dataclass(frozen=True)
class Clustered:
    """Sources packed around random cluster centers.

    Each source is assigned to a random center and placed within
    ``cluster_radius_grids`` Chebyshev distance of it.
    """

    num_clusters: int
    cluster_radius_grids: float = 2.0

    def __post_init__(self):
        if self.num_clusters < 1:
            raise ConfigError("num_clusters must be positive")
        if self.cluster_radius_grids < 1:
            raise ConfigError("cluster_radius_grids must be >= 1")


PlacementMode = Union[Uniform, Clustered]


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GridField:
    """The N-grid sensing domain with its true signal and sensor set.

    Attributes
    ----------
    side_len : int
        Grids per side; ``n = side_len ** 2``.
    grid_size_m : float
        Edge length of one square grid in meters.
    signal : ndarray (n,)
        Aggregate source power per grid (zero where no source).
    sensor_locations : ndarray of int
        Sorted grid indices that host a sensor.
    cluster_centers : tuple of int
        Centers used by clustered placement; empty otherwise. Not serialized.
    """

    side_len: int
    grid_size_m: float
    signal: np.ndarray
    sensor_locations: np.ndarray
    cluster_centers: Tuple[int, ...] = dc_field(default=())

    def __post_init__(self):
        if self.side_len < 1:
            raise ConfigError("side_len must be positive")
        if not self.grid_size_m > 0:
            raise ConfigError("grid_size_m must be positive")
        sig = _frozen(self.signal, float)
        if sig.shape != (self.n,):
            raise ConfigError(f"signal must have length {self.n}, got {sig.shape}")
        if np.any(sig < 0) or not np.all(np.isfinite(sig)):
            raise ConfigError("signal entries must be finite and nonnegative")
        sensors = np.unique(np.asarray(self.sensor_locations, dtype=np.int64))
        if len(sensors) != len(self.sensor_locations):
            raise ConfigError("sensor_locations contains duplicates")
        if len(sensors) and (sensors[0] < 0 or sensors[-1] >= self.n):
            raise ConfigError("sensor location out of range")
        object.__setattr__(self, "signal", sig)
        object.__setattr__(self, "sensor_locations", _frozen(sensors, np.int64))
        object.__setattr__(self, "cluster_centers", tuple(int(c) for c in self.cluster_centers))

    @property
    def n(self) -> int:
        return self.side_len * self.side_len

    @property
    def k(self) -> int:
        return int(np.count_nonzero(self.signal))

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.signal)

    @property
    def num_sensors(self) -> int:
        return len(self.sensor_locations)

    def centers(self, indices=None) -> np.ndarray:
        """Grid-center coordinates in meters, shape ``(len(indices), 2)``."""
        if indices is None:
            indices = np.arange(self.n)
        idx = np.asarray(indices, dtype=np.int64)
        rows, cols = np.divmod(idx, self.side_len)
        return np.stack([(cols + 0.5) * self.grid_size_m, (rows + 0.5) * self.grid_size_m], axis=-1)

    def __eq__(self, other):
        if not isinstance(other, GridField):
            return NotImplemented
        return (
            self.side_len == other.side_len
            and self.grid_size_m == other.grid_size_m
            and np.array_equal(self.signal, other.signal)
            and np.array_equal(self.sensor_locations, other.sensor_locations)
        )

    def to_dict(self) -> dict:
        nz = self.support
        return {
            "side_len": self.side_len,
            "grid_size_m": self.grid_size_m,
            "signal": [[int(i), float(self.signal[i])] for i in nz],
            "sensors": [int(i) for i in self.sensor_locations],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GridField":
        side = int(doc["side_len"])
        signal = np.zeros(side * side)
        for idx, val in doc["signal"]:
            signal[int(idx)] = float(val)
        return cls(side, float(doc["grid_size_m"]), signal, list(doc["sensors"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "GridField":
        return cls.from_dict(json.loads(text))


def grid_center(grid_index: int, field: GridField) -> Tuple[float, float]:
    """Physical ``(x, y)`` of a grid center in meters."""
    if not 0 <= grid_index < field.n:
        raise IndexError(f"grid index {grid_index} outside [0, {field.n})")
    row, col = divmod(int(grid_index), field.side_len)
    return ((col + 0.5) * field.grid_size_m, (row + 0.5) * field.grid_size_m)


def _clustered_support(rng, side_len, k, mode: Clustered):
    n = side_len * side_len
    centers = rng.choice(n, size=mode.num_clusters, replace=False)
    r = int(np.floor(mode.cluster_radius_grids))
    occupied = np.zeros(n, dtype=bool)
    full = np.zeros(mode.num_clusters, dtype=bool)
    chosen = []
    while len(chosen) < k:
        if full.all():
            raise ConfigError("cluster regions too small to hold k sources")
        t = rng.integers(mode.num_clusters)
        if full[t]:
            continue
        crow, ccol = divmod(int(centers[t]), side_len)
        rows = np.arange(max(0, crow - r), min(side_len, crow + r + 1))
        cols = np.arange(max(0, ccol - r), min(side_len, ccol + r + 1))
        cells = (rows[:, None] * side_len + cols[None, :]).ravel()
        free = cells[~occupied[cells]]
        if len(free) == 0:
            full[t] = True
            continue
        g = int(free[rng.integers(len(free))])
        occupied[g] = True
        chosen.append(g)
    return np.array(chosen, dtype=np.int64), tuple(int(c) for c in centers)


def generate_field(
    side_len: int,
    grid_size_m: float,
    k: int,
    amp_range: Sequence[float],
    mode: Optional[PlacementMode] = None,
    num_sensors: int = 0,
    rng_seed: int = 0,
) -> GridField:
    """Draw a random k-sparse field and a random sensor deployment.

    Parameters
    ----------
    side_len, grid_size_m : int, float
        Grid geometry.
    k : int
        Number of grids hosting a source; at most ``side_len**2 / 4``.
    amp_range : (float, float)
        Source powers are uniform on ``[amp_range[0], amp_range[1]]``.
    mode : Uniform or Clustered
        Source placement, ``Uniform()`` by default.
    num_sensors : int
        Distinct sensor grids drawn uniformly.
    rng_seed : int
        Seed; the output is a pure function of all arguments.
    """
    mode = Uniform() if mode is None else mode
    if side_len < 1 or not grid_size_m > 0:
        raise ConfigError("side_len and grid_size_m must be positive")
    n = side_len * side_len
    if k < 0 or 4 * k > n:
        raise ConfigError(f"k={k} violates k <= n/4 with n={n}")
    if not 0 <= num_sensors <= n:
        raise ConfigError(f"num_sensors={num_sensors} outside [0, {n}]")
    a_min, a_max = float(amp_range[0]), float(amp_range[1])
    if not (a_min > 0 and a_min <= a_max):
        raise ConfigError(f"bad amplitude range {amp_range}")
    if isinstance(mode, Clustered) and mode.num_clusters > max(k, 1):
        raise ConfigError("Clustered placement requires num_clusters <= k")

    rng = np.random.default_rng(rng_seed)
    centers: Tuple[int, ...] = ()
    if isinstance(mode, Clustered) and k > 0:
        support, centers = _clustered_support(rng, side_len, k, mode)
    else:
        support = rng.choice(n, size=k, replace=False)
    signal = np.zeros(n)
    signal[support] = rng.uniform(a_min, a_max, size=k)
    sensors = rng.choice(n, size=num_sensors, replace=False)
    return GridField(side_len, grid_size_m, signal, sensors, centers)
