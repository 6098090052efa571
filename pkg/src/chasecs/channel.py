"""Rayleigh-fading path-loss channel and the source-to-receiver transform.

``psi[j, i]`` is the gain from a source in grid ``i`` to a receiver in grid
``j``, so ``x = psi @ s`` is the received strength at every grid.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, DimensionError
from .field import GridField

log = logging.getLogger(__name__)

PSI_MAGIC = b"PSIM"
_HEADER = struct.Struct("<4sId")


@dataclass(frozen=True, eq=False)
class ChannelMatrix:
    psi: np.ndarray
    beta: float
    sigma0: Optional[float] = None
    d_min_m: Optional[float] = None

    def __post_init__(self):
        psi = np.array(self.psi, dtype=float)
        if psi.ndim != 2 or psi.shape[0] != psi.shape[1]:
            raise DimensionError(f"psi must be square, got {psi.shape}")
        psi.setflags(write=False)
        object.__setattr__(self, "psi", psi)

    @property
    def n(self) -> int:
        return self.psi.shape[0]


def pairwise_distances(field: GridField, d_min_m: float) -> np.ndarray:
    """Center-to-center distances floored at ``d_min_m``; ``d[i, j]`` for source i, receiver j."""
    c = field.centers()
    d = np.sqrt(((c[:, None, :] - c[None, :, :]) ** 2).sum(-1))
    return np.maximum(d, d_min_m)


def _check_params(beta, sigma0, d_min_m):
    if sigma0 is not None and not sigma0 > 0:
        raise ConfigError("sigma0 must be positive")
    if not d_min_m > 0:
        raise ConfigError("d_min_m must be positive")
    if not 2.0 <= beta <= 5.0:
        log.warning("beta=%g outside the usual [2, 5] decay range", beta)


def rayleigh_gains(shape, sigma0: float, rng) -> np.ndarray:
    """Moduli of complex gains whose real and imaginary parts are N(0, sigma0**2)."""
    xy = rng.normal(0.0, sigma0, size=tuple(shape) + (2,))
    return np.hypot(xy[..., 0], xy[..., 1])


def build_channel(
    field: GridField,
    beta: float = 3.0,
    sigma0: float = 0.5,
    d_min_m: Optional[float] = None,
    rng_seed: int = 0,
) -> ChannelMatrix:
    """Draw one quasi-static fading realization for every ordered grid pair.

    ``d_min_m`` defaults to half a grid edge; it keeps the self-distance finite.
    """
    d_min_m = field.grid_size_m / 2 if d_min_m is None else d_min_m
    _check_params(beta, sigma0, d_min_m)
    rng = np.random.default_rng(rng_seed)
    # g[i, j]: source i -> receiver j; independent of g[j, i]
    g = rayleigh_gains((field.n, field.n), sigma0, rng)
    c = g / pairwise_distances(field, d_min_m) ** beta
    return ChannelMatrix(c.T, beta, sigma0, d_min_m)


def expected_channel(
    field: GridField, beta: float = 3.0, sigma0: float = 0.5, d_min_m: Optional[float] = None
) -> ChannelMatrix:
    """Fading-averaged channel ``E[g] / d**beta`` for model-mismatch recovery."""
    d_min_m = field.grid_size_m / 2 if d_min_m is None else d_min_m
    _check_params(beta, sigma0, d_min_m)
    mean_gain = sigma0 * np.sqrt(np.pi / 2)
    c = mean_gain / pairwise_distances(field, d_min_m) ** beta
    return ChannelMatrix(c.T, beta, sigma0, d_min_m)


def propagate(channel: ChannelMatrix, s) -> np.ndarray:
    """Received strength ``x = psi @ s``."""
    s = np.asarray(s, dtype=float)
    if s.shape != (channel.n,):
        raise DimensionError(f"source vector has shape {s.shape}, expected ({channel.n},)")
    return channel.psi @ s


def save_psi(channel: ChannelMatrix, path) -> None:
    """Write the 16-byte header then ``psi`` as little-endian row-major float64."""
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_HEADER.pack(PSI_MAGIC, channel.n, float(channel.beta)))
        fh.write(np.ascontiguousarray(channel.psi, dtype="<f8").tobytes())


def load_psi(path) -> ChannelMatrix:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, n, beta = _HEADER.unpack_from(data)
    if magic != PSI_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if body.size != n * n:
        raise ValueError(f"{path}: expected {n * n} values, found {body.size}")
    return ChannelMatrix(body.reshape(n, n).astype(float), beta)
