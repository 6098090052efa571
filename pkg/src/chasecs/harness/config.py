"""Experiment configuration, named presets and TOML/JSON loading."""

from __future__ import annotations

import json
import sys
from dataclasses import asdict, dataclass, field as dc_field, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from ..adaptive import ChasingConfig
from ..errors import ConfigError
from ..field import Clustered, PlacementMode, Uniform
from ..solver import SolverConfig

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

STUDIES = ("sensors_vs_k", "start_sweep", "alpha_sweep", "convergence", "noise", "single_run")
ALGORITHMS = ("ic", "cc", "baseline")
PLACEMENTS = ("uniform", "clustered")

# algorithms each study compares when the config does not name any
STUDY_ALGORITHMS = {
    "sensors_vs_k": ("ic", "cc", "baseline"),
    "start_sweep": ("ic",),
    "alpha_sweep": ("ic",),
    "convergence": ("ic",),
    "noise": ("ic", "baseline"),
    "single_run": ("ic",),
}


@dataclass(frozen=True)
class FieldParams:
    side_len: int = 15
    grid_size_m: float = 30.0
    amp_range: Tuple[float, float] = (30.0, 500.0)
    num_sensors: int = 100
    num_clusters: int = 3
    cluster_radius_grids: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "amp_range", tuple(float(a) for a in self.amp_range))
        if len(self.amp_range) != 2:
            raise ConfigError("amp_range needs two values")
        if self.side_len < 1 or not self.grid_size_m > 0:
            raise ConfigError("side_len and grid_size_m must be positive")
        if not 1 <= self.num_sensors <= self.side_len**2:
            raise ConfigError("num_sensors must lie in [1, side_len**2]")

    def mode(self, placement: str) -> PlacementMode:
        if placement == "uniform":
            return Uniform()
        if placement == "clustered":
            return Clustered(self.num_clusters, self.cluster_radius_grids)
        raise ConfigError(f"unknown placement {placement!r}")


@dataclass(frozen=True)
class ChannelParams:
    beta: float = 3.0
    sigma0: float = 0.5
    d_min_m: Optional[float] = None
    # recover with the fading-averaged matrix instead of the realized one
    expected_gain_recovery: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one study run needs; see :data:`PRESETS` for the defaults."""

    study: str = "single_run"
    field: FieldParams = dc_field(default_factory=FieldParams)
    channel: ChannelParams = dc_field(default_factory=ChannelParams)
    chasing: ChasingConfig = dc_field(default_factory=ChasingConfig)
    solver: SolverConfig = dc_field(
        default_factory=lambda: SolverConfig(nonneg=False, normalize_columns=True)
    )
    placement: str = "uniform"
    placements: Tuple[str, ...] = PLACEMENTS
    algorithms: Optional[Tuple[str, ...]] = None
    k: int = 10
    k_list: Tuple[int, ...] = (5, 10, 15, 20)
    snr_db: Optional[float] = None
    snr_list: Tuple[float, ...] = (15.0, 25.0, 35.0)
    alpha_list: Tuple[float, ...] = (0.01, 0.1, 1.0, 5.0, 20.0)
    m0_list: Tuple[float, ...] = (1.0, 2.0, 3.0, 4.0)
    budget_factor: float = 5.0
    accuracy_sad_tol: float = 1e-3
    trials_per_point: int = 25
    base_seed: int = 20240611
    output_dir: str = "results"
    jobs: int = 1
    write_traces: bool = False

    def __post_init__(self):
        for name in ("placements", "k_list", "snr_list", "alpha_list", "m0_list"):
            value = getattr(self, name)
            if isinstance(value, (str, int, float)):
                value = (value,)
            value = tuple(value)
            if not value:
                raise ConfigError(f"{name} must be nonempty")
            object.__setattr__(self, name, value)
        if self.algorithms is not None:
            object.__setattr__(self, "algorithms", tuple(self.algorithms))
            if not self.algorithms:
                raise ConfigError("algorithms must be nonempty")
            for a in self.algorithms:
                if a not in ALGORITHMS:
                    raise ConfigError(f"unknown algorithm {a!r}")
        if self.study not in STUDIES:
            raise ConfigError(f"unknown study {self.study!r}; expected one of {STUDIES}")
        for p in self.placements + (self.placement,):
            if p not in PLACEMENTS:
                raise ConfigError(f"unknown placement {p!r}")
        if self.trials_per_point < 1:
            raise ConfigError("trials_per_point must be >= 1")
        if not self.accuracy_sad_tol > 0:
            raise ConfigError("accuracy_sad_tol must be positive")
        if not self.budget_factor > 0 or self.jobs < 1:
            raise ConfigError("budget_factor and jobs must be positive")
        if any(k < 1 for k in self.k_list + (self.k,)):
            raise ConfigError("sparsity values must be positive")

    @property
    def study_algorithms(self) -> Tuple[str, ...]:
        return self.algorithms or STUDY_ALGORITHMS[self.study]

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def replace(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)


PRESETS: Dict[str, ExperimentConfig] = {
    "desk": ExperimentConfig(),
    "paper": ExperimentConfig(
        field=FieldParams(side_len=30, num_sensors=400, num_clusters=4, cluster_radius_grids=3.0),
        k=50,
        k_list=(20, 40, 60, 80),
    ),
}


def preset(name: str) -> ExperimentConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}") from None


_SECTIONS = {"field": FieldParams, "channel": ChannelParams, "chasing": ChasingConfig, "solver": SolverConfig}


def _build(cls, base, doc: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    try:
        return replace(base, **doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(doc: dict, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    """Overlay a nested mapping on ``base`` (or the preset it names, or desk)."""
    doc = dict(doc)
    name = doc.pop("preset", None)
    if base is None:
        base = preset(name) if name else PRESETS["desk"]
    sections = {}
    for key, cls in _SECTIONS.items():
        if key in doc:
            sub = doc.pop(key)
            if not isinstance(sub, dict):
                raise ConfigError(f"[{key}] must be a table")
            sections[key] = _build(cls, getattr(base, key), sub, f"[{key}]")
    return _build(ExperimentConfig, base, {**doc, **sections}, "config")


def load_config(path, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    """Read a ``.toml`` or ``.json`` config file."""
    path = Path(path)
    raw = path.read_bytes()
    try:
        if path.suffix.lower() == ".json":
            doc = json.loads(raw)
        else:
            doc = tomllib.loads(raw.decode("utf-8"))
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a table")
    return config_from_dict(doc, base)
