"""Training configuration: nested dataclasses, YAML I/O and validation.

Defaults reproduce the published training setup. Unknown keys are rejected
with their full key path; missing keys take the documented defaults.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError

SCALES = ("large", "medium", "small")


@dataclass
class GeometryConfig:
    kind: str | None = None
    box: list = field(default_factory=lambda: [[0.0, 5.0], [0.0, 1.0], [0.0, 1.0]])
    fluid_sign: int = -1
    pipe_radius: float = 0.4
    half_width: float = 0.4
    lateral_walls: bool = True


@dataclass
class SamplingConfig:
    n_interior: int = 250_000
    n_inlet: int = 1000
    n_outlet: int = 1000
    n_wall: int = 10_000
    batch_size: int = 8192
    chunk_size: int = 1024


@dataclass
class ScaleTriple:
    large: float = 0.0
    medium: float = 0.0
    small: float = 0.0

    def get(self, scale: str) -> float:
        return getattr(self, scale)


@dataclass
class CVConfig:
    n_large: int = 40
    n_medium: int = 200
    n_small: int = 500
    r_large: float = 1.0
    r_medium: float = 0.5
    r_small: float = 0.25
    radius_rule: bool = False
    alpha_l: float = 1.4
    alpha_m: float = 1.4
    beta: float = 0.5
    n_sphere_draws: int = 4096
    wall_pool_size: int = 1_000_000
    pool_regions: str = "all"
    min_accept: int = 16
    max_boundary_samples: int | None = None
    skeleton: str | None = None
    skeleton_seeds: int = 512
    refresh: bool = False

    def count(self, scale: str) -> int:
        return getattr(self, f"n_{scale}")


@dataclass
class LossConfig:
    w_inlet: float = 10.0
    w_outlet: float = 10.0
    w_wall: float = 10.0
    w_continuity: float = 10.0
    w_momentum: float = 0.1
    wk_continuity: ScaleTriple = field(default_factory=lambda: ScaleTriple(100.0, 100.0, 100.0))
    wk_momentum: ScaleTriple = field(default_factory=lambda: ScaleTriple(4.0, 25.0, 100.0))


@dataclass
class OptimConfig:
    optimizer: str = "adam"
    lr_stage1: float = 1e-3
    lr_stage2: float = 1e-6
    epochs: int = 9000
    t_switch: int = 7000
    switch_rule: str = "fixed"
    plateau_tol: float = 1e-3
    plateau_window: int = 200
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    checkpoint_every: int = 1000
    divergence_factor: float = 1e6


@dataclass
class PhysicsConfig:
    re: float = 100.0
    inlet: str = "uniform"
    inlet_velocity: list = field(default_factory=lambda: [1.0, 0.0, 0.0])
    p_out: float = 0.0


@dataclass
class ModelConfig:
    width: int = 256
    depth: int = 5
    n_freq: int = 30
    f_min: float = 1.0
    f_max: float = 2.5
    layout: str = "cycling"


@dataclass
class TrainConfig:
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    cv: CVConfig = field(default_factory=CVConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    seed: int = 0
    deterministic: bool = True

    # Per-purpose seeds derived from the root seed.
    def seed_for(self, purpose: str) -> int:
        offsets = {"geometry": 1, "placement": 2, "batch": 3, "init": 4}
        if purpose not in offsets:
            raise KeyError(purpose)
        return self.seed + offsets[purpose]

    def radii(self) -> tuple:
        return (self.cv.r_large, self.cv.r_medium, self.cv.r_small)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self, require_geometry: bool = False) -> "TrainConfig":
        if require_geometry and not self.geometry.kind:
            raise ConfigError("geometry.kind is required (no default geometry)")
        r = self.radii()
        if not r[0] > r[1] > r[2] > 0:
            raise ConfigError(f"cv radii must satisfy r_large > r_medium > r_small > 0, got {r}")
        o = self.optim
        if not 0 < o.t_switch <= o.epochs:
            raise ConfigError(f"optim.t_switch must satisfy 0 < t_switch <= epochs, got {o.t_switch}")
        if o.switch_rule not in ("fixed", "plateau"):
            raise ConfigError("optim.switch_rule must be 'fixed' or 'plateau'")
        if o.optimizer != "adam":
            raise ConfigError(f"optim.optimizer: unsupported optimizer {o.optimizer!r}")
        if self.cv.pool_regions not in ("all", "wall"):
            raise ConfigError("cv.pool_regions must be 'all' or 'wall'")
        if self.physics.re <= 0:
            raise ConfigError("physics.re must be positive")
        if self.physics.inlet not in ("uniform", "poiseuille"):
            raise ConfigError("physics.inlet must be 'uniform' or 'poiseuille'")
        if self.model.layout not in ("cycling", "isotropic"):
            raise ConfigError("model.layout must be 'cycling' or 'isotropic'")
        weights = [v for k, v in dataclasses.asdict(self.loss).items() if not isinstance(v, dict)]
        weights += list(dataclasses.asdict(self.loss.wk_continuity).values())
        weights += list(dataclasses.asdict(self.loss.wk_momentum).values())
        if min(weights) < 0:
            raise ConfigError("loss weights must be nonnegative")
        s = self.sampling
        for name in ("n_interior", "n_inlet", "n_outlet", "n_wall", "batch_size", "chunk_size"):
            if getattr(s, name) < 1:
                raise ConfigError(f"sampling.{name} must be >= 1")
        return self


def _coerce(value, hint, path: str):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if dataclasses.is_dataclass(hint):
        return _build(hint, value, path)
    if origin is typing.Union or (origin is not None and type(None) in args):
        if value is None:
            return None
        inner = [a for a in args if a is not type(None)][0]
        return _coerce(value, inner, path)
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected bool, got {type(value).__name__}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"{path}: expected int, got {type(value).__name__}")
        return value
    if hint is float:
        if isinstance(value, str):
            # YAML 1.1 reads "1e-3" (no dot) as a string
            try:
                return float(value)
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected float, got {type(value).__name__}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected str, got {type(value).__name__}")
        return value
    if hint is list:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected list, got {type(value).__name__}")
        return value
    return value


def _build(cls, data, path: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path or '<root>'}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigError(f"unknown config key '{where}{unknown[0]}'")
    kwargs = {k: _coerce(v, hints[k], f"{path}.{k}" if path else k) for k, v in data.items()}
    return cls(**kwargs)


def config_from_dict(data: dict | None) -> TrainConfig:
    return _build(TrainConfig, data or {}, "").validate()


def parse_config(path) -> TrainConfig:
    """Read and validate a YAML config file; an empty file yields all defaults."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{p}: invalid YAML ({exc})") from exc
    return config_from_dict(data)


def dump_config(cfg: TrainConfig, path=None) -> str:
    text = yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=None)
    if path is not None:
        Path(path).write_text(text)
    return text
