"""JSON experiment configuration.

A config is one JSON object whose sections mirror the library's types.
Every key is optional; omitted keys take the defaults below and the fully
resolved document is echoed next to the outputs.  Unknown keys are errors.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .criterion import CriterionKind
from .errors import ConfigError, StdicError
from .shapefn import ShapeFunctionSpec
from .solver import Optimizer, SolveSettings
from .synth import MotionProgram


@dataclass
class ImageConfig:
    width: int = 128
    height: int = 128
    speckle_radius: float = 2.5
    density: float = 0.02


@dataclass
class MotionConfig:
    kind: str = "translation"
    frame_count: int = 20
    frame_interval: float = 1.0
    step: float = 0.05
    rate_x: float = 0.0
    rate_y: float = 0.0
    u_t: float = 0.0
    v_t: float = 0.0

    def program(self) -> MotionProgram:
        return MotionProgram(self.kind, self.frame_count, self.frame_interval, self.step,
                             self.rate_x, self.rate_y, self.u_t, self.v_t)


@dataclass
class NoiseConfig:
    levels: list = field(default_factory=lambda: [0.0])
    quantize_8bit: bool = False


@dataclass
class SettingsConfig:
    optimizer: str = "ic"
    max_iterations: int = 50
    convergence_tol: float = 1e-4
    divergence_guard: float = 5.0

    def settings(self) -> SolveSettings:
        return SolveSettings(Optimizer(self.optimizer), self.max_iterations,
                             self.convergence_tol, self.divergence_guard)


@dataclass
class MethodConfig:
    name: str = "spatial"
    spatial_order: int = 1
    temporal_order: int = 0
    cross_terms: list = field(default_factory=list)
    window: int = 1

    def spec(self) -> ShapeFunctionSpec:
        return ShapeFunctionSpec(self.spatial_order, self.temporal_order,
                                 frozenset(self.cross_terms), self.window)


@dataclass
class AnalysisConfig:
    subset_size: int = 31
    grid_step: int = 10
    criterion: str = "znssd"
    search_radius: int = 10
    min_zncc: float = 0.3
    # null: inset from the borders by the peak displacement + 5 px
    roi: list | None = None
    # null: every frame with a full window for all methods
    frames: list | None = None
    settings: SettingsConfig = field(default_factory=SettingsConfig)


@dataclass
class MetricsConfig:
    reference_method: str = "st-order-1"
    component: str = "u"
    # frames with t <= t_min are left out of ratio tables
    t_min: float | None = None


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    image: ImageConfig = field(default_factory=ImageConfig)
    motion: MotionConfig = field(default_factory=MotionConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    methods: list = field(default_factory=lambda: [
        MethodConfig("spatial"),
        MethodConfig("st-order-1", 1, 1, ["xt", "yt"], 5),
    ])
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    def validate(self) -> "ExperimentConfig":
        """Check cross-field constraints; raises ConfigError."""
        try:
            self.motion.program()
            specs = [m.spec() for m in self.methods]
            self.analysis.settings.settings()
            CriterionKind(self.analysis.criterion)
        except (StdicError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if not self.methods:
            raise ConfigError("at least one method is required")
        names = [m.name for m in self.methods]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate method names in {names}")
        for m in names:
            if not m or any(c in m for c in "/\\,"):
                raise ConfigError(f"method name {m!r} is not usable as a file name")
        if self.analysis.subset_size < 5 or self.analysis.subset_size % 2 == 0:
            raise ConfigError("subset_size must be odd and >= 5")
        if self.image.width < 64 or self.image.height < 64:
            raise ConfigError("images must be at least 64x64")
        if any(not (lvl >= 0 and math.isfinite(lvl)) for lvl in self.noise.levels):
            raise ConfigError("noise levels must be finite and non-negative")
        if not self.noise.levels:
            raise ConfigError("noise.levels must not be empty")
        if len(set(self.noise.levels)) != len(self.noise.levels):
            raise ConfigError("noise levels must be distinct")
        if self.metrics.component not in ("u", "v"):
            raise ConfigError("metrics.component must be 'u' or 'v'")
        if self.analysis.roi is not None and len(self.analysis.roi) != 4:
            raise ConfigError("roi must be [x0, y0, x1, y1]")
        if max(s.window for s in specs) > self.motion.frame_count:
            raise ConfigError("temporal window is longer than the sequence")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"


_NESTED = {
    (ExperimentConfig, "image"): ImageConfig,
    (ExperimentConfig, "motion"): MotionConfig,
    (ExperimentConfig, "noise"): NoiseConfig,
    (ExperimentConfig, "analysis"): AnalysisConfig,
    (ExperimentConfig, "metrics"): MetricsConfig,
    (AnalysisConfig, "settings"): SettingsConfig,
}

_NUMBER = (int, float)


def _check_type(where, value, default):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, _NUMBER) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, list):
        ok = isinstance(value, list)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{where}: expected {type(default).__name__}, got {value!r}")
    return value


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    defaults = cls()
    kwargs = {}
    for key, value in data.items():
        path = f"{where}.{key}" if where else key
        sub = _NESTED.get((cls, key))
        if sub is not None:
            kwargs[key] = _build(sub, value, path)
        elif cls is ExperimentConfig and key == "methods":
            if not isinstance(value, list):
                raise ConfigError(f"{path}: expected a list")
            kwargs[key] = [_build(MethodConfig, m, f"{path}[{i}]") for i, m in enumerate(value)]
        else:
            kwargs[key] = _check_type(path, value, getattr(defaults, key))
    return cls(**kwargs)


def config_from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data, "").validate()


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(data)
