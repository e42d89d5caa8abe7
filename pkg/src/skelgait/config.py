"""Pipeline configuration loaded from JSON with strict key checking."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .camera import CameraModel
from .cycles import CycleConfig
from .errors import ConfigurationError
from .jointseq import FilterConfig


@dataclass
class OutlierConfig:
    alpha: float = 0.1
    bins: int = 50
    k: float = 1.5

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ConfigurationError("outliers.alpha must lie in (0, 1]")
        if self.bins < 1:
            raise ConfigurationError("outliers.bins must be >= 1")
        if not self.k > 0:
            raise ConfigurationError("outliers.k must be > 0")


@dataclass
class SvmConfig:
    C: float = 10.0
    gamma: float | None = None
    tol: float = 1e-3
    max_passes: int = 100

    def __post_init__(self):
        if not self.C > 0:
            raise ConfigurationError("svm.C must be > 0")
        if self.gamma is not None and not self.gamma > 0:
            raise ConfigurationError("svm.gamma must be > 0")
        if not self.tol > 0:
            raise ConfigurationError("svm.tol must be > 0")
        if self.max_passes < 1:
            raise ConfigurationError("svm.max_passes must be >= 1")


@dataclass
class SimulationConfig:
    """Synthetic fixture: every subject walks each pattern once, and the
    first ``repeat_subjects`` subjects record a second FB sequence."""

    n_frames: int = 240
    repeat_subjects: int = 4
    spike_prob: float = 0.1
    spike_scale: float = 5.0
    missing_joint_prob: float = 0.1
    missing_frame_prob: float = 0.1
    frame_rate: float = 15.0

    def __post_init__(self):
        if self.n_frames < 16:
            raise ConfigurationError("simulation.n_frames must be >= 16")
        if not 0 <= self.repeat_subjects <= 10:
            raise ConfigurationError("simulation.repeat_subjects must lie in 0..10")
        for name in ("spike_prob", "missing_joint_prob", "missing_frame_prob"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigurationError(f"simulation.{name} must lie in [0, 1]")
        if self.spike_scale < 0 or not self.frame_rate > 0:
            raise ConfigurationError("simulation.spike_scale/frame_rate out of range")


@dataclass
class SplitConfig:
    train_fraction: float = 0.75

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise ConfigurationError("split.train_fraction must lie in (0, 1)")


@dataclass
class PipelineConfig:
    camera: CameraModel = field(default_factory=lambda: CameraModel())
    filter: FilterConfig = field(default_factory=FilterConfig)
    outliers: OutlierConfig = field(default_factory=OutlierConfig)
    cycles: CycleConfig = field(default_factory=CycleConfig)
    svm: SvmConfig = field(default_factory=SvmConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    seed: int = 0

    def with_seed(self, seed):
        return dataclasses.replace(self, seed=int(seed))

    def to_dict(self):
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = dataclasses.asdict(v) if dataclasses.is_dataclass(v) else v
        return out

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigurationError("configuration must be a JSON object")
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ConfigurationError(f"unknown configuration keys: {unknown}")
        kwargs = {}
        for name, value in d.items():
            if name == "seed":
                if not isinstance(value, int) or isinstance(value, bool):
                    raise ConfigurationError("seed must be an integer")
                kwargs[name] = value
                continue
            section = _SECTIONS[name]
            if not isinstance(value, dict):
                raise ConfigurationError(f"section {name!r} must be an object")
            allowed = {f.name for f in dataclasses.fields(section)}
            bad = sorted(set(value) - allowed)
            if bad:
                raise ConfigurationError(f"unknown keys in {name!r}: {bad}")
            try:
                kwargs[name] = section(**value)
            except TypeError as exc:
                raise ConfigurationError(f"section {name!r}: {exc}") from exc
        return cls(**kwargs)

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                data = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigurationError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)


_SECTIONS = {
    "camera": CameraModel,
    "filter": FilterConfig,
    "outliers": OutlierConfig,
    "cycles": CycleConfig,
    "svm": SvmConfig,
    "simulation": SimulationConfig,
    "split": SplitConfig,
}

