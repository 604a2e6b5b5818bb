"""JSON run configuration with strict key checking."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .fsgcc import FsGccConfig
from .unet import Architecture, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """Training-set simulation settings."""

    room_dims: tuple = (6.0, 7.0, 3.0)
    n_mic_pairs: int = 8
    n_sources: int = 8
    snr_range_db: tuple = (-10.0, 20.0)
    t60_range_s: tuple = (0.2, 1.0)
    source_height: float = 1.25
    fs: float = 44100.0
    frame_length: int = 2048
    overlap: float = 0.75
    fsgcc: FsGccConfig = FsGccConfig()
    crop_width: int = 128
    mic_spacing_range: tuple = (0.3, 0.45)
    mic_height_range: tuple = (1.0, 1.6)
    wall_clearance: float = 0.5
    source_duration_s: float = 2.0898  # 92160 samples: 177 frames of 2048 at hop 512
    frames_per_pair: int = 1  # training frames per rendering: the loudest, then random ones
    source_dir: str | None = None
    speakers: tuple | None = None
    seed: int = 0

    def __post_init__(self):
        for name in ("snr_range_db", "t60_range_s", "mic_spacing_range", "mic_height_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name} must be ordered low <= high")
        if self.n_mic_pairs < 1 or self.n_sources < 1:
            raise ConfigError("n_mic_pairs and n_sources must be >= 1")
        if self.t60_range_s[0] < 0:
            raise ConfigError("t60 must be non-negative")
        if len(self.room_dims) != 3 or min(self.room_dims) <= 2 * self.wall_clearance:
            raise ConfigError("room too small for the wall clearance")
        if self.frame_length != self.fsgcc.dft_length:
            raise ConfigError("frame_length must equal fsgcc.dft_length")
        if not 0 <= self.overlap < 1:
            raise ConfigError("overlap must lie in [0, 1)")
        if self.crop_width < 2 or self.crop_width > self.frame_length or self.crop_width % 2:
            raise ConfigError("crop_width must be even and no larger than frame_length")
        if self.mic_spacing_range[0] < 0.3:
            raise ConfigError("mics of a pair must be at least 0.3 m apart")
        reach = math.ceil(self.mic_spacing_range[1] * self.fs / 343.0) + 2
        if reach > self.crop_width // 2 - 1:
            raise ConfigError(f"crop_width {self.crop_width} cannot hold lags up to {reach}")
        if self.frames_per_pair < 1:
            raise ConfigError("frames_per_pair must be >= 1")
        if self.source_duration_s <= 0:
            raise ConfigError("source_duration_s must be positive")


@dataclass(frozen=True)
class TestSweepConfig:
    """Evaluation sweep. Geometry is drawn in the first room and translated
    (same offsets from the room centre) into the others."""

    rooms: tuple = ((6.0, 7.0, 3.0), (9.0, 8.0, 4.0))
    t60_grid: tuple = (0.2, 0.5, 1.0)
    snr_db: float | None = 20.0  # None: noiseless
    n_mic_pairs: int = 5
    n_sources: int = 5
    frames_per_source: int | None = 20  # None: every frame
    include_anechoic: bool = True
    source_dir: str | None = None
    speakers: tuple | None = None
    seed: int = 1

    def __post_init__(self):
        if not self.rooms:
            raise ConfigError("at least one test room is required")
        if any(len(r) != 3 for r in self.rooms):
            raise ConfigError("each room needs three dimensions")
        if any(t < 0 for t in self.t60_grid):
            raise ConfigError("t60 values must be non-negative")
        if self.n_mic_pairs < 1 or self.n_sources < 1:
            raise ConfigError("n_mic_pairs and n_sources must be >= 1")
        if self.frames_per_source is not None and self.frames_per_source < 1:
            raise ConfigError("frames_per_source must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    test: TestSweepConfig = field(default_factory=TestSweepConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    architecture: Architecture = field(default_factory=Architecture)

    def with_seed(self, seed: int) -> "RunConfig":
        return dataclasses.replace(
            self,
            experiment=dataclasses.replace(self.experiment, seed=seed),
            test=dataclasses.replace(self.test, seed=seed + 1),
            train=dataclasses.replace(self.train, seed=seed))

    def to_dict(self) -> dict:
        return to_jsonable(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def to_jsonable(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [to_jsonable(v) for v in obj]
    return obj


def _tupled(v):
    return tuple(_tupled(x) for x in v) if isinstance(v, list) else v


def from_dict(cls, data, where: str = ""):
    """Build dataclass ``cls`` from a dict, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be a JSON object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = fields[name].default
        if default is dataclasses.MISSING and fields[name].default_factory is not dataclasses.MISSING:
            default = fields[name].default_factory()
        if dataclasses.is_dataclass(default):
            kwargs[name] = from_dict(type(default), value, f"{where}.{name}" if where else name)
        else:
            kwargs[name] = _tupled(value)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        data = json.loads(p.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {p} is not valid JSON: {exc}") from exc
    return from_dict(RunConfig, data)
