"""Run configuration: one JSON file drives every CLI entry point.

Shape:

    {
      "seed": 0,
      "precision": "f64",
      "model":       { geometry and block knobs },
      "pcca":        { channel-allocation schedule },
      "schedule":    { diffusion betas },
      "training":    { optimizer and loop settings },
      "diagnostics": { survey/histogram sizes }
    }

Every key is optional and defaulted, but unknown keys anywhere are a
hard error -- a typo like "f_strat" must not silently run with the
default.  The fully resolved config (defaults filled in) is echoed as
resolved_config.json next to any output a command writes, so a run
directory always records exactly what produced it.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .diffusion import NoiseSchedule, ToyDataset
from .errors import ConfigurationError
from .model import ToyDiTConfig


@dataclass
class ModelSection:
    image_h: int = 16
    image_w: int = 16
    image_channels: int = 1
    patch: int = 2
    d_model: int = 32
    depth: int = 4
    num_heads: int = 4
    window: list = field(default_factory=lambda: [2, 2])
    order: int = 2
    mlp_ratio: float = 4.0
    class_count: int = 0


@dataclass
class PccaSection:
    f_start: float = 0.25
    f_end: float = 0.75
    mode: str = "linear"
    fractions: Optional[list] = None  # explicit per-layer override


@dataclass
class ScheduleSection:
    timesteps: int = 100
    beta_start: float = 1e-4
    beta_end: float = 2e-2


@dataclass
class TrainingSection:
    steps: int = 500
    lr: float = 1e-4
    weight_decay: float = 0.0
    batch_size: int = 16
    dataset_size: int = 256
    checkpoint_every: int = 0
    log_every: int = 100


@dataclass
class DiagnosticsSection:
    survey_samples: int = 64
    distance_buckets: int = 16
    sample_count: int = 4


@dataclass
class RunConfig:
    seed: int = 0
    precision: str = "f64"
    model: ModelSection = field(default_factory=ModelSection)
    pcca: PccaSection = field(default_factory=PccaSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    diagnostics: DiagnosticsSection = field(default_factory=DiagnosticsSection)

    def __post_init__(self):
        if self.precision not in ("f64", "f32"):
            raise ConfigurationError(f"precision must be 'f64' or 'f32', got {self.precision!r}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigurationError(f"seed must be a nonnegative integer, got {self.seed!r}")

    # -- construction ----------------------------------------------------------

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        return _build(cls, raw, path="")

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigurationError(f"config {path} must be a JSON object")
        return cls.from_dict(raw)

    # -- resolution -------------------------------------------------------------

    def resolved(self) -> dict:
        return dataclasses.asdict(self)

    def write_resolved(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "resolved_config.json"
        path.write_text(json.dumps(self.resolved(), indent=2, sort_keys=True) + "\n")
        return path

    # -- builders ---------------------------------------------------------------

    def build_model_config(self) -> ToyDiTConfig:
        m, p = self.model, self.pcca
        return ToyDiTConfig(
            image_h=m.image_h,
            image_w=m.image_w,
            image_channels=m.image_channels,
            patch=m.patch,
            d_model=m.d_model,
            depth=m.depth,
            num_heads=m.num_heads,
            window=tuple(m.window),
            order=m.order,
            f_start=p.f_start,
            f_end=p.f_end,
            schedule_mode=p.mode,
            fractions=tuple(p.fractions) if p.fractions is not None else None,
            mlp_ratio=m.mlp_ratio,
            class_count=m.class_count,
            max_timesteps=self.schedule.timesteps,
        )

    def build_noise_schedule(self) -> NoiseSchedule:
        s = self.schedule
        return NoiseSchedule.linear(s.timesteps, s.beta_start, s.beta_end)

    def build_dataset(self, rng) -> ToyDataset:
        m = self.model
        return ToyDataset(
            height=m.image_h,
            width=m.image_w,
            channels=m.image_channels,
            size=self.training.dataset_size,
            rng=rng,
        )


_SECTIONS = {
    "model": ModelSection,
    "pcca": PccaSection,
    "schedule": ScheduleSection,
    "training": TrainingSection,
    "diagnostics": DiagnosticsSection,
}


def _build(cls, raw: dict, path: str):
    if not isinstance(raw, dict):
        raise ConfigurationError(f"config section {path or '<root>'} must be an object, got {type(raw).__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        where = path or "top level"
        raise ConfigurationError(f"unknown config key(s) at {where}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in raw.items():
        sub = _SECTIONS.get(name) if cls is RunConfig else None
        if sub is not None:
            kwargs[name] = _build(sub, value, path=f"{path}{name}" if not path else f"{path}.{name}")
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigurationError(f"bad config value near {path or 'top level'}: {exc}") from None
