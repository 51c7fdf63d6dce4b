"""Pipeline configuration: a flat dataclass with a ``key = value`` text format."""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Tuple

from .augment import AugmentConfig


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    # model
    depth: int = 5
    resolution: int = 128
    channels: int = 3
    hidden_width: int = 32
    slope: float = 0.01
    crd_widths: Tuple[int, ...] = (8, 16, 32, 64)
    crd_prior: float = 0.01  # initial map level, about the pseudo-anomaly pixel fraction
    # optimisation
    epochs_stage1: int = 1500
    epochs_stage2: int = 400
    epochs_stage3: int = 300
    batch_size: int = 4
    lr: float = 1e-4  # stages 1 and 2
    lr_stage3: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    # scoring
    k_fraction: float = 0.001
    # data: "synthetic" or a dataset root in the MVTec folder layout
    data: str = "synthetic"
    categories: Tuple[str, ...] = ()
    synth_textures: Tuple[str, ...] = ("stripes", "checker")
    synth_train_count: int = 32
    synth_test_count: int = 50
    synth_period: int = 8
    synth_noise: float = 0.01
    # augmentation
    aug_block_sizes: Tuple[int, ...] = (32, 64, 128)
    aug_reference_size: int = 1024
    aug_coverage_min: float = 0.0
    aug_coverage_max: float = 1.0
    aug_line_count_min: int = 1
    aug_line_count_max: int = 4
    aug_line_length_min: float = 50.0
    aug_line_length_max: float = 150.0
    aug_line_width_min: int = 1
    aug_line_width_max: int = 3
    stage1_augment: bool = True
    stage1_clean_probability: float = 0.0
    stage3_clean_probability: float = 0.1
    # ablation switches
    share_weights: bool = True
    cross_phase_skips: bool = False
    intermediate_trace: bool = False
    crd_steps: Tuple[int, ...] = ()

    def validate(self) -> "PipelineConfig":
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.resolution % (2 ** self.depth):
            raise ConfigError(f"resolution {self.resolution} not divisible by 2^{self.depth}")
        for k in ("epochs_stage1", "epochs_stage2", "epochs_stage3", "batch_size", "hidden_width", "channels"):
            if getattr(self, k) < 1:
                raise ConfigError(f"{k} must be >= 1, got {getattr(self, k)}")
        for k in ("lr", "lr_stage3"):
            if not getattr(self, k) > 0.0:
                raise ConfigError(f"{k} must be positive, got {getattr(self, k)}")
        if not 0.0 < self.k_fraction <= 1.0:
            raise ConfigError(f"k_fraction must be in (0, 1], got {self.k_fraction}")
        if len(self.crd_widths) != 4:
            raise ConfigError(f"crd_widths needs 4 entries, got {self.crd_widths}")
        if any(not 1 <= s <= self.depth for s in self.crd_steps):
            raise ConfigError(f"crd_steps {self.crd_steps} outside [1, {self.depth}]")
        if len(set(self.crd_steps)) != len(self.crd_steps):
            raise ConfigError(f"crd_steps has duplicates: {self.crd_steps}")
        if not 0.0 < self.crd_prior < 1.0:
            raise ConfigError(f"crd_prior must be in (0, 1), got {self.crd_prior}")
        for k in ("stage1_clean_probability", "stage3_clean_probability"):
            if not 0.0 <= getattr(self, k) <= 1.0:
                raise ConfigError(f"{k} must be a probability")
        self.augment_config().validate()
        return self

    @property
    def steps(self) -> Tuple[int, ...]:
        """Recursion depths fed to the cross-recursion network, ascending."""
        return tuple(sorted(self.crd_steps)) if self.crd_steps else tuple(range(1, self.depth + 1))

    def augment_config(self, clean_probability: float = 0.0) -> AugmentConfig:
        return AugmentConfig(
            block_sizes=tuple(self.aug_block_sizes),
            reference_size=self.aug_reference_size,
            coverage=(self.aug_coverage_min, self.aug_coverage_max),
            line_count=(self.aug_line_count_min, self.aug_line_count_max),
            line_length=(self.aug_line_length_min, self.aug_line_length_max),
            line_width=(self.aug_line_width_min, self.aug_line_width_max),
            clean_probability=clean_probability,
        )

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    # text format

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, base: "PipelineConfig" = None) -> "PipelineConfig":
        base = base if base is not None else cls()
        hints = typing.get_type_hints(cls)
        changes = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in hints:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            changes[key] = _parse(value, hints[key], key)
        return dataclasses.replace(base, **changes).validate()

    @classmethod
    def load(cls, path, base: "PipelineConfig" = None) -> "PipelineConfig":
        return cls.from_text(Path(path).read_text(), base)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(text: str, hint, key: str):
    origin = typing.get_origin(hint)
    try:
        if origin is tuple:
            (item_type, _) = typing.get_args(hint)
            parts = [p.strip() for p in text.split(",") if p.strip()]
            return tuple(_parse(p, item_type, key) for p in parts)
        if hint is bool:
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {text!r} as {getattr(hint, '__name__', hint)}") from exc


def preset(name: str) -> PipelineConfig:
    """``paper``: full-scale settings. ``desk``: small CPU-sized run."""
    if name == "paper":
        return PipelineConfig(depth=5, resolution=1024, epochs_stage1=1500, epochs_stage2=400,
                              epochs_stage3=300).validate()
    if name == "desk":
        # Short schedules need a larger step and more images per epoch to
        # leave the flat mean-image solution; see README "Desk preset".
        return PipelineConfig(depth=3, resolution=64, hidden_width=16, epochs_stage1=30,
                              epochs_stage2=10, epochs_stage3=10, lr=3e-3, lr_stage3=1e-3,
                              synth_train_count=200, seed=7).validate()
    raise ConfigError(f"unknown preset {name!r} (expected 'desk' or 'paper')")
