"""Generator configuration: every knob of the synthesis pipeline.

A SynthConfig is serialized into each dataset manifest, so a manifest plus
the toolkit version is enough to regenerate a dataset bit-identically.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Tuple

import yaml

from .placement import EffectParams, PlacementPolicy
from .shape import SIZE_CLASSES, ElasticParams


class ConfigError(ValueError):
    """Malformed generator configuration."""


@dataclass(frozen=True)
class TextureDefaults:
    """Texture template plus per-tumor sampling ranges.

    Each tumor's target mean is drawn relative to the host's liver mean so
    lesions render hypodense; the exact offsets are calibration values and
    are recorded in the manifest.
    """

    salt_density: float = 0.4
    salt_value_hu: float = 1.0
    target_std_hu: float = 15.0
    clip_hu: Tuple[float, float] = (-100.0, 200.0)
    sigma_range_mm: Tuple[float, float] = (0.6, 1.2)
    mean_offset_range_hu: Tuple[float, float] = (-45.0, -15.0)

    def __post_init__(self):
        if not 0.0 <= self.salt_density <= 1.0:
            raise ConfigError(f"salt_density {self.salt_density} not in [0, 1]")
        for name in ("clip_hu", "sigma_range_mm", "mean_offset_range_hu"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name} range {lo}..{hi} is reversed")


DEFAULT_TUMOR_COUNTS = {1: 0.50, 2: 0.25, 3: 0.15, 4: 0.07, 5: 0.03}
DEFAULT_CLASS_WEIGHTS = {name: 0.25 for name in SIZE_CLASSES}


def _validated_distribution(dist: Dict, name: str, keys=None) -> Dict:
    if not dist:
        raise ConfigError(f"{name} must not be empty")
    vals = list(dist.values())
    if any(v < 0 for v in vals):
        raise ConfigError(f"{name} has negative weights")
    total = sum(vals)
    if abs(total - 1.0) > 1e-9:
        raise ConfigError(f"{name} sums to {total}, expected 1 within 1e-9")
    if keys is not None:
        unknown = set(dist) - set(keys)
        if unknown:
            raise ConfigError(f"{name} has unknown keys {sorted(unknown)}")
    return dict(dist)


@dataclass(frozen=True)
class SynthConfig:
    """Full tumor generator configuration."""

    tumor_count_distribution: Dict[int, float] = field(
        default_factory=lambda: dict(DEFAULT_TUMOR_COUNTS))
    size_class_weights: Dict[str, float] = field(
        default_factory=lambda: dict(DEFAULT_CLASS_WEIGHTS))
    texture: TextureDefaults = TextureDefaults()
    elastic: ElasticParams = ElasticParams()
    effects: EffectParams = EffectParams()
    placement: PlacementPolicy = PlacementPolicy()
    master_seed: int = 0

    def __post_init__(self):
        counts = _validated_distribution(
            {int(k): float(v) for k, v in self.tumor_count_distribution.items()},
            "tumor_count_distribution")
        if any(k < 1 for k in counts):
            raise ConfigError("tumor counts must be >= 1")
        weights = _validated_distribution(self.size_class_weights,
                                          "size_class_weights", SIZE_CLASSES)
        object.__setattr__(self, "tumor_count_distribution", counts)
        object.__setattr__(self, "size_class_weights", weights)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["tumor_count_distribution"] = {
            str(k): v for k, v in self.tumor_count_distribution.items()}
        return _tuples_to_lists(d)

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        data = dict(data or {})
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        kwargs = {}
        for name, sub_cls in (("texture", TextureDefaults),
                              ("elastic", ElasticParams),
                              ("effects", EffectParams),
                              ("placement", PlacementPolicy)):
            if name in data:
                kwargs[name] = _dataclass_from_dict(sub_cls, data.pop(name), name)
        if "tumor_count_distribution" in data:
            kwargs["tumor_count_distribution"] = {
                int(k): float(v)
                for k, v in data.pop("tumor_count_distribution").items()}
        kwargs.update(data)
        return cls(**kwargs)

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _tuples_to_lists(obj):
    if isinstance(obj, dict):
        return {k: _tuples_to_lists(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_tuples_to_lists(v) for v in obj]
    return obj


def _dataclass_from_dict(cls, data: dict, name: str):
    if dataclasses.is_dataclass(data):
        return data
    if not isinstance(data, dict):
        raise ConfigError(f"config section {name!r} must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)} in section {name!r}")
    kwargs = {}
    for key, value in data.items():
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    return cls(**kwargs)


def load_config(path) -> SynthConfig:
    """Read a YAML key-value tree mirroring SynthConfig; missing keys keep
    their defaults."""
    text = Path(path).read_text()
    data = yaml.safe_load(text)
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a mapping")
    return SynthConfig.from_dict(data)


def dump_config(cfg: SynthConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
