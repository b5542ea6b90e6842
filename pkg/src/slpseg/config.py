"""Run configuration: one nested YAML document, every field defaulted, unknown keys rejected."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .availability import DropoutPolicy
from .dataset import SyntheticConfig
from .encoder import EncoderConfig
from .errors import ConfigError
from .infogap import ProbeConfig
from .intra_attention import AttentionConfig
from .model import ModelConfig
from .training import TrainConfig

# fields owned by other sections (seeds come from the top-level ``seed``;
# modality layout and tile size come from ``dataset``)
_DERIVED = {"dataset": {"seed"}, "training": {"seed"}, "probe": {"seed"},
            "model": {"channels_per_modality", "tile_size"}}


@dataclass(frozen=True)
class SplitConfig:
    fractions: tuple[float, float, float] = (0.72, 0.08, 0.20)


@dataclass(frozen=True)
class ModelSection:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    multimodal_layers: int = 1
    inter_channels: int = 64
    latent_channels: int = 32
    decoder_widths: tuple[int, ...] = (64, 32, 16, 16)
    variant: str = "slp"
    renormalize_over_available: bool = False


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    output_dir: str = "runs"
    dataset: SyntheticConfig = field(default_factory=SyntheticConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    model: ModelSection = field(default_factory=ModelSection)
    training: TrainConfig = field(default_factory=TrainConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)

    def model_config(self, variant: str | None = None) -> ModelConfig:
        sec = dataclasses.asdict(self.model)
        if variant is not None:
            sec["variant"] = variant
        return ModelConfig(channels_per_modality=self.dataset.channels_per_modality,
                           tile_size=self.dataset.tile_size, **sec)

    def to_dict(self) -> dict:
        d = _plain(dataclasses.asdict(self))
        for section, keys in _DERIVED.items():
            for k in keys:
                d[section].pop(k, None)
        return d


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, data: dict | None, path: str, skip=frozenset(), extra: dict | None = None):
    data = dict(data or {})
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - (set(names) - set(skip)))
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {', '.join(unknown)}")
    kwargs: dict[str, Any] = {}
    for name, value in data.items():
        f = names[name]
        sub = {"encoder": EncoderConfig, "attention": AttentionConfig,
               "dropout_policy": DropoutPolicy}.get(name)
        if sub is not None and isinstance(value, dict):
            value = _build(sub, value, f"{path}.{name}")
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    kwargs.update(extra or {})
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def from_dict(data: dict | None, seed: int | None = None) -> RunConfig:
    data = dict(data or {})
    top = {"seed", "output_dir", "dataset", "split", "model", "training", "probe"}
    unknown = sorted(set(data) - top)
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {', '.join(unknown)}")
    seed = int(data.get("seed", 0) if seed is None else seed)
    split = _build(SplitConfig, data.get("split"), "split")
    if len(split.fractions) != 3 or abs(sum(split.fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split.fractions must be three numbers summing to 1, got {list(split.fractions)}")
    return RunConfig(
        seed=seed,
        output_dir=str(data.get("output_dir", "runs")),
        dataset=_build(SyntheticConfig, data.get("dataset"), "dataset", _DERIVED["dataset"], {"seed": seed}),
        split=split,
        model=_build(ModelSection, data.get("model"), "model"),
        training=_build(TrainConfig, data.get("training"), "training", _DERIVED["training"], {"seed": seed}),
        probe=_build(ProbeConfig, data.get("probe"), "probe", _DERIVED["probe"], {"seed": seed}),
    )


def load_config(path: str | Path | None, seed: int | None = None) -> RunConfig:
    if path is None:
        return from_dict({}, seed)
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return from_dict(data, seed)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
