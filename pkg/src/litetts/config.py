"""Hierarchical YAML configuration with eager, exhaustive validation.

Every run resolves a full Config and snapshots it next to its outputs so the
many small constants behind an experiment are recorded mechanically.
"""

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .acoustic import AcousticConfig
from .adapters import AdapterConfig
from .dataio import AudioConfig
from .errors import ConfigError, ConfigNotFoundError
from .losses import LossWeights
from .vocoder import DiscriminatorConfig, VocoderConfig

CONFIG_DIR_ENV = "LITETTS_CONFIG_DIR"


@dataclass(frozen=True)
class OptimizerConfig:
    """AdamW with per-epoch exponential LR decay."""

    beta1: float = 0.8
    beta2: float = 0.99
    weight_decay: float = 0.01
    lr_backbone: float = 0.0002
    lr_finetune_full: float = 0.00001
    lr_finetune_adapters: float = 0.0001
    lr_decay_gamma: float = 0.99

    def __post_init__(self):
        problems = []
        if not (0 < self.beta1 < self.beta2 < 1):
            problems.append(f"optimizer requires 0 < beta1 < beta2 < 1, got ({self.beta1}, {self.beta2})")
        for name in ("lr_backbone", "lr_finetune_full", "lr_finetune_adapters"):
            if getattr(self, name) <= 0:
                problems.append(f"optimizer.{name} must be positive")
        if not (0 < self.lr_decay_gamma <= 1):
            problems.append("optimizer.lr_decay_gamma must be in (0, 1]")
        if problems:
            raise ConfigError(problems)


@dataclass(frozen=True)
class TrainingConfig:
    backbone_steps: int = 1000000
    batch_size: int = 128
    grad_accumulation: int = 1  # effective batch = batch_size * grad_accumulation
    finetune_epochs: int = 200
    segment_frames: int = 32
    checkpoint_every: int = 10000
    stft_resolutions: tuple = ((1024, 120, 600), (2048, 240, 1200), (512, 50, 240))

    def __post_init__(self):
        problems = []
        for name in ("backbone_steps", "batch_size", "grad_accumulation",
                     "finetune_epochs", "segment_frames", "checkpoint_every"):
            if getattr(self, name) < 1:
                problems.append(f"training.{name} must be >= 1")
        if any(len(r) != 3 for r in self.stft_resolutions):
            problems.append("training.stft_resolutions entries must be (n_fft, hop, win)")
        if problems:
            raise ConfigError(problems)


@dataclass(frozen=True)
class Config:
    seed: int = 1234
    audio: AudioConfig = field(default_factory=AudioConfig)
    acoustic: AcousticConfig = field(default_factory=AcousticConfig)
    vocoder: VocoderConfig = field(default_factory=VocoderConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    losses: LossWeights = field(default_factory=LossWeights)
    adapters: AdapterConfig = field(default_factory=AdapterConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)


_SECTIONS = {
    "audio": AudioConfig,
    "acoustic": AcousticConfig,
    "vocoder": VocoderConfig,
    "discriminator": DiscriminatorConfig,
    "losses": LossWeights,
    "adapters": AdapterConfig,
    "optimizer": OptimizerConfig,
    "training": TrainingConfig,
}


def _coerce(value, target_type, where, problems):
    try:
        if target_type is float:
            return float(value)
        if target_type is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(f"{value} is not an integer")
            return int(value)
        if target_type is tuple:
            return tuple(tuple(v) if isinstance(v, list) else v for v in value)
        return value
    except (TypeError, ValueError) as e:
        problems.append(f"{where}: {e}")
        return value


def _build_section(cls, mapping, prefix, problems):
    if mapping is None:
        mapping = {}
    if not isinstance(mapping, dict):
        problems.append(f"{prefix}: expected a mapping")
        return None
    names = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in mapping.items():
        if key not in names:
            problems.append(f"{prefix}.{key}: unknown field")
            continue
        target = names[key].type
        if isinstance(target, str):  # string annotations from dataclasses
            target = {"int": int, "float": float, "tuple": tuple}.get(target, None)
        kwargs[key] = _coerce(value, target, f"{prefix}.{key}", problems)
    try:
        return cls(**kwargs)
    except ConfigError as e:
        problems.extend(e.problems)
    except TypeError as e:
        problems.append(f"{prefix}: {e}")
    return None


def config_from_dict(data):
    """Build and validate a Config, reporting every violated field at once."""
    problems = []
    if not isinstance(data, dict):
        raise ConfigError(["config root must be a mapping"])
    sections = {}
    for key, cls in _SECTIONS.items():
        sections[key] = _build_section(cls, data.get(key), key, problems)
    for key in data:
        if key not in _SECTIONS and key != "seed":
            problems.append(f"{key}: unknown section")
    seed = data.get("seed", 1234)
    if not isinstance(seed, int):
        problems.append("seed: must be an integer")
    # cross-section invariants
    audio, vocoder = sections.get("audio"), sections.get("vocoder")
    training, disc = sections.get("training"), sections.get("discriminator")
    if audio and vocoder and vocoder.hop_length != audio.hop_length:
        problems.append(
            f"vocoder upsampling ({vocoder.hop_length} samples/frame: product of "
            f"upsample_factors x sub_bands) must equal audio.hop_length ({audio.hop_length})"
        )
    if audio and training and disc:
        segment_samples = training.segment_frames * audio.hop_length
        needed = max(
            audio.win_length,
            disc.min_waveform_length,
            max(win for _, _, win in training.stft_resolutions),
        )
        if segment_samples < needed:
            problems.append(
                f"training.segment_frames x hop ({segment_samples} samples) is shorter "
                f"than the largest analysis window in use ({needed} samples)"
            )
    if problems:
        raise ConfigError(problems)
    return Config(seed=seed, **sections)


def config_to_dict(config):
    def unfreeze(obj):
        if dataclasses.is_dataclass(obj):
            return {f.name: unfreeze(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
        if isinstance(obj, tuple):
            return [unfreeze(v) for v in obj]
        return obj

    return unfreeze(config)


def resolve_config_path(path):
    """Bare file names are searched in $LITETTS_CONFIG_DIR as a fallback."""
    p = Path(path)
    if p.exists():
        return p
    config_dir = os.environ.get(CONFIG_DIR_ENV)
    if config_dir and not p.is_absolute():
        candidate = Path(config_dir) / p
        if candidate.exists():
            return candidate
    raise ConfigNotFoundError(f"config file not found: {path}")


def load_config(path, overrides=None):
    p = resolve_config_path(path)
    with open(p, encoding="utf-8") as f:
        data = yaml.safe_load(f) or {}
    if overrides:
        for dotted, value in overrides.items():
            node = data
            *parents, leaf = dotted.split(".")
            for part in parents:
                node = node.setdefault(part, {})
            node[leaf] = value
    return config_from_dict(data)


def save_config_snapshot(config, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(config_to_dict(config), f, sort_keys=True)
