"""Experiment configuration: nested dataclasses, JSON round-trip, dotted CLI
overrides, validation with field-naming errors, and an order-insensitive hash.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration (exit code 2)."""


VARIANTS = ("full", "only_z", "only_ci", "only_ct", "wo_z", "wo_ci", "wo_ct")


@dataclass
class WorldConfig:
    seed: int = 11
    holdout_fraction: float = 0.2   # share of the scene space reserved for test items


@dataclass
class DataConfig:
    train_items: int = 4096
    test_items: int = 256
    train_repeats: int = 3
    max_test_repeats: int = 3
    test_repeat_probs: tuple = (0.1, 0.2, 0.7)   # skewed toward full repeats
    noise_seed: int = 17


@dataclass
class BrainConfig:
    seed: int = 23
    sigma_scale: float = 1.0        # multiplier on the calibrated noise level
    target_r2: float = 0.9
    nonlinear: bool = False


@dataclass
class RidgeConfig:
    grid: tuple = tuple(float(x) for x in (1e-4, 1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3, 1e4))
    folds: int = 5
    seed: int = 5
    lambda_fixed: float | None = None   # skip CV when set


@dataclass
class DiffusionConfig:
    T: int = 100
    beta_1: float = 1e-4
    beta_T: float = 0.02
    steps: int = 50
    strength: float = 0.75
    mix_image: float = 0.6
    mix_text: float = 0.9
    epochs: int = 16
    batch_size: int = 16
    lr: float = 5e-3
    null_rate: float = 0.25
    train_mix: float | None = None   # None: train at the pipeline's inference mix
    mix_mode: str = "output"
    seed: int = 42


@dataclass
class EvalConfig:
    n_way: int = 2
    trials: int = 100
    seed: int = 7
    similarity: str = "pearson"


@dataclass
class ExperimentConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    data: DataConfig = field(default_factory=DataConfig)
    brain: BrainConfig = field(default_factory=BrainConfig)
    ridge: RidgeConfig = field(default_factory=RidgeConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    variant: str = "full"
    roi_gains: tuple = (1.0, 2.0, 3.0)
    output_dir: str = "runs/default"


def to_dict(cfg) -> dict:
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if dataclasses.is_dataclass(v):
            out[f.name] = to_dict(v)
        elif isinstance(v, tuple):
            out[f.name] = list(v)
        else:
            out[f.name] = v
    return out


def from_dict(data: dict) -> ExperimentConfig:
    cfg = ExperimentConfig()
    _apply_dict(cfg, data, prefix="")
    return cfg


def _apply_dict(obj, data: dict, prefix: str):
    known = {f.name: f for f in fields(obj)}
    for key, value in data.items():
        dotted = f"{prefix}{key}"
        if key not in known:
            raise ConfigError(f"unknown config field {dotted!r}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError(f"config field {dotted!r} expects an object")
            _apply_dict(current, value, prefix=f"{dotted}.")
        elif isinstance(current, tuple):
            setattr(obj, key, tuple(value))
        else:
            setattr(obj, key, value)


def apply_override(cfg: ExperimentConfig, dotted: str, raw: str):
    """Set a possibly nested field from a CLI string, coercing to its type."""
    parts = dotted.split(".")
    obj = cfg
    for part in parts[:-1]:
        if not dataclasses.is_dataclass(obj) or part not in {f.name for f in fields(obj)}:
            raise ConfigError(f"unknown config field {dotted!r}")
        obj = getattr(obj, part)
    leaf = parts[-1]
    names = {f.name for f in fields(obj)} if dataclasses.is_dataclass(obj) else set()
    if leaf not in names:
        raise ConfigError(f"unknown config field {dotted!r}")
    current = getattr(obj, leaf)
    try:
        if isinstance(current, bool):
            value = raw.lower() in ("1", "true", "yes")
        elif isinstance(current, int) and not isinstance(current, bool):
            value = int(raw)
        elif isinstance(current, float):
            value = float(raw)
        elif isinstance(current, tuple):
            value = tuple(json.loads(raw))
        elif current is None:
            value = None if raw.lower() == "none" else float(raw)
        else:
            value = raw
    except (ValueError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot parse value {raw!r} for {dotted!r}: {err}") from err
    setattr(obj, leaf, value)


def validate(cfg: ExperimentConfig):
    def check_unit(name, value):
        if not 0.0 <= value <= 1.0:
            raise ConfigError(f"{name} must be in [0, 1], got {value}")

    check_unit("diffusion.mix_image", cfg.diffusion.mix_image)
    check_unit("diffusion.mix_text", cfg.diffusion.mix_text)
    check_unit("diffusion.strength", cfg.diffusion.strength)
    check_unit("diffusion.null_rate", cfg.diffusion.null_rate)
    if cfg.diffusion.train_mix is not None:
        check_unit("diffusion.train_mix", cfg.diffusion.train_mix)
    check_unit("world.holdout_fraction", cfg.world.holdout_fraction)
    if cfg.variant not in VARIANTS:
        raise ConfigError(f"variant must be one of {VARIANTS}, got {cfg.variant!r}")
    if cfg.diffusion.mix_mode not in ("output", "scores"):
        raise ConfigError(f"diffusion.mix_mode must be 'output' or 'scores', got {cfg.diffusion.mix_mode!r}")
    if cfg.diffusion.steps < 1 and cfg.diffusion.strength > 0:
        raise ConfigError("diffusion.steps must be >= 1 when diffusion.strength > 0")
    if cfg.data.train_items < 64:
        raise ConfigError("data.train_items must be >= 64 (the image codec needs 32+ images)")
    if cfg.data.test_items < cfg.eval.n_way:
        raise ConfigError("data.test_items must be >= eval.n_way")
    if cfg.data.max_test_repeats < 1 or cfg.data.train_repeats < 1:
        raise ConfigError("data repeat counts must be >= 1")
    if len(cfg.data.test_repeat_probs) != cfg.data.max_test_repeats:
        raise ConfigError("data.test_repeat_probs must list one probability per repeat count")
    if abs(sum(cfg.data.test_repeat_probs) - 1.0) > 1e-9:
        raise ConfigError("data.test_repeat_probs must sum to 1")
    if cfg.brain.sigma_scale < 0:
        raise ConfigError("brain.sigma_scale must be >= 0")
    if not cfg.ridge.grid and cfg.ridge.lambda_fixed is None:
        raise ConfigError("ridge.grid must be nonempty unless ridge.lambda_fixed is set")


def config_hash(cfg: ExperimentConfig) -> str:
    canon = json.dumps(to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def load_config(path: str | Path | None, overrides: list[tuple[str, str]] | None = None) -> ExperimentConfig:
    if path is None:
        cfg = ExperimentConfig()
    else:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read config {path}: {err}") from err
        cfg = from_dict(data)
    for dotted, raw in overrides or []:
        apply_override(cfg, dotted, raw)
    validate(cfg)
    return cfg
