"""Flat ``key = value`` experiment configuration."""

import dataclasses
import os
import zlib
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "OUTPUT_ROOT_ENV",
    "MASK_MODES",
    "parse_config_text",
    "load_config",
    "stage_seed",
]

OUTPUT_ROOT_ENV = "FREQMASK_OUTPUT"
MASK_MODES = ("equispaced", "variable_density", "learned_loupe", "learned_fep")


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


@dataclass
class ExperimentConfig:
    """Every knob of a pipeline run; all fields have defaults.

    ``center_fraction`` of ``-1`` picks the default for the acceleration rate.
    An empty ``data_dir`` synthesizes phantoms. ``upstream`` names another
    run directory whose stage outputs are used when this run lacks them.
    """

    seed: int = 0
    output_dir: str = ""
    upstream: str = ""
    # data
    data_dir: str = ""
    n_subjects: int = 50
    size: int = 32
    slices_per_subject: int = 2
    misalignment_sigma: float = 0.0
    split_ratios: str = "7,1,2"
    # acquisition
    rate: int = 4
    center_fraction: float = -1.0
    mask_mode: str = "learned_fep"
    noise_sigma: float = 0.0
    # network
    ablation: str = "full"
    channels: int = 32
    iterations: int = 4
    prox_blocks: int = 12
    init_blocks: int = 10
    # loss
    loss_kind: str = "combined"
    lambda1: float = 0.8
    lambda2: float = 0.2
    loss_alpha: float = 0.2
    loss_beta: float = 0.8
    blur_sigma: float = 1.5
    # optimizer
    lr: float = 1e-4
    mask_lr: float = -1.0
    batch_size: int = 2
    epochs: int = 30
    finetune_epochs: int = 30
    clip_norm: float = 1.0
    # diffusion prior
    diff_lr: float = 2e-5
    diff_epochs: int = 300
    diff_batch_size: int = 16
    diff_width: int = 32
    diff_timesteps: int = 1000
    diff_ema: float = 0.999
    sample_steps: int = 0
    # evaluation
    eval_net: str = "trained"
    compare_masks: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.mask_mode not in MASK_MODES:
            raise ConfigError(f"mask_mode must be one of {MASK_MODES}, got {self.mask_mode!r}")
        if self.eval_net not in ("trained", "identity", "zero_filled"):
            raise ConfigError(f"eval_net must be trained, identity or zero_filled, got {self.eval_net!r}")
        if self.rate < 1:
            raise ConfigError("rate must be at least 1")
        for name in ("lr", "diff_lr"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("n_subjects", "size", "slices_per_subject", "batch_size", "diff_batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        self.ratios()

    def ratios(self):
        try:
            r = tuple(float(v) for v in self.split_ratios.split(","))
        except ValueError as exc:
            raise ConfigError(f"split_ratios must be three numbers, got {self.split_ratios!r}") from exc
        if len(r) != 3 or min(r) < 0 or sum(r) <= 0:
            raise ConfigError(f"split_ratios must be three non-negative numbers, got {self.split_ratios!r}")
        return r

    def resolved_output(self):
        if self.output_dir:
            return Path(self.output_dir)
        return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / "default"

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_text(self):
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))


def _coerce(name, raw, kind):
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot read {raw!r} as {kind.__name__}") from exc
    return raw


def parse_config_text(text, base=None, overrides=None):
    """Build a config from ``key = value`` lines; ``overrides`` win.

    Blank lines and ``#`` comments are skipped. Unknown keys, duplicate keys
    and malformed lines raise :class:`ConfigError`.
    """
    types = {f.name: (int if f.type in (int, "int") else float if f.type in (float, "float") else str)
             for f in fields(ExperimentConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _coerce(key, raw, types[key])
    for key, raw in (overrides or {}).items():
        if key not in types:
            raise ConfigError(f"unknown override {key!r}")
        values[key] = _coerce(key, raw, types[key]) if isinstance(raw, str) else raw
    start = dataclasses.asdict(base) if base is not None else {}
    start.update(values)
    return ExperimentConfig(**start)


def load_config(path: Optional[str] = None, overrides=None):
    text = ""
    if path:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} not found")
        text = p.read_text()
    return parse_config_text(text, overrides=overrides)


def stage_seed(root, stage):
    """Independent 32-bit seed for ``stage`` derived from the root seed."""
    ss = np.random.SeedSequence([int(root) & 0xFFFFFFFF, zlib.crc32(stage.encode())])
    return int(ss.generate_state(1)[0] & 0x7FFFFFFF)
