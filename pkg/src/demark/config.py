"""Run configuration: a YAML file deep-merged over documented defaults.

Unknown keys are rejected rather than ignored, so a typo like
``train.epcohs`` fails loudly instead of silently training with defaults.
``--set section.key=value`` overrides individual entries; values are
YAML-parsed, so ``--set train.epochs=5`` yields an int.
"""

from __future__ import annotations

import copy
import os
from typing import Any

import yaml

from .errors import ConfigError
from .generator import GeneratorConfig
from .losses import LossWeights
from .trainer import ExtractorConfig, TrainConfig

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "data": {
        "bases": None,            # directory of base images
        "watermarks": None,       # directory of RGBA watermark PNGs
        "out_dir": "dataset",
        "per_watermark": 10,
        "split_ratio": 0.8,
        "scale_range": [0.3, 1.0],
        "opacity_range": [0.3, 1.0],
        "image_side": 256,
        "workers": 1,
    },
    "model": {
        "generator": {
            "depth": 6,
            "base_channels": 64,
            "input_side": 256,
        },
        "discriminator": {
            "kind": "patch",
            "base_channels": 64,
            "n_strided": 3,
        },
    },
    "train": {
        "manifest": None,
        "out_dir": "runs/train",
        "epochs": 20,
        "learning_rate": 2.0e-4,
        "adam_beta1": 0.5,
        "adam_beta2": 0.999,
        "batch_size": 1,
        "loss_config": "l1+perceptual+cgan",
        "alpha": 10.0,
        "beta": 1.0e-4,
        "checkpoint_interval": 0,
        "extractor": {
            "kind": "random",
            "weights_path": None,
            "sha256": None,
        },
    },
    "evaluate": {
        "checkpoint": None,
        "manifest": None,
        "out_dir": "runs/eval",
        "split": "test",
        "quantized": False,
        "identity": False,
    },
    "ablate": {
        "manifest": None,
        "out_dir": "runs/ablate",
        "epochs": None,           # falls back to train.epochs
    },
}


def _merge(base: dict, override: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        dotted = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key: {dotted}")
        if isinstance(base[key], dict) and base[key]:
            if not isinstance(val, dict):
                raise ConfigError(f"{dotted} must be a mapping")
            out[key] = _merge(base[key], val, dotted + ".")
        else:
            out[key] = val
    return out


def _apply_set(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"--set needs KEY=VALUE, got {assignment!r}")
    dotted, raw = assignment.split("=", 1)
    keys = dotted.strip().split(".")
    node = cfg
    for k in keys[:-1]:
        if not isinstance(node, dict) or k not in node:
            raise ConfigError(f"unknown config key: {dotted}")
        node = node[k]
    leaf = keys[-1]
    if not isinstance(node, dict) or leaf not in node:
        raise ConfigError(f"unknown config key: {dotted}")
    try:
        node[leaf] = yaml.safe_load(raw)
    except yaml.YAMLError as e:
        raise ConfigError(f"unparseable --set value {raw!r}: {e}") from e


def load_run_config(path: str | None = None, *,
                    overrides: list[str] | None = None,
                    seed: int | None = None) -> dict:
    """Resolve the effective config: defaults < file < --set < --seed."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        if not os.path.isfile(path):
            raise ConfigError(f"no such config file: {path}")
        try:
            loaded = yaml.safe_load(open(path, encoding="utf-8"))
        except yaml.YAMLError as e:
            raise ConfigError(f"invalid YAML in {path}: {e}") from e
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path} must contain a mapping at top level")
        cfg = _merge(cfg, loaded)
    for assignment in overrides or []:
        _apply_set(cfg, assignment)
    if seed is not None:
        cfg["seed"] = int(seed)
    return cfg


def train_config(cfg: dict) -> TrainConfig:
    """Build the typed train config from a resolved run config."""
    t = cfg["train"]
    m = cfg["model"]
    return TrainConfig(
        seed=int(cfg["seed"]),
        epochs=int(t["epochs"]),
        learning_rate=float(t["learning_rate"]),
        adam_beta1=float(t["adam_beta1"]),
        adam_beta2=float(t["adam_beta2"]),
        batch_size=int(t["batch_size"]),
        loss_config=str(t["loss_config"]),
        weights=LossWeights(alpha=float(t["alpha"]), beta=float(t["beta"])),
        generator=GeneratorConfig(
            depth=int(m["generator"]["depth"]),
            base_channels=int(m["generator"]["base_channels"]),
            input_side=int(m["generator"]["input_side"]),
        ),
        discriminator_kind=str(m["discriminator"]["kind"]),
        disc_base_channels=int(m["discriminator"]["base_channels"]),
        disc_n_strided=int(m["discriminator"]["n_strided"]),
        extractor=ExtractorConfig(
            kind=str(t["extractor"]["kind"]),
            weights_path=t["extractor"]["weights_path"],
            sha256=t["extractor"]["sha256"],
        ),
        checkpoint_interval=int(t["checkpoint_interval"]),
    )


def require(cfg: dict, dotted: str) -> Any:
    """Fetch a config entry that a command cannot run without."""
    node: Any = cfg
    for k in dotted.split("."):
        node = node[k]
    if node is None:
        raise ConfigError(f"config entry {dotted} is required for this command")
    return node
