"""JSON config files for the CLI.

One file carries up to four sections: `window`, `model`, `train`, `synth`.
Missing sections and fields fall back to the reference defaults. The model
section accepts either a preset name or a full stage specification:

    {
      "window": {"window_len_us": 500000, "overlap_us": 250000,
                 "subwindow_len_us": 125000, "num_points": 1024,
                 "min_events": 32},
      "model": {"preset": "tt-ref-v1", "num_classes": 4, "rank": 8},
      "train": {"batch_size": 16, "epochs": 50, "lr0": 0.1, "seed": 0},
      "synth": {"preset": "default-actions", "streams_per_class": 50}
    }
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

from ttpc.errors import ConfigError
from ttpc.events.stream import WindowConfig
from ttpc.events.synth import (
    MotionSpec,
    SynthSpec,
    default_actions_spec,
    speed_probe_spec,
)
from ttpc.harness.train import TrainConfig
from ttpc.model import ModelConfig, StageConfig, reference_config, tiny_config

MODEL_PRESETS = ("tt-ref-v1", "tt-tiny-v1")
SYNTH_PRESETS = ("default-actions", "speed-probe")


def _apply_fields(obj, section: dict, name: str) -> None:
    for key, value in section.items():
        if not hasattr(obj, key):
            raise ConfigError(f"unknown {name} field {key!r}")
        setattr(obj, key, value)


def load_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: no such config file")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = set(raw) - {"window", "model", "train", "synth"}
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
    return raw


def window_config(raw: dict) -> WindowConfig:
    cfg = WindowConfig()
    _apply_fields(cfg, raw.get("window", {}), "window")
    cfg.validate()
    return cfg


def model_config(raw: dict, num_classes: Optional[int] = None) -> ModelConfig:
    section = dict(raw.get("model", {}))
    preset = section.pop("preset", "tt-ref-v1")
    classes = section.pop("num_classes", num_classes)
    if classes is None:
        raise ConfigError("model.num_classes is required (or inferred from data)")
    if preset == "tt-ref-v1":
        cfg = reference_config(num_classes=int(classes))
    elif preset == "tt-tiny-v1":
        cfg = tiny_config(num_classes=int(classes))
    else:
        raise ConfigError(f"unknown model preset {preset!r}; pick from {MODEL_PRESETS}")
    stages = section.pop("stages", None)
    if stages is not None:
        cfg.stages = [StageConfig(**s) for s in stages]
    _apply_fields(cfg, section, "model")
    if "classifier_dims" not in section:
        cfg.classifier_dims = list(cfg.classifier_dims[:-1]) + [int(classes)]
    cfg.num_classes = int(classes)
    cfg.validate()
    return cfg


def train_config(raw: dict, seed: Optional[int] = None) -> TrainConfig:
    cfg = TrainConfig()
    _apply_fields(cfg, raw.get("train", {}), "train")
    if seed is not None:
        cfg.seed = seed
    cfg.validate()
    return cfg


def synth_spec(raw: dict) -> SynthSpec:
    section = dict(raw.get("synth", {}))
    preset = section.pop("preset", "default-actions")
    classes = section.pop("classes", None)
    if preset == "default-actions":
        spec = default_actions_spec()
    elif preset == "speed-probe":
        spec = speed_probe_spec()
    else:
        raise ConfigError(f"unknown synth preset {preset!r}; pick from {SYNTH_PRESETS}")
    if classes is not None:
        spec.classes = [
            MotionSpec(
                name=c["name"],
                kind=tuple(c["kind"]) if isinstance(c.get("kind"), list) else c.get("kind", "sweep"),
                speeds=tuple(c.get("speeds", (1.0,))),
                region=_region(c.get("region")),
            )
            for c in classes
        ]
    _apply_fields(spec, section, "synth")
    spec.validate()
    return spec


def _region(value):
    if value is None:
        return MotionSpec.__dataclass_fields__["region"].default
    if isinstance(value[0], list):
        return tuple(tuple(r) for r in value)
    return tuple(value)
