"""Declarative run configuration: a flat INI file with data/model/train/eval
sections.  Unknown keys are rejected; CLI flags override file values."""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

from .training import TrainConfig

__all__ = ["DataConfig", "ModelConfig", "EvalConfig", "RunConfig", "load_config"]


@dataclass
class DataConfig:
    root: str = "dataset"
    toy_videos: int = 4
    toy_length: int = 20
    toy_height: int = 64
    toy_width: int = 64
    toy_motion: str = "translate dx=1 dy=0.5"
    n_accumulate: int = 7
    seed: int = 0


@dataclass
class ModelConfig:
    ppn_channels: int = 32
    num_nonlocal: int = 3
    nonlocal_enabled: bool = True
    abdn_preset: str = "light"
    abdn_depth: int = 3
    abdn_width: int | None = None
    fan_width: int = 32
    flow_backend: str = "builtin-pyramid"
    slot_companion: str = "deblurred"


@dataclass
class EvalConfig:
    dataset: str = ""
    modes: str = "full"
    quantize: bool = False
    out: str = "reports"


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return {
            "data": asdict(self.data),
            "model": asdict(self.model),
            "train": asdict(self.train),
            "eval": asdict(self.eval),
        }

    def fingerprint(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


_SECTIONS = {
    "data": DataConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
}


def _coerce(value: str, target):
    if target is bool:
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if target is tuple:
        return tuple(float(v) for v in value.split(","))
    return target(value)


def load_config(path: Path | str | None) -> RunConfig:
    cfg = RunConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise FileNotFoundError(f"config file not found: {path}")
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ValueError(f"unknown config section [{section}]")
        target = getattr(cfg, section)
        fields = {f: type(v) if v is not None else str for f, v in asdict(target).items()}
        for key, raw in parser.items(section):
            if key not in fields:
                raise ValueError(f"unknown key {key!r} in section [{section}]")
            current = getattr(target, key)
            ftype = type(current) if current is not None else None
            if ftype in (type(None), None):
                # abdn_width is the only optional int
                setattr(target, key, int(raw))
            else:
                setattr(target, key, _coerce(raw, ftype))
    return cfg
