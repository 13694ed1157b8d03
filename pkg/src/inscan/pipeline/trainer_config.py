"""Hyperparameter files handed to an external trainer."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Literal

_TASKS = {"detection": "detect", "classification": "classify"}
_KEYS = ("task", "imgsz", "batch", "optimizer", "lr0", "dropout", "epochs", "patience")


@dataclass(frozen=True)
class TrainingConfig:
    phase: Literal["detection", "classification"]
    image_size: int
    batch_size: int
    optimizer: str = "SGD"
    lr0: float = 0.01
    dropout: float = 0.2
    epochs: int = 100
    patience: int = 25

    def __post_init__(self):
        if self.phase not in _TASKS:
            raise ValueError(f"unknown phase {self.phase!r}")
        if self.image_size < 1 or self.batch_size < 1 or self.epochs < 1 or self.patience < 0:
            raise ValueError("image_size, batch_size and epochs must be positive; patience non-negative")
        if self.lr0 <= 0 or not (0.0 <= self.dropout < 1.0):
            raise ValueError("lr0 must be positive and dropout in [0, 1)")

    @classmethod
    def detection(cls) -> TrainingConfig:
        return cls("detection", image_size=4800, batch_size=16, epochs=100, patience=25)

    @classmethod
    def classification(cls) -> TrainingConfig:
        return cls("classification", image_size=320, batch_size=2048, epochs=300, patience=50)


def emit_training_config(cfg: TrainingConfig) -> str:
    values = (
        _TASKS[cfg.phase], cfg.image_size, cfg.batch_size, cfg.optimizer, cfg.lr0, cfg.dropout, cfg.epochs, cfg.patience,
    )
    return "".join(f"{k}={v}\n" for k, v in zip(_KEYS, values))


def parse_training_config(text: str) -> TrainingConfig:
    kv = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"not a key=value line: {line!r}")
        kv[key.strip()] = value.strip()
    missing = [k for k in _KEYS if k not in kv]
    if missing:
        raise ValueError(f"missing keys: {missing}")
    phase = {v: k for k, v in _TASKS.items()}.get(kv["task"])
    if phase is None:
        raise ValueError(f"unknown task {kv['task']!r}")
    return TrainingConfig(
        phase=phase,
        image_size=int(kv["imgsz"]),
        batch_size=int(kv["batch"]),
        optimizer=kv["optimizer"],
        lr0=float(kv["lr0"]),
        dropout=float(kv["dropout"]),
        epochs=int(kv["epochs"]),
        patience=int(kv["patience"]),
    )


def write_training_config(cfg: TrainingConfig, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(emit_training_config(cfg))
    return path
