"""Unified run configuration: one JSON document (same text format as the
dataset manifest) merged with command-line overrides.

Defaults are the reference training recipe: lr 1e-4 with weight decay 1e-4
annealed to 1e-5, 200 epochs at batch 64, K=8 subgraph tokens, d=384 with 8
heads over 2 layers, alpha=1.3, tau=2.0, and the sigmoid-scheduled
consistency weight (max 0.2, center at 1/4 of the steps, slope 0.001).
Unknown keys are rejected so typos cannot silently fall back to defaults.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import InvalidValue, ParseError, UnknownKey
from .losses import LossWeights
from .model import ModelConfig
from .train import TrainConfig

MODEL_DEFAULTS = {
    "n": None,  # taken from the dataset unless pinned here
    "d": 384,
    "heads": 8,
    "layers": 2,
    "k": 8,
    "dropout": 0.1,
    "class_count": 2,
    "ffn_mult": 4,
}

TRAIN_DEFAULTS = {
    "epochs": 200,
    "batch_size": 64,
    "lr": 1e-4,
    "weight_decay": 1e-4,
    "lr_min": 1e-5,
    "adam_beta1": 0.9,
    "adam_beta2": 0.999,
    "adam_eps": 1e-8,
    "early_stop_patience": 30,
    "early_stop_metric": "auc",
    "grad_clip_norm": None,
    "mixup_enabled": True,
    "mixup_alpha": 1.0,
}

LOSS_DEFAULTS = {
    "alpha": 1.3,
    "beta_max": 0.2,
    "beta_center_fraction": 0.25,
    "beta_slope": 0.001,
    "tau": 2.0,
}

TOP_LEVEL_DEFAULTS = {
    "seed": 0,
    "data": None,
    "synth": None,
    "out": None,
    "threads": 1,
    "folds": 5,
    "val_fraction": 0.25,
}

_SECTIONS = {"model": MODEL_DEFAULTS, "train": TRAIN_DEFAULTS, "loss": LOSS_DEFAULTS}


@dataclass
class RunConfig:
    model: dict
    train: dict
    loss: dict
    seed: int
    data: str | None
    synth: str | None
    out: str | None
    threads: int
    folds: int
    val_fraction: float

    def model_config(self, n_from_data: int) -> ModelConfig:
        fields = dict(self.model)
        pinned = fields.pop("n")
        if pinned is not None and pinned != n_from_data:
            raise InvalidValue("model.n", f"config pins n={pinned}, dataset has n={n_from_data}")
        try:
            return ModelConfig(n=n_from_data, **fields)
        except ValueError as exc:
            raise InvalidValue("model", str(exc)) from exc

    def train_config(self) -> TrainConfig:
        try:
            return TrainConfig(seed=self.seed, **self.train)
        except ValueError as exc:
            raise InvalidValue("train", str(exc)) from exc

    def loss_weights(self) -> LossWeights:
        try:
            return LossWeights(**self.loss)
        except ValueError as exc:
            raise InvalidValue("loss", str(exc)) from exc

    def to_dict(self) -> dict:
        return {
            "model": dict(self.model),
            "train": dict(self.train),
            "loss": dict(self.loss),
            "seed": self.seed,
            "data": self.data,
            "synth": self.synth,
            "out": self.out,
            "threads": self.threads,
            "folds": self.folds,
            "val_fraction": self.val_fraction,
        }


def _check_type(path: str, value, default):
    """Light type policing against the default's type; None stays permissive."""
    if value is None or default is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise InvalidValue(path, f"expected a boolean, got {value!r}")
        return value
    if isinstance(default, (int, float)):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InvalidValue(path, f"expected a number, got {value!r}")
        return value
    if isinstance(default, str) and not isinstance(value, str):
        raise InvalidValue(path, f"expected a string, got {value!r}")
    return value


def _merge_document(effective: dict, doc: dict) -> None:
    if not isinstance(doc, dict):
        raise ParseError("config document must be a JSON object")
    for key, value in doc.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise InvalidValue(key, "expected an object")
            for sub_key, sub_value in value.items():
                if sub_key not in _SECTIONS[key]:
                    raise UnknownKey(f"{key}.{sub_key}")
                effective[key][sub_key] = _check_type(
                    f"{key}.{sub_key}", sub_value, _SECTIONS[key][sub_key]
                )
        elif key in TOP_LEVEL_DEFAULTS:
            effective[key] = _check_type(key, value, TOP_LEVEL_DEFAULTS[key])
        else:
            raise UnknownKey(key)


def parse_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults <- config file <- flag overrides (dotted keys), in that order."""
    effective: dict = {
        "model": dict(MODEL_DEFAULTS),
        "train": dict(TRAIN_DEFAULTS),
        "loss": dict(LOSS_DEFAULTS),
        **TOP_LEVEL_DEFAULTS,
    }
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ParseError(f"config file not found: {path}")
        text = path.read_text().strip()
        if text:
            try:
                doc = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}: {exc}") from exc
            _merge_document(effective, doc)
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        if "." in dotted:
            section, sub_key = dotted.split(".", 1)
            if section not in _SECTIONS or sub_key not in _SECTIONS[section]:
                raise UnknownKey(dotted)
            effective[section][sub_key] = _check_type(
                dotted, value, _SECTIONS[section][sub_key]
            )
        else:
            if dotted not in TOP_LEVEL_DEFAULTS:
                raise UnknownKey(dotted)
            effective[dotted] = _check_type(dotted, value, TOP_LEVEL_DEFAULTS[dotted])
    return RunConfig(
        model=effective["model"],
        train=effective["train"],
        loss=effective["loss"],
        seed=int(effective["seed"]),
        data=effective["data"],
        synth=effective["synth"],
        out=effective["out"],
        threads=int(effective["threads"]),
        folds=int(effective["folds"]),
        val_fraction=float(effective["val_fraction"]),
    )
