"""Experiment configuration: one INI-style file, typed against ``DEFAULTS``.

Values are parsed to the type of their default; lists are comma separated.
Dotted overrides (``distill.beta=450``) must name an existing key.
"""
from __future__ import annotations

import configparser
import copy
import os
from dataclasses import replace
from pathlib import Path

from .distill import DistillConfig
from .training import TrainConfig

DATA_ROOT_ENV = "SKKD_DATA_ROOT"
SUBJECTS = [f"A{k:02d}" for k in range(1, 10)]

DEFAULTS: dict[str, dict] = {
    "data": {
        "root": "",
        "train_session": "T",
        "test_session": "E",
        "subject": "A01",
        "subjects": list(SUBJECTS),
        "montage_dir": "",
        "full_montage": "22",
    },
    "prepare": {
        "adapter": "bcic4_2a",
        "source": "",
        "labels_dir": "",
        "window_start": 0.0,
        "window_length": 4.0,
        "fs": 128.0,
        "band_low": 4.0,
        "band_high": 38.0,
        "synthetic_trials": 288,
        "synthetic_classes": 4,
    },
    "train": {
        "epochs": 500,
        "learning_rate": 0.0005,
        "weight_decay": 0.1,
        "batch_size": 128,
        "val_fraction": 0.125,
        "seed": 0,
        "validate_with": "objective",
    },
    "teacher": {
        "architecture": "SCCNet",
        "checkpoint": "",
        "seed": 0,
    },
    "student": {
        "architecture": "SCCNet",
        "montage": "4p",
    },
    "distill": {
        "layer_pairs": ["LF2:LF2", "LF3:LF3"],
        "beta": 450.0,
        "alpha": 0.9,
        "temperature": 4.0,
        "criterion": "cosine",
        "centered": True,
        "centering_scope": "batch",
        "use_logits_loss": False,
    },
    "experiment": {
        "study": "montage_compare",
        "seeds": list(range(10)),
        "pairs": ["SCCNet:SCCNet"],
        "montages": ["4p"],
        "layer_combos": ["LF1", "LF2", "LF3", "LF1+2", "LF2+3", "LF1+2+3"],
        "methods": ["baseline", "sk", "sk_logits", "hkd"],
        "criteria": ["l2", "plv", "dot", "cosine"],
        "centering": [True, False],
        "teacher_subjects": list(SUBJECTS) + ["SI"],
        "elimination_mode": "retrain",
        "elimination_kd": [False, True],
        "significance": 0.05,
    },
}


class ConfigError(ValueError):
    pass


def _parse_scalar(text: str, like, key: str):
    text = text.strip()
    if isinstance(like, bool):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {text!r}")
    if isinstance(like, int):
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {text!r}") from None
    if isinstance(like, float):
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {text!r}") from None
    return text


def parse_value(text: str, default, key: str):
    if isinstance(default, list):
        items = [t for t in (s.strip() for s in text.replace("\n", ",").split(",")) if t]
        like = default[0] if default else ""
        return [_parse_scalar(t, like, key) for t in items]
    return _parse_scalar(text, default, key)


def _format(value) -> str:
    if isinstance(value, list):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


class Config:
    """Nested ``section -> key -> value`` mapping with typed access."""

    def __init__(self, values: dict | None = None, path: Path | None = None):
        self.values = copy.deepcopy(DEFAULTS if values is None else values)
        self.path = path

    @classmethod
    def load(cls, path: str | Path | None = None, overrides=()) -> "Config":
        cfg = cls()
        if path is not None:
            path = Path(path)
            if not path.is_file():
                raise ConfigError(f"config file not found: {path}")
            parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
            parser.optionxform = str
            try:
                parser.read(path, encoding="utf-8")
            except configparser.Error as exc:
                raise ConfigError(f"{path}: {exc}") from None
            for section in parser.sections():
                for key, text in parser.items(section):
                    cfg.set(f"{section}.{key}", text)
            cfg.path = path
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r} must look like section.key=value")
            key, text = item.split("=", 1)
            cfg.set(key.strip(), text)
        return cfg

    def set(self, dotted: str, text: str) -> None:
        if dotted.count(".") != 1:
            raise ConfigError(f"unknown config key {dotted!r} (expected section.key)")
        section, key = dotted.split(".")
        if section not in DEFAULTS or key not in DEFAULTS[section]:
            raise ConfigError(f"unknown config key {dotted!r}")
        self.values[section][key] = parse_value(text, DEFAULTS[section][key], dotted)

    def __getitem__(self, dotted: str):
        section, key = dotted.split(".")
        return self.values[section][key]

    def dumps(self) -> str:
        out = []
        for section, entries in self.values.items():
            out.append(f"[{section}]")
            out.extend(f"{k} = {_format(v)}" for k, v in entries.items())
            out.append("")
        return "\n".join(out)

    # -- derived objects

    @property
    def data_root(self) -> Path:
        root = self["data.root"] or os.environ.get(DATA_ROOT_ENV, "")
        if not root:
            raise ConfigError(f"data.root is empty and ${DATA_ROOT_ENV} is not set")
        return Path(root)

    def distill_config(self) -> DistillConfig:
        pairs = []
        for item in self["distill.layer_pairs"]:
            t, _, s = item.partition(":")
            pairs.append((t, s or t))
        try:
            return DistillConfig(
                layer_pairs=tuple(pairs),
                beta=self["distill.beta"],
                alpha=self["distill.alpha"],
                temperature=self["distill.temperature"],
                criterion=self["distill.criterion"],
                centered=self["distill.centered"],
                use_logits_loss=self["distill.use_logits_loss"],
                centering_scope=self["distill.centering_scope"],
            )
        except ValueError as exc:
            raise ConfigError(f"distill: {exc}") from None

    def train_config(self, architecture: str | None = None, montage: str | None = None,
                     distill: DistillConfig | None = None, seed: int | None = None) -> TrainConfig:
        try:
            return TrainConfig(
                epochs=self["train.epochs"],
                learning_rate=self["train.learning_rate"],
                weight_decay=self["train.weight_decay"],
                batch_size=self["train.batch_size"],
                val_fraction=self["train.val_fraction"],
                seed=self["train.seed"] if seed is None else seed,
                architecture=architecture or self["student.architecture"],
                montage=montage or self["student.montage"],
                distill=distill,
                validate_with=self["train.validate_with"],
            )
        except ValueError as exc:
            raise ConfigError(f"train: {exc}") from None

    def teacher_config(self, architecture: str | None = None, seed: int | None = None) -> TrainConfig:
        cfg = self.train_config(architecture or self["teacher.architecture"], self["data.full_montage"])
        return replace(cfg, seed=self["teacher.seed"] if seed is None else seed)
