"""Strict INI configuration for the command line tools.

Every key has a type and a default; unknown sections or keys are errors.
Individual keys can be overridden with ``section.key=value`` strings.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .errors import ConfigError


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(p) for p in s.replace(",", " ").split())


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(p) for p in s.replace(",", " ").split())


def _opt_str(s: str) -> str | None:
    return s.strip() or None


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    doc: str


SCHEMA: dict[str, dict[str, Key]] = {
    "data": {
        "source": Key(str, "blobs", "blobs (synthetic Gaussian clusters) or idx"),
        "n": Key(int, 3000, "blobs: number of points"),
        "n_classes": Key(int, 3, "blobs: number of classes"),
        "dim": Key(int, 8, "blobs: feature dimension"),
        "spread": Key(float, 1.0, "blobs: within-cluster standard deviation"),
        "center_scale": Key(float, 2.0, "blobs: standard deviation of cluster centers"),
        "images": Key(_opt_str, None, "idx: path to the images file (required for source=idx)"),
        "labels": Key(_opt_str, None, "idx: path to the labels file (required for source=idx)"),
        "private_fraction": Key(float, 0.5, "fraction of rows given to the teacher"),
        "n_pub": Key(int, 1000, "number of public (student) rows"),
        "strip_public_labels": Key(_bool, True, "drop labels from the public split"),
        "allow_overlap": Key(_bool, False, "draw public rows from the whole set, overlapping the private split"),
        "standardize": Key(_bool, True, "standardize features with private-split statistics"),
    },
    "teacher": {
        "hidden": Key(_ints, (64,), "hidden layer widths"),
        "epochs": Key(int, 50, "cross-entropy pretraining epochs"),
        "lr": Key(float, 1e-3, "learning rate"),
        "batch_size": Key(int, 64, "pretraining batch size"),
        "optimizer": Key(str, "adam", "adam or sgd"),
    },
    "train": {
        "mode": Key(str, "joint", "joint (KD + adversarial) or kd_only"),
        "epochs": Key(int, 30, "outer epochs T"),
        "disc_epochs": Key(int, 1, "discriminator epochs per outer epoch T_D"),
        "student_epochs": Key(int, 1, "student epochs per outer epoch T_S"),
        "batch_size": Key(int, 50, "batch size B (q = B / n_pub)"),
        "tau": Key(float, 2.0, "distillation temperature"),
        "alpha": Key(float, 0.85, "distillation weight in [0, 1]"),
        "gumbel_temperature": Key(float, 1.0, "Gumbel-softmax relaxation temperature"),
        "gumbel_anneal": Key(float, 1.0, "per-epoch multiplicative annealing of the relaxation temperature"),
        "gumbel_min_temperature": Key(float, 0.1, "floor for the annealed relaxation temperature"),
        "gumbel_samples": Key(int, 1, "relaxed samples per example per step"),
        "gan_mode": Key(str, "minimax", "minimax or nonsaturating student loss"),
        "tau_sq_scaling": Key(_bool, False, "multiply the distillation loss by tau^2"),
        "condition_on_x": Key(_bool, False, "feed the input features to the discriminator too"),
        "student_hidden": Key(_ints, (32,), "student hidden layer widths"),
        "disc_hidden": Key(_ints, (32,), "discriminator hidden layer widths"),
        "student_optimizer": Key(str, "adam", "adam or sgd"),
        "student_lr": Key(float, 1e-3, "student learning rate"),
        "disc_optimizer": Key(str, "adam", "adam or sgd"),
        "disc_lr": Key(float, 1e-3, "discriminator learning rate"),
        "verbose": Key(_bool, False, "log every epoch"),
    },
    "dp": {
        "clip": Key(float, 1.0, "L2 clip threshold C for per-example distillation vectors"),
        "noise_multiplier": Key(float, 1.1, "noise multiplier m (sigma = m * C)"),
        "delta": Key(float, 1e-5, "target delta"),
    },
    "run": {
        "seed": Key(int, 0, "seed for data, splits, initialization and noise"),
        "out_dir": Key(str, "runs/default", "artifact directory"),
        "teacher_checkpoint": Key(_opt_str, None, "teacher checkpoint path (default: <out_dir>/teacher.json)"),
        "timing": Key(_bool, False, "write wall-clock seconds into metrics.csv (breaks byte-identical reruns)"),
    },
    "sweep": {
        "axis": Key(str, "n_pub", "one of n_pub, m, alpha, epochs"),
        "values": Key(_floats, (), "axis values"),
        "seeds": Key(_ints, (0,), "seeds per cell"),
    },
}

SWEEP_AXES = {
    "n_pub": ("data", "n_pub"),
    "m": ("dp", "noise_multiplier"),
    "alpha": ("train", "alpha"),
    "epochs": ("train", "epochs"),
}


Config = dict[str, dict[str, Any]]


def defaults() -> Config:
    return {sec: {k: spec.default for k, spec in keys.items()} for sec, keys in SCHEMA.items()}


def _set(cfg: Config, section: str, key: str, raw: str) -> None:
    if section not in SCHEMA:
        raise ConfigError(f"unknown config section [{section}]", key=section)
    if key not in SCHEMA[section]:
        raise ConfigError(f"unknown config key {section}.{key}", key=f"{section}.{key}")
    try:
        cfg[section][key] = SCHEMA[section][key].parse(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {section}.{key}: {exc}", key=f"{section}.{key}") from None


def load_config(path=None, overrides=()) -> Config:
    cfg = defaults()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}", key="config")
        parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
        parser.optionxform = str
        try:
            parser.read(p)
        except configparser.Error as exc:
            raise ConfigError(f"unparseable config {p}: {exc}", key="config") from None
        for section in parser.sections():
            for key, raw in parser.items(section):
                _set(cfg, section, key, raw)
    for item in overrides:
        name, sep, raw = item.partition("=")
        section, dot, key = name.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override must look like section.key=value, got {item!r}", key=item)
        _set(cfg, section, key.strip(), raw.strip())
    return cfg


def to_ini(cfg: Config) -> str:
    def fmt(v):
        if isinstance(v, tuple):
            return ", ".join(str(x) for x in v)
        if v is None:
            return ""
        if isinstance(v, bool):
            return "true" if v else "false"
        return str(v)

    lines = []
    for sec, keys in cfg.items():
        lines.append(f"[{sec}]")
        lines += [f"{k} = {fmt(v)}" for k, v in keys.items()]
        lines.append("")
    return "\n".join(lines)


def echo(cfg: Config) -> dict:
    """JSON-friendly copy of the config (tuples become lists)."""
    return {sec: {k: list(v) if isinstance(v, tuple) else v for k, v in keys.items()}
            for sec, keys in cfg.items()}


def reference_markdown() -> str:
    out = ["# Configuration reference", "",
           "Generated by `privkt config-reference`. Unknown sections or keys are errors.", ""]
    for sec, keys in SCHEMA.items():
        out += [f"## [{sec}]", "", "| key | default | description |", "|---|---|---|"]
        for k, spec in keys.items():
            d = spec.default
            if isinstance(d, tuple):
                d = ", ".join(map(str, d))
            out.append(f"| `{k}` | `{d}` | {spec.doc} |")
        out.append("")
    return "\n".join(out)
