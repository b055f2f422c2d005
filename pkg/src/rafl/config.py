"""Experiment configuration: a JSON key tree with full defaults.

Any value can be overridden with ``key.path=value`` strings (values parsed as
JSON when possible, else kept as strings), which is what the CLI's ``--set``
flag feeds in.
"""

from __future__ import annotations

import copy
import json
import os
from pathlib import Path

DEFAULTS: dict = {
    "network": {"name": "desk_cnn", "classes": 10, "image_size": 16},
    "data": {
        "source": "synthetic",  # or "idx"
        "difficulty": 1.0,
        "seed": 1234,
        "idx_images": None,
        "idx_labels": None,
        "test_size": 1000,
        "dse_train_size": 1500,
        "dse_val_size": 1000,
        "partition": "iid",
    },
    "fl": {
        "techniques": ["distreal", "federated_dropout", "heterofl"],
        "devices": 20,
        "per_round": 5,
        "rounds": 200,
        "seeds": [0, 1, 2],
        "samples_per_device": 128,
        "batch_size": 32,
        "lr": 0.05,
        "momentum": 0.9,
        "weight_decay": 1e-4,
        "variability": 4.0,
        "lam": 0.0,
        "fd_grid": 0.01,
        "heterofl_s": 0.7,
        "heterofl_levels": 4,
        "small_nn_grid": 0.05,
        "lut": None,
    },
    "dse": {
        "seed": 0,
        "generations": 20,
        "population": 64,
        "seeds": [0, 1, 2],
        "short_batches": 64,
        "batch_size": 64,
        "lr": 0.005,
        "pretrain_steps": 100,
        "pretrain_lr": 0.005,
        "pretrain_batch_size": 32,
        "distortion": "rotate90",
        "min_gap": 1e-4,
    },
    "output": {"dir": "results"},
}

OUTPUT_ENV = "RAFL_OUTPUT_ROOT"


class ConfigError(ValueError):
    pass


def _merge(base: dict, extra: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        where = f"{path}{k}"
        if k not in base:
            raise ConfigError(f"{where}: unknown key")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"{where}: expected a table")
            out[k] = _merge(base[k], v, where + ".")
        else:
            out[k] = v
    return out


def parse_override(item: str) -> tuple[list[str], object]:
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not key.path=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def load_config(source=None, overrides=()) -> dict:
    """Defaults, then ``source`` (a JSON file path or a dict), then ``overrides``."""
    cfg = copy.deepcopy(DEFAULTS)
    if isinstance(source, dict):
        cfg = _merge(cfg, source)
    elif source is not None:
        with open(source) as f:
            cfg = _merge(cfg, json.load(f))
    for item in overrides:
        keys, value = parse_override(item)
        nested = value
        for k in reversed(keys):
            nested = {k: nested}
        cfg = _merge(cfg, nested)
    validate(cfg)
    return cfg


def validate(cfg: dict):
    def need(cond, where, msg):
        if not cond:
            raise ConfigError(f"{where}: {msg}")

    fl, dse, data = cfg["fl"], cfg["dse"], cfg["data"]
    need(len(fl["seeds"]) > 0, "fl.seeds", "must be non-empty")
    need(fl["lam"] >= 0, "fl.lam", "must be >= 0")
    need(fl["variability"] >= 1, "fl.variability", "must be >= 1")
    need(1 <= fl["per_round"] <= fl["devices"], "fl.per_round", "must lie in [1, fl.devices]")
    need(fl["samples_per_device"] >= fl["batch_size"] > 0, "fl.batch_size",
         "must be positive and at most fl.samples_per_device")
    need(data["source"] in ("synthetic", "idx"), "data.source", "must be 'synthetic' or 'idx'")
    if data["source"] == "idx":
        for key in ("idx_images", "idx_labels"):
            need(data[key] and os.path.exists(data[key]), f"data.{key}", "file not found")
    if fl["lut"] is not None:
        need(os.path.exists(fl["lut"]), "fl.lut", f"file not found: {fl['lut']}")
    need(dse["population"] >= 4 and dse["population"] % 2 == 0, "dse.population", "must be an even number >= 4")
    need(dse["generations"] >= 0, "dse.generations", "must be >= 0")
    need(len(dse["seeds"]) > 0, "dse.seeds", "must be non-empty")


def output_dir(cfg: dict) -> Path:
    """``output.dir``, placed under ``$RAFL_OUTPUT_ROOT`` when that is set."""
    root = os.environ.get(OUTPUT_ENV)
    d = Path(cfg["output"]["dir"])
    return Path(root) / d if root and not d.is_absolute() else d


def dumps(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True)
