"""Turn a config tree into datasets, networks and run settings."""

from __future__ import annotations

import numpy as np

from . import lut as lutmod
from .data import Dataset, distort, load_idx, synthesize
from .dse import DSESettings, FitnessContext
from .fl import Environment, FLConfig, small_network
from .networks import build
from .resources import calibrate_range


def network(cfg: dict, **overrides):
    net = dict(cfg["network"])
    name = net.pop("name")
    if name == "femnist_cnn":
        net.pop("image_size", None)
    net.update(overrides)
    return build(name, **net)


def fl_settings(cfg: dict) -> FLConfig:
    fl = {k: v for k, v in cfg["fl"].items() if k != "lut"}
    fl["partition"] = cfg["data"]["partition"]
    return FLConfig(**fl)


def dse_settings(cfg: dict) -> DSESettings:
    d = {k: v for k, v in cfg["dse"].items() if k not in ("seed", "generations", "population")}
    d["seeds"] = tuple(d["seeds"])
    return DSESettings(generations=cfg["dse"]["generations"], population=cfg["dse"]["population"], **d)


def splits(cfg: dict) -> dict[str, Dataset]:
    """Disjoint FL-train / test / DSE-train / DSE-val sets carved from one source."""
    data, fl = cfg["data"], cfg["fl"]
    sizes = {
        "train": fl["devices"] * fl["samples_per_device"],
        "test": data["test_size"],
        "dse_train": data["dse_train_size"],
        "dse_val": data["dse_val_size"],
    }
    total = sum(sizes.values())
    if data["source"] == "synthetic":
        classes = cfg["network"]["classes"]
        full = synthesize(classes, -(-total // classes), cfg["network"]["image_size"], data["difficulty"], data["seed"])
    else:
        full = load_idx(data["idx_images"], data["idx_labels"], cfg["network"]["classes"])
    if len(full) < total:
        raise ValueError(f"data: need {total} samples for the configured splits, source has {len(full)}")
    perm = np.random.default_rng(data["seed"]).permutation(len(full))
    out, start = {}, 0
    for name, n in sizes.items():
        out[name] = full.subset(np.sort(perm[start:start + n]))
        start += n
    return out


def environment(cfg: dict, parts: dict | None = None, lut=None) -> Environment:
    parts = parts or splits(cfg)
    spec = network(cfg)
    fl = fl_settings(cfg)
    low, high = calibrate_range(spec, fl.variability, fl.local_batches, fl.round_duration)
    small = None
    if "small_nn" in fl.techniques:
        budget = low * fl.round_duration / fl.local_batches
        small = small_network(lambda **kw: network(cfg, **kw), budget, fl.small_nn_grid)
    if lut is None and cfg["fl"]["lut"] is not None:
        lut = lutmod.load(cfg["fl"]["lut"], spec)
    return Environment(spec, parts["train"], parts["test"], low, high, lut, small)


def fitness_context(cfg: dict, parts: dict | None = None) -> FitnessContext:
    parts = parts or splits(cfg)
    settings = dse_settings(cfg)
    distorted = distort(parts["dse_train"], settings.distortion)
    return FitnessContext.build(network(cfg), parts["dse_train"], parts["dse_val"], distorted, settings)
