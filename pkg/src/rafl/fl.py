"""Synchronous federated-learning simulation with resource-limited devices.

Techniques:

``distreal``
    Each device picks a dropout vector from the Pareto LUT before every
    mini-batch, based on its current resource level, and reports the sum of
    the picked entries' expected forward MACs.  The server averages updates
    weighted by those sums.
``federated_dropout``
    The server picks one uniform rate per device at round start (smallest
    rate on a grid that fits the round-start level) and one fixed filter mask
    for the whole round.
``heterofl``
    The server assigns the widest prefix sub-network ``s**(p-1)`` that fits
    the round-start level.
``fedavg_full``
    Every device trains the full model and is assumed to have the resources.
``small_nn``
    FedAvg on a narrower network whose full training fits the weakest device.

Time is in rounds.  A mini-batch runs at the level the device has when the
mini-batch starts; a device still busy at the end of the round is a
straggler (except ``distreal``, which never gets discarded).
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .data import Dataset, partition
from .lut import ParetoLUT, lookup
from .macs import network_expected_macs, realized_macs, training_macs
from .resources import ResourceTrace, device_traces, level_at

log = logging.getLogger(__name__)

TECHNIQUES = ("distreal", "federated_dropout", "heterofl", "fedavg_full", "small_nn")
_EPS = 1e-9


@dataclass
class RoundUpdate:
    device: int
    delta: dict[str, np.ndarray] | None
    c: float
    straggler: bool = False
    trainable: dict[str, np.ndarray] | None = None  # sub-model baselines only
    overrun: bool = False


@dataclass
class DeviceState:
    id: int
    indices: np.ndarray
    trace: ResourceTrace
    seed: int


@dataclass
class FLConfig:
    techniques: tuple[str, ...] = ("distreal", "federated_dropout", "heterofl")
    devices: int = 20
    per_round: int = 5
    rounds: int = 200
    seeds: tuple[int, ...] = (0, 1, 2)
    samples_per_device: int = 128
    batch_size: int = 32
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    variability: float = 4.0
    lam: float = 0.0
    round_duration: float = 1.0
    partition: str = "iid"
    fd_grid: float = 0.01
    heterofl_s: float = 0.7
    heterofl_levels: int = 4
    small_nn_grid: float = 0.05

    def __post_init__(self):
        self.techniques = tuple(self.techniques)
        self.seeds = tuple(self.seeds)
        bad = [t for t in self.techniques if t not in TECHNIQUES]
        if bad:
            raise ValueError(f"unknown techniques {bad}; choose from {TECHNIQUES}")
        if not self.seeds:
            raise ValueError("need at least one seed")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if not 1 <= self.per_round <= self.devices:
            raise ValueError("per_round must lie in [1, devices]")

    @property
    def local_batches(self) -> int:
        return self.samples_per_device // self.batch_size

    def to_dict(self) -> dict:
        d = asdict(self)
        d["techniques"] = list(self.techniques)
        d["seeds"] = list(self.seeds)
        return d


# ---------------------------------------------------------------------------
# helpers


def _rng(*key) -> np.random.Generator:
    ints = []
    for k in key:
        ints.extend(k.encode() if isinstance(k, str) else [int(k)])
    return np.random.default_rng(np.random.SeedSequence(ints))


def local_batches(device: DeviceState, round_index: int, batch_size: int) -> list[np.ndarray]:
    perm = _rng(device.seed, round_index, device.id, "data").permutation(device.indices)
    n = len(perm) // batch_size
    return [perm[b * batch_size:(b + 1) * batch_size] for b in range(n)]


def _delta(new: nn.Weights, old: nn.Weights) -> dict[str, np.ndarray]:
    return {k: new.params[k] - old.params[k] for k in old.params}


def _step(spec, weights, data: Dataset, idx, masks, cfg: FLConfig, trainable=None):
    _, grads = nn.loss_and_grads(spec, weights, data.images[idx], data.labels[idx], masks)
    nn.sgd_step(weights, grads, cfg.lr, cfg.momentum, cfg.weight_decay, trainable)


def _fresh(theta: nn.Weights) -> nn.Weights:
    w = theta.copy()
    w.reset_momentum()
    return w


# ---------------------------------------------------------------------------
# clients


def client_train_distreal(spec, device: DeviceState, theta: nn.Weights, lut: ParetoLUT, data: Dataset,
                          round_index: int, cfg: FLConfig) -> RoundUpdate:
    """Per mini-batch: read the level, pick the max-fit LUT entry, train, count MACs."""
    weights = _fresh(theta)
    mask_rng = _rng(device.seed, round_index, device.id, "masks")
    batches = local_batches(device, round_index, cfg.batch_size)
    t = round_index * cfg.round_duration
    end = t + cfg.round_duration
    c = 0.0
    for b, idx in enumerate(batches):
        r = level_at(device.trace, t)
        budget = max(r * (end - t), 0.0) / (len(batches) - b)
        d, fwd = lookup(lut, budget * (1 + _EPS))
        _step(spec, weights, data, idx, nn.sample_masks(d, spec, mask_rng), cfg)
        c += fwd
        t += training_macs(fwd) / r
    overrun = t > end * (1 + _EPS)
    if overrun:
        log.info("device %d overran round %d (cheapest LUT entry exceeds its budget)", device.id, round_index)
    return RoundUpdate(device.id, _delta(weights, theta), c, overrun=overrun)


def _run_fixed(spec, device, theta, data, round_index, cfg, masks, fwd_macs, trainable, timed=True):
    """Train every local batch with fixed masks; straggler if the clock runs out."""
    weights = _fresh(theta)
    batches = local_batches(device, round_index, cfg.batch_size)
    t = round_index * cfg.round_duration
    end = t + cfg.round_duration
    for idx in batches:
        _step(spec, weights, data, idx, masks, cfg, trainable)
        if timed:
            t += training_macs(fwd_macs) / level_at(device.trace, t)
    c = len(batches) * fwd_macs
    if timed and t > end * (1 + _EPS):
        return RoundUpdate(device.id, None, c, straggler=True, trainable=trainable)
    return RoundUpdate(device.id, _delta(weights, theta), c, trainable=trainable)


def round_budget(device: DeviceState, round_index: int, cfg: FLConfig) -> float:
    """Training MACs per local batch the server expects from the round-start level."""
    r = level_at(device.trace, round_index * cfg.round_duration)
    return r * cfg.round_duration / cfg.local_batches


def federated_dropout_rate(spec, budget: float, grid: float = 0.01) -> float | None:
    """Smallest uniform rate on the grid whose expected training MACs fit ``budget``."""
    for rate in np.round(np.arange(0.0, nn.MAX_RATE + grid / 2, grid), 10):
        if training_macs(network_expected_macs(spec, np.full(spec.n_conv, rate)).total) <= budget * (1 + _EPS):
            return float(rate)
    return None


def client_train_federated_dropout(spec, device, theta, data, round_index, cfg: FLConfig) -> RoundUpdate:
    rate = federated_dropout_rate(spec, round_budget(device, round_index, cfg), cfg.fd_grid)
    if rate is None:
        return RoundUpdate(device.id, None, 0.0, straggler=True)
    rng = _rng(device.seed, round_index, device.id, "server-mask")
    masks = nn.sample_masks(np.full(spec.n_conv, rate), spec, rng)
    fwd = network_expected_macs(spec, np.full(spec.n_conv, rate)).total
    return _run_fixed(spec, device, theta, data, round_index, cfg, masks, fwd, nn.trainable_mask(spec, masks))


def heterofl_level(spec, budget: float, s: float = 0.7, levels: int = 4) -> int | None:
    """Smallest level ``p`` (widest sub-network) whose training MACs fit ``budget``."""
    for p in range(1, levels + 1):
        masks = nn.prefix_masks(spec, s ** (p - 1))
        if training_macs(realized_macs(spec, masks).total) <= budget * (1 + _EPS):
            return p
    return None


def client_train_heterofl(spec, device, theta, data, round_index, cfg: FLConfig) -> RoundUpdate:
    p = heterofl_level(spec, round_budget(device, round_index, cfg), cfg.heterofl_s, cfg.heterofl_levels)
    if p is None:
        return RoundUpdate(device.id, None, 0.0, straggler=True)
    masks = nn.prefix_masks(spec, cfg.heterofl_s ** (p - 1))
    fwd = realized_macs(spec, masks).total
    trainable = None if p == 1 else nn.trainable_mask(spec, masks)
    return _run_fixed(spec, device, theta, data, round_index, cfg, masks, fwd, trainable)


def client_train_full(spec, device, theta, data, round_index, cfg: FLConfig, timed=False) -> RoundUpdate:
    fwd = network_expected_macs(spec, np.zeros(spec.n_conv)).total
    return _run_fixed(spec, device, theta, data, round_index, cfg, nn.full_masks(spec), fwd, None, timed)


# ---------------------------------------------------------------------------
# server


def aggregate(theta: nn.Weights, updates: list[RoundUpdate]) -> nn.Weights:
    """``theta + sum(c_i * delta_i) / sum(c_i)`` over non-stragglers, in device-id order.

    Updates carrying a ``trainable`` mask are averaged per parameter entry
    over the devices that hold it.
    """
    done = sorted((u for u in updates if not u.straggler), key=lambda u: u.device)
    new = nn.Weights({k: v.copy() for k, v in theta.params.items()})
    if not done:
        return new
    if any(u.trainable is not None for u in done):
        for name, p in new.params.items():
            num = np.zeros_like(p)
            den = np.zeros_like(p)
            for u in done:
                held = u.trainable[name] if u.trainable is not None else True
                num += np.where(held, u.c * u.delta[name], 0.0)
                den += np.where(held, u.c, 0.0)
            p += np.divide(num, den, out=np.zeros_like(num), where=den > 0)
        return new
    total = sum(u.c for u in done)
    if total <= 0:
        raise RuntimeError("completed updates must report positive computations")
    for name, p in new.params.items():
        acc = np.zeros_like(p)
        for u in done:
            acc += u.c * u.delta[name]
        p += acc / total
    return new


def select_devices(n_devices: int, per_round: int, seed: int, round_index: int) -> np.ndarray:
    return np.sort(_rng(seed, round_index, "select").choice(n_devices, per_round, replace=False))


# ---------------------------------------------------------------------------
# experiment


@dataclass
class Environment:
    """Everything a run needs besides the technique: data, devices, network."""

    spec: nn.NetworkSpec
    train: Dataset
    test: Dataset
    low: float
    high: float
    lut: ParetoLUT | None = None
    small_spec: nn.NetworkSpec | None = None


@dataclass
class RunRecord:
    technique: str
    seed: int
    accuracy: list[float] = field(default_factory=list)
    total_macs: list[float] = field(default_factory=list)
    stragglers: list[int] = field(default_factory=list)
    overruns: list[int] = field(default_factory=list)
    weights: nn.Weights | None = None

    def rows(self):
        for r in range(len(self.accuracy)):
            yield (self.technique, self.seed, r + 1, self.accuracy[r], self.total_macs[r], self.stragglers[r])


def small_network(spec_fn, low_budget: float, grid: float = 0.05, **kwargs) -> nn.NetworkSpec:
    """Widest uniformly narrowed network whose full training fits ``low_budget`` per batch."""
    base = spec_fn(**kwargs)
    widths = [base.layers[i].c_out for i in base.conv_indices]
    for frac in np.round(np.arange(1.0, 0.0, -grid), 10):
        w = tuple(max(1, int(round(frac * c))) for c in widths)
        spec = spec_fn(widths=w, **kwargs)
        if training_macs(network_expected_macs(spec, np.zeros(spec.n_conv)).total) <= low_budget * (1 + _EPS):
            return spec
    raise ValueError("no narrowed network fits the lowest resource level")


def make_devices(env: Environment, cfg: FLConfig, seed: int) -> list[DeviceState]:
    parts = partition(env.train, cfg.devices, cfg.samples_per_device, cfg.partition, seed)
    horizon = (cfg.rounds + 1) * cfg.round_duration
    traces = device_traces(cfg.devices, cfg.lam, env.low, env.high, horizon, seed)
    return [DeviceState(i, parts[i], traces[i], seed) for i in range(cfg.devices)]


def initial_weights(spec: nn.NetworkSpec, seed: int) -> nn.Weights:
    return nn.init_weights(spec, _rng(seed, "init"))


def run_technique(env: Environment, cfg: FLConfig, technique: str, seed: int,
                  devices: list[DeviceState] | None = None) -> RunRecord:
    spec = env.small_spec if technique == "small_nn" else env.spec
    if technique == "small_nn" and spec is None:
        raise ValueError("small_nn needs env.small_spec")
    if technique == "distreal":
        if env.lut is None:
            raise ValueError("distreal needs a LUT; run the DSE first")
        env.lut.check_spec(spec)
    devices = devices if devices is not None else make_devices(env, cfg, seed)
    theta = initial_weights(spec, seed)
    rec = RunRecord(technique, seed)
    for rnd in range(cfg.rounds):
        chosen = select_devices(cfg.devices, cfg.per_round, seed, rnd)
        updates = []
        for i in chosen:
            dev = devices[i]
            if technique == "distreal":
                u = client_train_distreal(spec, dev, theta, env.lut, env.train, rnd, cfg)
            elif technique == "federated_dropout":
                u = client_train_federated_dropout(spec, dev, theta, env.train, rnd, cfg)
            elif technique == "heterofl":
                u = client_train_heterofl(spec, dev, theta, env.train, rnd, cfg)
            else:
                u = client_train_full(spec, dev, theta, env.train, rnd, cfg)
            updates.append(u)
        theta = aggregate(theta, updates)
        rec.accuracy.append(nn.evaluate(spec, theta, env.test))
        rec.total_macs.append(float(sum(u.c for u in updates)))
        rec.stragglers.append(sum(u.straggler for u in updates))
        rec.overruns.append(sum(u.overrun for u in updates))
    rec.weights = theta
    return rec


def run_experiment(env: Environment, cfg: FLConfig, progress=None) -> list[RunRecord]:
    """Every technique x seed; devices (data split, traces) are shared per seed."""
    out = []
    for seed in cfg.seeds:
        devices = make_devices(env, cfg, seed)
        for tech in cfg.techniques:
            rec = run_technique(env, cfg, tech, seed, devices)
            if progress:
                progress(rec)
            out.append(rec)
    return out


__all__ = [
    "FLConfig", "RoundUpdate", "DeviceState", "Environment", "RunRecord", "TECHNIQUES", "aggregate",
    "client_train_distreal", "client_train_federated_dropout", "client_train_heterofl", "client_train_full",
    "run_technique", "run_experiment", "select_devices", "small_network",
]
