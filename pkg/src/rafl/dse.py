"""Design-time search for Pareto-optimal per-layer dropout vectors.

Each candidate vector ``d`` is scored by two normalized, minimized objectives:
its expected forward MACs and the loss in short-training accuracy gain, both
relative to the all-0 and all-0.5 vectors.  The short training starts from
snapshots pre-trained on a distorted copy of the data, one per seed, and the
same seeds are used for every candidate.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .data import Dataset
from .lut import ParetoLUT, build_lut
from .macs import network_expected_macs
from .nsga2 import NSGA2, Population, fast_non_dominated_sort

log = logging.getLogger(__name__)

MAX_RATE = nn.MAX_RATE


class DegenerateFitnessError(ValueError):
    """The all-0 and all-0.5 vectors gain (almost) the same accuracy."""


def _batches(n: int, batch_size: int, count: int, rng: np.random.Generator):
    """``count`` mini-batch index arrays drawn epoch by epoch without replacement."""
    out = []
    while len(out) < count:
        perm = rng.permutation(n)
        for s in range(0, n - batch_size + 1, batch_size):
            out.append(perm[s:s + batch_size])
            if len(out) == count:
                break
    return out


def pretrain_snapshot(spec: nn.NetworkSpec, distorted: Dataset, steps: int, lr: float, seed: int,
                      batch_size: int = 32, momentum: float = 0.9, weight_decay: float = 1e-4) -> nn.Weights:
    """Random init (from ``seed``) followed by ``steps`` SGD steps on ``distorted``."""
    rng = np.random.default_rng([seed, 0])
    weights = nn.init_weights(spec, rng)
    for idx in _batches(len(distorted), batch_size, steps, rng):
        loss, grads = nn.loss_and_grads(spec, weights, distorted.images[idx], distorted.labels[idx])
        if not np.isfinite(loss):
            raise FloatingPointError("pre-training diverged (non-finite loss)")
        nn.sgd_step(weights, grads, lr, momentum, weight_decay)
    weights.reset_momentum()
    return weights


def short_train(spec: nn.NetworkSpec, snapshot: nn.Weights, d, seed: int, train: Dataset, lr: float,
                batches: int = 64, batch_size: int = 64, momentum: float = 0.9,
                weight_decay: float = 1e-4) -> nn.Weights:
    d = nn.check_rates(d, spec.n_conv)
    weights = snapshot.copy()
    weights.reset_momentum()
    data_rng = np.random.default_rng([seed, 1])
    mask_rng = np.random.default_rng([seed, 2])
    for idx in _batches(len(train), batch_size, batches, data_rng):
        masks = nn.sample_masks(d, spec, mask_rng)
        loss, grads = nn.loss_and_grads(spec, weights, train.images[idx], train.labels[idx], masks)
        if not np.isfinite(loss):
            raise FloatingPointError("short training diverged (non-finite loss)")
        nn.sgd_step(weights, grads, lr, momentum, weight_decay)
    return weights


def short_train_delta_acc(spec: nn.NetworkSpec, snapshot: nn.Weights, d, seed: int, train: Dataset,
                          val: Dataset, lr: float, batches: int = 64, batch_size: int = 64,
                          acc_before: float | None = None) -> float:
    """Validation accuracy after short training with ``d`` minus accuracy before."""
    if acc_before is None:
        acc_before = nn.evaluate(spec, snapshot, val)
    trained = short_train(spec, snapshot, d, seed, train, lr, batches, batch_size)
    return nn.evaluate(spec, trained, val) - acc_before


@dataclass
class DSESettings:
    seeds: tuple[int, ...] = (0, 1, 2)
    short_batches: int = 64
    batch_size: int = 64
    lr: float = 0.005
    pretrain_steps: int = 200
    pretrain_lr: float = 0.005
    pretrain_batch_size: int = 32
    distortion: str = "rotate90"
    generations: int = 20
    population: int = 64
    min_gap: float = 1e-4


@dataclass
class FitnessContext:
    spec: nn.NetworkSpec
    train: Dataset
    val: Dataset
    snapshots: list[nn.Weights]
    settings: DSESettings
    acc_before: list[float] = field(default_factory=list)
    cache: dict = field(default_factory=dict)
    macs_lo: float = 0.0
    macs_hi: float = 0.0
    dacc_lo: float = 0.0  # at all-0.5
    dacc_hi: float = 0.0  # at all-0

    @classmethod
    def build(cls, spec: nn.NetworkSpec, train: Dataset, val: Dataset, distorted: Dataset,
              settings: DSESettings | None = None) -> "FitnessContext":
        settings = settings or DSESettings()
        snaps = [pretrain_snapshot(spec, distorted, settings.pretrain_steps, settings.pretrain_lr, s,
                                   settings.pretrain_batch_size) for s in settings.seeds]
        ctx = cls(spec, train, val, snaps, settings)
        ctx.acc_before = [nn.evaluate(spec, w, val) for w in snaps]
        k = spec.n_conv
        ctx.macs_hi = network_expected_macs(spec, np.zeros(k)).total
        ctx.macs_lo = network_expected_macs(spec, np.full(k, MAX_RATE)).total
        ctx.dacc_hi = ctx.delta_acc(np.zeros(k))
        ctx.dacc_lo = ctx.delta_acc(np.full(k, MAX_RATE))
        if abs(ctx.dacc_hi - ctx.dacc_lo) < settings.min_gap:
            raise DegenerateFitnessError(
                f"accuracy gain of all-0 ({ctx.dacc_hi:.4f}) and all-{MAX_RATE} ({ctx.dacc_lo:.4f}) vectors "
                "is indistinguishable; increase short-training batches or the learning rate")
        log.info("DSE endpoints: MACs %.0f..%.0f, dAcc %.4f..%.4f", ctx.macs_lo, ctx.macs_hi,
                 ctx.dacc_lo, ctx.dacc_hi)
        return ctx

    @staticmethod
    def key(d) -> tuple:
        return tuple(np.round(np.asarray(d, dtype=np.float64) * 1e6).astype(np.int64).tolist())

    def delta_acc(self, d) -> float:
        key = self.key(d)
        if key in self.cache:
            return self.cache[key]
        s = self.settings
        vals = []
        for seed, snap, before in zip(s.seeds, self.snapshots, self.acc_before):
            try:
                vals.append(short_train_delta_acc(self.spec, snap, d, seed, self.train, self.val, s.lr,
                                                  s.short_batches, s.batch_size, before))
            except FloatingPointError:
                log.warning("short training diverged for d=%s; scoring it as the all-%s vector", d, MAX_RATE)
                vals.append(self.dacc_lo)
        value = float(np.mean(vals))
        self.cache[key] = value
        return value

    def macs(self, d) -> float:
        return network_expected_macs(self.spec, d).total

    def raw(self, d) -> tuple[float, float]:
        return self.macs(d), self.delta_acc(d)


def fitness(d, ctx: FitnessContext) -> tuple[float, float]:
    """Normalized (MACs, accuracy-gain loss); (1, 0) at all-0 and (0, 1) at all-0.5."""
    macs, dacc = ctx.raw(d)
    if ctx.dacc_hi == ctx.dacc_lo:
        raise DegenerateFitnessError("endpoint accuracy gains are equal")
    f1 = (macs - ctx.macs_lo) / (ctx.macs_hi - ctx.macs_lo)
    f2 = (ctx.dacc_hi - dacc) / (ctx.dacc_hi - ctx.dacc_lo)
    return f1, f2


def endpoint_vectors(k: int) -> np.ndarray:
    return np.vstack([np.zeros(k), np.full(k, MAX_RATE)])


@dataclass
class DSEResult:
    final: Population
    history: list[Population]
    ctx: FitnessContext

    def rows(self, generations=None):
        """Dump rows (generation, genes..., MACs, dAcc, f1, f2); evolved generations by default."""
        wanted = range(1, len(self.history)) if generations is None else generations
        for pop in (self.history[g] for g in wanted):
            for x, f in zip(pop.X, pop.F):
                macs, dacc = self.ctx.raw(x)
                yield [pop.generation, *x.tolist(), macs, dacc, f[0], f[1]]

    def write_dump(self, path, generations=None):
        k = self.ctx.spec.n_conv
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["generation"] + [f"d{i}" for i in range(k)] + ["macs", "delta_acc", "f1", "f2"])
            for row in self.rows(generations):
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def run_dse(ctx: FitnessContext, generations: int | None = None, seed: int = 0,
            population: int | None = None, callback=None) -> DSEResult:
    """NSGA-II over ``[0, 0.5]^k``: random vectors plus the two endpoints."""
    s = ctx.settings
    generations = s.generations if generations is None else generations
    population = s.population if population is None else population
    k = ctx.spec.n_conv

    def evaluate(X):
        return np.array([fitness(x, ctx) for x in X])

    alg = NSGA2(evaluate, n_var=k, pop_size=population)
    final = alg.run(generations, np.random.default_rng([seed, 3]), seeds=endpoint_vectors(k), callback=callback)
    return DSEResult(final, alg.history, ctx)


def pareto_front(pop: Population) -> np.ndarray:
    """Rank-0 indices, one per distinct objective value."""
    front = fast_non_dominated_sort(pop.F)[0]
    seen, out = set(), []
    for i in sorted(front, key=lambda i: (pop.F[i, 0], pop.F[i, 1], i)):
        key = tuple(pop.F[i])
        if key not in seen:
            seen.add(key)
            out.append(i)
    return np.asarray(out)


def extract_pareto_lut(pop: Population, ctx: FitnessContext) -> ParetoLUT:
    """Rank-0 vectors sorted by expected MACs, stored at float32 precision.

    The all-0 vector is always kept as the top entry so that a device with
    enough resources trains the full model.
    """
    idx = pareto_front(pop)
    vecs = pop.X[idx].astype(np.float32).astype(np.float64)
    vecs = vecs[np.any(vecs != 0.0, axis=1)]
    vecs = np.vstack([vecs, np.zeros((1, ctx.spec.n_conv))])
    macs = [ctx.macs(v) for v in vecs]
    return build_lut(vecs, macs, ctx.spec.fingerprint())


def uniform_curve(ctx: FitnessContext, rates=None) -> list[tuple[float, float, float]]:
    """(rate, MACs, dAcc) for the same rate on every layer."""
    rates = np.linspace(0.0, MAX_RATE, 11) if rates is None else rates
    k = ctx.spec.n_conv
    return [(float(r), *ctx.raw(np.full(k, r))) for r in rates]


def front_vs_uniform(lut: ParetoLUT, ctx: FitnessContext, curve) -> list[tuple[float, float, float]]:
    """For each uniform point: (MACs, best front dAcc within that MAC budget, uniform dAcc)."""
    front_dacc = np.array([ctx.delta_acc(v) for v in lut.vectors.astype(np.float64)])
    out = []
    for _, macs, dacc in curve:
        ok = lut.macs <= macs * (1 + 1e-9)
        best = float(front_dacc[ok].max()) if ok.any() else -np.inf
        out.append((macs, best, dacc))
    return out
