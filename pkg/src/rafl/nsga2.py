"""NSGA-II for box-constrained bi-objective minimization.

Operators follow the usual bounded SBX / polynomial mutation formulation with
the pygmo defaults (crossover 0.95, eta_c 10, mutation 0.01, eta_m 50).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


def dominates(a, b) -> bool:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return bool(np.all(a <= b) and np.any(a < b))


def fast_non_dominated_sort(points) -> list[list[int]]:
    """Pareto fronts (lists of indices) for minimization, best first."""
    F = np.asarray(points, dtype=np.float64)
    n = len(F)
    if n == 0:
        return []
    le = np.all(F[:, None, :] <= F[None, :, :], axis=2)
    lt = np.any(F[:, None, :] < F[None, :, :], axis=2)
    dom = le & lt  # dom[i, j]: i dominates j
    counts = dom.sum(axis=0)
    fronts = []
    current = [i for i in range(n) if counts[i] == 0]
    while current:
        fronts.append(current)
        nxt = []
        for i in current:
            for j in np.flatnonzero(dom[i]):
                counts[j] -= 1
                if counts[j] == 0:
                    nxt.append(int(j))
        current = sorted(nxt)
    return fronts


def crowding_distance(points) -> np.ndarray:
    F = np.asarray(points, dtype=np.float64)
    n, m = F.shape if F.ndim == 2 else (len(F), 0)
    dist = np.zeros(n)
    if n <= 2:
        dist[:] = np.inf
        return dist
    for k in range(m):
        order = np.argsort(F[:, k], kind="stable")
        lo, hi = F[order[0], k], F[order[-1], k]
        dist[order[0]] = dist[order[-1]] = np.inf
        if hi == lo:
            continue
        gaps = (F[order[2:], k] - F[order[:-2], k]) / (hi - lo)
        dist[order[1:-1]] += gaps
    return dist


def hypervolume_2d(points, ref=(1.1, 1.1)) -> float:
    """Area dominated by ``points`` and bounded by ``ref`` (minimization)."""
    P = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    P = P[np.all(P < np.asarray(ref), axis=1)]
    if len(P) == 0:
        return 0.0
    P = P[np.lexsort((P[:, 1], P[:, 0]))]
    area, best_y = 0.0, ref[1]
    for x, y in P:
        if y < best_y:
            area += (ref[0] - x) * (best_y - y)
            best_y = y
    return float(area)


def sbx_crossover(a, b, rng: np.random.Generator, prob: float = 0.95, eta: float = 10.0,
                  low: float = 0.0, high: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Bounded simulated binary crossover; each gene crosses with probability 0.5."""
    c1 = np.array(a, dtype=np.float64)
    c2 = np.array(b, dtype=np.float64)
    if rng.random() >= prob:
        return c1, c2
    for i in range(len(c1)):
        if rng.random() > 0.5 or abs(c1[i] - c2[i]) <= 1e-14:
            continue
        y1, y2 = min(c1[i], c2[i]), max(c1[i], c2[i])
        r = rng.random()
        children = []
        for beta in (1.0 + 2.0 * (y1 - low) / (y2 - y1), 1.0 + 2.0 * (high - y2) / (y2 - y1)):
            alpha = 2.0 - beta ** -(eta + 1.0)
            if r <= 1.0 / alpha:
                betaq = (r * alpha) ** (1.0 / (eta + 1.0))
            else:
                betaq = (1.0 / (2.0 - r * alpha)) ** (1.0 / (eta + 1.0))
            children.append(betaq)
        lo_child = 0.5 * ((y1 + y2) - children[0] * (y2 - y1))
        hi_child = 0.5 * ((y1 + y2) + children[1] * (y2 - y1))
        lo_child = min(max(lo_child, low), high)
        hi_child = min(max(hi_child, low), high)
        if rng.random() <= 0.5:
            c1[i], c2[i] = hi_child, lo_child
        else:
            c1[i], c2[i] = lo_child, hi_child
    return c1, c2


def polynomial_mutation(x, rng: np.random.Generator, prob: float = 0.01, eta: float = 50.0,
                        low: float = 0.0, high: float = 0.5) -> np.ndarray:
    y = np.array(x, dtype=np.float64)
    span = high - low
    for i in range(len(y)):
        if rng.random() >= prob:
            continue
        d1, d2 = (y[i] - low) / span, (high - y[i]) / span
        r = rng.random()
        power = 1.0 / (eta + 1.0)
        if r < 0.5:
            xy = 1.0 - d1
            val = 2.0 * r + (1.0 - 2.0 * r) * xy ** (eta + 1.0)
            deltaq = val ** power - 1.0
        else:
            xy = 1.0 - d2
            val = 2.0 * (1.0 - r) + 2.0 * (r - 0.5) * xy ** (eta + 1.0)
            deltaq = 1.0 - val ** power
        y[i] = min(max(y[i] + deltaq * span, low), high)
    return y


def rank_and_crowding(F: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    rank = np.empty(len(F), dtype=np.int64)
    crowd = np.empty(len(F))
    for r, front in enumerate(fast_non_dominated_sort(F)):
        rank[front] = r
        crowd[front] = crowding_distance(F[front])
    return rank, crowd


def _better(i: int, j: int, rank, crowd) -> int:
    if rank[i] != rank[j]:
        return i if rank[i] < rank[j] else j
    if crowd[i] != crowd[j]:
        return i if crowd[i] > crowd[j] else j
    return min(i, j)


def hv_best_subset(F: np.ndarray, k: int, ref=(1.1, 1.1)) -> list[int]:
    """Indices of a ``k``-subset of a 2-D non-dominated set with maximal hypervolume.

    Exact dynamic program over the points sorted by the first objective:
    ``g[c, j]`` is the best area of a ``c``-point staircase whose leftmost
    point is ``j``.  Points outside the reference box and duplicates add no
    area; they are only used to fill up to ``k`` (by crowding distance).
    """
    F = np.asarray(F, dtype=np.float64)
    n = len(F)
    if k >= n:
        return list(range(n))
    inside = [i for i in range(n) if F[i, 0] < ref[0] and F[i, 1] < ref[1]]
    uniq, seen = [], set()
    for i in sorted(inside, key=lambda i: (F[i, 0], F[i, 1], i)):
        key = (F[i, 0], F[i, 1])
        if key not in seen:
            seen.add(key)
            uniq.append(i)
    m = len(uniq)
    chosen: list[int] = []
    if m <= k:
        chosen = uniq
    else:
        x, y = F[uniq, 0], F[uniq, 1]
        height = ref[1] - y
        g = np.empty((k + 1, m))
        nxt = np.full((k + 1, m), -1, dtype=np.int64)
        g[1] = (ref[0] - x) * height
        later = np.triu(np.ones((m, m), bool), 1)
        step = (x[None, :] - x[:, None]) * height[:, None]  # step[j, l]: area between j and next point l
        for c in range(2, k + 1):
            cand = np.where(later, step + g[c - 1][None, :], -np.inf)
            nxt[c] = cand.argmax(axis=1)
            g[c] = cand[np.arange(m), nxt[c]]
        j = int(np.argmax(g[k]))
        for c in range(k, 0, -1):
            chosen.append(uniq[j])
            j = int(nxt[c, j])
    if len(chosen) < k:
        rest = [i for i in range(n) if i not in set(chosen)]
        cd = crowding_distance(F[rest]) if len(rest) > 2 else np.full(len(rest), np.inf)
        order = sorted(range(len(rest)), key=lambda r: (-cd[r], rest[r]))
        chosen += [rest[r] for r in order[:k - len(chosen)]]
    return sorted(chosen)


def select_survivors(F: np.ndarray, size: int, ref=(1.1, 1.1)) -> np.ndarray:
    """Elitist truncation: whole fronts, then prune the overflowing front.

    A later front is cut by crowding distance.  When the first front alone
    overflows (bi-objective case), the hypervolume-optimal subset is kept
    instead, so the first front's hypervolume can never shrink.
    """
    chosen = []
    for rank, front in enumerate(fast_non_dominated_sort(F)):
        if len(chosen) + len(front) <= size:
            chosen.extend(front)
            continue
        if rank == 0 and F.shape[1] == 2:
            sub = hv_best_subset(F[front], size, ref)
            chosen.extend(front[i] for i in sub)
        else:
            cd = crowding_distance(F[front])
            order = sorted(range(len(front)), key=lambda k: (-cd[k], front[k]))
            chosen.extend(front[k] for k in order[:size - len(chosen)])
        break
    return np.asarray(chosen)


@dataclass
class Population:
    X: np.ndarray
    F: np.ndarray
    generation: int = 0

    @property
    def front(self) -> np.ndarray:
        return np.asarray(fast_non_dominated_sort(self.F)[0])


@dataclass
class NSGA2:
    evaluate: Callable[[np.ndarray], np.ndarray]
    n_var: int
    pop_size: int = 64
    low: float = 0.0
    high: float = 0.5
    cx_prob: float = 0.95
    cx_eta: float = 10.0
    mut_prob: float = 0.01
    mut_eta: float = 50.0
    history: list[Population] = field(default_factory=list)

    def initial(self, rng: np.random.Generator, seeds: np.ndarray | None = None) -> Population:
        seeds = np.zeros((0, self.n_var)) if seeds is None else np.asarray(seeds, dtype=np.float64)
        n_rand = self.pop_size - len(seeds)
        X = np.vstack([rng.uniform(self.low, self.high, (n_rand, self.n_var)), seeds])
        return Population(X, np.asarray(self.evaluate(X), dtype=np.float64), 0)

    def offspring(self, pop: Population, rng: np.random.Generator) -> np.ndarray:
        rank, crowd = rank_and_crowding(pop.F)
        n = len(pop.X)
        kids = []
        while len(kids) < n:
            parents = []
            for _ in range(2):
                i, j = rng.integers(0, n, 2)
                parents.append(pop.X[_better(int(i), int(j), rank, crowd)])
            c1, c2 = sbx_crossover(parents[0], parents[1], rng, self.cx_prob, self.cx_eta, self.low, self.high)
            kids.append(polynomial_mutation(c1, rng, self.mut_prob, self.mut_eta, self.low, self.high))
            kids.append(polynomial_mutation(c2, rng, self.mut_prob, self.mut_eta, self.low, self.high))
        return np.asarray(kids[:n])

    def step(self, pop: Population, rng: np.random.Generator) -> Population:
        Xo = self.offspring(pop, rng)
        Fo = np.asarray(self.evaluate(Xo), dtype=np.float64)
        X = np.vstack([pop.X, Xo])
        F = np.vstack([pop.F, Fo])
        keep = select_survivors(F, self.pop_size)
        return Population(X[keep], F[keep], pop.generation + 1)

    def run(self, generations: int, rng: np.random.Generator, seeds=None,
            callback: Callable[[Population], None] | None = None) -> Population:
        pop = self.initial(rng, seeds)
        self.history = [pop]
        if callback:
            callback(pop)
        for _ in range(generations):
            pop = self.step(pop, rng)
            self.history.append(pop)
            if callback:
                callback(pop)
        return pop
