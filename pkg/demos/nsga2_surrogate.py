"""NSGA-II on an analytic two-objective problem that mimics the dropout search.

Cost falls linearly as rates grow, while the accuracy penalty grows
quadratically and more steeply for later layers. The printed front shows the
search spending its budget on the cheap early layers first.

Run: python3 demos/nsga2_surrogate.py
"""

import numpy as np

from rafl.nsga2 import NSGA2, hypervolume_2d

WEIGHT = np.array([1.0, 2.0, 3.0, 1.5])
PENALTY = np.array([0.5, 1.0, 2.0, 3.0])


def objectives(X):
    X = np.atleast_2d(X) / 0.5
    cost = (WEIGHT * (1 - X)).sum(axis=1) / WEIGHT.sum()
    loss = (PENALTY * X ** 2).sum(axis=1) / PENALTY.sum()
    return np.column_stack([cost, loss])


alg = NSGA2(objectives, n_var=4, pop_size=64)
final = alg.run(30, np.random.default_rng(0), seeds=np.vstack([np.zeros(4), np.full(4, 0.5)]))
for pop in alg.history[::5]:
    print(f"generation {pop.generation:2d}  hypervolume {hypervolume_2d(pop.F[pop.front]):.4f}")

front = final.front[np.argsort(final.F[final.front, 0])]
print("\n cost   loss   rates")
for i in front[:: max(1, len(front) // 10)]:
    print(f"{final.F[i, 0]:.3f}  {final.F[i, 1]:.3f}  {np.round(final.X[i], 2)}")
