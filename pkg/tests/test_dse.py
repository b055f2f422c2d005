import numpy as np
import pytest

from rafl import dse
from rafl.data import distort, synthesize
from rafl.networks import desk_cnn
from rafl.nsga2 import Population, dominates

SETTINGS = dict(seeds=(0, 1), short_batches=3, batch_size=16, lr=0.01, pretrain_steps=3)


@pytest.fixture(scope="module")
def ctx():
    data = synthesize(10, 20, seed=5)
    perm = np.random.default_rng(0).permutation(len(data))
    train, val = data.subset(perm[:120]), data.subset(perm[120:])
    return dse.FitnessContext.build(desk_cnn(), train, val, distort(train, "rotate90"),
                                    dse.DSESettings(**SETTINGS))


def test_endpoint_normalization(ctx):
    assert dse.fitness(np.zeros(3), ctx) == (1.0, 0.0)
    assert dse.fitness(np.full(3, 0.5), ctx) == (0.0, 1.0)


def test_fitness_is_cached_and_deterministic(ctx, monkeypatch):
    d = np.array([0.1, 0.2, 0.3])
    first = ctx.delta_acc(d)
    monkeypatch.setattr(dse, "short_train_delta_acc", lambda *a, **k: pytest.fail("cache miss"))
    assert ctx.delta_acc(d + 1e-9) == first


def test_same_seed_same_result(ctx):
    s = ctx.settings
    args = (ctx.spec, ctx.snapshots[0], [0.2, 0.2, 0.2], s.seeds[0], ctx.train, ctx.val, s.lr,
            s.short_batches, s.batch_size)
    assert dse.short_train_delta_acc(*args) == dse.short_train_delta_acc(*args)


def test_degenerate_guard():
    data = synthesize(10, 10, seed=1)
    with pytest.raises(dse.DegenerateFitnessError):
        dse.FitnessContext.build(desk_cnn(), data, data, distort(data, "rotate90"),
                                 dse.DSESettings(**{**SETTINGS, "lr": 0.0}))


def test_pareto_front_and_lut(ctx):
    X = np.array([[0.0, 0.0, 0.0], [0.5, 0.5, 0.5], [0.2, 0.1, 0.3], [0.2, 0.1, 0.3], [0.4, 0.4, 0.1]])
    F = np.array([dse.fitness(x, ctx) for x in X])
    pop = Population(X, F)
    idx = dse.pareto_front(pop)
    assert len(set(map(tuple, F[idx]))) == len(idx)
    for i in idx:
        assert not any(dominates(F[j], F[i]) for j in range(len(F)))
    lut = dse.extract_pareto_lut(pop, ctx)
    assert np.all(np.diff(lut.macs) > 0)
    assert np.array_equal(lut.vectors[-1], np.zeros(3, np.float32))
    assert lut.fingerprint == ctx.spec.fingerprint()


def test_small_run_and_dump(ctx, tmp_path):
    res = dse.run_dse(ctx, generations=2, population=8, seed=1)
    assert len(res.history) == 3 and len(res.final.X) == 8
    res.write_dump(tmp_path / "g.csv")
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert lines[0].startswith("generation,d0,d1,d2,macs")
    assert len(lines) == 1 + 2 * 8
    again = dse.run_dse(ctx, generations=2, population=8, seed=1)
    assert np.array_equal(res.final.X, again.final.X)


def test_uniform_curve_and_comparison(ctx):
    curve = dse.uniform_curve(ctx, rates=[0.0, 0.25, 0.5])
    assert [c[0] for c in curve] == [0.0, 0.25, 0.5]
    assert curve[0][1] > curve[1][1] > curve[2][1]
    pop = Population(np.vstack([np.zeros(3), np.full(3, 0.5)]),
                     np.array([dse.fitness(np.zeros(3), ctx), dse.fitness(np.full(3, 0.5), ctx)]))
    rows = dse.front_vs_uniform(dse.extract_pareto_lut(pop, ctx), ctx, curve)
    assert rows[0][1] == rows[0][2] and rows[2][1] == rows[2][2]
