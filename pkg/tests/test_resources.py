import numpy as np
import pytest
from scipy import stats

from rafl.macs import dense_macs, training_macs
from rafl.networks import desk_cnn
from rafl.resources import (ResourceTrace, calibrate_range, device_traces, export_traces, generate_trace, level_at,
                            level_at_linear)


def test_static_trace_has_one_event():
    tr = generate_trace(0.0, 1.0, 4.0, 100, np.random.default_rng(0))
    assert len(tr) == 1 and tr.times[0] == 0.0 and 1.0 <= tr.levels[0] <= 4.0


def test_event_count_statistics():
    tr = generate_trace(2.0, 1.0, 4.0, 1000, np.random.default_rng(1))
    assert abs((len(tr) - 1) - 2000) <= 150


def test_gaps_are_exponential():
    tr = generate_trace(0.5, 1.0, 2.0, 20000, np.random.default_rng(2))
    gaps = np.diff(tr.times)[:10000]
    assert len(gaps) == 10000
    assert stats.kstest(gaps, "expon", args=(0, 1 / 0.5)).pvalue > 0.01


def test_levels_in_range_and_time_average():
    tr = generate_trace(4.0, 1.0, 3.0, 5000, np.random.default_rng(3))
    assert tr.levels.min() >= 1.0 and tr.levels.max() <= 3.0
    durations = np.diff(np.append(tr.times, 5000))
    assert np.sum(durations * tr.levels) / 5000 == pytest.approx(2.0, abs=0.05)


def test_level_at_matches_linear_scan():
    rng = np.random.default_rng(4)
    tr = generate_trace(3.0, 1.0, 2.0, 50, rng)
    for t in np.concatenate([rng.uniform(0, 60, 300), tr.times]):
        assert level_at(tr, t) == level_at_linear(tr, t)
    assert level_at(tr, 0.0) == tr.levels[0]
    with pytest.raises(ValueError):
        level_at(tr, -1)


def test_invalid_arguments():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        generate_trace(-1, 1, 2, 10, rng)
    with pytest.raises(ValueError):
        generate_trace(1, 2, 1, 10, rng)
    with pytest.raises(ValueError):
        ResourceTrace(np.array([0.5]), np.array([1.0]), 0, 1, 1)
    with pytest.raises(ValueError):
        calibrate_range(desk_cnn(), 0.5, 4)


def test_calibration():
    spec = desk_cnn()
    low, high = calibrate_range(spec, 4, 4)
    assert high / low == 4
    assert high == training_macs(dense_macs(spec)) * 4  # full model, 4 batches, one round
    assert calibrate_range(spec, 1, 4)[0] == calibrate_range(spec, 1, 4)[1]


def test_traces_deterministic_per_device_and_seed():
    a = device_traces(3, 2.0, 1, 2, 10, master_seed=7)
    b = device_traces(5, 2.0, 1, 2, 10, master_seed=7)
    c = device_traces(3, 2.0, 1, 2, 10, master_seed=8)
    for i in range(3):
        assert np.array_equal(a[i].times, b[i].times) and np.array_equal(a[i].levels, b[i].levels)
    assert not np.array_equal(a[0].levels, c[0].levels)


def test_export(tmp_path):
    traces = device_traces(2, 1.0, 1, 2, 5, 0)
    export_traces(tmp_path / "t.csv", traces)
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "device,time,level" and len(lines) == 1 + sum(len(t) for t in traces)
