import numpy as np
import pytest

from rafl import nn
from rafl.nn import Conv, Dense, Flatten, MaxPool, NetworkSpec, ReLU, SparseBegin, SparseEnd


def every_layer_net() -> NetworkSpec:
    """Small net touching every layer type, strides, padding and a bias-free conv."""
    return NetworkSpec(
        (
            SparseBegin(),
            Conv(4, 3, 3, stride=1, padding=1), ReLU(), MaxPool(2, 2),
            Conv(5, 3, 2, stride=2, padding=1, has_bias=False), ReLU(),
            Conv(3, 2, 2),
            SparseEnd(),
            Flatten(),
            Dense(6), ReLU(),
            Dense(4, has_bias=False),
        ),
        (2, 8, 8),
    )


def numeric_grad(f, arr, eps=1e-5):
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + eps
        hi = f()
        arr[i] = old - eps
        lo = f()
        arr[i] = old
        g[i] = (hi - lo) / (2 * eps)
    return g


def grad_rel_error(spec, weights, x, y, masks):
    _, grads = nn.loss_and_grads(spec, weights, x, y, masks)
    worst = 0.0
    for name, p in weights.params.items():
        num = numeric_grad(lambda: nn.loss_and_grads(spec, weights, x, y, masks)[0], p)
        rel = np.abs(grads[name] - num) / np.maximum(np.abs(grads[name]) + np.abs(num), 1e-7)
        worst = max(worst, float(rel.max()))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def verdict():
    """Record a one-line outcome for an acceptance criterion, then assert it."""

    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
