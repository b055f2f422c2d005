"""Ready-made network topologies."""

from __future__ import annotations

from .nn import Conv, Dense, Flatten, MaxPool, NetworkSpec, ReLU, SparseBegin, SparseEnd


def femnist_cnn(classes: int = 62, widths: tuple[int, int] = (32, 64)) -> NetworkSpec:
    """Two 5x5 convs (32, 64 filters, valid padding) with 2x2 max pooling, dense 512 then ``classes``."""
    a, b = widths
    return NetworkSpec(
        (
            SparseBegin(),
            Conv(a, 5, 5), ReLU(), MaxPool(2, 2),
            Conv(b, 5, 5), ReLU(), MaxPool(2, 2),
            SparseEnd(),
            Flatten(),
            Dense(512), ReLU(),
            Dense(classes),
        ),
        (1, 28, 28),
    )


def desk_cnn(classes: int = 10, widths: tuple[int, int, int] = (8, 24, 24), image_size: int = 16,
             channels: int = 1) -> NetworkSpec:
    """Three 3x3 convs for 16x16 inputs; the default desk-scale model."""
    a, b, c = widths
    return NetworkSpec(
        (
            SparseBegin(),
            Conv(a), ReLU(), MaxPool(2, 2),
            Conv(b), ReLU(),
            Conv(c), ReLU(),
            SparseEnd(),
            Flatten(),
            Dense(classes),
        ),
        (channels, image_size, image_size),
    )


def conv_chain(depth: int = 6, width: int = 16, image_size: int = 16, channels: int = 3) -> NetworkSpec:
    """``depth`` same-padded 3x3 convs of equal width followed by a classifier."""
    layers = [SparseBegin()]
    for _ in range(depth):
        layers += [Conv(width, padding=1), ReLU()]
    layers += [SparseEnd(), Flatten(), Dense(10)]
    return NetworkSpec(tuple(layers), (channels, image_size, image_size))


NETWORKS = {"femnist_cnn": femnist_cnn, "desk_cnn": desk_cnn, "conv_chain": conv_chain}


def build(name: str, **kwargs) -> NetworkSpec:
    if name not in NETWORKS:
        raise ValueError(f"unknown network {name!r}; choose from {sorted(NETWORKS)}")
    return NETWORKS[name](**kwargs)
