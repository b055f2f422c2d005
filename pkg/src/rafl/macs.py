"""Expected and realized multiply-accumulate counts of the forward pass.

Counting convention (dense case):

* conv: ``c_out * h_out * w_out * (c_in * k_w * k_h + bias)``
* dense: ``n_in * n_out (+ n_out with bias)``
* ReLU: one MAC per element, max pooling: one MAC per input element
* Flatten, SparseBegin/End: free

With dropout, a conv layer's cost is scaled by the keep rate of its own
filters and of the filters of the preceding conv layer; element-wise layers
scale with the keep rate of the conv layer that produced their input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Conv, Dense, MaskSet, MaxPool, NetworkSpec, ReLU, SparseEnd, check_rates

TRAINING_FACTOR = 2.0


def _check_rate(name: str, value: float):
    if not 0.0 <= value <= 0.5:
        raise ValueError(f"{name} must lie in [0, 0.5], got {value}")


def conv_expected_macs(d: float, d_prev: float, out_values: float, c_i: int, k_w: int, k_h: int,
                       bias: bool | int) -> float:
    """``(1 - d) * |Y| * ((1 - d_prev) * c_i * k_w * k_h + b)`` with ``|Y|`` the dense output size."""
    _check_rate("d", d)
    _check_rate("d_prev", d_prev)
    if min(out_values, c_i, k_w, k_h) < 0:
        raise ValueError("layer dimensions must be non-negative")
    return (1.0 - d) * out_values * ((1.0 - d_prev) * c_i * k_w * k_h + int(bool(bias)))


def elementwise_expected_macs(d_prev: float, dense_macs: float) -> float:
    _check_rate("d_prev", d_prev)
    if dense_macs < 0:
        raise ValueError("dense_macs must be non-negative")
    return (1.0 - d_prev) * dense_macs


def training_macs(forward_macs: float, factor: float = TRAINING_FACTOR) -> float:
    """Cost of a full training step (forward, backward, update)."""
    if forward_macs < 0:
        raise ValueError("forward_macs must be non-negative")
    return factor * forward_macs


@dataclass(frozen=True)
class MacBreakdown:
    per_layer: tuple[float, ...]

    @property
    def total(self) -> float:
        return float(sum(self.per_layer))


def _walk(spec: NetworkSpec, conv_term, elementwise_term) -> MacBreakdown:
    shapes = spec.shapes()
    per_layer = []
    conv_no = -1
    in_sparse = False
    for i, layer in enumerate(spec.layers):
        in_shape = shapes[i - 1] if i else spec.input_dims
        out_shape = shapes[i]
        if isinstance(layer, Conv):
            conv_no += 1
            out_values = int(np.prod(out_shape))
            per_layer.append(float(conv_term(conv_no, out_values, layer, in_shape[0])))
            in_sparse = True
        elif isinstance(layer, (ReLU, MaxPool)):
            x = float(np.prod(in_shape))
            per_layer.append(float(elementwise_term(conv_no, x)) if in_sparse and conv_no >= 0 else x)
        elif isinstance(layer, Dense):
            per_layer.append(float(in_shape[0] * layer.n_out + (layer.n_out if layer.has_bias else 0)))
        else:
            if isinstance(layer, SparseEnd):
                in_sparse = False
            per_layer.append(0.0)
    return MacBreakdown(tuple(per_layer))


def network_expected_macs(spec: NetworkSpec, d) -> MacBreakdown:
    """Expected forward MACs for dropout vector ``d`` (one rate per conv layer)."""
    d = check_rates(d, spec.n_conv)

    def conv_term(k, out_values, layer, c_in):
        d_prev = d[k - 1] if k else 0.0
        return conv_expected_macs(d[k], d_prev, out_values, c_in, layer.k_w, layer.k_h, layer.has_bias)

    return _walk(spec, conv_term, lambda k, x: elementwise_expected_macs(d[k], x))


def dense_macs(spec: NetworkSpec) -> float:
    return network_expected_macs(spec, np.zeros(spec.n_conv)).total


def realized_macs(spec: NetworkSpec, masks: MaskSet) -> MacBreakdown:
    """Exact forward MACs for concrete filter masks."""
    convs = [spec.layers[i] for i in spec.conv_indices]
    kept = [len(k) for k in masks.keep]

    def conv_term(k, out_values, layer, c_in):
        c_in_kept = kept[k - 1] if k else c_in
        out_kept = out_values // layer.c_out * kept[k]
        return float(out_kept * (c_in_kept * layer.k_w * layer.k_h + int(layer.has_bias)))

    return _walk(spec, conv_term, lambda k, x: x * kept[k] / convs[k].c_out)
