"""Structured filter dropout on the desk CNN: what it costs and what it computes.

Run: python3 demos/macs_and_dropout.py
"""

import numpy as np

from rafl import nn
from rafl.macs import network_expected_macs, realized_macs, training_macs
from rafl.networks import desk_cnn, femnist_cnn

spec = desk_cnn()
full = network_expected_macs(spec, np.zeros(spec.n_conv)).total
print(f"desk_cnn forward MACs: {full:,.0f} (training step ~{training_macs(full):,.0f})")
print(f"femnist_cnn forward MACs: {network_expected_macs(femnist_cnn(), np.zeros(2)).total:,.0f}")

print("\nuniform rate -> expected MACs relative to the full model")
for rate in np.arange(0, 0.51, 0.1):
    m = network_expected_macs(spec, np.full(spec.n_conv, rate)).total
    print(f"  d={rate:.1f}  {m / full:6.3f}   (1-d)^2 = {(1 - rate) ** 2:.3f}")

# one concrete draw: only the kept filters are computed, survivors are rescaled
rng = np.random.default_rng(0)
weights = nn.init_weights(spec, rng)
masks = nn.sample_masks([0.3, 0.3, 0.3], spec, rng)
print("\nkept filters per layer:", [len(k) for k in masks.keep], "scale:", [round(s, 3) for s in masks.scale])
print(f"realized MACs for this draw: {realized_macs(spec, masks).total:,.0f}")

x = rng.random((4,) + spec.input_dims)
y = np.arange(4)
loss, grads = nn.loss_and_grads(spec, weights, x, y, masks)
print(f"masked training loss {loss:.4f}; conv-1 weight grad rows that are zero: "
      f"{int(np.sum(np.all(grads['1.W'] == 0, axis=(1, 2, 3))))} of {spec.layers[1].c_out}")
