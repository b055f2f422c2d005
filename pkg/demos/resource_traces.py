"""Per-device resource traces and what each client technique makes of them.

Run: python3 demos/resource_traces.py
"""

from rafl.fl import federated_dropout_rate, heterofl_level
from rafl.networks import desk_cnn
from rafl.resources import calibrate_range, device_traces, level_at

spec = desk_cnn()
batches = 4
low, high = calibrate_range(spec, 4.0, batches)
print(f"calibrated range: {low:,.0f} .. {high:,.0f} MACs per round")

traces = device_traces(3, lam=2.0, low=low, high=high, horizon=5.0, master_seed=0)
for dev, tr in enumerate(traces):
    print(f"\ndevice {dev}: {len(tr)} level changes in 5 rounds")
    for t in (0.0, 1.0, 2.0, 3.0, 4.0):
        level = level_at(tr, t)
        budget = level / batches
        print(f"  t={t:.0f}  level {level / high:5.2f} x max   "
              f"FD rate {federated_dropout_rate(spec, budget)}   HeteroFL level {heterofl_level(spec, budget)}")
