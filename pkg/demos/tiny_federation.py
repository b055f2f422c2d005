"""A few rounds of every technique on a small synthetic federation.

Uses a quick hand-made LUT instead of a DSE so it finishes in about a minute;
`rafl dse` produces the real one.

Run: python3 demos/tiny_federation.py
"""

import numpy as np

from rafl.config import load_config
from rafl.experiment import environment, fl_settings
from rafl.fl import run_experiment
from rafl.lut import build_lut
from rafl.macs import network_expected_macs
from rafl.networks import desk_cnn

cfg = load_config(None, ["fl.devices=8", "fl.per_round=4", "fl.rounds=30", "fl.seeds=[0]", "fl.lam=2",
                         'fl.techniques=["distreal","federated_dropout","heterofl","fedavg_full","small_nn"]'])
spec = desk_cnn()
rates = np.linspace(0.5, 0.0, 11)
vectors = np.column_stack([rates, rates, rates])
lut = build_lut(vectors, [network_expected_macs(spec, v).total for v in vectors], spec.fingerprint())



for rec in run_experiment(environment(cfg, lut=lut), fl_settings(cfg)):
    print(f"{rec.technique:18s} accuracy every 5 rounds {' '.join(f'{a:.2f}' for a in rec.accuracy[4::5])}  "
          f"stragglers {sum(rec.stragglers)}  overruns {sum(rec.overruns)}")
