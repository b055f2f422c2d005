"""Lookup table of Pareto-optimal dropout vectors and its file format.

Binary layout (little endian)::

    b"DLUT"  u32 version  u32 vector_length  u32 entry_count  8-byte fingerprint
    entry_count x (vector_length x f32 rates, f64 expected forward MACs)
"""

from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass

import numpy as np

from .macs import training_macs

log = logging.getLogger(__name__)

MAGIC = b"DLUT"
VERSION = 1
_HEADER = struct.Struct("<4sIII8s")


@dataclass(frozen=True)
class ParetoLUT:
    vectors: np.ndarray  # (n, k) float32 rates
    macs: np.ndarray  # (n,) expected forward MACs, strictly increasing
    fingerprint: bytes

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float32)
        if vectors.ndim != 2 or len(vectors) != len(self.macs):
            raise ValueError("vectors must be (entries, layers) with one MAC count per entry")
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "macs", np.asarray(self.macs, dtype=np.float64))
        if len(self.fingerprint) != 8:
            raise ValueError("fingerprint must be 8 bytes")
        if np.any(np.diff(self.macs) <= 0):
            raise ValueError("LUT entries must be strictly increasing in MACs")

    def __len__(self):
        return len(self.macs)

    def __eq__(self, other):
        return (isinstance(other, ParetoLUT) and self.fingerprint == other.fingerprint
                and np.array_equal(self.vectors, other.vectors) and np.array_equal(self.macs, other.macs))

    @property
    def train_macs(self) -> np.ndarray:
        return training_macs(1.0) * self.macs

    def check_spec(self, spec):
        if spec.fingerprint() != self.fingerprint:
            raise ValueError("LUT was built for a different network (fingerprint mismatch)")
        if self.vectors.shape[1] != spec.n_conv:
            raise ValueError("LUT vector length does not match the network's conv layer count")

    def lookup(self, budget: float) -> tuple[np.ndarray, float]:
        return lookup(self, budget)


def build_lut(vectors, macs, fingerprint: bytes) -> ParetoLUT:
    """Sort by MACs and drop entries whose MACs repeat a previous entry."""
    vectors = np.asarray(vectors, dtype=np.float64)
    macs = np.asarray(macs, dtype=np.float64)
    order = np.argsort(macs, kind="stable")
    keep = [order[0]] if len(order) else []
    for i in order[1:]:
        if macs[i] > macs[keep[-1]]:
            keep.append(i)
    return ParetoLUT(vectors[keep], macs[keep], fingerprint)


def lookup_index(lut: ParetoLUT, budget: float) -> int:
    if len(lut) == 0:
        raise RuntimeError("empty LUT")
    if budget < 0:
        raise ValueError("budget must be non-negative")
    k = int(np.searchsorted(lut.train_macs, budget, side="right")) - 1
    if k < 0:
        log.debug("budget %.4g below the cheapest LUT entry; using it anyway", budget)
        return 0
    return k


def lookup(lut: ParetoLUT, budget: float) -> tuple[np.ndarray, float]:
    """Entry with the largest training MACs not above ``budget`` (cheapest one if none fits)."""
    k = lookup_index(lut, budget)
    return lut.vectors[k].astype(np.float64), float(lut.macs[k])


def save(lut: ParetoLUT, path):
    n, k = lut.vectors.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, k, n, lut.fingerprint))
        for vec, m in zip(lut.vectors, lut.macs):
            f.write(vec.astype("<f4").tobytes())
            f.write(struct.pack("<d", m))


def load(path, spec=None) -> ParetoLUT:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated LUT header")
    magic, version, k, n, fp = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a LUT file")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported LUT version {version}")
    row = 4 * k + 8
    if len(raw) != _HEADER.size + n * row:
        raise ValueError(f"{path}: expected {n} entries of {row} bytes, file size does not match")
    dtype = np.dtype([("v", "<f4", (k,)), ("m", "<f8")])
    rec = np.frombuffer(raw, dtype=dtype, offset=_HEADER.size, count=n)
    lut = ParetoLUT(rec["v"].copy(), rec["m"].copy(), fp)
    if spec is not None:
        lut.check_spec(spec)
    return lut


def export_csv(lut: ParetoLUT, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([f"d{i}" for i in range(lut.vectors.shape[1])] + ["expected_fwd_macs"])
        for vec, m in zip(lut.vectors, lut.macs):
            w.writerow([repr(float(v)) for v in vec] + [repr(float(m))])
