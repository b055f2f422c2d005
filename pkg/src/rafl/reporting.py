"""Result files: versioned CSVs, summary tables and hand-written SVG plots."""

from __future__ import annotations

import csv
import json
import logging
from collections import defaultdict
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

log = logging.getLogger(__name__)

CONVERGENCE_SCHEMA = "convergence/1"
CONVERGENCE_COLUMNS = ["technique", "seed", "round", "accuracy", "total_macs", "stragglers"]


class SchemaError(ValueError):
    pass


def _num(v) -> str:
    return repr(float(v))


def write_convergence(path, records):
    with open(path, "w", newline="") as f:
        f.write(f"# schema: {CONVERGENCE_SCHEMA}\n")
        w = csv.writer(f)
        w.writerow(CONVERGENCE_COLUMNS)
        for rec in records:
            for tech, seed, rnd, acc, macs, strag in rec.rows():
                w.writerow([tech, seed, rnd, _num(acc), _num(macs), strag])


def read_convergence(path) -> list[dict]:
    with open(path, newline="") as f:
        first = f.readline().strip()
        if first != f"# schema: {CONVERGENCE_SCHEMA}":
            raise SchemaError(f"{path}: unsupported schema line {first!r} (expected {CONVERGENCE_SCHEMA})")
        reader = csv.DictReader(f)
        if reader.fieldnames != CONVERGENCE_COLUMNS:
            raise SchemaError(f"{path}: unexpected columns {reader.fieldnames}")
        return [{"technique": r["technique"], "seed": int(r["seed"]), "round": int(r["round"]),
                 "accuracy": float(r["accuracy"]), "total_macs": float(r["total_macs"]),
                 "stragglers": int(r["stragglers"])} for r in reader]


def curves(rows: list[dict]) -> dict[str, dict[int, dict[int, float]]]:
    """technique -> seed -> round -> accuracy."""
    out: dict = defaultdict(lambda: defaultdict(dict))
    for r in rows:
        out[r["technique"]][r["seed"]][r["round"]] = r["accuracy"]
    return out


def summarize(rows: list[dict], at_rounds=()) -> dict:
    """Mean and population std of final (and round-k) accuracy per technique.

    Seeds whose curves stop before the longest one are reported in
    ``warnings`` and evaluated at their own last round.
    """
    summary: dict = {"techniques": {}, "warnings": []}
    strag: dict = defaultdict(int)
    for r in rows:
        strag[r["technique"]] += r["stragglers"]
    for tech, per_seed in sorted(curves(rows).items()):
        last = max(max(c) for c in per_seed.values())
        finals = []
        for seed, c in sorted(per_seed.items()):
            missing = sorted(set(range(1, last + 1)) - set(c))
            if missing:
                msg = f"{tech} seed {seed}: {len(missing)} missing rounds (first {missing[0]})"
                log.warning(msg)
                summary["warnings"].append(msg)
            finals.append(c[max(c)])
        entry = {"seeds": len(finals), "rounds": last, "final_mean": float(np.mean(finals)),
                 "final_std": float(np.std(finals)), "stragglers": strag[tech], "at": {}}
        for k in at_rounds:
            vals = [c[k] for c in per_seed.values() if k in c]
            if vals:
                entry["at"][str(k)] = {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
        summary["techniques"][tech] = entry
    return summary


def format_summary(summary: dict) -> str:
    ks = sorted({k for e in summary["techniques"].values() for k in e["at"]}, key=int)
    head = ["technique", "seeds", "final acc"] + [f"acc@{k}" for k in ks] + ["stragglers"]
    lines = [head]
    for tech, e in summary["techniques"].items():
        row = [tech, str(e["seeds"]), f"{100 * e['final_mean']:.2f} ± {100 * e['final_std']:.2f}"]
        for k in ks:
            a = e["at"].get(k)
            row.append(f"{100 * a['mean']:.2f} ± {100 * a['std']:.2f}" if a else "-")
        row.append(str(e["stragglers"]))
        lines.append(row)
    widths = [max(len(r[i]) for r in lines) for i in range(len(head))]
    text = "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in lines)
    for w in summary["warnings"]:
        text += f"\nwarning: {w}"
    return text


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# SVG

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
_W, _H, _PAD = 640, 420, 60


class _Axes:
    def __init__(self, xs, ys, title, xlabel, ylabel):
        xs, ys = np.asarray(xs, float), np.asarray(ys, float)
        self.x0, self.x1 = float(xs.min()), float(xs.max())
        self.y0, self.y1 = float(ys.min()), float(ys.max())
        if self.x1 == self.x0:
            self.x1 = self.x0 + 1.0
        if self.y1 == self.y0:
            self.y1 = self.y0 + 1.0
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
            '<rect width="100%" height="100%" fill="white"/>',
            f'<text x="{_W / 2}" y="24" text-anchor="middle" font-size="16">{escape(title)}</text>',
            f'<text x="{_W / 2}" y="{_H - 12}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
            f'<text x="16" y="{_H / 2}" text-anchor="middle" font-size="12" '
            f'transform="rotate(-90 16 {_H / 2})">{escape(ylabel)}</text>',
            f'<rect x="{_PAD}" y="{_PAD / 2 + 10}" width="{_W - 1.5 * _PAD}" height="{_H - 2 * _PAD}" '
            'fill="none" stroke="black"/>',
        ]
        for i in range(5):
            fx = self.x0 + (self.x1 - self.x0) * i / 4
            fy = self.y0 + (self.y1 - self.y0) * i / 4
            self.parts.append(f'<text x="{self.px(fx):.1f}" y="{_H - _PAD + 28}" font-size="10" '
                              f'text-anchor="middle">{fx:.3g}</text>')
            self.parts.append(f'<text x="{_PAD - 6}" y="{self.py(fy) + 3:.1f}" font-size="10" '
                              f'text-anchor="end">{fy:.3g}</text>')

    def px(self, x):
        return _PAD + (x - self.x0) / (self.x1 - self.x0) * (_W - 1.5 * _PAD)

    def py(self, y):
        return _H - _PAD + 10 - (y - self.y0) / (self.y1 - self.y0) * (_H - 2 * _PAD)

    def line(self, xs, ys, color, dashed=False):
        pts = " ".join(f"{self.px(x):.1f},{self.py(y):.1f}" for x, y in zip(xs, ys))
        dash = ' stroke-dasharray="5,4"' if dashed else ""
        self.parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>')

    def band(self, xs, lo, hi, color):
        pts = [f"{self.px(x):.1f},{self.py(y):.1f}" for x, y in zip(xs, hi)]
        pts += [f"{self.px(x):.1f},{self.py(y):.1f}" for x, y in zip(xs[::-1], lo[::-1])]
        self.parts.append(f'<polygon points="{" ".join(pts)}" fill="{color}" fill-opacity="0.2" stroke="none"/>')

    def dots(self, xs, ys, color):
        for x, y in zip(xs, ys):
            self.parts.append(f'<circle cx="{self.px(x):.1f}" cy="{self.py(y):.1f}" r="3" fill="{color}"/>')

    def legend(self, labels):
        for i, (label, color) in enumerate(labels):
            y = _PAD / 2 + 26 + 16 * i
            self.parts.append(f'<rect x="{_PAD + 10}" y="{y - 9}" width="10" height="10" fill="{color}"/>')
            self.parts.append(f'<text x="{_PAD + 26}" y="{y}" font-size="11">{escape(label)}</text>')

    def svg(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def pareto_svg(path, front_macs, front_dacc, uniform_macs, uniform_dacc):
    ax = _Axes(list(front_macs) + list(uniform_macs), list(front_dacc) + list(uniform_dacc),
               "Pareto front vs. uniform rates", "expected forward MACs", "accuracy gain (short training)")
    order = np.argsort(uniform_macs)
    ax.line(np.asarray(uniform_macs)[order], np.asarray(uniform_dacc)[order], _COLORS[1], dashed=True)
    ax.dots(front_macs, front_dacc, _COLORS[0])
    ax.legend([("Pareto LUT entries", _COLORS[0]), ("same rate on every layer", _COLORS[1])])
    Path(path).write_text(ax.svg())


def convergence_svg(path, rows: list[dict]):
    per = curves(rows)
    series = []
    for tech, per_seed in sorted(per.items()):
        rounds = sorted(set.intersection(*(set(c) for c in per_seed.values())))
        acc = np.array([[c[r] for r in rounds] for c in per_seed.values()])
        series.append((tech, np.asarray(rounds), acc.mean(axis=0), acc.std(axis=0)))
    ys = [v for _, _, m, s in series for v in (m - s).tolist() + (m + s).tolist()]
    xs = [v for _, r, _, _ in series for v in r.tolist()]
    ax = _Axes(xs or [0, 1], ys or [0, 1], "Test accuracy per round (mean ± std over seeds)", "round", "accuracy")
    labels = []
    for i, (tech, rounds, mean, std) in enumerate(series):
        color = _COLORS[i % len(_COLORS)]
        ax.band(rounds, mean - std, mean + std, color)
        ax.line(rounds, mean, color)
        labels.append((tech, color))
    ax.legend(labels)
    Path(path).write_text(ax.svg())
