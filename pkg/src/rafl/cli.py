"""Command-line entry point: ``rafl dse | run | report | trace-export``.

Every command takes ``--config FILE`` (a JSON config or a manifest written
by an earlier run) and any number of ``--set key.path=value`` overrides.
Outputs go to ``output.dir``, below ``$RAFL_OUTPUT_ROOT`` when it is set.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, experiment, lut as lutmod, reporting
from .config import ConfigError, load_config, output_dir
from .dse import extract_pareto_lut, front_vs_uniform, run_dse, uniform_curve
from .fl import make_devices, run_experiment
from .resources import export_traces

log = logging.getLogger("rafl")

MANIFEST_VERSION = 1


def _config(args) -> dict:
    path = args.config
    overrides = list(args.set or [])
    if path is not None:
        raw = json.loads(Path(path).read_text())
        if "manifest_version" in raw:
            if raw["manifest_version"] != MANIFEST_VERSION:
                raise ConfigError(f"{path}: unsupported manifest version {raw['manifest_version']}")
            return load_config(raw["config"], overrides)
    return load_config(path, overrides)


def _manifest(out: Path, command: str, cfg: dict, extra: dict | None = None):
    doc = {"manifest_version": MANIFEST_VERSION, "command": command, "code_version": __version__,
           "config": cfg, **(extra or {})}
    (out / f"manifest_{command}.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def cmd_dse(args) -> int:
    cfg = _config(args)
    out = output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    ctx = experiment.fitness_context(cfg)

    def progress(pop):
        log.info("generation %d/%d  rank-0 size %d  (%.0fs)", pop.generation, cfg["dse"]["generations"],
                 len(pop.front), time.time() - t0)

    result = run_dse(ctx, seed=cfg["dse"]["seed"], callback=progress)
    lut = extract_pareto_lut(result.final, ctx)
    lutmod.save(lut, out / "pareto.lut")
    lutmod.export_csv(lut, out / "pareto_lut.csv")
    result.write_dump(out / "dse_generations.csv")
    result.write_dump(out / "dse_initial.csv", generations=(0,))
    curve = uniform_curve(ctx)
    with open(out / "uniform_rates.csv", "w") as f:
        f.write("rate,macs,delta_acc\n")
        for r, m, a in curve:
            f.write(f"{r!r},{m!r},{a!r}\n")
    front_dacc = [ctx.delta_acc(v) for v in lut.vectors.astype(np.float64)]
    reporting.pareto_svg(out / "pareto.svg", lut.macs, front_dacc, [c[1] for c in curve], [c[2] for c in curve])
    comparison = front_vs_uniform(lut, ctx, curve)
    with open(out / "front_vs_uniform.csv", "w") as f:
        f.write("macs,front_delta_acc,uniform_delta_acc\n")
        for m, best, uni in comparison:
            f.write(f"{m!r},{best!r},{uni!r}\n")
    wins = sum(best >= uni for _, best, uni in comparison)
    _manifest(out, "dse", cfg)
    print(f"wrote {len(lut)} LUT entries to {out / 'pareto.lut'}; front >= uniform at {wins}/{len(curve)} MAC levels")
    return 0


def cmd_run(args) -> int:
    cfg = _config(args)
    if args.lut:
        cfg["fl"]["lut"] = args.lut
    fl = experiment.fl_settings(cfg)
    if "distreal" in fl.techniques and cfg["fl"]["lut"] is None:
        raise ConfigError("fl.lut: distreal needs a Pareto LUT; run `rafl dse` first and pass --lut <dir>/pareto.lut")
    out = output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    env = experiment.environment(cfg)
    t0 = time.time()

    def progress(rec):
        log.info("%s seed %d: final accuracy %.4f, stragglers %d (%.0fs)", rec.technique, rec.seed,
                 rec.accuracy[-1], sum(rec.stragglers), time.time() - t0)

    records = run_experiment(env, fl, progress)
    reporting.write_convergence(out / "convergence.csv", records)
    rows = reporting.read_convergence(out / "convergence.csv")
    reporting.convergence_svg(out / "convergence.svg", rows)
    lut_fp = env.lut.fingerprint.hex() if env.lut is not None else None
    _manifest(out, "run", cfg, {"lut_fingerprint": lut_fp})
    print(reporting.format_summary(reporting.summarize(rows)))
    return 0


def cmd_report(args) -> int:
    rows = []
    for d in args.dirs:
        path = Path(d) / "convergence.csv" if Path(d).is_dir() else Path(d)
        rows += reporting.read_convergence(path)
    summary = reporting.summarize(rows, args.at or ())
    print(reporting.format_summary(summary))
    if args.json:
        reporting.write_json(args.json, summary)
    return 0


def cmd_trace_export(args) -> int:
    cfg = _config(args)
    env = experiment.environment(cfg)
    fl = experiment.fl_settings(cfg)
    devices = make_devices(env, fl, args.seed if args.seed is not None else fl.seeds[0])
    out = Path(args.out) if args.out else output_dir(cfg) / "traces.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    export_traces(out, [d.trace for d in devices])
    print(f"wrote {len(devices)} traces to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rafl", description="Resource-aware federated learning simulator")
    p.add_argument("-v", "--verbose", action="store_true", help="progress logging on stderr")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config or manifest file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config value")

    sp = sub.add_parser("dse", help="search Pareto-optimal dropout vectors and write the LUT")
    common(sp)
    sp.set_defaults(func=cmd_dse)
    sp = sub.add_parser("run", help="run the FL experiment for every technique and seed")
    common(sp)
    sp.add_argument("--lut", help="LUT file for distreal (overrides fl.lut)")
    sp.set_defaults(func=cmd_run)
    sp = sub.add_parser("report", help="summarize convergence CSVs")
    sp.add_argument("dirs", nargs="+", help="result directories or convergence CSV files")
    sp.add_argument("--at", type=int, nargs="*", help="also report accuracy at these rounds")
    sp.add_argument("--json", help="write the summary as JSON here")
    sp.set_defaults(func=cmd_report)
    sp = sub.add_parser("trace-export", help="write the resource traces of one seed as CSV")
    common(sp)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_trace_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"rafl {args.command}: config error: {e}", file=sys.stderr)
        return 2
    except (ValueError, OSError, RuntimeError, FloatingPointError) as e:
        print(f"rafl {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
