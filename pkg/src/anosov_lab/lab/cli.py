"""Command-line entry point: ``anosov-lab <subcommand> --config FILE``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from ..cone import gap_constants
from ..hypertube import BoxFamily, TruncationSpec, verify_difference_identity
from ..words import word_count
from .config import ConfigError, ExperimentConfig, ingest_config
from .experiment import Experiment, ExperimentError
from .report import counts_csv, emit_report, prediction_table, predictions_csv, run_report

__all__ = ["main", "build_parser"]

log = logging.getLogger("anosov_lab")

SUBCOMMANDS = ("enumerate", "spectra", "cone", "critical", "tube", "count", "predict", "report")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="experiment YAML file")
    common.add_argument("--cache-dir", default=None, help="spectrum cache (default: $ANOSOV_LAB_CACHE, then config)")
    common.add_argument("--shards", type=int, default=None, help="shard count (default: from config)")
    common.add_argument("--seed", type=int, default=None, help="seed (default: from config)")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--max-word-length", type=int, default=None, help="override the enumeration length")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="anosov-lab", description="Correlated spectra counting experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "enumerate": "word and conjugacy class counts per length",
        "spectra": "build (or load) the Jordan and Cartan samples",
        "cone": "limit cone, properness and per-row exponents",
        "critical": "critical vector of the estimated growth indicator",
        "tube": "hypertube and the box/truncation identity check",
        "count": "box counts along the grid (CSV)",
        "predict": "truncation integrals and count predictions (CSV)",
        "report": "counts, fits, predictions and summary",
    }
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, parents=[common], help=helps[name])
        if name == "tube":
            p.add_argument("--samples", type=int, default=10_000)
    return parser


def _load(args) -> tuple[ExperimentConfig, Experiment]:
    cfg = ingest_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.shards is not None:
        changes["shard_count"] = args.shards
    if args.max_word_length is not None:
        changes["max_word_length"] = args.max_word_length
    if changes:
        cfg = cfg.replace(**changes)
    return cfg, Experiment(cfg, cache_dir=args.cache_dir)


def _out(args, cfg, suffix) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out / f"{cfg.name}-{suffix}"


def _fmt(xs) -> str:
    return " ".join(f"{x:.10g}" for x in np.atleast_1d(xs))


def cmd_enumerate(args, cfg, exp) -> str:
    rank = len(cfg.representations[0].generators)
    classes = exp.classes
    path = _out(args, cfg, "enumeration.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["length", "words", "classes"])
        for n in range(cfg.max_word_length + 1):
            w.writerow([n, word_count(rank, n), int(np.sum(classes.lengths == n))])
    return str(path)


def cmd_spectra(args, cfg, exp) -> str:
    c, e = exp.classes, exp.elements
    lines = [
        f"classes: {len(c)}",
        f"loxodromic_fraction: {c.loxodromic.mean():.6f}",
        f"elements: {len(e)}",
        f"gap_constants_jordan: {_fmt(gap_constants(c))}",
        f"gap_constants_cartan: {_fmt(gap_constants(e))}",
    ]
    path = _out(args, cfg, "spectra.txt")
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def cmd_cone(args, cfg, exp) -> str:
    lc = exp.limit_cone
    lines = [lc.hull.to_text(), f"proper: {exp.geometry.proper}", f"factor_deltas: {_fmt(exp.factor_deltas)}"]
    path = _out(args, cfg, "cone.txt")
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def cmd_critical(args, cfg, exp) -> str:
    g = exp.geometry
    bound = exp.bound_check()
    lines = [g.critical.to_text(), f"bound_min_delta_r: {bound['bound']:.10g}", f"bound_satisfied: {bound['satisfied']}"]
    path = _out(args, cfg, "critical.txt")
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def cmd_tube(args, cfg, exp) -> str:
    g = exp.geometry
    h = g.hypertube
    family = BoxFamily(exp.phi, exp.r, exp.eps)
    s1, s2 = TruncationSpec(h.v, g.b1, 0.0), TruncationSpec(h.v, g.b2, 0.0)
    lines = [h.to_text(), "T samples violations in_box"]
    for T in exp.T[:: max(1, len(exp.T) // 5)]:
        res = verify_difference_identity(h, s1, s2, family, float(T), args.samples, cfg.seed)
        lines.append(f"{T:g} {res['samples']} {res['violations']} {res['in_box']}")
    path = _out(args, cfg, "tube.txt")
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def cmd_count(args, cfg, exp) -> str:
    path = _out(args, cfg, "counts.csv")
    path.write_text(counts_csv(exp.counts()))
    return str(path)


def cmd_predict(args, cfg, exp) -> str:
    path = _out(args, cfg, "predictions.csv")
    path.write_text(predictions_csv(prediction_table(exp)))
    return str(path)


def cmd_report(args, cfg, exp) -> str:
    files = emit_report(run_report(exp), args.out)
    return "\n".join(str(p) for p in files.values())


COMMANDS = {name: globals()[f"cmd_{name}"] for name in SUBCOMMANDS}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg, exp = _load(args)
        print(COMMANDS[args.command](args, cfg, exp))
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return 2
    except (ExperimentError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
