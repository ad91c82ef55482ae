"""Command-line front ends for the three figure builders."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import figures
from .readers import FormatError


def _run(build, out_path) -> int:
    try:
        job = figures.FigureJob(Path(out_path))
        saved = job.save(build())
    except (FormatError, OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(saved)
    return 0


def main_history(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="causalfig-history",
        description="Loss curves with residual and weight profiles.")
    parser.add_argument("--history", required=True)
    parser.add_argument("--snapshots", required=True)
    parser.add_argument("--out", required=True)
    parser.add_argument("--max-profiles", type=int, default=4)
    args = parser.parse_args(argv)
    return _run(lambda: figures.plot_history(
        args.history, args.snapshots, max_profiles=args.max_profiles),
        args.out)


def main_heatmap(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="causalfig-heatmap",
        description="Reference/prediction/error maps with slice cuts.")
    parser.add_argument("--reference", required=True)
    parser.add_argument("--prediction", required=True)
    parser.add_argument("--component", default="u")
    parser.add_argument("--times", default="",
                        help="comma-separated slice times")
    parser.add_argument("--out", required=True)
    args = parser.parse_args(argv)
    try:
        times = tuple(float(v) for v in args.times.split(",") if v.strip())
    except ValueError:
        print(f"error: cannot parse time list {args.times!r}",
              file=sys.stderr)
        return 1
    return _run(lambda: figures.plot_heatmap(
        args.reference, args.prediction, args.component, times),
        args.out)


def main_spectrum(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="causalfig-spectrum",
        description="Energy-spectrum overlay of reference and "
                    "prediction.")
    parser.add_argument("--reference", required=True, nargs="+")
    parser.add_argument("--prediction", required=True, nargs="+")
    parser.add_argument("--out", required=True)
    args = parser.parse_args(argv)
    return _run(lambda: figures.plot_spectrum(
        args.reference, args.prediction), args.out)
