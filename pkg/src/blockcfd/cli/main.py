"""``blockcfd`` command line: run cases, compare runs, print timing reports."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from importlib import resources
from pathlib import Path

from ..errors import BlockCfdError
from .config import load_config
from .reports import compare_runs, emit_timing_breakdown, format_breakdown, load_run
from .runner import run_case


def bundled_case(name):
    """Path of a case file shipped with the package (``cavity32`` or ``cavity32.json``)."""
    fname = name if name.endswith(".json") else f"{name}.json"
    return resources.files("blockcfd") / "cases" / fname


def _resolve_case(arg):
    p = Path(arg)
    if p.exists():
        return p
    bundled = bundled_case(arg)
    if bundled.is_file():
        return Path(str(bundled))
    raise FileNotFoundError(f"no case file {arg!r} (also not a bundled case)")


def _cmd_run(args):
    cfg = load_config(_resolve_case(args.case))
    overrides = {}
    if args.ranks is not None:
        overrides["ranks"] = args.ranks
    if args.engines is not None:
        overrides["engines"] = args.engines
    elif args.ranks is not None:
        overrides["engines"] = min(cfg.engines, args.ranks)
    if args.backend is not None:
        overrides["backend"] = args.backend
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        cfg = cfg.replace(**overrides)
    out = args.out or cfg.output or f"runs/{cfg.name}"
    cfg = cfg.replace(output=str(out))
    report = run_case(cfg, out, deterministic=args.deterministic)
    status = "converged" if report.converged else "not converged"
    print(f"{cfg.name}: {report.iterations} iterations, {status}; outputs in {out}")
    return 0


def _cmd_compare(args):
    print(json.dumps(compare_runs(args.a, args.b, args.threshold), indent=2, sort_keys=True))
    return 0


def _cmd_report(args):
    rep = load_run(args.run_dir)
    print(f"{rep.name} ({rep.solver}): {rep.iterations} iterations, converged={rep.converged}")
    print(format_breakdown(emit_timing_breakdown(rep, args.window)))
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="blockcfd", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a case file")
    run.add_argument("case", help="case JSON file or bundled case name")
    run.add_argument("--ranks", type=int)
    run.add_argument("--engines", type=int)
    run.add_argument("--backend", choices=("host", "engine"))
    run.add_argument("--deterministic", action="store_true",
                     help="single-threaded round-robin rank scheduling")
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="output directory (default runs/<case name>)")
    run.set_defaults(func=_cmd_run)

    cmp_ = sub.add_parser("compare", help="compare two run directories")
    cmp_.add_argument("a")
    cmp_.add_argument("b")
    cmp_.add_argument("--threshold", type=float, default=1e-5,
                      help="residual level for the time-to-threshold ratio")
    cmp_.set_defaults(func=_cmd_compare)

    rep = sub.add_parser("report", help="print the timing breakdown of a run directory")
    rep.add_argument("run_dir")
    rep.add_argument("--window", type=int, help="average over the last N iterations only")
    rep.set_defaults(func=_cmd_report)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (BlockCfdError, ValueError, FileNotFoundError) as exc:
        print(f"blockcfd: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
