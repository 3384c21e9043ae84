"""Command-line entry point: ``nullfront <command> --config PATH [options]``.

Exit status is 0 when every threshold check passes, 2 when one fails and 1
for usage or configuration errors.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .front import FrontError, front_csv
from .geodesic import IntegrationError
from .hypersurface import HypersurfaceError
from .lorentz_chart import ChartError
from .metric_dsl import DSLError
from .scenarios import ConfigError, apply_overrides, load_config, run_scenario
from .slicer import SlicerError, sliced_csv

COMMANDS = {
    "cone": "null cone of a point (defaults to the shipped Minkowski cone)",
    "front": "build the front only and check its invariants",
    "slice": "build the front and slice it",
    "saucer": "flying-saucer front with cusp-edge fits (defaults to the shipped saucer)",
    "verify": "run every stage and report pass/fail through the exit status",
    "report": "run every stage and print the check table",
}
DEFAULT_CONFIG = {"cone": "builtin:cone", "saucer": "builtin:saucer"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nullfront", description="Null fronts from Legendrian data.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True
    for name, help_text in COMMANDS.items():
        s = sub.add_parser(name, help=help_text, description=help_text)
        s.add_argument("--config", default=DEFAULT_CONFIG.get(name),
                       required=name not in DEFAULT_CONFIG,
                       help="scenario JSON file, or builtin:NAME")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry by dotted path (repeatable)")
        s.add_argument("--out-front", metavar="PATH", help="write the sampled front as CSV")
        s.add_argument("--out-slice", metavar="PATH",
                       help="write sliced crossings as CSV (one file per slice: PATH, PATH.1, ...)")
        s.add_argument("--out-report", metavar="PATH", help="write the invariant report as JSON")
    return p


def _write(path: str, text: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _slice_path(base: str, i: int) -> str:
    if i == 0:
        return base
    p = Path(base)
    return str(p.with_name(f"{p.stem}.{i}{p.suffix}"))


def _table(report) -> str:
    lines = [f"scenario {report.scenario} (nullfront {report.version})"]
    for c in report.checks:
        tag = "PASS" if c.passed else "FAIL"
        lines.append(f"{tag} {c.name}: max={c.max!r} rms={c.rms!r} threshold={c.threshold!r}")
    lines.append("all checks passed" if report.passed else f"{len(report.failures())} check(s) failed")
    return "\n".join(lines) + "\n"


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        cfg = apply_overrides(load_config(args.config), args.set)
        stages = ("front",) if args.command == "front" else ("front", "slices")
        if args.command == "cone" and cfg.get("legendrian", {}).get("type") != "fiber":
            raise ConfigError("the cone command needs a fiber legendrian")
        if args.command == "saucer" and not cfg.get("cusps"):
            raise ConfigError("the saucer command needs a 'cusps' section")
        run = run_scenario(cfg, stages)
    except (ConfigError, DSLError, ChartError, HypersurfaceError, FrontError, SlicerError,
            IntegrationError) as exc:
        print(f"nullfront: {exc}", file=sys.stderr)
        return 1

    report = run.report
    try:
        if args.out_front:
            _write(args.out_front, front_csv(run.nc))
        if args.out_slice:
            for s in run.slices:
                _write(_slice_path(args.out_slice, s.index), sliced_csv(s.sliced))
        if args.out_report:
            _write(args.out_report, report.to_json())
    except OSError as exc:
        print(f"nullfront: cannot write output: {exc}", file=sys.stderr)
        return 1

    if args.command == "report" or not args.out_report:
        sys.stdout.write(_table(report))
    for c in report.failures():
        print(f"nullfront: check {c.name} failed: max {c.max!r} > threshold {c.threshold!r}",
              file=sys.stderr)
    return 0 if report.passed else 2


if __name__ == "__main__":
    sys.exit(main())
