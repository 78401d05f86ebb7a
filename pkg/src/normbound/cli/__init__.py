"""Command-line interface.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure,
3 bound violations found by ``validate``.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..ode import IntegrationError
from ..regions import MarginEstimationFailed
from ..transition import InsufficientHorizon, NearSingularError
from .commands import (Session, ViolationsFound, run_analyze, run_bound, run_criteria,
                       run_regions, run_trace, run_validate)
from .config import ConfigError, RunConfig, parse_config, with_overrides
from .emit import write_manifest
from .presets import PRESETS, UnknownPreset, load_preset, run_preset

log = logging.getLogger("normbound")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_VIOLATION = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _tol(text: str) -> tuple[float, float | None]:
    parts = text.split(",")
    if len(parts) > 2:
        raise argparse.ArgumentTypeError("expected REL or REL,ABS")
    try:
        values = [float(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if any(not v > 0 for v in values):
        raise argparse.ArgumentTypeError("tolerances must be > 0")
    return values[0], values[1] if len(values) == 2 else None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--preset", choices=PRESETS, help="use a bundled configuration")
    common.add_argument("--out", type=Path, help="output directory (default: output_dir)")
    common.add_argument("--seed", type=int, help="override validation.seed")
    common.add_argument("--tol", type=_tol, metavar="REL[,ABS]", help="integration tolerances")
    common.add_argument("--mode", choices=("sup", "avg"), help="autonomous reduction mode")
    common.add_argument("--normalization", choices=("identity", "spectral"))
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="normbound", description="Norm bounds and stability regions for "
                     "non-autonomous polynomial systems.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("analyze", parents=[common], help="fundamental matrix, p(t), k(t)")
    sub.add_parser("bound", parents=[common], help="linear and nonlinear auxiliary bounds")
    sub.add_parser("criteria", parents=[common], help="stability criteria report")
    rg = sub.add_parser("regions", parents=[common], help="fixed points and region estimates")
    rg.add_argument("--simulate", action="store_true",
                    help="also find the level by simulating the nonlinear auxiliary equation")
    sub.add_parser("validate", parents=[common], help="Monte-Carlo check of the bound")
    tb = sub.add_parser("trace-boundary", parents=[common], help="reverse-time basin tracing")
    tb.add_argument("--level", type=float, help="ellipsoid level (default: certified level)")
    tb.add_argument("--seeds", type=int, default=16)
    rp = sub.add_parser("reproduce", parents=[common], help="run a bundled experiment")
    rp.add_argument("name", help=f"one of: {', '.join(PRESETS)}")
    return parser


def _load_config(args) -> RunConfig:
    if args.config is not None and args.preset is not None:
        raise ConfigError("", "give either --config or --preset, not both")
    if args.command == "reproduce":
        if args.config is not None:
            raise ConfigError("", "reproduce uses the named preset; --config is not accepted")
        config = load_preset(args.name)
    elif args.preset is not None:
        config = load_preset(args.preset)
    elif args.config is not None:
        try:
            text = args.config.read_bytes()
        except OSError as err:
            raise ConfigError(str(args.config), f"cannot read: {err.strerror or err}") from None
        config = parse_config(text)
    else:
        raise ConfigError("", "no configuration: pass --config FILE or --preset NAME")
    changes = {}
    if args.seed is not None:
        changes["validation.seed"] = args.seed
    if args.tol is not None:
        changes["tolerances.rel"] = args.tol[0]
        if args.tol[1] is not None:
            changes["tolerances.abs"] = args.tol[1]
    if args.mode is not None:
        changes["regions.mode"] = args.mode
    if args.normalization is not None:
        changes["normalization"] = args.normalization
    return with_overrides(config, **changes) if changes else config


def _dispatch(args, config: RunConfig, out: Path) -> tuple[list, dict | None]:
    session = Session(config)
    cmd = args.command
    if cmd == "analyze":
        return run_analyze(session, out), None
    if cmd == "bound":
        return run_bound(session, out), None
    if cmd == "criteria":
        return run_criteria(session, out), None
    if cmd == "regions":
        return run_regions(session, out, simulate=args.simulate), None
    if cmd == "validate":
        return run_validate(session, out), None
    if cmd == "trace-boundary":
        return run_trace(session, out, level=args.level, n_seeds=args.seeds), None
    if cmd == "reproduce":
        files, summary = run_preset(args.name, out, config=config)
        return files, {"preset": args.name}
    raise AssertionError(cmd)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "reproduce" and args.name not in PRESETS:
            raise UnknownPreset(args.name)
        config = _load_config(args)
        out = args.out if args.out is not None else Path(config.output_dir)
        try:
            files, extra = _dispatch(args, config, out)
        except ViolationsFound as err:
            write_manifest(out, config, args.command, err.files, config.validation.seed,
                           {"violations": err.count})
            print(f"normbound: {err}", file=sys.stderr)
            return EXIT_VIOLATION
        write_manifest(out, config, args.command, files, config.validation.seed, extra)
    except (ConfigError, UnknownPreset, InsufficientHorizon) as err:
        print(f"normbound: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (IntegrationError, NearSingularError, MarginEstimationFailed, ArithmeticError) as err:
        print(f"normbound: numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as err:
        print(f"normbound: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    for f in files:
        print(f)
    return EXIT_OK
