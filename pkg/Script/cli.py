"""Command line entrypoint for particle lab experiments."""

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any

try:
    from dotenv import load_dotenv

    load_dotenv()
except Exception:
    pass

from .config import LabConfig
from .errors import ConfigError, InfeasibleScaleError, ParticleLabError, SchemaError
from .experiment import ExperimentSpec, load_mapping, print_schema, spec_from_mapping
from .runner import run

# Subcommand flags that map straight onto spec keys.
_FLAG_KEYS = {
    "rho": "params.rho",
    "d": "domain.d",
    "side": "domain.side",
    "mode": "domain.mode",
    "field": "field.kind",
    "c": "field.c",
    "observable": "observable.kind",
    "obs_side": "observable.side",
    "times": "times",
    "K": "scales.K",
    "n_outer": "budgets.n_outer",
    "n_inner": "budgets.n_inner",
    "n_cond": "budgets.n_cond",
    "scheme": "scheme.kind",
    "dt": "scheme.dt",
    "eps": "scheme.eps",
    "s": "martingale.s",
    "which": "checks",
    "format": "output.format",
}

SUBCOMMANDS = ("sample", "evolve", "var-decay", "localization", "martingale", "inequalities", "oracle-compare")


def setup_logging(level: str = "INFO") -> None:
    """Configure basic logging for CLI execution."""
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def _resolve_spec_path(cfg: LabConfig, spec_arg: str) -> Path:
    """Bare filenames are looked up in Data/specs/ when not found locally."""
    p = Path(spec_arg)
    if p.is_absolute() or p.exists():
        return p
    if p.parent == Path("."):
        return cfg.specs_dir / p
    return p


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--spec", type=str, default=None, help="Spec file (.kv or .json) used as the base")
    p.add_argument("--set", dest="assign", action="append", default=[], metavar="KEY=VALUE",
                   help="Override any spec key; repeatable")
    p.add_argument("--rho", type=str, default=None)
    p.add_argument("--d", type=str, default=None)
    p.add_argument("--side", type=str, default=None)
    p.add_argument("--mode", type=str, default=None)
    p.add_argument("--field", type=str, default=None)
    p.add_argument("--c", type=str, default=None)
    p.add_argument("--observable", type=str, default=None)
    p.add_argument("--obs-side", type=str, default=None)
    p.add_argument("--times", type=str, default=None, help="Comma-separated times")
    p.add_argument("--n-outer", type=str, default=None)
    p.add_argument("--n-inner", type=str, default=None)
    p.add_argument("--n-cond", type=str, default=None)
    p.add_argument("--scheme", type=str, default=None)
    p.add_argument("--dt", type=str, default=None)
    p.add_argument("--eps", type=str, default=None)


def build_parser() -> argparse.ArgumentParser:
    """Build the argument parser for the particle-lab CLI."""
    p = argparse.ArgumentParser(prog="particle-lab")
    p.add_argument("--print-schema", action="store_true", help="Print the experiment spec schema and exit")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", type=str, default=None, help="Output filename (saved under Data/) unless absolute")
    p.add_argument("--format", type=str, default=None, choices=("csv", "json"))
    p.add_argument("--log-level", type=str, default=None)

    sub = p.add_subparsers(dest="command")
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name, help=f"Run a {name} experiment")
        _add_common(sp)
        if name in ("localization", "inequalities"):
            sp.add_argument("--K", type=str, default=None, help="Comma-separated cube sides")
        if name == "martingale":
            sp.add_argument("--s", type=str, default=None, help="Comma-separated bracket scales")
        if name == "inequalities":
            sp.add_argument("--which", type=str, default=None, help="Comma-separated checks")
            sp.add_argument("--grid", dest="grid", action="append", default=[], metavar="KEY=VALUE",
                            help="Grid or scale override, e.g. scales.l=10,100; repeatable")
    rp = sub.add_parser("run", help="Run an experiment spec file")
    rp.add_argument("spec_file", type=str)
    rp.add_argument("--set", dest="assign", action="append", default=[], metavar="KEY=VALUE")
    return p


def _apply_overrides(cfg: LabConfig, args: argparse.Namespace) -> LabConfig:
    """Apply CLI overrides to the base configuration."""
    updates = {}
    if args.workers is not None:
        updates["workers"] = args.workers
    if args.log_level is not None:
        updates["log_level"] = args.log_level
    if args.format is not None:
        updates["output_format"] = args.format
    if not updates:
        return cfg
    return LabConfig(**{**cfg.__dict__, **updates})


def _parse_assignments(items: list[str]) -> dict[str, str]:
    out = {}
    for item in items:
        if "=" not in item:
            raise SchemaError(item, "expected KEY=VALUE")
        key, value = (part.strip() for part in item.split("=", 1))
        out[key] = value
    return out


def _spec_from_args(cfg: LabConfig, args: argparse.Namespace) -> ExperimentSpec:
    values: dict[str, Any] = {}
    if args.command == "run":
        values.update(load_mapping(_resolve_spec_path(cfg, args.spec_file)))
    else:
        if args.spec:
            values.update(load_mapping(_resolve_spec_path(cfg, args.spec)))
        values["kind"] = args.command
        for attr, key in _FLAG_KEYS.items():
            v = getattr(args, attr, None)
            if v is not None and attr != "format":
                values[key] = v
        values.update(_parse_assignments(getattr(args, "grid", [])))
    values.update(_parse_assignments(args.assign))
    spec = spec_from_mapping(values)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    if args.format is not None:
        spec = replace(spec, format=args.format)
    return spec


def main(argv: list[str]) -> int:
    """CLI entrypoint; returns process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.print_schema:
        sys.stdout.write(print_schema())
        return 0
    if not args.command:
        parser.print_usage(sys.stderr)
        return 2

    try:
        cfg = LabConfig.from_env()
        cfg = _apply_overrides(cfg, args)
    except ConfigError as e:
        print(str(e), file=sys.stderr)
        return 2

    setup_logging(cfg.log_level)
    log = logging.getLogger("particle_lab")

    try:
        spec = _spec_from_args(cfg, args)
    except FileNotFoundError as e:
        print(f"Spec not found: {e.filename}", file=sys.stderr)
        return 2
    except (SchemaError, InfeasibleScaleError) as e:
        print(str(e), file=sys.stderr)
        return 2

    try:
        code, result = run(spec, cfg, out=args.out)
        log.info("OK. kind=%s rows=%d passed=%s", spec.kind, len(result.rows), result.passed)
        return code
    except (SchemaError, InfeasibleScaleError) as e:
        print(str(e), file=sys.stderr)
        return 2
    except ParticleLabError as e:
        log.error("Failed: %s", e)
        return 1


if __name__ == "__main__":
    raise SystemExit(main(sys.argv[1:]))
