"""Command-line entry point: ``riccati-lab run | list | validate``.

Exit codes: 0 success, 1 a check failed, 2 unknown experiment, 3 bad
configuration or parameters outside the model's domain.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Sequence

from . import experiments as ex
from .config import ConfigError, ResolvedConfig, parse_file, parse_overrides, resolve
from .riccati_core import ParameterDomainError

EXIT_OK, EXIT_CHECK_FAILED, EXIT_UNKNOWN, EXIT_CONFIG = 0, 1, 2, 3


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="riccati-lab", description="Riccati diffusion and EnKF experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment and write CSV, SVG and a manifest")
    run.add_argument("name", help="experiment name (see 'riccati-lab list')")
    run.add_argument("--config", type=Path, help="flat key = value configuration file")
    run.add_argument("--out", type=Path, help="output directory (default ./riccati-lab-out/<name>)")
    run.add_argument("--seed", type=int, help="master seed; the experiment seed is derived from it")
    run.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                     help="override one configuration key (repeatable)")
    listing = sub.add_parser("list", help="list the experiment catalog")
    listing.add_argument("--verbose", "-v", action="store_true", help="also print every default key")
    check = sub.add_parser("validate", help="check a configuration without running it")
    check.add_argument("--config", type=Path, required=True)
    check.add_argument("--experiment", help="experiment name when the file has no 'experiment' key")
    check.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    return parser


def _resolve(name: str | None, config_path: Path | None, overrides: Sequence[str],
             seed: int | None = None) -> tuple[ex.ExperimentSpec, ResolvedConfig]:
    layers = []
    if config_path is not None:
        layers.append(parse_file(config_path))
    layers.append(parse_overrides(overrides))
    if name is None:
        name = next((layer["experiment"] for layer in layers if "experiment" in layer), None)
        if name is None:
            raise ConfigError("no experiment named: add 'experiment = <name>' or pass --experiment")
    spec = ex.get(name)
    return spec, resolve(spec.defaults, layers, experiment=name, master_seed=seed)


def _cmd_list(verbose: bool) -> int:
    width = max(len(name) for name in ex.CATALOG)
    for name, spec in ex.CATALOG.items():
        print(f"{name:<{width}}  {spec.claim}")
        if verbose:
            for key, value in spec.defaults.items():
                print(f"{'':<{width}}    {key} = {ex.format_value(value)}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    spec, config = _resolve(args.experiment, args.config, args.overrides)
    diagnostics = ex.validate(spec, config)
    for d in diagnostics:
        print(f"{spec.name}: {d}")
    if any(d.level == "error" for d in diagnostics):
        return EXIT_CONFIG
    print(f"{spec.name}: configuration ok" + (" (with warnings)" if diagnostics else ""))
    return EXIT_OK


def _cmd_run(args) -> int:
    spec, config = _resolve(args.name, args.config, args.overrides, args.seed)
    for d in ex.validate(spec, config):
        if d.level == "warning":
            print(f"{spec.name}: {d}", file=sys.stderr)
    out_dir = args.out if args.out is not None else Path("riccati-lab-out") / spec.name
    record = ex.execute(spec, config, out_dir)
    for check in record.outcome.checks:
        status = {True: "PASS", False: "FAIL", None: "SKIP"}[check.passed]
        print(f"{status}  {check.name}: {check.detail}")
    print(f"{spec.name}: {'pass' if record.passed else 'fail'} in {record.elapsed:.1f}s; "
          f"manifest {record.manifest_path}")
    return EXIT_OK if record.passed else EXIT_CHECK_FAILED


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "list":
            return _cmd_list(args.verbose)
        if args.command == "validate":
            return _cmd_validate(args)
        return _cmd_run(args)
    except ex.UnknownExperimentError as exc:
        print(f"riccati-lab: unknown experiment {exc.args[0]!r}; see 'riccati-lab list'", file=sys.stderr)
        return EXIT_UNKNOWN
    except (ConfigError, ParameterDomainError) as exc:
        print(f"riccati-lab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
