"""Command-line front end.

    stab run <config>      paired-run stability estimate vs the matching bound
    stab sweep <config>    step-size sweep: gaps, stability, ratio table
    stab risk <config>     excess-risk bounds vs measured excess risk
    stab props [<config>]  batch property suite (falsifiers)
    stab bounds --name X --inputs k=v ...   pure bound calculator

Exit codes: 0 pass/indicative, 2 bound or property violation, 3 divergence,
4 config error. STAB_WORKERS sets the trial worker pool size; --seed
overrides the config seed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional

from .config import ConfigError, parse_config, parse_config_text, override_seed
from .experiments import (
    EXIT_CONFIG,
    calculate_bound,
    cmd_property_suite,
    cmd_risk_compare,
    cmd_stability_run,
    cmd_sweep_stepsize,
)

_DEFAULT_PROPS_CONFIG = "[problem]\n"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stab", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, needs_config=True):
        if needs_config:
            p.add_argument("config", help="experiment config file (INI sections)")
        p.add_argument("--seed", type=int, default=None, help="override the run seed")
        p.add_argument("--out", default=None, help="override the output directory")

    add_common(sub.add_parser("run", help="stability estimate vs bound"))
    add_common(sub.add_parser("sweep", help="step-size sweep"))
    add_common(sub.add_parser("risk", help="excess-risk comparison"))

    props = sub.add_parser("props", help="property suite")
    props.add_argument("config", nargs="?", default=None)
    props.add_argument("--seed", type=int, default=None)
    props.add_argument("--out", default=None)
    props.add_argument("--filter", default=None, help="substring filter on property names")

    bnd = sub.add_parser("bounds", help="pure bound calculator")
    bnd.add_argument("--name", required=True)
    bnd.add_argument("--inputs", nargs="*", default=[], metavar="k=v")
    return parser


def _load_config(path: Optional[str], seed: Optional[int], out: Optional[str]):
    if path is None:
        config = parse_config_text(_DEFAULT_PROPS_CONFIG, source="<defaults>")
    else:
        config = parse_config(path)
    config = override_seed(config, seed)
    if out is not None:
        output = dict(config.output)
        output["dir"] = out
        object.__setattr__(config, "output", output)
    return config


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; keep the exit-code contract
        return EXIT_CONFIG if exc.code not in (0, None) else 0

    try:
        if args.command == "bounds":
            inputs = {}
            for token in args.inputs:
                if "=" not in token:
                    raise ConfigError([f"--inputs entries must be k=v, got {token!r}"])
                key, raw = token.split("=", 1)
                inputs[key] = float(raw)
            print(json.dumps(calculate_bound(args.name, inputs), sort_keys=True))
            return 0

        config = _load_config(getattr(args, "config", None), args.seed, args.out)
        out_dir = Path(config.output["dir"])
        if args.command == "run":
            result = cmd_stability_run(config, out_dir)
        elif args.command == "sweep":
            result = cmd_sweep_stepsize(config, out_dir)
        elif args.command == "risk":
            result = cmd_risk_compare(config, out_dir)
        elif args.command == "props":
            result = cmd_property_suite(config, out_dir, name_filter=args.filter)
        else:  # pragma: no cover
            return EXIT_CONFIG
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG

    for report in result.reports:
        print(f"{report.name}: value={report.value:.6g} "
              f"empirical={report.empirical_mean} verdict={report.verdict}")
    for prop in result.properties:
        print(f"{prop.name}: {'pass' if prop.passed else 'FAIL'}")
    if result.notes.get("divergence"):
        print(f"divergence: {result.notes['divergence']}", file=sys.stderr)
    return result.exit_code


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
