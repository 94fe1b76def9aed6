"""Command-line driver.

Subcommands:
  run <config>                     train the experiment matrix, write CSVs
  verify                           run the fixture suite (exit 0 iff green)
  plot <csv> <svg> --kind <kind>   render a chart from runs.csv
  gen-sbm <config>                 write dataset fixture files

Exit codes: 0 success (diverged runs only warn), 1 failed verification,
2 unparseable config or CSV schema mismatch, 3 I/O failure. The environment
variable RANDALIGN_THREADS caps the run worker pool (default 1).
"""

from __future__ import annotations

import argparse
import sys

from .experiments import (
    ConfigError,
    generate_fixtures,
    load_config,
    read_csv_rows,
    run_matrix,
    verify_fixtures,
)
from .svgplot import RENDERERS, PlotSchemaError


def _cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    try:
        diverged = run_matrix(cfg)
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    if diverged:
        print(f"warning: {diverged} diverged run(s) recorded", file=sys.stderr)
    print(f"wrote {cfg.out_dir}/runs.csv and {cfg.out_dir}/summary.csv")
    return 0


def _cmd_verify(_args) -> int:
    return 0 if verify_fixtures() else 1


def _cmd_plot(args) -> int:
    try:
        rows = read_csv_rows(args.csv)
        svg = RENDERERS[args.kind](rows)
    except (PlotSchemaError, OSError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    try:
        with open(args.svg, "w", newline="\n", encoding="utf-8") as fh:
            fh.write(svg)
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    print(f"wrote {args.svg}")
    return 0


def _cmd_gen_sbm(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    try:
        written = generate_fixtures(cfg)
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    print(f"wrote {len(written)} fixture graph(s) under {cfg.out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="randalign",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="train the experiment matrix from a config")
    p_run.add_argument("config")
    p_run.set_defaults(func=_cmd_run)

    p_verify = sub.add_parser("verify", help="run the fixture verification suite")
    p_verify.set_defaults(func=_cmd_verify)

    p_plot = sub.add_parser("plot", help="render an SVG chart from runs.csv")
    p_plot.add_argument("csv")
    p_plot.add_argument("svg")
    p_plot.add_argument("--kind", choices=sorted(RENDERERS), required=True)
    p_plot.set_defaults(func=_cmd_plot)

    p_gen = sub.add_parser("gen-sbm", help="write dataset fixture files")
    p_gen.add_argument("config")
    p_gen.set_defaults(func=_cmd_gen_sbm)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
