"""CLI: plots convergence|field|steps <csv> -o <image>."""

import argparse
import sys

from .figures import plot_convergence, plot_field, plot_steps
from .frames import SchemaError


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="plots", description="Render heatbie CSV artifacts as figures")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("convergence", "loglog error curves from report.csv"),
                            ("field", "heatmap from a field CSV"),
                            ("steps", "step-size history from steps.csv")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("csv", help="input CSV path")
        p.add_argument("-o", "--out", required=True, help="output image path")
        if name == "convergence":
            p.add_argument("--group-by", default="k",
                           help="report column to group series by")
            p.add_argument("--column", default="rel_l2",
                           help="error column to plot")
    args = parser.parse_args(argv)
    try:
        if args.command == "convergence":
            plot_convergence(args.csv, args.out, group_by=args.group_by,
                             column=args.column)
        elif args.command == "field":
            plot_field(args.csv, args.out)
        else:
            plot_steps(args.csv, args.out)
    except (SchemaError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
