"""Command line entry point: gwlab-fig <kind> --in DATA --out FIG.

Exit codes: 0 on success, 2 for bad inputs (unreadable files, schema
violations, empty series), 1 for unexpected internal errors.
"""

import argparse
import sys

from .errors import FigureError
from .render import KINDS, FigureSpec, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gwlab-fig",
        description="Render figures from experiment output files.",
    )
    parser.add_argument("kind", choices=KINDS,
                        help="figure kind to render")
    parser.add_argument("--in", dest="src", required=True, metavar="DATA",
                        help="input data file (curve or measure CSV)")
    parser.add_argument("--out", required=True, metavar="FIG",
                        help="output image path (.svg or .png)")
    parser.add_argument("--bounds", default=None, metavar="JSON",
                        help="envelope JSON for the lifshits kind "
                             "(default: input path with suffix .json)")
    parser.add_argument("--log-mass", action="store_true",
                        help="log scale on the dos mass axis")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    spec = FigureSpec(kind=args.kind, src=args.src, out=args.out,
                      bounds=args.bounds, log_mass=args.log_mass)
    try:
        path = render(spec)
    except FigureError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc}", file=sys.stderr)
        return 1
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
