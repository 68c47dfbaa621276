"""dynenvwalk-plots: batch figure generation from simulator CSV files."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .figures import FIGURE_KINDS, FigureSpec, RenderError, render


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="dynenvwalk-plots",
        description="Render figures from dynenvwalk CSV outputs (PNG/SVG by "
                    "output suffix).")
    p.add_argument("--kind", required=True, choices=FIGURE_KINDS)
    p.add_argument("--in", dest="input_csv", required=True, help="input CSV")
    p.add_argument("--out", dest="output", required=True, help="output image")
    p.add_argument("--title")
    p.add_argument("--xlabel")
    p.add_argument("--ylabel")
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        spec = FigureSpec(args.kind, Path(args.input_csv), Path(args.output),
                          args.title, args.xlabel, args.ylabel)
        out = render(spec)
    except (RenderError, FileNotFoundError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1
    print(str(out))
    return 0


if __name__ == "__main__":
    sys.exit(main())
