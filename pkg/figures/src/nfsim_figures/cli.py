"""render_figures <figure-id> --in DIR --out PATH"""

from __future__ import annotations

import argparse
import sys

from .render import FIGURE_IDS, FigureError, FigureSpec, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="render_figures", description=__doc__)
    parser.add_argument("figure_id", choices=FIGURE_IDS, help="which figure to render")
    parser.add_argument("--in", dest="input_dir", required=True, help="harness output directory")
    parser.add_argument("--out", dest="output_path", required=True, help="image file to write")
    parser.add_argument("--shade-window", type=int, default=10, help="trials shaded at each end (fig4)")
    parser.add_argument("--dpi", type=int, default=150)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    spec = FigureSpec(
        figure_id=args.figure_id,
        input_dir=args.input_dir,
        output_path=args.output_path,
        shade_window=args.shade_window,
        dpi=args.dpi,
    )
    try:
        path = render(spec)
    except FigureError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
