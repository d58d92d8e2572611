"""Command-line entry point: render one figure from a run directory."""

import argparse
import sys

from .figures import plot_error_curve, plot_marginals


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="jkoflow-plots",
        description="Render marginal overlays or error curves from solver runs",
    )
    ap.add_argument("--run", required=True,
                    help="a run directory, or a directory of per-eps run directories")
    ap.add_argument("--kind", required=True, choices=("marginals", "error"))
    ap.add_argument("--out", required=True, help="output image path (png)")
    ap.add_argument("--slices", default="0,0.08,0.16",
                    help="scheme times for the marginal panels, comma separated")
    ap.add_argument("--window", default=None,
                    help="time window lo,hi for the error curves (default: all)")
    args = ap.parse_args(argv)

    try:
        if args.kind == "marginals":
            slices = tuple(float(s) for s in args.slices.split(","))
            plot_marginals(args.run, slices, args.out)
        else:
            window = None
            if args.window is not None:
                lo, hi = (float(s) for s in args.window.split(","))
                window = (lo, hi)
            plot_error_curve(args.run, window, args.out)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
