"""Error and frame-coefficient decay of a normalized structure under dilation."""
import argparse
import sys

from crembed.frames import cubic_bump, dilation_study


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dim", type=int, default=3)
    ap.add_argument("--amplitude", type=float, default=0.05)
    ap.add_argument("--resolution", type=int, default=33)
    ap.add_argument("--rhos", default="2,4,8,16")
    args = ap.parse_args()
    rhos = [float(r) for r in args.rhos.split(",")]
    rows, slopes = dilation_study(cubic_bump(args.dim, args.amplitude), rhos, args.resolution)
    for r in rows:
        print(vars(r))
    print("fitted slopes:", {k: round(v, 4) for k, v in slopes.items()})
    return 0


if __name__ == "__main__":
    sys.exit(main())
