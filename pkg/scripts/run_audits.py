"""Run every registered estimate audit and print one verdict line each."""
import argparse
import sys
import time

from crembed.audits import AUDITS


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("ids", nargs="*", help="audit ids to run (default: all)")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    failed = 0
    for key in args.ids or AUDITS:
        start = time.perf_counter()
        outcome = AUDITS[key](seed=args.seed)
        failed += not outcome.passed
        print(f"{key:>5} {outcome.check:<32} {'PASS' if outcome.passed else 'FAIL'} "
              f"({time.perf_counter() - start:.1f} s)")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
