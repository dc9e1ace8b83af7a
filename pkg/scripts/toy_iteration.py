"""Run a few steps of the lattice iteration and print the error norms per step."""
import argparse
import sys
import warnings

from crembed.config import ScheduleParams
from crembed.frames import make_structure, normalize_initial
from crembed.iteration import run_sequence


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--structure", default="perturbed-quadric")
    ap.add_argument("--dim", type=int, default=3)
    ap.add_argument("--resolution", type=int, default=33)
    ap.add_argument("--amplitude", type=float, default=4e-4)
    ap.add_argument("--t0", type=float, default=0.01)
    ap.add_argument("--steps", type=int, default=4)
    args = ap.parse_args()
    state, _ = normalize_initial(make_structure(args.structure, args.dim, args.amplitude), resolution=args.resolution)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = run_sequence(state, ScheduleParams(t0=args.t0), max_steps=args.steps, enforce=False)
    for r in res.records:
        norms = " ".join(f"d{a:g}={v:.3e}" for a, v in sorted(r.delta.items()))
        print(f"j={r.j} rho={r.rho:.4f} {norms} flags={sorted(r.flags)}")
    if res.halted:
        print("halted:", res.halted)
    return 0


if __name__ == "__main__":
    sys.exit(main())
