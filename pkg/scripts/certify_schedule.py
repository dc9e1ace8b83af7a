"""Find the largest admissible ln t0 and summarize convergence of the derived series."""
import argparse
import sys
from dataclasses import replace

from crembed.config import ScheduleParams
from crembed.schedule import admissible, convergence_report, find_t0


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=1000)
    ap.add_argument("--kappa", type=float)
    ap.add_argument("--mu", type=float)
    ap.add_argument("--m", type=float)
    args = ap.parse_args()
    params = replace(ScheduleParams(), **{k: v for k, v in (("kappa", args.kappa), ("mu", args.mu), ("m", args.m))
                                          if v is not None})
    ok, bad = admissible(params)
    if not ok:
        print("inadmissible:", ", ".join(bad))
        return 3
    res = find_t0(params, J=args.steps)
    print(f"ln t0 = {res.log_t0:.6g} (log10 t0 = {res.log_t0 / 2.302585092994046:.6g}), "
          f"{res.evaluations} evaluations")
    rep = convergence_report(replace(params, log_t0=res.log_t0), args.steps, res.evolution)
    for name, sv in rep["series"].items():
        print(f"{name:>18}: {sv.verdict} onset={sv.onset} limiting ratio={sv.limiting_ratio:.4g}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
