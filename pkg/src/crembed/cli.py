"""Command-line entry point: ``crembed <command> [options]``.

Exit codes: 0 pass, 1 usage error, 2 experiment failure or infeasible
schedule, 3 hypothesis violation or inadmissible parameters.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from .audits import AUDITS
from .config import EstimateConstants, ScheduleParams, load_json
from .frames import cubic_bump, dilation_study, make_structure, normalize_initial, structure_from_dict
from .holder import HypothesisViolation
from .iteration import run_sequence
from .schedule import Inadmissible, Infeasible, admissible, convergence_report, evolve, find_t0

EXIT_PASS, EXIT_USAGE, EXIT_FAIL, EXIT_VIOLATION = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {(f"{k:g}" if isinstance(k, float) else str(k)): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if hasattr(obj, "to_dict"):
        return _jsonable(obj.to_dict())
    return obj


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text)
    return path


def _dump(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def _rows_csv(rows: list) -> str:
    if not rows:
        return ""
    cols = []
    for r in rows:
        cols += [k for k in r if k not in cols]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    fmt = lambda v: f"{v:.12g}" if isinstance(v, (float, np.floating)) else v
    for r in rows:
        w.writerow([fmt(r.get(c, "")) for c in cols])
    return buf.getvalue()


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        return load_json(path)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc


def _schedule_from(cfg: dict) -> ScheduleParams:
    body = cfg.get("schedule", cfg)
    body = {k: v for k, v in body.items() if k not in ("J", "command", "output_dir", "seed")}
    try:
        return ScheduleParams.from_dict(body)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad schedule parameters: {exc}") from exc


def _structure(name: str, dim: int, amplitude: float | None, seed: int):
    path = Path(name)
    if path.suffix == ".json" and path.exists():
        return structure_from_dict(load_json(path))
    if name.strip() == "cubic-bump":
        return cubic_bump(dim, 0.05 if amplitude is None else amplitude, seed=seed or 7)
    return make_structure(name, dim, amplitude)


# -- commands ----------------------------------------------------------------------
def cmd_certify(args, out: Path) -> int:
    cfg = _load_config(args.config)
    params = _schedule_from(cfg)
    J = int(cfg.get("J", args.steps))
    ok, violated = admissible(params)
    if not ok:
        _write(out, "verdict.json", _dump({"admissible": False, "violations": violated, "certified": False}))
        print(f"inadmissible: {', '.join(violated)}")
        return EXIT_VIOLATION
    body = cfg.get("schedule", cfg)
    explicit_t0 = "t0" in body or body.get("log_t0") is not None
    report = {"admissible": True, "violations": []}
    try:
        if explicit_t0:
            ev = evolve(params, J)
        else:
            res = find_t0(params, J)
            ev = res.evolution
            report["search"] = json.loads(res.to_json())
    except Infeasible as exc:
        _write(out, "verdict.json", _dump(dict(report, certified=False, error=str(exc))))
        print(str(exc))
        return EXIT_FAIL
    except Inadmissible as exc:
        print(f"inadmissible: {exc}")
        return EXIT_VIOLATION
    report.update(ev.verdict())
    if ev.passed:
        conv = convergence_report(params, J, ev)
        report["convergence"] = {"b": conv["b"], "lambda": conv["lambda"],
                                 "series": {k: v.to_dict() for k, v in conv["series"].items()}}
    _write(out, "verdict.json", _dump(report))
    _write(out, "schedule.csv", ev.to_csv())
    print(f"certified={ev.passed} log_t0={ev.states[0].log_t:.6g} steps={J}")
    return EXIT_PASS if ev.passed else EXIT_FAIL


def cmd_iterate(args, out: Path) -> int:
    cfg = _load_config(args.config)
    dim = int(cfg.get("dim", args.dim))
    resolution = int(cfg.get("resolution", args.resolution or (33 if dim == 3 else 9)))
    amplitude = cfg.get("amplitude", args.amplitude)
    structure = _structure(cfg.get("structure", args.structure), dim, amplitude, args.seed)
    params = _schedule_from(cfg.get("schedule", {})) if "schedule" in cfg else ScheduleParams(t0=args.t0)
    max_steps = int(cfg.get("max_steps", args.max_steps))
    enforce = bool(cfg.get("enforce", args.enforce))
    state, _ = normalize_initial(structure, resolution=resolution)
    path = out / "trajectory.jsonl"
    out.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        def on_step(rec):
            fh.write(rec.to_json() + "\n")
            fh.flush()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = run_sequence(state, params, max_steps=max_steps, enforce=enforce, on_step=on_step)
    deltas = [r.delta.get(params.k, math.nan) for r in res.records]
    diag = [{"j": r.j, "origin_error": d.origin_error, "nesting": d.nesting_ok, "homotopy_defect": d.homotopy_defect,
             "identity_residual": d.identity_residual, "composite": d.composite, "h_step": d.h_step}
            for r, d in zip(res.records[1:], res.diagnostics)]
    summary = {"halted": res.halted, "steps": len(res.records) - 1, "delta_k": deltas,
               "monotone": all(b < a for a, b in zip(deltas, deltas[1:])),
               "flags": sorted({f for r in res.records for f in r.flags}), "diagnostics": diag}
    _write(out, "summary.json", _dump(summary))
    print(f"steps={summary['steps']} halted={res.halted} delta_k={['%.3e' % d for d in deltas]}")
    if res.halted and "hypothesis" in res.halted:
        return EXIT_VIOLATION
    return EXIT_FAIL if res.halted else EXIT_PASS


def cmd_dilation_study(args, out: Path) -> int:
    rhos = [float(r) for r in args.rhos.split(",")]
    if len(rhos) < 2 or any(r <= 0 for r in rhos):
        raise UsageError("--rhos needs at least two positive values")
    structure = _structure(args.structure, args.dim, args.amplitude, args.seed)
    rows, slopes = dilation_study(structure, rhos, args.resolution or 33)
    _write(out, "dilation.csv", _rows_csv([vars(r) for r in rows]))
    _write(out, "dilation_slopes.json", _dump(slopes))
    print("slopes " + " ".join(f"{k}={v:.4f}" for k, v in slopes.items()))
    return EXIT_PASS if abs(slopes["error"] + 1.0) <= 0.2 else EXIT_FAIL


def cmd_verify_lemma(args, out: Path) -> int:
    if args.lemma not in AUDITS:
        raise UsageError(f"unknown lemma id {args.lemma!r}; choose from {', '.join(AUDITS)}")
    cfg = _load_config(args.config)
    consts = EstimateConstants(**cfg["constants"]) if "constants" in cfg else None
    kw = {"seed": args.seed, "constants": consts}
    if args.resolution:
        kw["resolution"] = args.resolution
    outcome = AUDITS[args.lemma](**kw)
    tag = args.lemma.replace(".", "_")
    _write(out, f"verify_{tag}.json", _dump({"lemma": args.lemma, "check": outcome.check, "passed": outcome.passed,
                                             "summary": outcome.summary}))
    _write(out, f"verify_{tag}.csv", _rows_csv(outcome.rows))
    print(f"{args.lemma} {outcome.check}: {'PASS' if outcome.passed else 'FAIL'}")
    return EXIT_PASS if outcome.passed else EXIT_FAIL


def cmd_generate_structure(args, out: Path) -> int:
    structure = _structure(args.structure, args.dim, args.amplitude, args.seed)
    path = _write(out, f"structure_{args.structure.replace('(', '_').replace(')', '')}_{args.dim}.json",
                  json.dumps(structure.to_dict(), sort_keys=True) + "\n")
    print(str(path))
    return EXIT_PASS


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="crembed", description="CR embedding experiments, audits and schedule certification.")
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--resolution", type=int, help="lattice points per axis")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--output-dir", default="results")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("certify", parents=[common], help="certify a schedule parameter choice")
    c.add_argument("--steps", type=int, default=1000, help="number of schedule steps J")
    c.set_defaults(func=cmd_certify)

    for name, func, help_ in (("iterate", cmd_iterate, "run the toy Nash-Moser iteration"),
                              ("dilation-study", cmd_dilation_study, "error decay under dilation"),
                              ("generate-structure", cmd_generate_structure, "write a test structure as JSON")):
        s = sub.add_parser(name, parents=[common], help=help_)
        s.add_argument("--structure", default="cubic-bump" if name == "dilation-study" else "perturbed-quadric")
        s.add_argument("--dim", type=int, default=3 if name == "dilation-study" else 7)
        s.add_argument("--amplitude", type=float)
        s.set_defaults(func=func)
        if name == "iterate":
            s.add_argument("--max-steps", type=int, default=4)
            s.add_argument("--t0", type=float, default=0.01)
            s.add_argument("--enforce", action="store_true", help="halt on the first violated schedule check")
        if name == "dilation-study":
            s.add_argument("--rhos", default="2,4,8,16")

    v = sub.add_parser("verify-lemma", parents=[common], help="run the numerical audit for one estimate")
    v.add_argument("lemma", help="one of " + ", ".join(AUDITS))
    v.set_defaults(func=cmd_verify_lemma)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args, Path(args.output_dir))
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (HypothesisViolation, Inadmissible) as exc:
        print(f"hypothesis violation: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    except Infeasible as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_FAIL
    except (ValueError, RuntimeError, ArithmeticError) as exc:
        print(f"experiment failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
