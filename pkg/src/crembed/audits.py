"""Numerical audits behind ``crembed verify-lemma``.

Every audit takes ``(resolution, seed, constants)`` and returns an
:class:`AuditOutcome` with a verdict, a JSON-ready summary, and one row per
trial.  Ratios are reported with the constants stripped; the verdict compares
them with the configured ``c_a`` (or a stated tolerance for measured exponents).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .config import EstimateConstants, ScheduleParams
from .domain import (boundary_distance, check_inclusions, default_host, default_lattice, make_domain,
                     random_smooth_h)
from .frames import cubic_bump, dilation_study, make_structure, normalize_initial, state_from_structure
from .grid import Lattice
from .holder import audit_interpolation, audit_rule, norm
from .homotopy import HomotopyOperator, contract_audit, exact_form
from .iteration import alter, invert_map, renormalize, run_sequence
from .schedule import admissible, convergence_report, evolve, find_t0
from .smoothing import build_mollifier, commutator_audit, smooth, smoothing_exponent_study


@dataclass
class AuditOutcome:
    check: str
    passed: bool
    summary: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)


def band_limited_field(coords: np.ndarray, rng: np.random.Generator, terms: int = 4, max_freq: float = 4.0):
    """Random real trigonometric sum with frequencies below ``max_freq``."""
    u = np.zeros(len(coords))
    for _ in range(terms):
        k = rng.normal(size=coords.shape[1])
        k *= rng.uniform(0.5, max_freq) / np.linalg.norm(k)
        u += rng.normal() * np.sin(coords @ k + rng.uniform(0, 2 * np.pi))
    return u


def _ball_region(dim: int, resolution: int, radius: float = 1.0):
    lat = Lattice(dim, resolution, math.sqrt(2.0) * radius)
    return lat.ball(radius)


# -- dilation --------------------------------------------------------------------
def dilation_decay(resolution: int = 33, seed: int = 7, constants=None, rhos=(2, 4, 8, 16),
                   structure: str = "cubic-bump", amplitude: float = 0.05) -> AuditOutcome:
    """Log-log slopes of the dilated error (target -1), of A (-2) and of B (-1), each within 0.2."""
    st = cubic_bump(3, amplitude, seed) if structure == "cubic-bump" else make_structure(structure, 3, amplitude)
    rows, slopes = dilation_study(st, rhos, resolution)
    targets = {"error": -1.0, "A": -2.0, "B": -1.0}
    ok = all(abs(slopes[k] - v) <= 0.2 for k, v in targets.items())
    return AuditOutcome("dilation decay", ok, {"slopes": slopes, "targets": targets},
                        [vars(r) for r in rows])


# -- domain geometry ----------------------------------------------------------------
def domain_geometry(resolution: int = 33, seed: int = 0, constants=None, trials: int = 50,
                    c2_max: float = 0.3, sigma: float = 0.2) -> AuditOutcome:
    """Ball inclusions and the boundary-distance bound on random ``h`` with ``|h|_2 <= c2_max``."""
    constants = constants or EstimateConstants()
    rng = np.random.default_rng(seed)
    lat = default_lattice(3, 1.0, resolution)
    host = default_host(lat)
    rows = []
    for i in range(trials):
        _, hv = random_smooth_h(rng, 3, rng.uniform(0.0, c2_max), lat, host)
        dom = make_domain(3, 1.0, lattice=lat, host=host, h_values=hv)
        inc = check_inclusions(dom, constants.gamma0)
        dist, bound_ok = boundary_distance(dom, sigma)
        rows.append({"trial": i, "c2": inc.c2, "inner_radius": inc.inner_radius, "outer_radius": inc.outer_radius,
                     "inclusions": inc.passed, "distance": dist, "distance_bound": bound_ok})
    ok = all(r["inclusions"] and r["distance_bound"] for r in rows)
    return AuditOutcome("domain geometry", ok,
                        {"trials": trials, "failures": sum(not (r["inclusions"] and r["distance_bound"]) for r in rows),
                         "min_inner_radius": min(r["inner_radius"] for r in rows),
                         "max_outer_radius": max(r["outer_radius"] for r in rows)}, rows)


# -- inverse map ---------------------------------------------------------------------
def random_admissible_f2(region, rng: np.random.Generator, sigma: float, fill: float = 0.9):
    """Random smooth ``f2`` vanishing to second order at 0, scaled so ``|f2|_1 = fill * sigma / 5``."""
    x = region.coords
    d = x.shape[1]
    Q = rng.normal(size=(d, d, d))
    w = rng.normal(size=(d, d))
    vals = np.einsum("kij,ni,nj->kn", Q, x, x) + np.sin(x @ w.T).T - (x @ w.T).T
    vals *= fill * sigma / 5 / norm(vals, region, 1)
    return vals


def inverse_map_audit(resolution: int = 33, seed: int = 0, constants=None, trials: int = 20,
                      sigma: float = 0.2) -> AuditOutcome:
    """Fixed-point inverse of ``id + f2``: roundtrip within 10 cells and contraction at most sigma/5."""
    constants = constants or EstimateConstants()
    rng = np.random.default_rng(seed)
    src = _ball_region(3, resolution, 1.0)
    tgt = src.lattice.ball(0.8)
    rows = []
    for i in range(trials):
        f2 = random_admissible_f2(src, rng, sigma)
        pair = invert_map(f2, tgt, sigma, source=src)
        rep = audit_rule("inverse_map", constants, seed, f2=f2, g2=pair.g2, region=src, target_region=tgt,
                         a=2, sigma=sigma)
        rows.append({"trial": i, "roundtrip": pair.roundtrip, "contraction": pair.contraction,
                     "iterations": pair.iterations, "ratio_a2": rep.ratio})
    sp = src.spacing
    ok = all(r["roundtrip"] <= 10 * sp and r["contraction"] <= sigma / 5 for r in rows)
    return AuditOutcome("inverse map", ok,
                        {"max_roundtrip": max(r["roundtrip"] for r in rows), "spacing": sp,
                         "max_contraction": max(r["contraction"] for r in rows), "sigma_over_5": sigma / 5,
                         "fitted_constant_a2": max(r["ratio_a2"] for r in rows)}, rows)


# -- renormalization -----------------------------------------------------------------
def _toy_sequence(resolution: int, steps: int, amplitude: float = 1e-3, t0: float = 0.01, dim: int = 3):
    state, _ = normalize_initial(make_structure("perturbed-quadric", dim, amplitude), resolution=resolution)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return run_sequence(state, ScheduleParams(t0=t0), max_steps=steps, enforce=False)


def renormalization_audit(resolution: int = 33, seed: int = 0, constants=None, steps: int = 3) -> AuditOutcome:
    """After each step the error vanishes at 0 within ``10 spacing^2`` and the domains nest."""
    res = _toy_sequence(resolution, steps)
    rows = []
    for rec, d, st in zip(res.records[1:], res.diagnostics, res.states[1:]):
        rows.append({"j": rec.j, "origin_error": d.origin_error, "bound": 10 * st.spacing ** 2,
                     "nesting": d.nesting_ok})
    ok = len(rows) >= steps and all(r["origin_error"] <= r["bound"] and r["nesting"] for r in rows)
    return AuditOutcome("renormalization", ok, {"steps": len(rows), "halted": res.halted}, rows)


# -- norm inequalities --------------------------------------------------------------
def _norm_inequality_rows(resolution: int, seed: int, constants, trials: int):
    rng = np.random.default_rng(seed)
    reg = _ball_region(3, resolution, 1.0)
    x = reg.coords
    rows = []
    for i in range(trials):
        u = band_limited_field(x, rng)
        v = band_limited_field(x, rng)
        reps = [
            audit_interpolation(u, reg, 0, 2, 0.5, constants=constants, seed=seed),
            audit_rule("product", constants, seed, u=u, v=v, region=reg, a=2),
            audit_rule("convexity", constants, seed, u=u, v=v, region_u=reg, region_v=reg,
                       ab=(1, 1), ab1=(2, 0), ab2=(0, 2)),
        ]
        pert = np.stack([band_limited_field(x, rng, max_freq=2.0) for _ in range(3)])
        g = 0.8 * x.T + 0.1 * pert / np.linalg.norm(pert, axis=0).max()  # stays inside the unit ball
        reps.append(audit_rule("chain", constants, seed, u_values=u, u_region=reg, g=g, region=reg, a=2))
        W = np.stack([[band_limited_field(x, rng, max_freq=2.0) for _ in range(2)] for _ in range(2)])
        W *= 0.4 / max(norm(W.reshape(4, -1), reg, 0), 1e-300)
        reps.append(audit_rule("chain_fixed", constants, seed, g=W, region=reg, a=2))
        rows += [dict(rep.to_row(i), resolution=resolution) for rep in reps]
    return rows


def norm_inequalities(resolution: int = 33, seed: int = 0, constants=None, trials: int = 10) -> AuditOutcome:
    """Interpolation, convexity, product and chain-rule ratios on random band-limited fields.

    The verdict asks for fitted constants that are finite and move by at most
    20% under one grid refinement; whether they sit below the configured
    ``c_a`` is reported alongside.
    """
    constants = constants or EstimateConstants()
    fine = 2 * resolution - 1
    rows = _norm_inequality_rows(resolution, seed, constants, trials)
    rows += _norm_inequality_rows(fine, seed, constants, trials)
    kinds = sorted({r["kind"] for r in rows})
    fitted = {res: {k: max(r["ratio"] for r in rows if r["kind"] == k and r["resolution"] == res) for k in kinds}
              for res in (resolution, fine)}
    stable = {k: bool(np.isfinite(fitted[fine][k])
                      and abs(fitted[fine][k] - fitted[resolution][k]) <= 0.2 * fitted[resolution][k])
              for k in kinds}
    return AuditOutcome("norm inequalities", all(stable.values()),
                        {"fitted_constants": fitted, "stable": stable,
                         "within_configured_constants": all(r["passed"] for r in rows)}, rows)


def x_derivative_audit(resolution: int = 17, seed: int = 0, constants=None, trials: int = 10) -> AuditOutcome:
    """``|Xbar u|_a`` against ``|u|_(a+1) + (|E|_a + |h|_(a+1)) |u|_1`` on quadric and perturbed frames."""
    constants = constants or EstimateConstants()
    rng = np.random.default_rng(seed)
    rows = []
    for name, amp in (("quadric", None), ("perturbed-quadric", 1e-2)):
        state, _ = normalize_initial(make_structure(name, 3, amp), resolution=resolution)
        for i in range(trials):
            u = band_limited_field(state.region.coords, rng)
            rep = audit_rule("x_derivative", constants, seed, state=state, u=u, a=1)
            rows.append(dict(rep.to_row(i), structure=name))
    ok = all(r["passed"] for r in rows)
    return AuditOutcome("x derivative", ok, {"fitted_constant": max(r["ratio"] for r in rows)}, rows)


# -- smoothing and commutator ---------------------------------------------------------
def mollifier_contract(dim: int = 3, m_order: int = 4, resolution: int | None = None, seed: int = 0,
                       cells: int = 7):
    """Moment errors of the kernel and the worst degree-7 reproduction error of the lattice smoother.

    The smoothing scale is chosen so the kernel radius spans ``cells`` lattice
    cells, enough for the full moment order.
    """
    moll = build_mollifier(dim, m_order)
    moments = {k: moll.moment1d(k) for k in range(2 * m_order)}
    worst_moment = max(abs(moments[0] - 1.0), max(abs(v) for k, v in moments.items() if k > 0))
    rng = np.random.default_rng(seed)
    resolution = resolution or (41 if dim < 3 else 25)
    lat = Lattice(dim, resolution, 1.0)
    reg = lat.box()
    x = reg.coords
    c = rng.normal(size=dim)
    p = (x @ c) ** 7 + (x[:, 0] ** 3) * (x[:, -1] ** 4) - 2 * x[:, 0] ** 2 + 1
    t = (cells + 1) * lat.spacing / moll.radius
    sp, r = smooth(p, reg, t, moll)
    repro = float(np.abs(sp - p[r.index_in(reg)]).max())
    return worst_moment, repro


def smoothing_audit(resolution: int = 33, seed: int = 0, constants=None, fields: int = 5) -> AuditOutcome:
    """Kernel moments, polynomial reproduction, smoothing rate slopes and commutator constants."""
    rows = []
    worst = []
    for d in (1, 2, 3):
        wm, rp = mollifier_contract(d, seed=seed)
        worst.append((wm, rp))
        rows.append({"check": "mollifier", "dim": d, "moment_error": wm, "reproduction_error": rp})
    slopes = smoothing_exponent_study(fields=fields, seed=seed)
    slope_ok = True
    for (a, b, rem), vals in slopes.items():
        dev = max(abs(s - (b - a)) for s in vals)
        slope_ok &= dev <= 0.3
        rows.append({"check": "rate", "a": a, "b": b, "remainder": rem, "min_slope": min(vals),
                     "max_slope": max(vals), "target": b - a})
    consts = {}
    coarse, fine = 2 * resolution - 1, 4 * resolution - 3
    for res in (coarse, fine):
        lat = Lattice(2, res, 1.0)
        c_rows = commutator_audit(lat.box(), build_mollifier(2, 4), [0.25, 0.35], fields=3, seed=seed)
        consts[res] = max(r.fitted_constant for r in c_rows)
        rows.append({"check": "commutator", "resolution": res, "fitted_constant": consts[res]})
    c_lo, c_hi = consts[coarse], consts[fine]
    stable = abs(c_hi - c_lo) <= 0.2 * c_lo
    moll_ok = all(wm <= 1e-10 and rp <= 1e-8 for wm, rp in worst)
    return AuditOutcome("smoothing", bool(moll_ok and slope_ok and stable),
                        {"mollifier_ok": moll_ok, "slopes_ok": bool(slope_ok), "commutator_constants": consts,
                         "commutator_stable": bool(stable)}, rows)


def homotopy_audit(resolution: int = 9, seed: int = 0, constants=None, forms: int = 10,
                   dim: int = 7) -> AuditOutcome:
    """Homotopy identity defect on exact (0,1)-forms and fitted constants of ``P``."""
    state, _ = normalize_initial(make_structure("quadric", dim), resolution=resolution)
    op = HomotopyOperator(state)
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(forms):
        _, phi = exact_form(op, rng)
        _, rel = op.homotopy_defect(phi)
        rows.append({"form_id": i, "relative_defect": rel})
    contract = contract_audit(op, forms=3, seed=seed)
    ok = all(r["relative_defect"] <= 1e-2 for r in rows)
    return AuditOutcome("homotopy", ok, {"max_relative_defect": max(r["relative_defect"] for r in rows),
                                         "flags": list(op.flags),
                                         "fitted_constants_P": [c.fitted_constant for c in contract]}, rows)


# -- step estimates --------------------------------------------------------------------
def _step_norms(resolution: int, steps: int, k: int = 1, mu: float = 2.5, amplitude: float = 1e-3, seed: int = 0):
    """Norms entering the error estimates for ``steps`` toy iteration steps at dim 3."""
    params = ScheduleParams(t0=0.01, k=k, mu=mu)
    state, _ = normalize_initial(make_structure("perturbed-quadric", 3, amplitude), resolution=resolution)
    moll = build_mollifier(3, int(params.m))
    beta = params.constants.beta
    rho, sigma, log_t = state.domain.rho, params.sigma0, math.log(params.t0)
    out = []
    for j in range(steps):
        t = math.exp(log_t)
        op = HomotopyOperator(state)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            F, RF, _ = alter(state, t, op, moll, diagnostics=False)
            new, _, _ = renormalize(state, F, sigma, RF, params.constants, check=False)
        reg = state.region
        E = state.error.reshape(-1, len(reg))
        h = state.domain.h_on(reg)
        rows = reg.erode(1).intersect(reg)
        XF = state.apply_xbar(F, src=RF, rows=rows)[0]
        EF = (state.error[..., rows.index_in(reg)] + XF).reshape(-1, len(rows))
        E1 = new.error.reshape(-1, len(new.region))
        En = lambda a: norm(E, reg, a, seed)
        hn = lambda a: norm(h, reg, a, seed)
        out.append({"j": j, "t": t, "rho": rho, "sigma": sigma,
                    "E": {a: En(a) for a in (0, 1, 2, k, k + mu)},
                    "h": {a: hn(a) for a in (2, 3, 4, beta, k + beta)},
                    "EF": {a: norm(EF, rows, a, seed) for a in (k, 2)},
                    "E1": {a: norm(E1, new.region, a, seed) for a in (k, 2)}})
        rho, sigma, log_t, state = rho * (1 - 5 * sigma), sigma / 5, params.kappa * log_t, new
    return out, params


def _estimate_audit(name: str, which: str, resolution: int, seed: int, constants, steps: int = 2) -> AuditOutcome:
    constants = constants or EstimateConstants()
    data, params = _step_norms(resolution, steps, seed=seed)
    k, mu, beta = params.k, params.mu, constants.beta
    rows = []
    for d in data:
        t, E, h = d["t"], d["E"], d["h"]
        if which == "fine_altered":
            lhs, K_order = d["EF"][k], params.m
            rhs = (1 + h[beta]) ** 2 * (t ** mu * E[k + mu] + t ** 0.5 * (E[k] + h[k + beta] * E[0])
                                        + t ** -0.5 * E[0] * (E[k] + h[k + beta] * E[1]))
        elif which == "coarse_altered":
            a = 2
            lhs, K_order = d["EF"][a], params.m
            rhs = (1 + E[0] / t) * (E[a] + h[a + 2] * E[1])
        elif which == "fine_new":
            lhs, K_order = d["E1"][k], params.m
            rhs = (1 + h[beta]) ** 2 * (t ** mu * E[k + mu] + (t ** 0.5 + t ** -0.5 * E[1] + E[0] / t)
                                        * (E[k] + h[k + beta] * E[0]))
        else:
            a = 2
            lhs, K_order = d["E1"][a], params.m + 1
            rhs = (1 + (1 + h[3]) ** 2 * E[1] / t) * (E[a] + h[a + 2] * E[1])
        log_K = math.log(constants.c(K_order)) - constants.s(K_order) * math.log(d["rho"] * d["sigma"])
        ratio = lhs / rhs if rhs > 0 else 0.0
        rows.append({"j": d["j"], "t": t, "lhs": lhs, "rhs": rhs, "ratio": ratio, "log_K": log_K,
                     "passed": ratio == 0.0 or math.log(ratio) <= log_K})
    ok = all(r["passed"] for r in rows)
    return AuditOutcome(name, ok, {"fitted_constant": max(r["ratio"] for r in rows)}, rows)


# -- schedule ------------------------------------------------------------------------
def _certifier_params(constants=None) -> ScheduleParams:
    return ScheduleParams(constants=constants or EstimateConstants())


def n_bound_audit(resolution: int = 33, seed: int = 0, constants=None) -> AuditOutcome:
    """``N_(j+1)(a) <= 3 K_j(a) N_j(a)``: measured on toy steps and along the certified recursion."""
    constants = constants or EstimateConstants()
    data, params = _step_norms(resolution, 2, seed=seed)
    rows = []
    for d0, d1 in zip(data, data[1:]):
        for a in (3, constants.beta):
            ratio = (1 + d1["h"][a]) / (1 + d0["h"][a])
            log_K = math.log(constants.c(a)) - constants.s(a) * math.log(d0["rho"] * d0["sigma"])
            rows.append({"j": d0["j"], "a": a, "ratio": ratio, "log_3K": math.log(3) + log_K,
                         "passed": math.log(ratio) <= math.log(3) + log_K})
    p = _certifier_params(constants)
    res = find_t0(p, J=200)
    ev = res.evolution
    ok = all(r["passed"] for r in rows) and ev.passed
    return AuditOutcome("N bounds", ok, {"certified_log_t0": res.log_t0, "recursion_passed": ev.passed}, rows)


def h_bound_audit(resolution: int = 33, seed: int = 0, constants=None) -> AuditOutcome:
    """Graph steps measured against ``P_j`` and the certified budget ``sum P_j <= gamma0``."""
    constants = constants or EstimateConstants()
    res = _toy_sequence(resolution, 2)
    rows = [{"j": rec.j, "h_step_norm2": d.h_step["norm2"], "log_ratio_to_P": d.h_step["log_ratio"],
             "passed": d.h_step["log_ratio"] <= 0.0} for rec, d in zip(res.records[1:], res.diagnostics)]
    p = _certifier_params(constants)
    t0 = find_t0(p, J=200)
    verdict = t0.evolution.verdict()
    ok = all(r["passed"] for r in rows) and t0.evolution.passed
    return AuditOutcome("graph bound", ok, {"certified_log_t0": t0.log_t0, "verdict": verdict}, rows)


def schedule_audit(resolution: int = 33, seed: int = 0, constants=None) -> AuditOutcome:
    """Admissibility, a finite certified ``ln t0`` and convergent series for the default schedule."""
    p = _certifier_params(constants)
    ok_adm, violated = admissible(p)
    res = find_t0(p, J=1000)
    rep = convergence_report(p, 1000, res.evolution)
    series_ok = all(v.verdict == "convergent" for v in rep["series"].values())
    ok = ok_adm and res.evolution.passed and math.isfinite(res.log_t0) and series_ok
    return AuditOutcome("schedule", ok, {"admissible": ok_adm, "violations": violated, "log_t0": res.log_t0,
                                         "series": {k: v.verdict for k, v in rep["series"].items()}}, [])


AUDITS = {
    "1.2": dilation_decay,
    "2.1": domain_geometry,
    "4.1": inverse_map_audit,
    "4.2": renormalization_audit,
    "5.2": norm_inequalities,
    "6.1": x_derivative_audit,
    "7.1": smoothing_audit,
    "7.2": homotopy_audit,
    "9.1": lambda resolution=17, seed=0, constants=None: _estimate_audit(
        "fine altered-error estimate", "fine_altered", resolution, seed, constants),
    "9.2": lambda resolution=17, seed=0, constants=None: _estimate_audit(
        "coarse altered-error estimate", "coarse_altered", resolution, seed, constants),
    "9.3": lambda resolution=17, seed=0, constants=None: _estimate_audit(
        "fine new-error estimate", "fine_new", resolution, seed, constants),
    "9.4": lambda resolution=17, seed=0, constants=None: _estimate_audit(
        "coarse new-error estimate", "coarse_new", resolution, seed, constants),
    "11.1": n_bound_audit,
    "11.2": h_bound_audit,
    "11.3": schedule_audit,
}
