"""One Nash-Moser step (alteration plus renormalization) and the sequence driver."""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .config import EstimateConstants, ScheduleParams, SolverConfig
from .domain import Domain, make_domain, _origin_component
from .frames import EmbeddingState, complex_coords, dbar, stencil_taylor
from .grid import OutOfDomainError, Region, ResolutionError
from .holder import HypothesisViolation, norm
from .homotopy import HomotopyOperator, SolverError
from .smoothing import Mollifier, build_mollifier, discrete_weights, smooth


@dataclass
class MapPair:
    """``f = id + f2`` sampled on ``source`` and its inverse ``g = id + g2`` on ``target``."""

    source: Region
    target: Region
    f2: np.ndarray          # (dim, |source|)
    g2: np.ndarray          # (dim, |target|)
    roundtrip: float        # max |f(g(y)) - y|
    contraction: float      # largest observed step ratio of the fixed-point iteration
    iterations: int

    def g(self) -> np.ndarray:
        return self.target.coords.T + self.g2


@dataclass
class StepDiagnostics:
    I1: np.ndarray | None = None
    I2: np.ndarray | None = None
    I3: np.ndarray | None = None
    I4: np.ndarray | None = None
    I5_defect: np.ndarray | None = None
    identity_residual: float = 0.0
    homotopy_defect: float = 0.0
    taylor: dict = field(default_factory=dict)
    f2_norm1: float = 0.0
    g2_norm: float = 0.0
    F_norm1: float = 0.0
    origin_error: float = 0.0
    nesting_ok: bool = True
    norms: dict = field(default_factory=dict)
    composite: dict = field(default_factory=dict)
    h_step: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)


def _sup(a) -> float:
    a = np.asarray(a)
    return float(np.abs(a).max()) if a.size else 0.0


# -- alteration ----------------------------------------------------------------
def _smooth_or_identity(values, region: Region, t: float, moll: Mollifier):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        _, w, _ = discrete_weights(moll, t, region.spacing)
        if w.size == 1:
            return np.asarray(values), region
        return smooth(values, region, t, moll)


def _restrict(values, region: Region, target: Region):
    return np.asarray(values)[..., target.index_in(region)]


def alter(state: EmbeddingState, t: float, op: HomotopyOperator, moll: Mollifier, sigma: float | None = None,
          diagnostics: bool = True):
    """``F = -S_t P dbar_X Z`` componentwise, with the four-term split of the altered error.

    Returns ``(F, region_of_F, diagnostics)``.  When the smoothing kernel does
    not resolve a single lattice cell ``S_t`` acts as the identity.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    rho = state.domain.rho
    if sigma is not None and not t < rho * sigma / (5.0 / math.sqrt(2.0)):
        raise HypothesisViolation(f"smoothing margin violated: t = {t:.3g} >= rho sigma / c_hat")
    E = state.error
    n = state.n
    if _sup(E) == 0:
        F = np.zeros((n, len(op.plus)), complex)
        return F, op.plus, StepDiagnostics() if diagnostics else None
    u = np.stack([op.solve_P(E[j]) for j in range(n)])  # (n, |plus|)
    Fs, RF = _smooth_or_identity(-u, op.plus, t, moll)
    diag = StepDiagnostics()
    # homotopy defect of each component
    ybar_u = np.stack([op.dbar0(u[j]) for j in range(n)])  # (n, n-1, |omega|)
    q_dm = np.stack([op.solve_Q(op.dbar1(E[j])) for j in range(n)])
    defect = E - ybar_u - q_dm
    diag.homotopy_defect = _sup(defect) / _sup(E)
    if not diagnostics:
        return Fs, RF, diag
    # four-term decomposition on a common region
    rows = RF.erode(1).intersect(state.region)
    xz = E[..., rows.index_in(state.region)] + state.apply_xbar(Fs, src=RF, rows=rows)[0]
    dm_F = dbar("M", Fs, state, src=RF, rows=rows)[0]
    dx_F = dbar("X", Fs, state, src=RF, rows=rows)[0]
    I2 = -(dm_F - dx_F)  # (Ybar - Xbar) S P E with S P E = -F
    sE, rE = _smooth_or_identity(E, state.region, t, moll)
    s_ybu, _ = _smooth_or_identity(ybar_u, state.region, t, moll)
    minus = op.minus
    if op.d1 is None:
        q_mx = np.zeros_like(E)
    else:
        dmx = (dbar("M", E, state, q=1, src=state.region, rows=minus)[0]
               - dbar("X", E, state, q=1, src=state.region, rows=minus)[0])  # (n, pairs, |minus|)
        q_mx = np.stack([op.solve_Q(dmx[j]) for j in range(n)])
    s_q_mx, _ = _smooth_or_identity(q_mx, state.region, t, moll)
    s_def, _ = _smooth_or_identity(E - ybar_u - q_mx, state.region, t, moll)
    common = rows.intersect(rE)
    pick = lambda v, r: _restrict(v, r, common)
    I1 = pick(E, state.region) - pick(sE, rE)
    I2 = pick(I2, rows)
    I3 = pick(s_ybu, rE) + pick(dm_F, rows)  # S Ybar P E - Ybar S P E, with S P E = -F
    I4 = pick(s_q_mx, rE)
    I5 = pick(s_def, rE)
    total = pick(xz, rows)
    diag.I1, diag.I2, diag.I3, diag.I4, diag.I5_defect = I1, I2, I3, I4, I5
    diag.identity_residual = _sup(total - (I1 + I2 + I3 + I4 + I5)) / max(_sup(total), 1e-300)
    return Fs, RF, diag


# -- inverse map -----------------------------------------------------------------
def invert_map(f2, target: Region, sigma: float, source: Region | None = None, rho: float = 1.0,
               tol: float = 1e-12, max_iter: int = 100, check: bool = True) -> MapPair:
    """Invert ``f = id + f2`` at the points of ``target`` by the contraction ``x -> y - f2(x)``.

    ``f2`` is either a callable on ``(N, dim)`` points returning ``(N, dim)``
    or lattice values ``(dim, |source|)`` interpolated multilinearly.
    """
    y = target.coords
    if callable(f2):
        fun = lambda x: np.atleast_2d(f2(x))
        f2_vals = fun(source.coords).T if source is not None else None
    else:
        if source is None:
            raise ValueError("lattice values need their source region")
        f2_vals = np.asarray(f2, float)
        fun = lambda x: source.interpolate(f2_vals, x).T
    if check and f2_vals is not None:
        f1 = norm(f2_vals, source, 1)
        if f1 > sigma / 5:
            raise HypothesisViolation(f"map hypothesis: |f2|_1 = {f1:.3g} exceeds sigma/5 = {sigma / 5:.3g}")
    x = y.copy()
    prev_step = None
    contraction = 0.0
    it = 0
    for it in range(1, max_iter + 1):
        nx = y - fun(x)
        if np.any(np.isnan(nx)):
            raise OutOfDomainError("fixed-point iterate left the sampled region")
        step = np.linalg.norm(nx - x, axis=1)
        if prev_step is not None:
            ok = prev_step > 1e-13
            if np.any(ok):
                contraction = max(contraction, float(np.max(step[ok] / prev_step[ok])))
        x, prev_step = nx, step
        if step.max() < tol:
            break
    else:
        raise HypothesisViolation("fixed-point iteration did not converge")
    roundtrip = float(np.abs(x + fun(x) - y).max())
    return MapPair(source if source is not None else target, target,
                   f2_vals if f2_vals is not None else np.zeros((y.shape[1], 0)),
                   (x - y).T, roundtrip, contraction, it)


# -- renormalization ---------------------------------------------------------------
def taylor_coefficients(F, region: Region, method: str = "central", radius_cells: float = 3.0):
    """``K0, K_alpha, K_alphabar, K_n`` of ``F`` at 0 and the remainder ``F_(2)``.

    ``method="central"`` takes the origin sample and central differences, the
    same stencil the discrete fields use, so ``F_(2)`` has vanishing discrete
    value and gradient at 0.  ``method="fit"`` uses a local quadratic fit.
    """
    F = np.asarray(F)
    dim = region.dim
    if method == "central":
        o = region.origin_index()
        K0 = F[..., o]
        grad = np.zeros((dim,) + K0.shape, complex)
        for ax in range(dim):
            p, m = region.neighbor(ax, 1)[o], region.neighbor(ax, -1)[o]
            if p < 0 or m < 0:
                raise ResolutionError("origin lacks a central stencil")
            grad[ax] = (F[..., p] - F[..., m]) / (2 * region.spacing)
    else:
        exps, coef = stencil_taylor(F, region, 2, radius_cells)
        deg = exps.sum(1)
        K0 = coef[deg == 0][0]
        grad = np.zeros((dim,) + K0.shape, complex)
        for m in np.nonzero(deg == 1)[0]:
            grad[int(np.argmax(exps[m]))] = coef[m]
    K_alpha = 0.5 * (grad[0:-1:2] - 1j * grad[1:-1:2])
    K_alphabar = 0.5 * (grad[0:-1:2] + 1j * grad[1:-1:2])
    K_n = grad[-1]
    F2 = np.asarray(F) - K0[..., None] - np.einsum("k...,Nk->...N", grad, region.coords)
    return {"K0": K0, "K_alpha": K_alpha, "K_alphabar": K_alphabar, "K_n": K_n, "grad": grad}, F2


def _clip_domain(dom: Domain) -> tuple[Domain, bool]:
    """Shrink the region so the host keeps one cell of margin around it."""
    if dom.host.contains(dom.region.dilate(1)):
        return dom, False
    inner = dom.host.erode(1)
    keep = np.zeros(len(dom.host), bool)
    keep[dom.region.intersect(inner).index_in(dom.host)] = True
    region, connected = _origin_component(dom.host, keep)
    return Domain(dom.rho, dom.lattice, dom.host, dom.h, region, connected), True


def renormalize(state: EmbeddingState, F, sigma: float, F_region: Region | None = None,
                constants: EstimateConstants | None = None, check: bool = True):
    """Restore the normal form after ``Z -> Z + F``; returns ``(new_state, pair, diagnostics)``."""
    constants = constants or EstimateConstants()
    n, dim = state.n, state.dim
    dom = state.domain
    rho = dom.rho
    RF = F_region or state.region.dilate(1)
    F = np.asarray(F, complex)
    diag = StepDiagnostics()
    diag.F_norm1 = norm(F, RF, 1)
    if diag.F_norm1 > constants.gamma1 * rho * sigma:
        msg = f"alteration too large: |F|_1 = {diag.F_norm1:.3g} > gamma1 rho sigma = {constants.gamma1 * rho * sigma:.3g}"
        if check:
            raise HypothesisViolation(msg)
        diag.flags.append("alteration above gamma1 rho sigma")
    taylor, F2 = taylor_coefficients(F, RF)
    diag.taylor = {k: v for k, v in taylor.items() if k != "grad"}
    y = state.y_host()[RF.index_in(dom.host)]
    Zd = F2 - 1j * taylor["K_n"][:, None] * y  # Z_* - Z
    f2 = np.empty((dim, len(RF)))
    f2[0:-1:2] = Zd[: n - 1].real
    f2[1:-1:2] = Zd[: n - 1].imag
    f2[-1] = Zd[n - 1].real
    h_hat = Zd[n - 1].imag
    diag.f2_norm1 = norm(f2, RF, 1)
    if not check and diag.f2_norm1 > sigma / 5:
        diag.flags.append("map perturbation above sigma/5")

    # frame change and new error before composition
    rows = state.region
    W = state.error + state.apply_xbar(Zd, src=RF, rows=rows)[0]
    xf = state.apply_xbar(np.conj(Zd[: n - 1]), src=RF, rows=rows)[0]  # (beta, alpha, N)
    M = np.eye(n - 1)[:, :, None] + np.transpose(xf, (1, 0, 2))
    Cbar = np.linalg.inv(np.transpose(M, (2, 0, 1)))  # (N, alpha, beta)
    Ex = np.einsum("Nab,jbN->jaN", Cbar, W)

    pair = invert_map(f2, RF, sigma, source=RF, rho=rho, check=check)
    gy = pair.g()  # (dim, |RF|) points g(y)
    h_plus_hat = dom.h[RF.index_in(dom.host)] + h_hat
    interp = RF.interpolate(h_plus_hat, gy.T)
    if np.any(np.isnan(interp)):
        raise OutOfDomainError("inverse map leaves the sampled region")
    yy = RF.coords
    h1 = (gy[:-1] ** 2).sum(0) - (yy[:, :-1] ** 2).sum(1) + interp
    diag.g2_norm = _sup(pair.g2)
    if pair.roundtrip > 10 * dom.spacing:
        diag.flags.append("inverse roundtrip above 10 spacing")

    rho1 = rho * (1 - 5 * sigma)
    new_dom, clipped = _clip_domain(make_domain(dim, rho1, h_values=h1, host=RF, lattice=dom.lattice))
    if clipped:
        diag.flags.append("region clipped to host margin")
    # nesting of the intermediate domains
    outer = dom.shrink(rho * (1 - sigma)).region
    mid = make_domain(dim, rho * (1 - 2 * sigma), h_values=h1, host=RF, lattice=dom.lattice).region
    diag.nesting_ok = bool(outer.contains(mid) and outer.contains(new_dom.region))
    if not diag.nesting_ok:
        diag.flags.append("domain nesting failed")

    pts = gy[:, new_dom.region.index_in(RF)].T
    E1 = rows.interpolate(Ex.reshape(-1, len(rows)), pts)
    if np.any(np.isnan(E1)):
        raise OutOfDomainError("composition with the inverse map leaves the old domain")
    E1 = E1.reshape(n, n - 1, -1)
    new_state = EmbeddingState(new_dom, E1, None, None, dict(state.meta))
    o = new_dom.region.origin_index()
    diag.origin_error = _sup(E1[..., o])
    if diag.origin_error > 10 * dom.spacing ** 2:
        diag.flags.append("error at origin above 10 spacing^2")
    return new_state, pair, diag


# -- sequence driver ---------------------------------------------------------------
@dataclass
class StepRecord:
    j: int
    rho: float
    sigma: float
    log_t: float
    delta: dict
    N: dict
    defect: float
    flags: list

    def to_json(self) -> str:
        return json.dumps({"j": self.j, "rho": self.rho, "sigma": self.sigma, "log_t": self.log_t,
                           "delta": {f"{k:g}": v for k, v in self.delta.items()},
                           "N": {f"{k:g}": v for k, v in self.N.items()},
                           "defect": self.defect, "flags": self.flags}, sort_keys=True)


def state_norms(state: EmbeddingState, orders=(0, 1, 2)):
    reg = state.region
    E = state.error.reshape(-1, len(reg))
    h = state.domain.h_on(reg)
    delta = {a: norm(E, reg, a) for a in orders}
    N = {a: 1.0 + norm(h, reg, a) for a in orders}
    return delta, N


def compose_maps(G, region: Region, pair: MapPair, new_region: Region) -> np.ndarray:
    """Resample ``G o g`` on ``new_region``: ``G`` holds original coordinates of the points of ``region``."""
    pts = pair.g()[:, new_region.index_in(pair.target)].T
    out = region.interpolate(np.asarray(G), pts)
    if np.any(np.isnan(out)):
        raise OutOfDomainError("composite map leaves the previous domain")
    return out.reshape(len(G), -1)


def _jacobian_sup(G, region: Region) -> float:
    """Largest operator norm of the central-difference Jacobian of ``G`` on the interior."""
    inner = region.erode(1)
    if not len(inner):
        return 0.0
    J = np.stack([region.central_diff(ax, inner) @ np.asarray(G).T for ax in range(region.dim)], axis=-1)
    return float(np.linalg.norm(J, ord=2, axis=(1, 2)).max())


@dataclass
class SequenceResult:
    states: list
    records: list
    diagnostics: list
    halted: str | None = None

    def jsonl(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.records)


def run_sequence(initial: EmbeddingState, params: ScheduleParams | None = None, op_factory=None,
                 moll: Mollifier | None = None, max_steps: int = 4, solver: SolverConfig | None = None,
                 defect_fraction: float = 0.2, t_min: float = 1e-6, enforce: bool = True,
                 on_step=None) -> SequenceResult:
    """Iterate alteration and renormalization along the schedule ``rho, sigma, t``.

    Halts on the first violated hypothesis (its name is stored in
    ``halted``), when ``t_j`` drops below ``t_min``, or after ``max_steps``.
    """
    params = params or ScheduleParams()
    consts = params.constants
    op_factory = op_factory or (lambda st: HomotopyOperator(st, solver))
    moll = moll or build_mollifier(initial.dim, int(params.m))
    state = initial
    rho, sigma, log_t = state.domain.rho, params.sigma0, math.log(params.t0)
    k = params.k
    states, records, diags = [state], [], []
    delta, N = state_norms(state)
    G = state.region.coords.T.copy()  # original coordinates of the current lattice points
    jac_bound = 1.0
    flags = []
    halted = None
    if delta.get(k, 0.0) > math.exp(params.s * log_t):
        if enforce:
            halted = "initial error exceeds t0^s"
        else:
            flags.append("initial error exceeds t0^s")
    records.append(StepRecord(0, rho, sigma, log_t, delta, N, 0.0, flags))
    if on_step:
        on_step(records[-1])
    j = 0
    while halted is None and j < max_steps:
        t = math.exp(log_t)
        if t < t_min:
            halted = "t below resolvable scale"
            break
        margin = rho * sigma / consts.c_hat_smoothing
        margin_flag = []
        if not t < margin:
            if enforce:
                halted = f"smoothing margin violated: t = {t:.3g} >= rho sigma / c_hat = {margin:.3g}"
                break
            margin_flag = ["smoothing margin violated"]
        try:
            op = op_factory(state)
            F, RF, d_alter = alter(state, t, op, moll)
            new_state, pair, d_ren = renormalize(state, F, sigma, RF, consts, check=enforce)
        except HypothesisViolation as exc:
            halted = f"step hypothesis failed: {exc}"
            break
        except (SolverError, OutOfDomainError, ResolutionError) as exc:
            halted = f"step failed: {exc}"
            break
        d_ren.I1, d_ren.I2, d_ren.I3, d_ren.I4, d_ren.I5_defect = (d_alter.I1, d_alter.I2, d_alter.I3,
                                                                   d_alter.I4, d_alter.I5_defect)
        d_ren.identity_residual = d_alter.identity_residual
        d_ren.homotopy_defect = d_alter.homotopy_defect
        step_flags = list(op.flags) + margin_flag + d_ren.flags
        if d_alter.homotopy_defect > defect_fraction:
            step_flags.append("operator-limited")
        j += 1
        rho_j, sigma_j, log_t_j = rho, sigma, log_t
        rho = rho * (1 - 5 * sigma)
        sigma = sigma / 5
        log_t = params.kappa * log_t
        G = compose_maps(G, state.region, pair, new_state.region)
        jac_bound *= 1.0 + norm(pair.g2, pair.target, 1)
        d_ren.composite = {"jacobian": _jacobian_sup(G, new_state.region), "product_bound": jac_bound}
        h_old = state.domain.h[new_state.region.index_in(state.domain.host)]
        h_new = new_state.domain.h_on(new_state.region)
        dh = norm(h_new - h_old, new_state.region, 2)
        try:
            N3 = 1.0 + norm(state.domain.h_on(state.region), state.region, 3)
        except ResolutionError:
            N3 = math.nan  # the coarse grid has no interior for third differences
        # P_j = 3 K_j(2) N_j(3) t_j^(s-1)
        log_scale = (math.log(3 * consts.c(2)) - consts.s(2) * math.log(rho_j * sigma_j) + math.log(N3)
                     + (params.s - 1) * log_t_j)
        d_ren.h_step = {"norm2": dh, "log_bound": log_scale,
                        "log_ratio": math.log(dh) - log_scale if dh > 0 else -math.inf}
        state = new_state
        delta1, N1 = state_norms(state)
        d_ren.norms = {"delta_before": delta, "N_before": N, "delta_after": delta1, "N_after": N1}
        delta, N = delta1, N1
        states.append(state)
        diags.append(d_ren)
        records.append(StepRecord(j, rho, sigma, log_t, delta, N, d_alter.homotopy_defect, step_flags))
        if on_step:
            on_step(records[-1])
        violated = None
        if N.get(2, 1.0) - 1.0 >= consts.gamma0:
            violated = "graph C2 norm reached gamma0"
        elif delta.get(k, 0.0) > math.exp(params.s * log_t):
            violated = "error exceeds t_j^s"
        if violated and enforce:
            halted = violated
        elif violated:
            step_flags.append(violated)
    return SequenceResult(states, records, diags, halted)
