"""Discrete Hölder norms on lattice regions and audits of the standard norm inequalities.

Norm convention: for ``a = k + alpha`` the value is the sum, over all distinct
multi-indices ``|I| <= k``, of ``sup |D^I u|`` plus the largest
``alpha``-Hölder ratio among the top-order derivatives.  Vector-valued fields
(leading axes) use the pointwise Euclidean norm.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .grid import Region, ResolutionError, apply_op, multi_indices

ALL_PAIRS_LIMIT = 20000
RANDOM_PAIRS = 10 ** 6


class HypothesisViolation(ValueError):
    """An audit or operation was called outside the hypotheses of its inequality."""


@dataclass
class NormReport:
    order: float
    value: float
    derivative_sups: list
    holder_ratio: float

    def to_row(self, field_id: str = "") -> dict:
        return {"field_id": field_id, "a": self.order, "value": self.value,
                "components": list(self.derivative_sups) + [self.holder_ratio]}


def _pointwise_abs(values: np.ndarray) -> np.ndarray:
    v = np.asarray(values)
    if v.ndim == 1:
        return np.abs(v)
    return np.sqrt(np.sum(np.abs(v.reshape(-1, v.shape[-1])) ** 2, axis=0))


def derivative_table(values: np.ndarray, region: Region, order: int) -> dict:
    """All derivatives ``D^I u`` with ``|I| <= order`` keyed by multi-index."""
    dim = region.dim
    table = {(0,) * dim: np.asarray(values)}
    for k in range(1, order + 1):
        for idx in multi_indices(dim, k):
            # differentiate a lower-order entry along its first nonzero axis
            ax = next(i for i, c in enumerate(idx) if c)
            parent = list(idx)
            parent[ax] -= 1
            table[idx] = apply_op(region.diff(ax), table[tuple(parent)])
    return table


def derivative_masks(region: Region, order: int) -> dict:
    """Points where each ``D^I u`` of :func:`derivative_table` is defined.

    A difference is defined where the point has a neighbour along the axis and
    every stencil entry of the parent derivative is itself defined; points with
    no neighbour along an axis would otherwise get a spurious zero derivative.
    """
    dim = region.dim
    idx = np.arange(len(region))
    masks = {(0,) * dim: np.ones(len(region), bool)}
    for k in range(1, order + 1):
        for mi in multi_indices(dim, k):
            ax = next(i for i, c in enumerate(mi) if c)
            parent = list(mi)
            parent[ax] -= 1
            pm = masks[tuple(parent)]
            fw, bw = region.neighbor(ax, 1), region.neighbor(ax, -1)
            f_ok = (fw >= 0) & pm[np.maximum(fw, 0)]
            b_ok = (bw >= 0) & pm[np.maximum(bw, 0)]
            both = (fw >= 0) & (bw >= 0)
            masks[mi] = np.where(both, f_ok & b_ok, (f_ok | b_ok) & pm[idx])
    return masks


def holder_ratio(values: np.ndarray, region: Region, alpha: float, seed: int = 0,
                 n_pairs: int = RANDOM_PAIRS, all_pairs_limit: int = ALL_PAIRS_LIMIT) -> float:
    """``max |u(x)-u(y)| / |x-y|^alpha`` over all pairs, or seeded random pairs for big regions."""
    return max(holder_ratios([values], region, alpha, seed, n_pairs, all_pairs_limit))


def holder_ratios(fields: list, region: Region, alpha: float, seed: int = 0,
                  n_pairs: int = RANDOM_PAIRS, all_pairs_limit: int = ALL_PAIRS_LIMIT) -> list:
    """Hölder ratios of several fields on one region, sharing the pair distances."""
    if alpha <= 0 or len(region) < 2:
        return [0.0] * len(fields)
    flat = [np.asarray(v).reshape(-1, len(region)).T for v in fields]  # (N, c)
    x = region.coords
    n = len(region)
    best = [0.0] * len(fields)
    if n <= all_pairs_limit:
        block = max(1, 2_000_000 // n)
        for i0 in range(0, n, block):
            # pairs (i, j) with j > i suffice by symmetry
            dist = cdist(x[i0:i0 + block], x[i0:])
            with np.errstate(divide="ignore"):
                w = np.where(dist > 0, dist ** (-alpha), 0.0)
            for q, v in enumerate(flat):
                vi = v[i0:i0 + block]
                vj = v[i0:]
                if v.shape[1] == 1:
                    diff = np.abs(vi[:, :1] - vj[:, 0][None, :])
                else:
                    diff = np.sqrt(sum(np.abs(vi[:, c:c + 1] - vj[:, c][None, :]) ** 2 for c in range(v.shape[1])))
                best[q] = max(best[q], float((diff * w).max()))
        return best
    rng = np.random.default_rng(seed)
    i = rng.integers(0, n, n_pairs)
    j = rng.integers(0, n, n_pairs)
    keep = i != j
    i, j = i[keep], j[keep]
    w = np.sqrt(((x[i] - x[j]) ** 2).sum(-1)) ** (-alpha)
    for q, v in enumerate(flat):
        diff = np.sqrt((np.abs(v[i] - v[j]) ** 2).sum(-1))
        best[q] = float(np.max(diff * w))
    return best


def holder_norm(values: np.ndarray, region: Region, a: float, seed: int = 0,
                table: dict | None = None, within: Region | None = None) -> NormReport:
    """Discrete ``C^a`` norm of a field sampled on ``region``.

    With ``within`` the derivatives are still formed on ``region`` but the sups
    and the Hölder ratio only see the points of ``within``, which keeps the
    one-sided boundary stencils out of the measurement.
    """
    if a < 0:
        raise ValueError("order must be nonnegative")
    k = int(math.floor(a + 1e-12))
    frac = a - k
    if k > 0 and len(region.erode(k)) == 0:
        raise ResolutionError(f"region has no interior for derivatives of order {k}")
    if table is None:
        table = derivative_table(values, region, k)
    masks = derivative_masks(region, k)
    if within is not None:
        pos = within.index_in(region)
        table = {idx: np.asarray(v)[..., pos] for idx, v in table.items()}
        masks = {idx: m[pos] for idx, m in masks.items()}
        region = within
    sups = []
    for order in range(k + 1):
        sups.append(float(sum(_pointwise_abs(table[idx])[masks[idx]].max(initial=0.0)
                              for idx in multi_indices(region.dim, order))))
    hr = 0.0
    if frac > 1e-12:
        top = list(multi_indices(region.dim, k))
        ok = np.logical_and.reduce([masks[idx] for idx in top])
        sub = region.subset(ok)
        hr = max(holder_ratios([np.asarray(table[idx])[..., ok] for idx in top], sub, frac, seed=seed))
    return NormReport(order=float(a), value=float(sum(sups) + hr), derivative_sups=sups, holder_ratio=hr)


def norm(values, region, a, seed: int = 0, within: Region | None = None) -> float:
    return holder_norm(values, region, a, seed=seed, within=within).value


def scale_invariant_norm(values, region, a, rho, seed: int = 0) -> float:
    """Norm with the j-th derivative sups weighted by rho**j and the ratio by rho**a."""
    rep = holder_norm(values, region, a, seed=seed)
    return float(sum(s * rho ** j for j, s in enumerate(rep.derivative_sups)) + rep.holder_ratio * rho ** a)


# -- audits ------------------------------------------------------------------

@dataclass
class AuditReport:
    kind: str
    lhs: float
    rhs: float
    ratio: float
    passed: bool
    bound: float
    details: dict = field(default_factory=dict)

    def to_row(self, trial: int = 0) -> dict:
        row = {"trial": trial, "kind": self.kind, "lhs": self.lhs, "rhs": self.rhs,
               "ratio": self.ratio, "passed": self.passed, "bound": self.bound}
        row.update(self.details)
        return row


def _ratio(lhs: float, rhs: float) -> float:
    if lhs == 0.0:
        return 0.0
    return lhs / rhs if rhs > 0 else math.inf


def audit_interpolation(values, region, a, b, lam, rho=1.0, constants=None, seed=0) -> AuditReport:
    """Interpolation inequality ``|u|_c <= c rho^-c |u|_a^lam |u|_b^(1-lam)``."""
    if not a < b:
        raise HypothesisViolation("interpolation needs a < b")
    if not 0 < lam < 1:
        raise HypothesisViolation("interpolation needs 0 < lambda < 1")
    c = lam * a + (1 - lam) * b
    ua = norm(values, region, a, seed)
    ub = norm(values, region, b, seed)
    uc = norm(values, region, c, seed)
    rhs = rho ** (-c) * ua ** lam * ub ** (1 - lam)
    r = _ratio(uc, rhs)
    bound = constants.c(c) if constants is not None else math.inf
    return AuditReport("interpolation", uc, rhs, r, r <= bound, bound, {"c": c})


def audit_rule(kind: str, constants=None, seed: int = 0, **inp) -> AuditReport:
    """Evaluate both sides of one norm inequality with the constant stripped.

    kinds and inputs
      convexity:    u, v, region_u, region_v, rho, tau, ab, ab1, ab2
      product:      u, v, region, a, rho
      chain:        u_values, u_region, g (dim, N), region, a, rho, tau
      chain_fixed:  g (p, p, N) matrix field, region, a, rho   (u(W) = (I+W)^-1)
      inverse_map:  f2, g2, region, target_region, a, rho, sigma
      x_derivative: state, u, a
    """
    if kind == "convexity":
        (a, b), (a1, b1), (a2, b2) = inp["ab"], inp["ab1"], inp["ab2"]
        lam = _convex_weight((a, b), (a1, b1), (a2, b2))
        ru, rv = inp["region_u"], inp["region_v"]
        u, v = inp["u"], inp["v"]
        lhs = norm(u, ru, a, seed) * norm(v, rv, b, seed)
        rhs = inp.get("rho", 1.0) ** (-a) * inp.get("tau", 1.0) ** (-b) * (
            norm(u, ru, a1, seed) * norm(v, rv, b1, seed) + norm(u, ru, a2, seed) * norm(v, rv, b2, seed))
        details = {"lambda": lam}
        c_bound = constants.c(a) if constants else math.inf
    elif kind == "product":
        reg, a, u, v = inp["region"], inp["a"], inp["u"], inp["v"]
        lhs = norm(np.asarray(u) * np.asarray(v), reg, a, seed)
        rhs = inp.get("rho", 1.0) ** (-a) * (norm(u, reg, a, seed) * norm(v, reg, 0, seed)
                                             + norm(u, reg, 0, seed) * norm(v, reg, a, seed))
        details = {}
        c_bound = constants.c(a) if constants else math.inf
    elif kind == "chain":
        reg, a = inp["region"], inp["a"]
        rho, tau = inp.get("rho", 1.0), inp.get("tau", 1.0)
        g = np.asarray(inp["g"])
        ureg, uval = inp["u_region"], inp["u_values"]
        comp = ureg.interpolate(uval, g.T)
        if np.any(np.isnan(comp)):
            raise HypothesisViolation("map leaves the domain of u")
        g1 = norm(g, reg, 1, seed)
        K = tau ** (-2 * a) * rho ** (-a * a) * (1 + g1) ** (2 * a)
        lhs = norm(comp, reg, a, seed)
        rhs = K * (norm(uval, ureg, a, seed) + norm(uval, ureg, 1, seed) * norm(g, reg, a, seed))
        details = {}
        c_bound = constants.c(a) if constants else math.inf
    elif kind == "chain_fixed":
        reg, a = inp["region"], inp["a"]
        g = np.asarray(inp["g"])
        if norm(g, reg, 0, seed) >= 0.5:
            raise HypothesisViolation("matrix field must stay in B(1/2)")
        p = g.shape[0]
        mats = np.moveaxis(g, -1, 0)
        inv = np.linalg.inv(np.eye(p)[None] + mats)
        # subtract u(0) = I so that a constant composite has zero norm
        comp = np.moveaxis(inv - np.eye(p)[None], 0, -1)
        K = inp.get("rho", 1.0) ** (-a) * (1 + norm(g, reg, 0, seed)) ** max(a - 1, 0)
        lhs = norm(comp, reg, a, seed)
        rhs = K * norm(g, reg, a, seed)
        details = {}
        c_bound = constants.c(a) if constants else math.inf
    elif kind == "inverse_map":
        reg, treg, a = inp["region"], inp["target_region"], inp["a"]
        rho, sigma = inp.get("rho", 1.0), inp["sigma"]
        f2, g2 = np.asarray(inp["f2"]), np.asarray(inp["g2"])
        f1 = norm(f2, reg, 1, seed)
        if f1 > sigma / 5:
            raise HypothesisViolation(f"|f2|_1 = {f1:.3g} exceeds sigma/5 = {sigma / 5:.3g}")
        lhs = norm(g2, treg, a, seed)
        scale = 1.0 if a <= 2 else rho ** (-4 * (a + 2))
        rhs = scale * norm(f2, reg, a, seed)
        details = {"f2_norm1": f1}
        c_bound = constants.c(a) if constants else math.inf
    elif kind == "x_derivative":
        state, u, a = inp["state"], np.asarray(inp["u"]), inp["a"]
        reg = state.region
        rho = state.domain.rho
        err = state.error
        xu, rows = state.apply_xbar(u)
        err = err.reshape(-1, len(reg))
        e0 = norm(err, reg, 0, seed)
        K = rho ** (-2 * a) * (1 + e0)
        lhs = norm(xu, rows, a, seed)
        rhs = K * (norm(u, reg, a + 1, seed)
                   + (norm(err, reg, a, seed) + norm(state.h, reg, a + 1, seed)) * norm(u, reg, 1, seed))
        details = {}
        c_bound = constants.c(a) if constants else math.inf
    else:
        raise ValueError(f"unknown audit kind {kind!r}")
    r = _ratio(lhs, rhs)
    return AuditReport(kind, float(lhs), float(rhs), float(r), bool(r <= c_bound), float(c_bound), details)


def _convex_weight(ab, ab1, ab2) -> float:
    a, b = ab
    (a1, b1), (a2, b2) = ab1, ab2
    den = np.array([a1 - a2, b1 - b2], float)
    num = np.array([a - a2, b - b2], float)
    i = int(np.argmax(np.abs(den)))
    if abs(den[i]) < 1e-14:
        raise HypothesisViolation("endpoints coincide")
    lam = num[i] / den[i]
    if not (0 < lam < 1) or np.max(np.abs(lam * den - num)) > 1e-9:
        raise HypothesisViolation("(a,b) is not a proper convex combination of the endpoints")
    return float(lam)


def report_dict(rep: NormReport) -> dict:
    return asdict(rep)
