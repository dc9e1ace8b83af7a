"""Moment-vanishing mollifiers, lattice smoothing S_t, and the Friedrichs commutator."""
from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate

from .grid import Lattice, Region


class SupportViolation(ValueError):
    """The smoothing kernel would reach outside the available samples."""


def bump(u):
    """exp(-1/(1-u^2)) on |u| < 1, zero outside."""
    u = np.asarray(u, float)
    out = np.zeros_like(u)
    inside = np.abs(u) < 1
    out[inside] = np.exp(-1.0 / (1.0 - u[inside] ** 2))
    return out


def bump_prime(u):
    u = np.asarray(u, float)
    out = np.zeros_like(u)
    inside = np.abs(u) < 1
    ui = u[inside]
    out[inside] = np.exp(-1.0 / (1.0 - ui ** 2)) * (-2.0 * ui / (1.0 - ui ** 2) ** 2)
    return out


@lru_cache(maxsize=None)
def _bump_moment(k: int) -> float:
    """int_{-1}^{1} u^k bump(u) du."""
    if k % 2:
        return 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, _ = integrate.quad(lambda u: u ** k * math.exp(-1.0 / (1.0 - u * u)), -1, 1,
                                epsabs=1e-15, epsrel=1e-13, limit=400)
    return val


@dataclass
class Mollifier:
    """Tensor-product kernel chi(z) = prod_i chi1(z_i) with chi1(z) = p(z/r) bump(z/r).

    ``coeffs[j]`` multiplies ``(z/r)^(2j)``; the 1D support radius ``r`` is
    below 1/sqrt(dim) so the support sits strictly inside the unit ball.
    """

    dim: int
    m_order: int
    radius: float
    coeffs: np.ndarray = field(repr=False)

    def chi1(self, z):
        u = np.asarray(z, float) / self.radius
        p = sum(c * u ** (2 * j) for j, c in enumerate(self.coeffs))
        return p * bump(u) / self.radius

    def chi1_prime(self, z):
        u = np.asarray(z, float) / self.radius
        p = sum(c * u ** (2 * j) for j, c in enumerate(self.coeffs))
        dp = sum(2 * j * c * u ** (2 * j - 1) for j, c in enumerate(self.coeffs) if j > 0)
        return (dp * bump(u) + p * bump_prime(u)) / self.radius ** 2

    def chi(self, z):
        z = np.atleast_2d(z)
        return np.prod(self.chi1(z), axis=1)

    def moment1d(self, k: int, points: int = 4001) -> float:
        """Trapezoid quadrature of int z^k chi1 on a uniform kernel lattice."""
        z = np.linspace(-self.radius, self.radius, points)
        return float(np.trapezoid(z ** k * self.chi1(z), z))

    def moment(self, multi_index, points: int = 4001) -> float:
        return float(np.prod([self.moment1d(k, points) for k in multi_index]))

    def to_json(self) -> str:
        return json.dumps({"dim": self.dim, "m_order": self.m_order,
                           "coefficients": [float(c) for c in self.coeffs],
                           "bump": {"radius": self.radius, "profile": "exp(-1/(1-u^2))", "variable": "u = z/radius"}})

    @classmethod
    def from_json(cls, text: str) -> "Mollifier":
        d = json.loads(text)
        return cls(d["dim"], d["m_order"], d["bump"]["radius"], np.asarray(d["coefficients"], float))


def build_mollifier(dim: int, m_order: int = 4, radius: float | None = None) -> Mollifier:
    """Solve the even moment system so that int chi = 1 and moments 1..2m vanish."""
    if m_order < 1 or dim < 1:
        raise ValueError("need m_order >= 1 and dim >= 1")
    radius = radius if radius is not None else 0.98 / math.sqrt(dim)
    if radius * math.sqrt(dim) >= 1:
        raise ValueError("support must lie strictly inside the unit ball")
    m = m_order
    # unknowns c_0..c_m; equations: int u^(2i) p(u) bump(u) du = delta_{i0}, i = 0..m
    M = np.array([[_bump_moment(2 * i + 2 * j) for j in range(m + 1)] for i in range(m + 1)])
    rhs = np.zeros(m + 1)
    rhs[0] = 1.0
    if np.linalg.cond(M) > 1e14:
        raise np.linalg.LinAlgError("moment system is singular")
    coeffs = np.linalg.solve(M, rhs)
    return Mollifier(dim, m_order, radius, coeffs)


def discrete_weights(moll: Mollifier, t: float, spacing: float):
    """1D lattice weights for S_t at offsets k*spacing, k = -K..K.

    The samples of chi1 are corrected so that the discrete moments of orders
    0..2m match the continuous ones exactly; polynomials of degree <= 2m+1 are
    then reproduced exactly by the lattice convolution.  This needs at least
    m + 1 cells of kernel radius; coarser scales reduce the order with a warning.  Returns the offsets,
    weights, and the moment order actually achieved.
    """
    K = int(math.ceil(moll.radius * t / spacing)) - 1
    if K < 1:
        return np.array([0]), np.array([1.0]), math.inf
    k = np.arange(-K, K + 1)
    u = k * spacing / (t * moll.radius)
    b = bump(u)
    # K + 1 symmetric values with K + 1 moment conditions would force the identity
    m = min(moll.m_order, K - 1)
    if m < moll.m_order:
        warnings.warn(f"smoothing scale resolves only {K} cells; moment order reduced to {m}", stacklevel=2)
    basis = np.stack([b * u ** (2 * j) for j in range(m + 1)], 1)
    A = np.stack([(k * spacing) ** (2 * i) @ basis for i in range(m + 1)])
    rhs = np.zeros(m + 1)
    rhs[0] = 1.0
    d = np.linalg.solve(A, rhs)
    return k, basis @ d, 2 * m + 1


def _convolve_axis(values: np.ndarray, region: Region, axis: int, offsets, weights):
    """Weighted sum along one axis; returns values on the points with a full stencil."""
    cols = [region.neighbor(axis, -int(k)) if k != 0 else np.arange(len(region)) for k in offsets]
    cols = np.stack(cols)
    ok = np.all(cols >= 0, axis=0)
    out_region = region.subset(ok)
    c = cols[:, ok]
    acc = np.zeros(values.shape[:-1] + (int(ok.sum()),), dtype=np.result_type(values, float))
    for w, ci in zip(weights, c):
        acc += w * values[..., ci]
    return acc, out_region


def smooth(values: np.ndarray, region: Region, t: float, moll: Mollifier, target: Region | None = None,
           rho: float | None = None, sigma: float | None = None, c_hat: float = 5.0 / math.sqrt(2.0)):
    """Discrete ``S_t u(x) = int chi(z) u(x - t z) dz``.

    Returns ``(values, region)`` on the points whose kernel support lies in the
    input region, restricted to ``target`` when given.  With ``rho`` and
    ``sigma`` the margin ``t < rho sigma / c_hat`` is enforced.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    if rho is not None and sigma is not None and not t < rho * sigma / c_hat:
        raise SupportViolation(f"t = {t:.3g} violates t < rho sigma / c_hat = {rho * sigma / c_hat:.3g}")
    offsets, weights, _ = discrete_weights(moll, t, region.spacing)
    vals = np.asarray(values)
    reg = region
    if offsets.size > 1:
        for ax in range(region.dim):
            vals, reg = _convolve_axis(vals, reg, ax, offsets, weights)
    if target is not None:
        pos = reg.locate(target.flat)
        if np.any(pos < 0):
            raise SupportViolation("target region is not covered by the smoothed values")
        return vals[..., pos], target
    return vals, reg


def _offset_gather(region: Region, offsets):
    """Positions of ``x - k s`` for every point and offset vector (``-1`` if absent)."""
    lat = region.lattice
    out = []
    for k in offsets:
        m = region.multi - np.asarray(k)
        inside = np.all((m >= 0) & (m < lat.res), axis=1)
        out.append(np.where(inside, region.locate(np.where(inside, lat.flat_of(np.clip(m, 0, lat.res - 1)), 0)), -1))
    return out


def commutator(u: np.ndarray, w: np.ndarray, region: Region, t: float, moll: Mollifier,
               axis: int | None = None, target: Region | None = None):
    """``[S_t, w d_axis] u`` through the integrated-by-parts kernel (no large-term cancellation).

    With lattice weights ``c_k`` of S_t and ``a_k(x) = c_k (w(x - k s) - w(x))``,
    summation by parts against the central difference gives
    ``v(x) = sum_k (D_k a)_k(x) (u(x - k s) - u(x))``, where ``D_k`` is the
    central difference in the offset index along ``axis``.  This is the exact
    lattice counterpart of ``S_t(w u_x) - w (S_t u)_x`` and never differentiates u.
    """
    axis = region.dim - 1 if axis is None else axis
    s = region.spacing
    k1, c1, _ = discrete_weights(moll, t, s)
    K = int(k1.max())
    if K < 1:
        return np.zeros(len(region)), region
    weight = dict(zip(k1.tolist(), c1))
    ranges = [range(-K - 1, K + 2) if i == axis else range(-K, K + 1) for i in range(region.dim)]
    offsets = list(itertools.product(*ranges))
    gather = _offset_gather(region, offsets)
    ok = np.all(np.stack(gather) >= 0, axis=0)
    out_region = region.subset(ok)
    index = {k: g[ok] for k, g in zip(offsets, gather)}
    sel = np.nonzero(ok)[0]
    u = np.asarray(u)
    w = np.asarray(w)
    ux, wx = u[sel], w[sel]
    v = np.zeros(sel.size, dtype=np.result_type(u, w, float))

    def coef(k):
        c = 1.0
        for ki in k:
            c *= weight.get(ki, 0.0)
        return c

    e = np.zeros(region.dim, int)
    e[axis] = 1
    for k in offsets:
        kp = tuple(np.asarray(k) + e)
        km = tuple(np.asarray(k) - e)
        cp, cm = coef(kp), coef(km)
        if cp == 0.0 and cm == 0.0:
            continue
        da = np.zeros(sel.size, dtype=v.dtype)
        if cp:
            da += cp * (w[index[kp]] - wx)
        if cm:
            da -= cm * (w[index[km]] - wx)
        v += da / (2 * s) * (u[index[k]] - ux)
    if target is not None:
        pos = out_region.locate(target.flat)
        if np.any(pos < 0):
            raise SupportViolation("target region is not covered")
        return v[pos], target
    return v, out_region


def commutator_direct(u, w, region: Region, t: float, moll: Mollifier, axis: int | None = None):
    """``S_t(w u_x) - w (S_t u)_x`` by subtracting the two terms (cross-check only)."""
    axis = region.dim - 1 if axis is None else axis
    u = np.asarray(u)
    w = np.asarray(w)
    inner = region.erode(1)
    du = region.central_diff(axis, inner) @ u
    first, r1 = smooth(w[inner.index_in(region)] * du, inner, t, moll)
    su, r2 = smooth(u, region, t, moll)
    rows = r2.erode(1)
    dsu = r2.central_diff(axis, rows) @ su
    common = rows.intersect(r1)
    return first[common.index_in(r1)] - w[common.index_in(region)] * dsu[common.index_in(rows)], common


# -- audits ------------------------------------------------------------------------
def lacunary_field(region: Region, b: float, rng: np.random.Generator, octaves=range(1, 9)):
    """``sum_k 2^(-k b) cos(2^k theta_k . x + phase_k)``: sharp C^b scaling across octaves."""
    x = region.coords
    u = np.zeros(len(region))
    for k in octaves:
        theta = rng.normal(size=region.dim)
        theta /= np.linalg.norm(theta)
        u += 2.0 ** (-k * b) * np.cos(2.0 ** k * (x @ theta) + rng.uniform(0, 2 * np.pi))
    return u


@dataclass
class SmoothingAuditRow:
    t: float
    a: float
    b: float
    lhs: float
    rhs: float
    ratio: float


def smoothing_rate(u, region: Region, ts, a: float, b: float, moll: Mollifier, remainder: bool = False,
                   target: Region | None = None):
    """Rows ``(t, a, b, ||S_t u||_a or ||(I - S_t)u||_a, t^(b-a) ||u||_b, ratio)`` and the log-log slope.

    Derivatives are formed on the whole smoothed region and measured on
    ``target`` (default: the region left by the largest t, eroded by a few cells).
    """
    from .holder import norm
    ts = np.sort(np.asarray(ts, float))
    u = np.asarray(u)
    if target is None:
        _, target = _smooth_quiet(u, region, ts[-1], moll)
        target = target.erode(2 * (int(math.ceil(max(a, b))) + 1))
    ub = norm(u, region, b, within=target)
    rows = []
    for t in ts:
        su, reg = _smooth_quiet(u, region, t, moll)
        v = u[reg.index_in(region)] - su if remainder else su
        lhs = norm(v, reg, a, within=target)
        rhs = t ** (b - a) * ub
        rows.append(SmoothingAuditRow(float(t), a, b, lhs, rhs, lhs / rhs if rhs else math.inf))
    lhs = np.array([r.lhs for r in rows])
    slope = float(np.polyfit(np.log(ts), np.log(lhs), 1)[0])
    return rows, slope


def _smooth_quiet(u, region, t, moll):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return smooth(u, region, t, moll)


@dataclass
class CommutatorAuditRow:
    field_id: int
    t: float
    lhs: float
    rhs: float
    fitted_constant: float


def commutator_audit(region: Region, moll: Mollifier, ts, fields: int = 10, alpha: float = 0.5, seed: int = 0):
    """Fitted constants ``C`` in ``||[S_t, w d] u||_0 <= C ||w_x||_0 t^alpha H_alpha(u)``."""
    from .holder import holder_ratio
    rng = np.random.default_rng(seed)
    x = region.coords
    rows = []
    for i in range(fields):
        u = lacunary_field(region, alpha, rng, octaves=range(1, 6))
        c = rng.normal(size=(2, region.dim))
        w = np.sin(x @ c[0]) + 0.5 * np.cos(x @ c[1])
        inner = region.erode(1)
        wx = float(np.abs(region.central_diff(region.dim - 1, inner) @ w).max())
        H = holder_ratio(u, region, alpha, seed)
        for t in ts:
            v, _ = commutator(u, w, region, t, moll)
            lhs = float(np.abs(v).max()) if v.size else 0.0
            rhs = wx * t ** alpha * H
            rows.append(CommutatorAuditRow(i, float(t), lhs, rhs, lhs / rhs if rhs else 0.0))
    return rows


SMOOTHING_PAIRS = ((2, 0, False), (3, 1, False), (0, 2, True), (1, 3, True))


def smoothing_exponent_study(fields: int = 20, seed: int = 0, resolution: int = 4097, n_scales: int = 8,
                             pairs=SMOOTHING_PAIRS):
    """Log-log slopes of ``||S_t u||_a`` (and ``||(I - S_t)u||_a``) in ``t`` on lacunary fields.

    A 1D lattice on ``[-2, 2]`` with ``t`` over one decade; the octaves of the
    fields straddle the pass band of the kernel (cutoff near ``12 / t``), and
    for ``a > b`` stop one octave above it so that kernel leakage stays small.
    Returns ``{(a, b, remainder): [slope per field]}``.
    """
    lat = Lattice(1, resolution, 2.0)
    reg = lat.box()
    moll = build_mollifier(1, 4)
    rng = np.random.default_rng(seed)
    ts = np.geomspace(0.06, 0.6, n_scales)
    out = {}
    for a, b, rem in pairs:
        octaves = range(0, 11) if rem else range(0, 9)
        out[(a, b, rem)] = [smoothing_rate(lacunary_field(reg, b, rng, octaves), reg, ts, a, b, moll, rem)[1]
                            for _ in range(fields)]
    return out
