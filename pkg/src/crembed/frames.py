"""CR structures, adapted frames over graph embeddings, and the tangential complexes.

Coordinates on ``R^(2n-1)`` are ``x = (x_0, ..., x_{2n-2})`` with
``z^a = x_{2a} + i x_{2a+1}`` for ``a < n-1`` and ``t = x_{2n-2}``.  An
embedding is always the graph map ``Z = (z', t + i y)`` with
``y = |z'|^2 + h``.  A vector field is stored by its complex coordinate
coefficients, shape ``(dim, N)``; a family of ``n-1`` fields has shape
``(n-1, dim, N)``.

The frame keeps the barred fields
``Xbar_a = Ybar_a + A[a, b] Y_b + B[a] d_t`` and the error array
``E[j, a] = Xbar_a Z^j`` (``j = n-1`` is the ``z^n`` component).  ``A`` and ``B``
are recovered from ``E`` through ``A[a, b] = E[b, a]`` and
``B[a] = (E[n-1, a] + A[a, c] r_c / r_n) / (1 + i h_t)``.
"""
from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .domain import Domain, make_domain
from .grid import OutOfDomainError, Region, ResolutionError, apply_op
from .holder import HypothesisViolation
from .poly import Poly, exponents, monomial_table, random_poly


class DegenerateDefiningFunction(ValueError):
    """|r_n| is too small for the tangential basis to be defined."""


class DegenerateLeviForm(ValueError):
    pass


class IntegrabilityWarning(UserWarning):
    pass


def n_of(dim: int) -> int:
    return (dim + 1) // 2


def complex_coords(x: np.ndarray) -> np.ndarray:
    """``z'`` as an ``(N, n-1)`` complex array."""
    x = np.atleast_2d(x)
    return x[:, 0:-1:2] + 1j * x[:, 1:-1:2]


def form_pairs(n: int):
    return [(a, b) for a in range(n - 1) for b in range(a + 1, n - 1)]


# -- pointwise tangential geometry -----------------------------------------
@dataclass
class TangentialBasis:
    """``Ybar_a``, ``Y_a`` and ``d_t`` at the points of ``rows`` for a graph with gradient ``grad_y``.

    ``grad_y`` has shape ``(dim, N)`` and holds the derivatives of ``y = |z'|^2 + h``.
    """

    rows: Region | None
    grad_y: np.ndarray
    threshold: float = 0.05

    def __post_init__(self):
        self.grad_y = np.asarray(self.grad_y, float)
        if np.any(np.abs(self.rn) < self.threshold):
            raise DegenerateDefiningFunction("|r_n| below threshold; the graph is too steep in t")

    @property
    def dim(self) -> int:
        return self.grad_y.shape[0]

    @property
    def n(self) -> int:
        return n_of(self.dim)

    @cached_property
    def h_t(self) -> np.ndarray:
        return self.grad_y[-1]

    @cached_property
    def rbar(self) -> np.ndarray:
        """``r_abar = dbar_a y``, shape ``(n-1, N)``."""
        g = self.grad_y
        return 0.5 * (g[0:-1:2] + 1j * g[1:-1:2])

    @cached_property
    def r(self) -> np.ndarray:
        return np.conj(self.rbar)

    @cached_property
    def rn(self) -> np.ndarray:
        return 0.5 * (1j + self.h_t)

    @cached_property
    def rnbar(self) -> np.ndarray:
        return 0.5 * (-1j + self.h_t)

    @cached_property
    def ybar(self) -> np.ndarray:
        n, d, N = self.n, self.dim, self.grad_y.shape[1]
        c = np.zeros((n - 1, d, N), complex)
        for a in range(n - 1):
            c[a, 2 * a] = 0.5
            c[a, 2 * a + 1] = 0.5j
            c[a, -1] = -self.rbar[a] / (2 * self.rnbar)
        return c

    @cached_property
    def y(self) -> np.ndarray:
        n, d, N = self.n, self.dim, self.grad_y.shape[1]
        c = np.zeros((n - 1, d, N), complex)
        for a in range(n - 1):
            c[a, 2 * a] = 0.5
            c[a, 2 * a + 1] = -0.5j
            c[a, -1] = -self.r[a] / (2 * self.rn)
        return c

    def frame_components(self, E: np.ndarray) -> np.ndarray:
        A, B = frame_coefficients(E, self)
        c = self.ybar + np.einsum("abN,bkN->akN", A, self.y)
        c[:, -1] += B
        return c

    def error_of(self, comps: np.ndarray) -> np.ndarray:
        """``E[j, a] = V_a Z^j`` for fields ``comps`` of shape ``(n-1, dim, N)``."""
        return error_from_components(comps, self.grad_y)


def frame_coefficients(E: np.ndarray, basis: TangentialBasis):
    """``(A, B)`` from the error array; ``A[a, b] = E[b, a]``."""
    n = basis.n
    A = np.transpose(E[: n - 1], (1, 0, 2))
    B = (E[n - 1] + np.einsum("acN,cN->aN", A, basis.r / basis.rn)) / (1 + 1j * basis.h_t)
    return A, B


def error_from_components(comps: np.ndarray, grad_y: np.ndarray) -> np.ndarray:
    comps = np.asarray(comps)
    n = n_of(comps.shape[1])
    E = np.empty((n,) + (comps.shape[0], comps.shape[2]), complex)
    for b in range(n - 1):
        E[b] = comps[:, 2 * b] + 1j * comps[:, 2 * b + 1]
    E[n - 1] = comps[:, -1] + 1j * np.einsum("akN,kN->aN", comps, grad_y)
    return E


def adapt(vbar: np.ndarray) -> np.ndarray:
    """Rebase ``n-1`` fields so that ``Xbar_a zbar^b = delta``."""
    n1 = vbar.shape[0]
    M = np.empty((vbar.shape[2], n1, n1), complex)
    for b in range(n1):
        M[:, :, b] = (vbar[:, 2 * b] - 1j * vbar[:, 2 * b + 1]).T
    flat = np.transpose(vbar, (2, 0, 1))  # (N, n-1, dim)
    out = np.linalg.solve(M, flat)
    return np.transpose(out, (1, 2, 0))


# -- analytic structures -----------------------------------------------------
def _smooth_step(u):
    """C-infinity step: 0 for u <= 0, 1 for u >= 1; returns value and derivative."""
    u = np.asarray(u, float)
    a = np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)
    b = np.where(u < 1, np.exp(-1.0 / np.where(u < 1, 1 - u, 1.0)), 0.0)
    da = np.where(u > 0, a / np.where(u > 0, u, 1.0) ** 2, 0.0)
    db = np.where(u < 1, -b / np.where(u < 1, 1 - u, 1.0) ** 2, 0.0)
    s = a / (a + b)
    ds = (da * (a + b) - a * (da + db)) / (a + b) ** 2
    return s, ds


@dataclass
class GraphFunction:
    """Analytic ``h`` with its gradient; ``None`` members mean ``h = 0``."""

    value: object = None
    grad: object = None

    def __call__(self, x):
        x = np.atleast_2d(x)
        return np.zeros(len(x)) if self.value is None else np.asarray(self.value(x), float)

    def gradient(self, x):
        x = np.atleast_2d(x)
        return np.zeros_like(x, dtype=float) if self.grad is None else np.asarray(self.grad(x), float)

    def grad_y(self, x) -> np.ndarray:
        """Gradient of ``|z'|^2 + h`` as ``(dim, N)``."""
        x = np.atleast_2d(x)
        g = self.gradient(x).T.copy()
        g[:-1] += 2 * x[:, :-1].T
        return g


class Structure:
    """A CR structure given by ``n-1`` analytic antiholomorphic fields."""

    dim: int

    @property
    def n(self) -> int:
        return n_of(self.dim)

    def vbar(self, x) -> np.ndarray:
        raise NotImplementedError

    def adapted(self, x) -> np.ndarray:
        return adapt(self.vbar(np.atleast_2d(x)))

    def error(self, x, graph: GraphFunction | None = None) -> np.ndarray:
        x = np.atleast_2d(x)
        graph = graph or GraphFunction()
        return error_from_components(self.adapted(x), graph.grad_y(x))

    def coefficients(self, x, graph: GraphFunction | None = None):
        """Pointwise ``(A, B)`` relative to the graph (quadric when omitted)."""
        x = np.atleast_2d(x)
        graph = graph or GraphFunction()
        basis = TangentialBasis(None, graph.grad_y(x))
        return frame_coefficients(error_from_components(self.adapted(x), basis.grad_y), basis)

    def to_dict(self) -> dict:
        raise NotImplementedError


class GraphStructure(Structure):
    """Structure induced on ``y = |z'|^2 + h(x)`` in graph coordinates; ``h = None`` is the quadric."""

    def __init__(self, dim: int, h: Poly | None = None):
        self.dim = dim
        self.h = h

    def graph(self) -> GraphFunction:
        if self.h is None:
            return GraphFunction()
        return GraphFunction(self.h, self.h.grad)

    def vbar(self, x):
        x = np.atleast_2d(x)
        return TangentialBasis(None, self.graph().grad_y(x), threshold=0.0).ybar

    def to_dict(self):
        return {"kind": "graph", "dim": self.dim, "h": None if self.h is None else self.h.to_dict()}


class Pullback(Structure):
    """Pullback of ``base`` under ``Phi = id + cutoff(|x|) * phi2(x)``."""

    def __init__(self, base: Structure, phi2: Poly, cutoff=(2.0, 4.0)):
        self.base = base
        self.dim = base.dim
        self.phi2 = phi2
        self.cutoff = tuple(cutoff)

    def _cut(self, x):
        r = np.linalg.norm(x, axis=1)
        r1, r2 = self.cutoff
        s, ds = _smooth_step((r2 - r) / (r2 - r1))
        dchi = (-ds / (r2 - r1))[:, None] * x / np.maximum(r, 1e-300)[:, None]
        return s, dchi

    def phi(self, x):
        x = np.atleast_2d(x)
        chi, _ = self._cut(x)
        return x + chi[:, None] * self.phi2(x)

    def jacobian(self, x):
        x = np.atleast_2d(x)
        chi, dchi = self._cut(x)
        p = self.phi2(x)
        J = chi[:, None, None] * self.phi2.grad(x) + p[:, :, None] * dchi[:, None, :]
        return J + np.eye(self.dim)[None]

    def vbar(self, x):
        x = np.atleast_2d(x)
        vb = self.base.vbar(self.phi(x))  # (n-1, dim, N)
        J = self.jacobian(x)
        sol = np.linalg.solve(J, np.transpose(vb, (2, 1, 0)))  # (N, dim, n-1)
        return np.transpose(sol, (2, 1, 0))

    def to_dict(self):
        return {"kind": "pullback", "base": self.base.to_dict(), "phi2": self.phi2.to_dict(),
                "cutoff": list(self.cutoff)}


class LinearPushforward(Structure):
    """Pushforward of ``base`` by the linear map ``x -> L x``."""

    def __init__(self, base: Structure, L):
        self.base = base
        self.dim = base.dim
        self.L = np.asarray(L, float)
        self.Linv = np.linalg.inv(self.L)

    def vbar(self, y):
        x = np.atleast_2d(y) @ self.Linv.T
        return np.einsum("ij,ajN->aiN", self.L, self.base.vbar(x))

    def to_dict(self):
        return {"kind": "linear", "base": self.base.to_dict(), "matrix": self.L.tolist()}


class MapPushforward(Structure):
    """Pushforward of ``base`` by ``f = id + f2`` with ``f2 = O(|x|^2)`` polynomial."""

    def __init__(self, base: Structure, f2: Poly):
        self.base = base
        self.dim = base.dim
        self.f2 = f2

    def inverse(self, w, tol: float = 1e-14, max_iter: int = 200):
        w = np.atleast_2d(w)
        x = w.copy()
        for _ in range(max_iter):
            step = (w - self.f2(x)) - x
            x = x + step
            if np.max(np.abs(step)) < tol:
                break
        # Newton polish
        for _ in range(3):
            J = np.eye(self.dim)[None] + self.f2.grad(x)
            x = x - np.linalg.solve(J, (x + self.f2(x) - w)[..., None])[..., 0]
        return x

    def vbar(self, w):
        x = self.inverse(w)
        J = np.eye(self.dim)[None] + self.f2.grad(x)
        return np.einsum("Nij,ajN->aiN", J, self.base.vbar(x))

    def to_dict(self):
        return {"kind": "map", "base": self.base.to_dict(), "f2": self.f2.to_dict()}


def structure_from_dict(d: dict) -> Structure:
    kind = d["kind"]
    if kind == "graph":
        return GraphStructure(d["dim"], None if d["h"] is None else Poly.from_dict(d["h"]))
    if kind == "pullback":
        return Pullback(structure_from_dict(d["base"]), Poly.from_dict(d["phi2"]), d["cutoff"])
    if kind == "linear":
        return LinearPushforward(structure_from_dict(d["base"]), d["matrix"])
    if kind == "map":
        return MapPushforward(structure_from_dict(d["base"]), Poly.from_dict(d["f2"]))
    raise ValueError(f"unknown structure kind {kind!r}")


def dilation_matrix(dim: int, rho: float) -> np.ndarray:
    return np.diag([rho] * (dim - 1) + [rho ** 2])


def dilate_structure(structure: Structure, rho: float) -> Structure:
    """Pushforward under ``(z', t) -> (rho z', rho^2 t)``."""
    return LinearPushforward(structure, dilation_matrix(structure.dim, rho))


def quadric(dim: int) -> Structure:
    return GraphStructure(dim)


def cubic_bump(dim: int, amplitude: float = 0.05, seed: int = 7) -> Structure:
    """Quadric pulled back by ``id + amplitude * cubic(z') * cutoff``.

    The cubic does not involve ``t``, so A is homogeneous of weight 2 and B of
    weight 1 under the non-isotropic dilations (to first order in the amplitude).
    The ``z'`` components are ten times smaller than the ``t`` component so the
    weight-1 part of B dominates the weight-2 part already at moderate dilations.
    """
    rng = np.random.default_rng(seed)
    p = random_poly(rng, dim - 1, [3], amplitude, outputs=dim)
    exps = np.concatenate([p.exps, np.zeros((len(p.exps), 1), np.int64)], axis=1)
    coeffs = p.coeffs.copy()
    coeffs[:, :-1] *= 0.1
    return Pullback(quadric(dim), Poly(exps, coeffs))


def random_integrable(dim: int, seed: int = 0, amplitude: float = 0.05) -> Structure:
    """Random cubic graph pulled back by a random quadratic-plus-cubic map."""
    rng = np.random.default_rng(seed)
    base = GraphStructure(dim, random_poly(rng, dim, [3], amplitude))
    return Pullback(base, random_poly(rng, dim, [2, 3], amplitude, outputs=dim))


def make_structure(name: str, dim: int, amplitude: float | None = None) -> Structure:
    """Named test structures: quadric, cubic-bump, perturbed-quadric, random-integrable(seed)."""
    m = re.fullmatch(r"\s*([a-z\-]+)\s*(?:\(\s*(\d+)\s*\))?\s*", name)
    if not m:
        raise ValueError(f"cannot parse structure name {name!r}")
    key, arg = m.group(1), m.group(2)
    kw = {} if amplitude is None else {"amplitude": amplitude}
    if key == "quadric":
        return quadric(dim)
    if key in ("cubic-bump", "perturbed-quadric"):
        return cubic_bump(dim, **kw)
    if key == "random-integrable":
        return random_integrable(dim, seed=int(arg or 0), **kw)
    raise ValueError(f"unknown structure {name!r}")


# -- embedding states --------------------------------------------------------
@dataclass
class Frame:
    """Adapted frame coefficients on ``rows``."""

    A: np.ndarray
    B: np.ndarray
    basis: TangentialBasis

    @property
    def n(self) -> int:
        return self.basis.n

    @property
    def rows(self) -> Region:
        return self.basis.rows

    def components(self) -> np.ndarray:
        c = self.basis.ybar + np.einsum("abN,bkN->akN", self.A, self.basis.y)
        c[:, -1] += self.B
        return c

    def adaptedness_residual(self) -> float:
        """``max |X_a z^b - delta|`` evaluated from the coordinate coefficients."""
        c = np.conj(self.components())
        n1 = self.n - 1
        res = 0.0
        for b in range(n1):
            zb = c[:, 2 * b] + 1j * c[:, 2 * b + 1]
            target = np.zeros_like(zb)
            target[b] = 1
            res = max(res, float(np.abs(zb - target).max()))
        return res

    def at_origin(self):
        o = self.rows.origin_index()
        return self.A[..., o], self.B[..., o]


class EmbeddingState:
    """One iterate: domain with its graph ``h`` and the error ``E = dbar_X Z`` on the domain."""

    def __init__(self, domain: Domain, error: np.ndarray, structure: Structure | None = None,
                 graph: GraphFunction | None = None, meta: dict | None = None):
        self.domain = domain
        self.error = np.asarray(error, complex)
        self.structure = structure
        self.graph = graph
        self.meta = dict(meta or {})
        n = domain.n
        if self.error.shape != (n, n - 1, len(domain.region)):
            raise ValueError(f"error must have shape {(n, n - 1, len(domain.region))}")
        if not domain.host.contains(domain.region.dilate(1)):
            raise ResolutionError("host must contain one cell of margin around the domain")
        self._bases: dict = {}

    @property
    def n(self) -> int:
        return self.domain.n

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def region(self) -> Region:
        return self.domain.region

    @property
    def h(self) -> np.ndarray:
        return self.domain.h_on(self.region)

    @property
    def spacing(self) -> float:
        return self.domain.spacing

    def y_host(self) -> np.ndarray:
        x = self.domain.host.coords
        return (x[:, :-1] ** 2).sum(1) + self.domain.h

    def Z(self, region: Region | None = None) -> np.ndarray:
        """Graph map components ``(n, N)`` on ``region`` (default: the host)."""
        host = self.domain.host
        region = region or host
        x = region.coords
        y = self.y_host()[region.index_in(host)]
        return np.concatenate([complex_coords(x).T, (x[:, -1] + 1j * y)[None]])

    def basis(self, rows: Region | None = None) -> TangentialBasis:
        rows = rows or self.region
        key = hash(rows.flat.tobytes())
        if key not in self._bases:
            host = self.domain.host
            y = self.y_host()
            g = np.stack([host.central_diff(k, rows) @ y for k in range(self.dim)])
            self._bases[key] = TangentialBasis(rows, g)
        return self._bases[key]

    def error_on(self, rows: Region) -> np.ndarray:
        return self.error[..., rows.index_in(self.region)]

    def frame(self, rows: Region | None = None) -> Frame:
        rows = rows or self.region
        basis = self.basis(rows)
        A, B = frame_coefficients(self.error_on(rows), basis)
        return Frame(A, B, basis)

    def fields(self, kind: str, rows: Region) -> np.ndarray:
        if kind == "M":
            return self.basis(rows).ybar
        if kind == "X":
            return self.frame(rows).components()
        raise ValueError("kind must be 'M' or 'X'")

    def apply_xbar(self, u, src: Region | None = None, rows: Region | None = None):
        """``Xbar_a u`` for values on ``src``; returns ``(values (..., n-1, N), rows)``."""
        src = src or self.region
        rows = rows or src.erode(1).intersect(self.region)
        return apply_fields(self.fields("X", rows), u, src, rows), rows

    def error_norm(self, a: float, seed: int = 0) -> float:
        from .holder import norm
        return norm(self.error.reshape(-1, len(self.region)), self.region, a, seed)

    def copy_with(self, **kw) -> "EmbeddingState":
        d = dict(domain=self.domain, error=self.error, structure=self.structure, graph=self.graph, meta=self.meta)
        d.update(kw)
        return EmbeddingState(**d)


def apply_fields(comps: np.ndarray, u, src: Region, rows: Region) -> np.ndarray:
    """Apply vector fields ``comps (m, dim, N_rows)`` with central differences from ``src``."""
    u = np.asarray(u)
    du = np.stack([apply_op(src.central_diff(k, rows), u) for k in range(src.dim)])
    return np.einsum("akr,k...r->...ar", comps, du)


def state_from_structure(structure: Structure, domain: Domain | None = None, graph: GraphFunction | None = None,
                         dim: int | None = None, rho: float = 1.0, resolution: int | None = None,
                         meta: dict | None = None) -> EmbeddingState:
    """Sample the exact pointwise error of ``structure`` over the graph of ``graph``."""
    graph = graph or GraphFunction()
    if domain is None:
        domain = make_domain(dim or structure.dim, rho, h=(None if graph.value is None else graph),
                             resolution=resolution)
    E = structure.error(domain.region.coords, graph)
    return EmbeddingState(domain, E, structure, graph, meta)


# -- tangential complexes ----------------------------------------------------
def dbar(kind: str, phi, state: EmbeddingState, q: int = 0, src: Region | None = None,
         rows: Region | None = None):
    """``dbar_M`` (kind ``"M"``) or ``dbar_X`` (kind ``"X"``) of a (0,q)-form.

    Functions have shape ``(..., N)``; (0,1)-forms ``(..., n-1, N)``.  The
    result lives on ``rows`` (default: ``src`` eroded by one cell, within the
    domain) and is returned together with it.
    """
    n = state.n
    if q >= n - 1:
        raise ValueError("q must be below n-1")
    if q > 1:
        raise NotImplementedError("only q = 0, 1 are needed here")
    src = src or state.region
    if rows is None:
        rows = src.erode(1)
        if kind == "X":
            rows = rows.intersect(state.region)
    if len(rows) == 0:
        raise ResolutionError("lattice too coarse for first differences")
    comps = state.fields(kind, rows)
    phi = np.asarray(phi)
    if q == 0:
        return apply_fields(comps, phi, src, rows), rows
    d = apply_fields(comps, phi, src, rows)  # (..., n-1 [form index], n-1 [field], N)
    out = [d[..., b, a, :] - d[..., a, b, :] for a, b in form_pairs(n)]
    return np.stack(out, axis=-2), rows


def dbar_matrices(state: EmbeddingState, src: Region, rows: Region):
    """Sparse ``Ybar_a`` operators from values on ``src`` to ``rows``."""
    import scipy.sparse as sp
    comps = state.basis(rows).ybar
    D = [src.central_diff(k, rows) for k in range(state.dim)]
    out = []
    for a in range(state.n - 1):
        op = sp.csr_matrix(D[0].shape, dtype=complex)
        for k in range(state.dim):
            if np.any(comps[a, k] != 0):
                op = op + sp.diags(comps[a, k]) @ D[k]
        out.append(op.tocsr())
    return out


def integrability_residual(state: EmbeddingState) -> float:
    """Relative size of the part of ``[Xbar_a, Xbar_b]`` outside ``span{Xbar_c}``."""
    n = state.n
    if n < 3:
        return 0.0
    reg = state.region
    rows = reg.erode(1)
    c_src = state.fields("X", reg)
    c_rows = state.fields("X", rows)
    worst = 0.0
    for a, b in form_pairs(n):
        t1 = apply_fields(c_rows[a:a + 1], c_src[b], reg, rows)[:, 0]  # (dim, N)
        t2 = apply_fields(c_rows[b:b + 1], c_src[a], reg, rows)[:, 0]
        br = t1 - t2
        basis = np.transpose(c_rows, (2, 1, 0))  # (N, dim, n-1)
        coef, *_ = zip(*[np.linalg.lstsq(basis[i], br[:, i], rcond=None)[:1] for i in range(len(rows))])
        coef = np.stack(coef)
        res = br.T - np.einsum("Nkc,Nc->Nk", basis, coef)
        scale = max(np.abs(t1).max(), np.abs(t2).max())
        if scale > 1e-14:
            worst = max(worst, float(np.abs(res).max() / scale))
    return worst


# -- Taylor fits and the Levi form -------------------------------------------
def stencil_taylor(values, region: Region, degree: int = 2, radius_cells: float = 3.0):
    """Least-squares Taylor polynomial at 0 over the points within ``radius_cells`` cells.

    Returns ``(exps, coeffs)`` with coefficients on the trailing axis order of
    ``values`` moved to the front: ``coeffs`` has shape ``(M, ...)``.
    """
    x = region.coords
    near = np.linalg.norm(x, axis=1) <= radius_cells * region.spacing + 1e-12
    exps = exponents(region.dim, range(degree + 1))
    if near.sum() < len(exps):
        raise ResolutionError(f"stencil has {near.sum()} points for {len(exps)} Taylor coefficients")
    V = monomial_table(x[near], exps)
    vals = np.asarray(values)[..., near]
    flat = vals.reshape(-1, vals.shape[-1]).T
    coef, *_ = np.linalg.lstsq(V, flat, rcond=None)
    return exps, coef.reshape((len(exps),) + vals.shape[:-1])


def affine_part(values, region: Region, degree: int = 2, radius_cells: float = 3.0):
    """Fitted value and gradient at 0: ``(v0 (...), grad (..., dim))``."""
    exps, coef = stencil_taylor(values, region, degree, radius_cells)
    deg = exps.sum(1)
    v0 = coef[deg == 0][0]
    grad = np.zeros(coef.shape[1:] + (region.dim,), dtype=coef.dtype)
    for m in np.nonzero(deg == 1)[0]:
        grad[..., int(np.argmax(exps[m]))] = coef[m]
    return v0, grad


def _levi_from_jet(c0: np.ndarray, dc: np.ndarray):
    """Levi matrix from ``Xbar`` coefficients at 0 (``(n-1, dim)``) and their gradients (``(n-1, dim, dim)``)."""
    n1, dim = c0.shape
    X0, dX = np.conj(c0), np.conj(dc)
    basis = np.concatenate([X0, c0, np.eye(dim)[-1:]], axis=0).T  # columns
    lam = np.empty((n1, n1), complex)
    for a in range(n1):
        for b in range(n1):
            br = dc[b] @ X0[a] - dX[a] @ c0[b]
            lam[a, b] = np.linalg.solve(basis, br)[-1]
    return 1j * lam


@dataclass
class LeviReport:
    matrix: np.ndarray
    eigenvalues: np.ndarray
    positive_definite: bool
    hermitian_defect: float


def _finish_levi(g: np.ndarray, tol: float = 1e-2) -> LeviReport:
    defect = float(np.abs(g - g.conj().T).max() / max(np.abs(g).max(), 1e-300))
    if defect > tol:
        warnings.warn(f"Levi form not Hermitian (relative defect {defect:.2e})", IntegrabilityWarning, stacklevel=3)
    gh = 0.5 * (g + g.conj().T)
    ev = np.linalg.eigvalsh(gh)
    return LeviReport(gh, ev, bool(np.all(ev > 0)), defect)


def levi_form(obj, graph: GraphFunction | None = None, step: float = 1e-4, radius_cells: float = 3.0) -> LeviReport:
    """Levi form at 0 of a lattice ``Frame``, an ``EmbeddingState`` or an analytic ``Structure``."""
    if isinstance(obj, EmbeddingState):
        obj = obj.frame()
    if isinstance(obj, Frame):
        comps = obj.components()
        exps, coef = stencil_taylor(comps, obj.rows, 2, radius_cells)
        deg = exps.sum(1)
        c0 = coef[deg == 0][0]
        dc = np.zeros(c0.shape + (obj.rows.dim,), complex)
        for m in np.nonzero(deg == 1)[0]:
            dc[..., int(np.argmax(exps[m]))] = coef[m]
        return _finish_levi(_levi_from_jet(c0, dc))
    if isinstance(obj, Structure):
        dim = obj.dim
        pts = np.zeros((2 * dim + 1, dim))
        for k in range(dim):
            pts[1 + 2 * k, k] = step
            pts[2 + 2 * k, k] = -step
        c = obj.adapted(pts)
        c0 = c[..., 0]
        dc = np.stack([(c[..., 1 + 2 * k] - c[..., 2 + 2 * k]) / (2 * step) for k in range(dim)], axis=-1)
        return _finish_levi(_levi_from_jet(c0, dc))
    raise TypeError("levi_form expects a Frame, EmbeddingState or Structure")


# -- initial normalization ----------------------------------------------------
def _complex_to_real(T: np.ndarray) -> np.ndarray:
    """Real matrix of ``z -> T z`` on interleaved (re, im) coordinates."""
    n1 = T.shape[0]
    R = np.zeros((2 * n1, 2 * n1))
    for i in range(n1):
        for j in range(n1):
            p, q = T[i, j].real, T[i, j].imag
            R[2 * i:2 * i + 2, 2 * j:2 * j + 2] = [[p, -q], [q, p]]
    return R


def _origin_jet(structure: Structure, graph: GraphFunction | None, step: float = 1e-4):
    """Error and its gradient at 0 by central differences of the exact pointwise error."""
    dim = structure.dim
    pts = np.zeros((2 * dim + 1, dim))
    for k in range(dim):
        pts[1 + 2 * k, k] = step
        pts[2 + 2 * k, k] = -step
    E = structure.error(pts, graph)
    grad = np.stack([(E[..., 1 + 2 * k] - E[..., 2 + 2 * k]) / (2 * step) for k in range(dim)], axis=-1)
    return E[..., 0], grad


def normalize_initial(structure: Structure, m_order: int = 4, rho: float = 1.0, resolution: int | None = None,
                      domain_dim: int | None = None, build_state: bool = True):
    """Bring an analytic structure to normal form at 0 and sample the resulting state.

    Steps: a real linear map sending ``Xbar_a(0)`` to ``d/dzbar^a``; a complex
    linear change of ``z'`` (and the sign of ``t``) making the Levi form ``2 delta``;
    then a quadratic polynomial correction ``F`` of the embedding, solving
    ``dbar F = -(linear part of the error)`` by least squares, followed by the
    renormalizing change of coordinates.  Returns ``(state, report)``; the
    state is ``None`` when ``build_state`` is false.
    """
    dim = structure.dim
    n1 = n_of(dim) - 1
    v0 = structure.vbar(np.zeros((1, dim)))[..., 0]  # (n-1, dim)
    a, b = 2 * v0.real, 2 * v0.imag
    cols = []
    for k in range(n1):
        cols += [a[k], b[k]]
    H = np.array(cols).T  # dim x (2n-2)
    if np.linalg.matrix_rank(H, tol=1e-10) < 2 * n1:
        raise DegenerateLeviForm("fields and their conjugates are dependent at 0")
    q, _ = np.linalg.qr(np.concatenate([H, np.eye(dim)], axis=1))
    normal = q[:, 2 * n1]
    L = np.linalg.inv(np.concatenate([H, normal[:, None]], axis=1))
    s1 = LinearPushforward(structure, L)

    lev = levi_form(s1)
    g = lev.matrix
    if np.all(lev.eigenvalues < 0):
        sign = -1.0
        g = -g
    elif np.all(lev.eigenvalues > 0):
        sign = 1.0
    else:
        raise DegenerateLeviForm(f"Levi form is not definite: eigenvalues {lev.eigenvalues}")
    w, U = np.linalg.eigh(g)
    St = math.sqrt(2.0) * np.diag(w ** -0.5) @ U.conj().T  # S^T with S^T g conj(S) = 2 I
    T = np.linalg.inv(St.T)
    L2 = np.zeros((dim, dim))
    L2[:-1, :-1] = _complex_to_real(T)
    L2[-1, -1] = sign
    s2 = LinearPushforward(s1, L2)

    # quadratic correction: dzbar_a F^j = -(linear part of E^j_a)
    _, dE = _origin_jet(s2, None)
    exps = exponents(dim, [2])
    G = np.zeros((n1, dim, len(exps)), complex)
    for m, e in enumerate(exps):
        hess = np.zeros((dim, dim))
        ax = np.nonzero(e)[0]
        if len(ax) == 1:
            hess[ax[0], ax[0]] = 2.0
        else:
            hess[ax[0], ax[1]] = hess[ax[1], ax[0]] = 1.0
        for al in range(n1):
            G[al, :, m] = 0.5 * (hess[2 * al] + 1j * hess[2 * al + 1])
    Gm = G.reshape(n1 * dim, len(exps))
    rhs = -dE.reshape(dE.shape[0], n1 * dim).T
    coef, *_ = np.linalg.lstsq(Gm, rhs, rcond=None)
    removal_residual = float(np.abs(Gm @ coef - rhs).max()) if rhs.size else 0.0
    Fpoly = Poly(exps, coef)  # values (N, n)

    # projected map f = id + f2 and the new graph
    fc = np.zeros((len(exps), dim))
    fc[:, 0:-1:2] = coef[:, :n1].real
    fc[:, 1:-1:2] = coef[:, :n1].imag
    fc[:, -1] = coef[:, n1].real
    f2 = Poly(exps, fc)
    s3 = MapPushforward(s2, f2)

    def h1(w):
        x = s3.inverse(w)
        return (x[:, :-1] ** 2).sum(1) + Fpoly(x)[:, n1].imag - (np.atleast_2d(w)[:, :-1] ** 2).sum(1)

    def h1_grad(w):
        w = np.atleast_2d(w)
        x = s3.inverse(w)
        gx = Fpoly.grad(x)[:, n1].imag
        gx[:, :-1] += 2 * x[:, :-1]
        J = np.eye(dim)[None] + f2.grad(x)
        gw = np.linalg.solve(np.transpose(J, (0, 2, 1)), gx[..., None])[..., 0]
        gw[:, :-1] -= 2 * w[:, :-1]
        return gw

    graph = GraphFunction(h1, h1_grad)
    report = {"linear": L, "levi_change": L2, "levi_before": lev.matrix, "removal_residual": removal_residual,
              "F": Fpoly, "f2": f2, "m_order": m_order}
    state = None
    if build_state:
        state = state_from_structure(s3, graph=graph, dim=domain_dim or dim, rho=rho, resolution=resolution,
                                     meta={"normalized": True, "m_order": m_order})
    return state, report


# -- dilation -----------------------------------------------------------------
def dilate_graph(graph: GraphFunction, dim: int, rho: float) -> GraphFunction:
    """``h^(rho)(x) = rho^2 h(delta^-1 x)``."""
    inv = np.array([1 / rho] * (dim - 1) + [1 / rho ** 2])
    if graph.value is None:
        return GraphFunction()
    return GraphFunction(lambda x: rho ** 2 * graph(np.atleast_2d(x) * inv),
                         lambda x: rho ** 2 * graph.gradient(np.atleast_2d(x) * inv) * inv)


def dilate(state: EmbeddingState, rho_dilation: float) -> EmbeddingState:
    """Non-isotropic dilation of a state by ``(z', t) -> (rho z', rho^2 t)``.

    Analytic states are dilated exactly; lattice states by interpolation, which
    needs the pre-image of the domain inside the sampled region.
    """
    if rho_dilation <= 0:
        raise ValueError("dilation factor must be positive")
    dim = state.dim
    dom = state.domain
    if state.structure is not None:
        graph = dilate_graph(state.graph or GraphFunction(), dim, rho_dilation)
        new_dom = make_domain(dim, dom.rho, h=(None if graph.value is None else graph), lattice=dom.lattice)
        meta = dict(state.meta, dilation=state.meta.get("dilation", 1.0) * rho_dilation)
        return state_from_structure(dilate_structure(state.structure, rho_dilation), new_dom, graph, meta=meta)
    inv = np.array([1 / rho_dilation] * (dim - 1) + [1 / rho_dilation ** 2])
    host = dom.host
    h_new = rho_dilation ** 2 * host.interpolate(dom.h, host.coords * inv)
    if np.any(np.isnan(h_new)):
        raise OutOfDomainError("insufficient source coverage for dilation")
    new_dom = make_domain(dim, dom.rho, h_values=h_new, host=host, lattice=dom.lattice)
    src = state.error.reshape(-1, len(state.region))
    E = state.region.interpolate(src, new_dom.region.coords * inv)
    if np.any(np.isnan(E)):
        raise OutOfDomainError("insufficient source coverage for dilation")
    E = E.reshape(state.n, state.n - 1, -1)
    E[state.n - 1] *= rho_dilation
    meta = dict(state.meta, dilation=state.meta.get("dilation", 1.0) * rho_dilation)
    return EmbeddingState(new_dom, E, None, None, meta)


def require_normalized(state: EmbeddingState, tol: float) -> None:
    o = state.region.origin_index()
    e0 = float(np.abs(state.error[..., o]).max())
    if e0 > tol:
        raise HypothesisViolation(f"error at the origin is {e0:.3g} > {tol:.3g}")


# -- dilation study ------------------------------------------------------------
@dataclass
class DilationRow:
    rho: float
    error_c2: float
    A_c2: float
    B_c2: float


def dilation_study(structure: Structure, rhos=(2, 4, 8, 16), resolution: int = 33, order: float = 2.0):
    """C^order norms of the error and of the frame coefficients A, B after dilating by each rho.

    Returns the rows and the log-log slopes ``{"error", "A", "B"}`` against rho.
    """
    from .holder import norm
    state, _ = normalize_initial(structure, resolution=resolution)
    rows = []
    for r in rhos:
        s = dilate(state, float(r))
        reg = s.region
        fr = s.frame(reg)
        rows.append(DilationRow(float(r), norm(s.error.reshape(-1, len(reg)), reg, order),
                                norm(fr.A.reshape(-1, len(reg)), reg, order), norm(fr.B, reg, order)))
    logs = np.log([[r.error_c2, r.A_c2, r.B_c2] for r in rows])
    slopes = np.polyfit(np.log(np.asarray(rhos, float)), logs, 1)[0]
    return rows, dict(zip(("error", "A", "B"), map(float, slopes)))
