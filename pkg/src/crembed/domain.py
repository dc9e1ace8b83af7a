"""Sublevel domains {|x|^2 + h(x) <= rho^2} on a lattice and their geometric audits."""
from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .grid import Lattice, OutOfDomainError, Region
from .holder import HypothesisViolation, derivative_table, norm

C_HAT_DISTANCE = 3.0 * math.sqrt(2.0)
INNER_FACTOR = math.sqrt(2.0 / 3.0)
OUTER_FACTOR = math.sqrt(2.0)
DEFAULT_RESOLUTION = {3: 33, 5: 13, 7: 9, 9: 7}


class EmptyDomainError(ValueError):
    pass


@dataclass
class Domain:
    """Lattice realisation of ``D_rho(h)``.

    ``h`` is sampled on ``host`` (a region that contains the domain and a few
    cells of margin); ``region`` is the connected component of the origin in
    ``{psi <= rho^2}``.
    """

    rho: float
    lattice: Lattice
    host: Region
    h: np.ndarray
    region: Region
    connected: bool = True

    @property
    def dim(self) -> int:
        return self.lattice.dim

    @property
    def n(self) -> int:
        return (self.dim + 1) // 2

    @property
    def spacing(self) -> float:
        return self.lattice.spacing

    @property
    def mask(self) -> np.ndarray:
        """Boolean membership of host points in the domain."""
        out = np.zeros(len(self.host), bool)
        out[self.region.index_in(self.host)] = True
        return out

    def h_on(self, region: Region) -> np.ndarray:
        return self.h[region.index_in(self.host)]

    def psi_host(self) -> np.ndarray:
        return (self.host.coords ** 2).sum(1) + self.h

    def shrink(self, rho: float) -> "Domain":
        """Same h, smaller level."""
        return make_domain(self.dim, rho, h_values=self.h, host=self.host, lattice=self.lattice)

    # -- serialisation ------------------------------------------------------
    def to_json(self) -> str:
        box_mask = np.zeros(self.lattice.size, bool)
        box_mask[self.region.flat] = True
        host_mask = np.zeros(self.lattice.size, bool)
        host_mask[self.host.flat] = True
        return json.dumps({
            "dim": self.dim, "rho": self.rho, "spacing": self.spacing,
            "resolution": self.lattice.res, "half_width": self.lattice.half_width,
            "h": base64.b64encode(np.ascontiguousarray(self.h, "<f8").tobytes()).decode(),
            "host": base64.b64encode(np.packbits(host_mask).tobytes()).decode(),
            "mask": base64.b64encode(np.packbits(box_mask).tobytes()).decode(),
        })

    @classmethod
    def from_json(cls, text: str) -> "Domain":
        d = json.loads(text)
        lat = Lattice(d["dim"], d["resolution"], d["half_width"])
        unpack = lambda key: np.unpackbits(np.frombuffer(base64.b64decode(d[key]), np.uint8))[:lat.size].astype(bool)
        host = Region(lat, np.nonzero(unpack("host"))[0])
        region = Region(lat, np.nonzero(unpack("mask"))[0])
        h = np.frombuffer(base64.b64decode(d["h"]), "<f8").copy()
        return cls(d["rho"], lat, host, h, region)


def default_lattice(dim: int, rho: float, resolution: int | None = None) -> Lattice:
    res = resolution or DEFAULT_RESOLUTION.get(dim, 9)
    return Lattice(dim, res, OUTER_FACTOR * rho)


def default_host(lattice: Lattice, radius: float | None = None, margin_cells: int = 2) -> Region:
    """Points where h is sampled: the whole box for small lattices, else a padded ball."""
    if lattice.size <= 2_000_000:
        return lattice.box()
    radius = lattice.half_width / OUTER_FACTOR * 1.1 if radius is None else radius
    return lattice.ball(radius).dilate(margin_cells)


def make_domain(dim: int, rho: float, h=None, resolution: int | None = None, lattice: Lattice | None = None,
                host: Region | None = None, h_values: np.ndarray | None = None) -> Domain:
    """Build ``D_rho(h)``; ``h`` may be a callable on (N, dim) coordinates or omitted (h = 0)."""
    if dim < 3 or dim % 2 == 0:
        raise ValueError("dimension must be odd and at least 3")
    lattice = lattice or default_lattice(dim, rho, resolution)
    fixed_host = host is not None
    radius = 1.1 * rho
    while True:
        host_ = host if fixed_host else default_host(lattice, radius)
        if h_values is not None:
            hv = np.asarray(h_values, float)
        elif h is None:
            hv = np.zeros(len(host_))
        else:
            hv = np.asarray(h(host_.coords), float)
        psi = (host_.coords ** 2).sum(1) + hv
        inside = psi <= rho ** 2 + 1e-12
        region, connected = _origin_component(host_, inside)
        # the region needs two cells of sampled h around it unless the host is the full box
        if fixed_host or len(host_) == lattice.size or host_.contains(region.dilate(2)) \
                or radius > OUTER_FACTOR * lattice.half_width:
            return Domain(rho, lattice, host_, hv, region, connected)
        radius *= 1.15


def _origin_component(host: Region, inside: np.ndarray):
    cand = host.subset(inside)
    if len(cand) == 0:
        raise EmptyDomainError("sublevel set is empty on the lattice")
    rows, cols = [], []
    for ax in range(host.dim):
        nb = cand.neighbor(ax, 1)
        ok = nb >= 0
        rows.append(np.nonzero(ok)[0])
        cols.append(nb[ok])
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    graph = csr_matrix((np.ones(r.size), (r, c)), shape=(len(cand), len(cand)))
    ncomp, labels = connected_components(graph, directed=False)
    try:
        o = cand.origin_index()
    except OutOfDomainError:
        raise EmptyDomainError("origin is not inside the domain")
    keep = labels == labels[o]
    return cand.subset(keep), ncomp == 1


def psi(x, dom: Domain) -> float:
    """``|x|^2 + h(x)`` with h interpolated multilinearly from the host samples."""
    x = np.asarray(x, float).reshape(1, -1)
    if np.any(np.abs(x) > dom.lattice.half_width + 1e-12):
        raise OutOfDomainError("point outside the bounding lattice")
    hv = dom.host.interpolate(dom.h, x)[0]
    if np.isnan(hv):
        raise OutOfDomainError("no h samples near the point")
    return float((x ** 2).sum() + hv)


def h_c2_norm(dom: Domain) -> float:
    """Discrete ``C^2`` norm of h over the host region (the constant c_2)."""
    return norm(dom.h, dom.host, 2)


def check_h_normalized(dom: Domain, tol: float | None = None) -> dict:
    """h(0) = 0 and the first differences of h at 0 vanish up to O(spacing^2)."""
    o = dom.host.origin_index()
    tol = tol if tol is not None else 10 * dom.spacing ** 2
    grads = [float((dom.host.diff(ax)[[o]] @ dom.h)[0]) for ax in range(dom.dim)]
    ok = abs(dom.h[o]) <= 1e-12 and max(abs(g) for g in grads) <= tol
    return {"value_at_origin": float(dom.h[o]), "gradient_at_origin": grads, "passed": bool(ok)}


# -- boundary geometry --------------------------------------------------------

def boundary_points(dom: Domain, level_rho: float | None = None) -> np.ndarray:
    """Points where ``psi = level^2`` along lattice edges of the host.

    Along an edge h is linear (multilinear interpolation) and |x|^2 is exact,
    so the crossing solves a quadratic.
    """
    r = dom.rho if level_rho is None else level_rho
    host = dom.host
    x = host.coords
    f = (x ** 2).sum(1) + dom.h - r * r
    out = []
    s = dom.spacing
    for ax in range(dom.dim):
        nb = host.neighbor(ax, 1)
        ok = nb >= 0
        i = np.nonzero(ok)[0]
        j = nb[ok]
        change = (np.sign(f[i]) != np.sign(f[j])) | (f[i] == 0)
        i, j = i[change], j[change]
        if i.size == 0:
            continue
        x0 = x[i]
        dh = dom.h[j] - dom.h[i]
        # |x0 + tau s e|^2 + h_i + tau dh - r^2 = 0
        qa = s * s
        qb = 2 * s * x0[:, ax] + dh
        qc = f[i]
        disc = np.maximum(qb * qb - 4 * qa * qc, 0.0)
        roots = np.stack([(-qb - np.sqrt(disc)) / (2 * qa), (-qb + np.sqrt(disc)) / (2 * qa)], 1)
        inside = (roots >= -1e-12) & (roots <= 1 + 1e-12)
        tau = np.where(inside[:, 0], roots[:, 0], roots[:, 1])
        tau = np.clip(tau, 0.0, 1.0)
        p = x0.copy()
        p[:, ax] += tau * s
        out.append(p)
    if not out:
        return np.zeros((0, dom.dim))
    return np.concatenate(out)


@dataclass
class InclusionReport:
    passed: bool
    inner_radius: float
    outer_radius: float
    c2: float
    fixed_inner: float
    fixed_outer: float
    c2_inner: float
    c2_outer: float
    lattice_inner_ok: bool
    lattice_outer_ok: bool


def check_inclusions(dom: Domain, gamma0: float = 0.45) -> InclusionReport:
    """Lattice check of ``B(sqrt(2/3) rho) <= D_rho <= B(sqrt(2) rho)``."""
    c2 = h_c2_norm(dom)
    if c2 >= gamma0:
        raise HypothesisViolation(f"|h|_2 = {c2:.4g} is not below gamma0 = {gamma0}")
    rho = dom.rho
    bp = boundary_points(dom)
    radii = np.sqrt((bp ** 2).sum(1)) if len(bp) else np.array([np.inf])
    inner, outer = float(radii.min()), float(radii.max())
    # lattice-set form of the inclusions
    host_r = np.sqrt((dom.host.coords ** 2).sum(1))
    in_dom = dom.mask
    li = rho * INNER_FACTOR
    lo = rho * OUTER_FACTOR
    lattice_inner_ok = bool(np.all(in_dom[host_r <= li]))
    lattice_outer_ok = bool(np.all(host_r[in_dom] <= lo + 1e-12))
    passed = lattice_inner_ok and lattice_outer_ok and inner >= li - 1e-12 and outer <= lo + 1e-12
    return InclusionReport(passed, inner, outer, c2, li, lo, rho / math.sqrt(1 + c2),
                           rho / math.sqrt(1 - c2) if c2 < 1 else math.inf,
                           lattice_inner_ok, lattice_outer_ok)


def boundary_distance(dom: Domain, sigma: float, c_hat: float = C_HAT_DISTANCE):
    """Distance between the level sets at ``rho(1-sigma)`` and ``rho``; checks ``rho sigma <= c_hat dist``."""
    if not 0 < sigma < 1:
        raise ValueError("sigma must lie in (0, 1)")
    outer = boundary_points(dom, dom.rho)
    inner = boundary_points(dom, dom.rho * (1 - sigma))
    if len(inner) == 0 or len(outer) == 0:
        raise EmptyDomainError("inner or outer level set has no lattice crossings")
    dist, _ = cKDTree(outer).query(inner, k=1)
    d = float(dist.min())
    return d, bool(dom.rho * sigma <= c_hat * d + 1e-12)


def hessian_margin(dom: Domain) -> float:
    """min over interior points of ``lambda_min(Hess psi) - (2 - c2)``; nonnegative means convex enough."""
    c2 = h_c2_norm(dom)
    table = derivative_table(dom.h, dom.host, 2)
    core = dom.region.erode(2)
    if len(core) == 0:
        return math.inf
    pos = core.index_in(dom.host)
    d = dom.dim
    H = np.zeros((len(core), d, d))
    for i in range(d):
        for j in range(d):
            idx = [0] * d
            idx[i] += 1
            idx[j] += 1
            H[:, i, j] = table[tuple(idx)][pos] + (2.0 if i == j else 0.0)
    lam = np.linalg.eigvalsh(0.5 * (H + H.transpose(0, 2, 1)))[:, 0]
    return float(lam.min() - (2 - c2))


def gradient_minimiser_offset(dom: Domain) -> float:
    """Distance (in cells) from the origin to the point of smallest discrete |grad psi|."""
    reg = dom.region.erode(1)
    pos = reg.index_in(dom.host)
    psi_h = dom.psi_host()
    g2 = sum((dom.host.diff(ax) @ psi_h)[pos] ** 2 for ax in range(dom.dim))
    k = int(np.argmin(g2))
    return float(np.sqrt((reg.coords[k] ** 2).sum()) / dom.spacing)


def random_smooth_h(rng: np.random.Generator, dim: int, c2_target: float, lattice: Lattice,
                    host: Region | None = None):
    """Random polynomial-plus-trigonometric h vanishing to second order, scaled to a given C^2 norm."""
    host = host or default_host(lattice)
    x = host.coords
    quad = rng.normal(size=(dim, dim))
    quad = 0.5 * (quad + quad.T)
    cub = rng.normal(size=(dim, dim, dim)) * 0.3
    w = rng.normal(size=(2, dim))
    ph = rng.uniform(0, 2 * np.pi, 2)

    def raw(y):
        v = np.einsum("ni,ij,nj->n", y, quad, y)
        v += np.einsum("ni,nj,nk,ijk->n", y, y, y, cub)
        for q in range(2):
            s = y @ w[q]
            # remove value and slope at 0 so the term is O(|x|^2)
            v += 0.3 * (np.sin(s + ph[q]) - np.sin(ph[q]) - np.cos(ph[q]) * s)
        return v

    vals = raw(x)
    scale = c2_target / max(norm(vals, host, 2), 1e-300)
    return (lambda y: scale * raw(y)), scale * vals
