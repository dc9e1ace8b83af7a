"""Uniform lattices, masked point sets on them, and finite-difference operators.

Every field in the package is stored as values on a `Region`, an ordered
subset of points of a cubic `Lattice` centred at the origin.  Values carry the
point index on their last axis, so a scalar field has shape ``(N,)`` and a
form with ``c`` components has shape ``(c, N)``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp


class ResolutionError(ValueError):
    """Raised when a lattice is too coarse for a requested stencil."""


class OutOfDomainError(ValueError):
    """Raised when a point falls outside the bounding lattice."""


@dataclass(frozen=True)
class Lattice:
    """Cubic lattice ``[-half_width, half_width]^dim`` with ``res`` points per axis."""

    dim: int
    res: int
    half_width: float

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if self.res < 3:
            raise ResolutionError("need at least 3 points per axis")

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / (self.res - 1)

    @property
    def size(self) -> int:
        return self.res ** self.dim

    @cached_property
    def axis(self) -> np.ndarray:
        return np.linspace(-self.half_width, self.half_width, self.res)

    @cached_property
    def strides(self) -> np.ndarray:
        return np.array([self.res ** (self.dim - 1 - i) for i in range(self.dim)], dtype=np.int64)

    def coords_of(self, multi: np.ndarray) -> np.ndarray:
        return multi * self.spacing - self.half_width

    def flat_of(self, multi: np.ndarray) -> np.ndarray:
        return np.asarray(multi, dtype=np.int64) @ self.strides

    def multi_of(self, flat: np.ndarray) -> np.ndarray:
        return np.stack(np.unravel_index(np.asarray(flat), (self.res,) * self.dim), axis=-1).astype(np.int64)

    def origin_flat(self) -> int:
        if self.res % 2 == 0:
            raise ResolutionError("origin is a lattice point only for odd resolution")
        return int(self.flat_of(np.full(self.dim, self.res // 2)))

    def ball(self, radius: float, center_tol: float = 1e-12) -> "Region":
        """Lattice points with ``|x| <= radius``, enumerated without building the full box."""
        ax2 = self.axis ** 2
        r2 = radius ** 2 + center_tol
        # grow the index set one axis at a time, pruning by partial sums
        idx = np.arange(self.res)[ax2 <= r2][:, None]
        partial = ax2[idx[:, 0]]
        for _ in range(1, self.dim):
            ok = partial[:, None] + ax2[None, :] <= r2
            rows, cols = np.nonzero(ok)
            idx = np.concatenate([idx[rows], cols[:, None]], axis=1)
            partial = partial[rows] + ax2[cols]
        return Region(self, self.flat_of(idx))

    def box(self) -> "Region":
        return Region(self, np.arange(self.size, dtype=np.int64))


class Region:
    """Sorted set of lattice points with cached difference operators."""

    def __init__(self, lattice: Lattice, flat):
        flat = np.unique(np.asarray(flat, dtype=np.int64))
        self.lattice = lattice
        self.flat = flat
        self._ops: dict = {}

    def __len__(self) -> int:
        return self.flat.size

    @property
    def dim(self) -> int:
        return self.lattice.dim

    @property
    def spacing(self) -> float:
        return self.lattice.spacing

    @cached_property
    def multi(self) -> np.ndarray:
        return self.lattice.multi_of(self.flat)

    @cached_property
    def coords(self) -> np.ndarray:
        return self.lattice.coords_of(self.multi)

    def locate(self, flat) -> np.ndarray:
        """Positions of lattice points in this region, ``-1`` where absent."""
        flat = np.asarray(flat, dtype=np.int64)
        pos = np.searchsorted(self.flat, flat)
        pos = np.clip(pos, 0, max(len(self) - 1, 0))
        hit = (len(self) > 0) & (self.flat[pos] == flat) if len(self) else np.zeros(flat.shape, bool)
        return np.where(hit, pos, -1)

    def index_in(self, other: "Region") -> np.ndarray:
        pos = other.locate(self.flat)
        if np.any(pos < 0):
            raise ValueError("region is not contained in the target region")
        return pos

    def contains(self, other: "Region") -> bool:
        return bool(np.all(self.locate(other.flat) >= 0))

    def origin_index(self) -> int:
        pos = int(self.locate(self.lattice.origin_flat()))
        if pos < 0:
            raise OutOfDomainError("origin not in region")
        return pos

    def neighbor(self, axis: int, step: int) -> np.ndarray:
        """Index of the neighbour ``x + step*e_axis`` inside the region or -1."""
        key = ("nb", axis, step)
        if key not in self._ops:
            m = self.multi[:, axis] + step
            inside = (m >= 0) & (m < self.lattice.res)
            q = self.flat + step * self.lattice.strides[axis]
            pos = np.where(inside, self.locate(np.where(inside, q, 0)), -1)
            self._ops[key] = pos
        return self._ops[key]

    def subset(self, keep: np.ndarray) -> "Region":
        return Region(self.lattice, self.flat[np.asarray(keep, bool)])

    def erode(self, steps: int = 1) -> "Region":
        """Points whose axis neighbours (up to ``steps`` cells away) all lie in the region."""
        keep = np.ones(len(self), bool)
        for ax in range(self.dim):
            for s in range(1, steps + 1):
                keep &= (self.neighbor(ax, s) >= 0) & (self.neighbor(ax, -s) >= 0)
        return self.subset(keep)

    def dilate(self, steps: int = 1) -> "Region":
        """Union with all axis neighbours inside the bounding box."""
        out = [self.flat]
        res = self.lattice.res
        for ax in range(self.dim):
            for s in range(-steps, steps + 1):
                if s == 0:
                    continue
                m = self.multi[:, ax] + s
                ok = (m >= 0) & (m < res)
                out.append(self.flat[ok] + s * self.lattice.strides[ax])
        return Region(self.lattice, np.concatenate(out))

    def union(self, other: "Region") -> "Region":
        return Region(self.lattice, np.concatenate([self.flat, other.flat]))

    def intersect(self, other: "Region") -> "Region":
        return Region(self.lattice, np.intersect1d(self.flat, other.flat))

    # -- finite differences ------------------------------------------------
    def diff(self, axis: int) -> sp.csr_matrix:
        """First derivative along ``axis``: central where both neighbours exist, else one-sided."""
        key = ("d", axis)
        if key not in self._ops:
            n = len(self)
            h = self.spacing
            fw, bw = self.neighbor(axis, 1), self.neighbor(axis, -1)
            idx = np.arange(n)
            both = (fw >= 0) & (bw >= 0)
            only_f = (fw >= 0) & (bw < 0)
            only_b = (fw < 0) & (bw >= 0)
            rows = np.concatenate([idx[both], idx[both], idx[only_f], idx[only_f], idx[only_b], idx[only_b]])
            cols = np.concatenate([fw[both], bw[both], fw[only_f], idx[only_f], idx[only_b], bw[only_b]])
            vals = np.concatenate([
                np.full(both.sum(), 0.5 / h), np.full(both.sum(), -0.5 / h),
                np.full(only_f.sum(), 1.0 / h), np.full(only_f.sum(), -1.0 / h),
                np.full(only_b.sum(), 1.0 / h), np.full(only_b.sum(), -1.0 / h),
            ])
            self._ops[key] = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
        return self._ops[key]

    def central_diff(self, axis: int, rows: "Region") -> sp.csr_matrix:
        """Central difference from values on this region to points of ``rows``.

        Every point of ``rows`` must have both axis neighbours in this region.
        """
        key = ("c", axis, hash(rows.flat.tobytes()))
        if key not in self._ops:
            st = self.lattice.strides[axis]
            fw = self.locate(rows.flat + st)
            bw = self.locate(rows.flat - st)
            # guard wrap-around across box faces
            m = rows.multi[:, axis]
            fw = np.where(m + 1 < self.lattice.res, fw, -1)
            bw = np.where(m - 1 >= 0, bw, -1)
            if np.any(fw < 0) or np.any(bw < 0):
                raise ResolutionError("central stencil leaves the source region")
            n = len(rows)
            idx = np.arange(n)
            h = self.spacing
            vals = np.concatenate([np.full(n, 0.5 / h), np.full(n, -0.5 / h)])
            self._ops[key] = sp.csr_matrix(
                (vals, (np.concatenate([idx, idx]), np.concatenate([fw, bw]))), shape=(n, len(self)))
        return self._ops[key]

    def derivative(self, values: np.ndarray, multi_index) -> np.ndarray:
        """Apply ``prod_i D_i^{I_i}`` by repeated first differences."""
        out = np.asarray(values)
        for ax, k in enumerate(multi_index):
            for _ in range(k):
                out = apply_op(self.diff(ax), out)
        return out

    # -- interpolation -----------------------------------------------------
    def interpolate(self, values: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Multilinear interpolation at off-lattice points.

        Corners missing from the region are dropped and the remaining weights
        renormalised; points with no available corner get NaN.
        """
        lat = self.lattice
        points = np.atleast_2d(points)
        u = (points + lat.half_width) / lat.spacing
        base = np.floor(u).astype(np.int64)
        base = np.clip(base, 0, lat.res - 2)
        frac = u - base
        if np.any(frac < -1e-9) or np.any(frac > 1 + 1e-9):
            raise OutOfDomainError("point outside bounding lattice")
        values = np.asarray(values)
        lead = values.shape[:-1]
        acc = np.zeros(lead + (points.shape[0],), dtype=np.result_type(values, float))
        wsum = np.zeros(points.shape[0])
        for corner in itertools.product((0, 1), repeat=lat.dim):
            c = np.array(corner)
            w = np.prod(np.where(c == 1, frac, 1.0 - frac), axis=1)
            pos = self.locate(lat.flat_of(base + c))
            ok = pos >= 0
            w = np.where(ok, w, 0.0)
            acc += w * values[..., np.where(ok, pos, 0)]
            wsum += w
        with np.errstate(invalid="ignore", divide="ignore"):
            out = acc / wsum
        return np.where(wsum > 1e-14, out, np.nan)


def apply_op(op: sp.spmatrix, values: np.ndarray) -> np.ndarray:
    """Apply a sparse operator along the last (point) axis of ``values``."""
    values = np.asarray(values)
    if values.ndim == 1:
        return op @ values
    flat = values.reshape(-1, values.shape[-1])
    return (op @ flat.T).T.reshape(values.shape[:-1] + (op.shape[0],))


def multi_indices(dim: int, order: int):
    """All multi-indices of exactly the given total order, in a fixed order."""
    out = []
    for combo in itertools.combinations_with_replacement(range(dim), order):
        idx = [0] * dim
        for ax in combo:
            idx[ax] += 1
        out.append(tuple(idx))
    return out
