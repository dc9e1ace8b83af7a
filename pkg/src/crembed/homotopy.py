"""Model homotopy operator: ridge-regularised least-squares inverses of the discrete dbar_M.

Functions live on ``Omega+`` (the domain dilated by one cell), (0,1)-forms on
the domain ``Omega`` and (0,2)-forms on ``Omega-`` (eroded by one cell), so
every difference is central.  ``P`` inverts ``dbar_M: Omega+ -> Omega`` and
``Q`` inverts ``dbar_M: Omega -> Omega-``; the homotopy identity
``phi = dbar_M P phi + Q dbar_M phi`` is then a measured property.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import lsqr

from .config import SolverConfig
from .frames import EmbeddingState, dbar_matrices, form_pairs
from .grid import Region


class SolverError(RuntimeError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []


PLUMBING_FLAG = "homotopy formula not valid for q >= n-2"


@dataclass
class SolveInfo:
    iterations: int
    stop_reason: int
    residual: float
    relative_residual: float


class HomotopyOperator:
    """``P`` and ``Q`` for the tangential complex of ``state``'s graph."""

    def __init__(self, state: EmbeddingState, config: SolverConfig | None = None):
        self.state = state
        self.config = config or SolverConfig()
        self.omega = state.region
        self.plus = self.omega.dilate(1)
        self.minus = self.omega.erode(1)
        self.n = state.n
        self.plumbing = self.n < 4
        self.flags = [PLUMBING_FLAG] if self.plumbing else []
        ys = dbar_matrices(state, self.plus, self.omega)
        self.d0 = sp.vstack(ys).tocsr()
        self.pairs = form_pairs(self.n)
        if self.pairs and len(self.minus):
            y1 = dbar_matrices(state, self.omega, self.minus)
            zero = sp.csr_matrix((len(self.minus), len(self.omega)), dtype=complex)
            blocks = []
            for a, b in self.pairs:
                row = [zero] * (self.n - 1)
                row[b] = y1[a]
                row[a] = -y1[b]
                blocks.append(sp.hstack(row))
            self.d1 = sp.vstack(blocks).tocsr()
        else:
            self.d1 = None
        self.residual_report: dict = {}
        self.history: list[SolveInfo] = []

    # -- helpers --------------------------------------------------------------
    @staticmethod
    def _damp(op: sp.spmatrix, ridge: float) -> float:
        rows = np.sqrt(np.asarray(abs(op).power(2).sum(axis=1)).ravel())
        return math.sqrt(ridge) * float(rows.max()) if rows.size else 0.0

    def _solve(self, op, rhs):
        rhs = np.asarray(rhs, complex)
        if not np.any(rhs):
            return np.zeros(op.shape[1], complex)
        c = self.config
        out = lsqr(op, rhs, damp=self._damp(op, c.ridge), atol=c.tol, btol=c.tol, iter_lim=c.max_iter)
        x, istop, itn, r1 = out[0], out[1], out[2], out[3]
        rel = float(r1 / np.linalg.norm(rhs))
        info = SolveInfo(int(itn), int(istop), float(r1), rel)
        self.history.append(info)
        if istop == 7:
            raise SolverError(f"least-squares solve stopped at the iteration limit ({itn})", self.history)
        return x

    # -- the operator family ---------------------------------------------------
    def dbar0(self, u) -> np.ndarray:
        """``dbar_M`` of a function on ``Omega+``, as an ``(n-1, |Omega|)`` form."""
        return (self.d0 @ np.asarray(u)).reshape(self.n - 1, len(self.omega))

    def dbar1(self, phi) -> np.ndarray:
        """``dbar_M`` of a (0,1)-form on ``Omega``, as ``(pairs, |Omega-|)``."""
        if self.d1 is None:
            return np.zeros((0, len(self.minus)), complex)
        return (self.d1 @ np.asarray(phi).reshape(-1)).reshape(len(self.pairs), len(self.minus))

    def solve_P(self, phi) -> np.ndarray:
        """Least-squares potential on ``Omega+`` of a (0,1)-form on ``Omega``."""
        phi = np.asarray(phi)
        return self._solve(self.d0, phi.reshape(-1))

    def solve_Q(self, psi) -> np.ndarray:
        """Least-squares (0,1)-form on ``Omega`` with ``dbar_M`` equal to the (0,2)-form ``psi``."""
        if self.d1 is None:
            return np.zeros((self.n - 1, len(self.omega)), complex)
        psi = np.asarray(psi)
        return self._solve(self.d1, psi.reshape(-1)).reshape(self.n - 1, len(self.omega))

    def homotopy_defect(self, phi):
        """``phi - dbar_M P phi - Q dbar_M phi`` and its sup norm relative to ``phi``."""
        phi = np.asarray(phi, complex)
        u = self.solve_P(phi)
        defect = phi - self.dbar0(u) - self.solve_Q(self.dbar1(phi))
        scale = np.abs(phi).max()
        rel = 0.0 if scale == 0 else float(np.abs(defect).max() / scale)
        self.residual_report = {"relative_norm": rel, "flags": list(self.flags)}
        return defect, rel


def exact_form(op: HomotopyOperator, rng: np.random.Generator, scale: float = 1.0):
    """``(u0, dbar_M u0)`` for a random smooth complex potential on ``Omega+``."""
    x = op.plus.coords
    d = x.shape[1]
    c = rng.normal(size=(3, d))
    Q = rng.normal(size=(d, d)) / d
    u0 = np.sin(x @ c[0]) + 1j * np.cos(x @ c[1]) + ((x @ Q) * x).sum(1) + 1j * (x @ c[2]) ** 3 / 6
    u0 = scale * u0
    return u0, op.dbar0(u0)


def exact_02_form(op: HomotopyOperator, rng: np.random.Generator):
    """``(phi0, dbar_M phi0)`` for a random smooth (0,1)-form on ``Omega``."""
    x = op.omega.coords
    d = x.shape[1]
    phi0 = np.stack([np.sin(x @ rng.normal(size=d)) + 1j * (x @ rng.normal(size=d)) ** 2
                     for _ in range(op.n - 1)])
    return phi0, op.dbar1(phi0)


@dataclass
class ContractRow:
    form_id: int
    a: float
    lhs: float
    rhs_skeleton: float
    fitted_constant: float


def contract_audit(op: HomotopyOperator, forms: int = 50, sigma: float = 0.25, seed: int = 0):
    """Ratios ``||P phi||_{1/2} / ||phi||_0`` on ``D_{rho(1-sigma)}`` against ``rho^{-3/2} sigma^{-2n}``."""
    from .holder import norm
    rng = np.random.default_rng(seed)
    dom = op.state.domain
    rho = dom.rho
    inner = dom.shrink(rho * (1 - sigma)).region.intersect(op.plus)
    pos = inner.index_in(op.plus)
    skeleton = rho ** -1.5 * sigma ** (-2 * op.n)
    rows = []
    for i in range(forms):
        _, phi = exact_form(op, rng)
        u = op.solve_P(phi)
        lhs = norm(u[pos], inner, 0.5, seed)
        base = float(np.abs(phi).max())
        rows.append(ContractRow(i, 0.5, lhs, skeleton * base, lhs / (skeleton * base)))
    return rows


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["form_id", "a", "lhs", "rhs_skeleton", "fitted_constant"])
    for r in rows:
        w.writerow([r.form_id, f"{r.a:g}", f"{r.lhs:.12e}", f"{r.rhs_skeleton:.12e}", f"{r.fitted_constant:.12e}"])
    return buf.getvalue()
