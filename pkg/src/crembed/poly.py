"""Polynomial maps in several real variables with exact gradients."""
from __future__ import annotations

import itertools

import numpy as np


def exponents(dim: int, degrees) -> np.ndarray:
    """All exponent vectors whose total degree lies in ``degrees``."""
    out = []
    for d in sorted(set(degrees)):
        for combo in itertools.combinations_with_replacement(range(dim), d):
            e = np.zeros(dim, np.int64)
            for ax in combo:
                e[ax] += 1
            out.append(e)
    return np.array(out, np.int64).reshape(-1, dim)


def monomial_table(x: np.ndarray, exps: np.ndarray) -> np.ndarray:
    """``(N, M)`` matrix of monomials ``x^e`` evaluated at the rows of ``x``."""
    x = np.atleast_2d(x)
    out = np.ones((x.shape[0], len(exps)), dtype=x.dtype)
    for m, e in enumerate(exps):
        for ax in np.nonzero(e)[0]:
            out[:, m] *= x[:, ax] ** e[ax]
    return out


class Poly:
    """Sum of ``coeffs[m] * x^exps[m]``; ``coeffs`` may carry trailing output axes."""

    def __init__(self, exps, coeffs):
        self.exps = np.asarray(exps, np.int64)
        self.coeffs = np.asarray(coeffs)
        if self.coeffs.shape[0] != len(self.exps):
            raise ValueError("one coefficient row per monomial")

    @property
    def dim(self) -> int:
        return self.exps.shape[1]

    def __call__(self, x) -> np.ndarray:
        mon = monomial_table(np.atleast_2d(np.asarray(x, float)), self.exps)
        return np.tensordot(mon, self.coeffs, axes=(1, 0))

    def grad(self, x) -> np.ndarray:
        """Gradient with the differentiation axis last: ``(N, *out, dim)``."""
        x = np.atleast_2d(np.asarray(x, float))
        parts = []
        for ax in range(self.dim):
            e = self.exps.copy()
            factor = e[:, ax].astype(float)
            e[:, ax] = np.maximum(e[:, ax] - 1, 0)
            mon = monomial_table(x, e) * factor
            parts.append(np.tensordot(mon, self.coeffs, axes=(1, 0)))
        return np.stack(parts, axis=-1)

    def to_dict(self) -> dict:
        c = self.coeffs
        return {"exponents": self.exps.tolist(),
                "real": np.real(c).tolist(), "imag": np.imag(c).tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Poly":
        c = np.asarray(d["real"]) + 1j * np.asarray(d["imag"])
        if not np.any(np.imag(c)):
            c = np.real(c)
        return cls(d["exponents"], c)


def random_poly(rng: np.random.Generator, dim: int, degrees, scale: float, outputs: int | None = None) -> Poly:
    """Gaussian coefficients normalised so the sum of |coeffs| equals ``scale`` per output."""
    exps = exponents(dim, degrees)
    shape = (len(exps),) if outputs is None else (len(exps), outputs)
    c = rng.normal(size=shape)
    c *= scale / np.abs(c).sum(axis=0)
    return Poly(exps, c)
