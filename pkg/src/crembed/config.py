"""Configuration dataclasses shared by the experiments and the CLI."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields


@dataclass
class EstimateConstants:
    """Constants feeding the estimate audits and the schedule certifier.

    ``c_table`` maps a norm order (as a string key, for JSON) to ``c_a``;
    orders missing from the table use ``c_default``.  ``s_coeffs`` are the
    coefficients of the loss polynomial s(a), lowest degree first.
    """

    gamma0: float = 0.45
    gamma1: float = 1.0 / 46.0
    c_hat: float = 3.0 * math.sqrt(2.0)
    c_hat_smoothing: float = 5.0 / math.sqrt(2.0)
    beta: float = 2.5
    alpha: float = 0.5
    c_default: float = 1.0
    c_table: dict = field(default_factory=dict)
    s_coeffs: tuple = (8.0, 7.0, 1.0)

    def __post_init__(self):
        if not 0 < self.gamma0 < 0.5:
            raise ValueError("gamma0 must lie in (0, 1/2)")
        if not 0 < self.gamma1 <= 1.0 / 45.0:
            raise ValueError("gamma1 must lie in (0, 1/45]")
        if self.beta != 2.5 or self.alpha != 0.5:
            raise ValueError("beta and alpha are fixed at 5/2 and 1/2")
        self.s_coeffs = tuple(float(c) for c in self.s_coeffs)
        grid = [0.05 * i for i in range(400)]
        vals = [self.s(a) for a in grid]
        if any(b < a - 1e-12 for a, b in zip(vals, vals[1:])):
            raise ValueError("s(a) must be nondecreasing on a >= 0")

    def c(self, a: float) -> float:
        return float(self.c_table.get(_key(a), self.c_default))

    def s(self, a: float) -> float:
        return sum(c * a ** i for i, c in enumerate(self.s_coeffs))

    def scaled(self, factor: float) -> "EstimateConstants":
        """Copy with every c_a multiplied by ``factor``."""
        out = EstimateConstants(**{f.name: getattr(self, f.name) for f in fields(self)})
        out.c_default = self.c_default * factor
        out.c_table = {k: v * factor for k, v in self.c_table.items()}
        return out


def _key(a: float) -> str:
    return f"{float(a):g}"


@dataclass
class ScheduleParams:
    s: float = 2.0
    kappa: float = 1.2
    mu: float = 2.5
    k: int = 1
    a: float = 2.0
    b: float | None = None
    m: float = 4.0
    t0: float = 1e-3
    sigma0: float = 1.0 / 25.0
    rho0: float = 1.0
    eps: float = 0.5
    lam: float | None = None
    n: int = 4
    log_t0: float | None = None
    delta0: dict = field(default_factory=dict)
    N0: dict = field(default_factory=dict)
    constants: EstimateConstants = field(default_factory=EstimateConstants)

    @classmethod
    def from_dict(cls, d: dict) -> "ScheduleParams":
        d = dict(d)
        consts = d.pop("constants", None) or {}
        if isinstance(consts, dict):
            consts = EstimateConstants(**consts)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown schedule fields: {sorted(unknown)}")
        return cls(constants=consts, **d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SolverConfig:
    """Least-squares settings for the model homotopy operator.

    ``ridge`` is relative: the absolute Tikhonov weight is
    ``ridge * (largest row norm)**2``.
    """

    ridge: float = 1e-8
    max_iter: int = 20000
    tol: float = 1e-8


@dataclass
class IterationConfig:
    structure: str = "perturbed-quadric"
    dim: int = 7
    resolution: int = 9
    amplitude: float = 1.0
    max_steps: int = 4
    sigma: float | None = None
    t0: float = 1e-3
    kappa: float = 1.2
    m_order: int = 4
    defect_fraction: float = 0.2
    seed: int = 0
    solver: SolverConfig = field(default_factory=SolverConfig)


def load_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
