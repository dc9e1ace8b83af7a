"""Log-domain certification of the Nash-Moser schedule and its convergence ratios.

Every quantity is carried as a natural logarithm.  ``ln t_j = kappa^j ln t_0``
is formed through ``ln(-ln t_j) = j ln kappa + ln(-ln t_0)``; once it leaves
the float range it becomes ``-inf`` and each positive power of ``t_j`` is
exactly zero.  Negative powers of ``t_j`` never reach that regime because the
error bounds are stored relative to ``t_j^s``.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .config import ScheduleParams

LOG2, LOG3 = math.log(2.0), math.log(3.0)
HALF, QUARTER, EIGHTH = math.log(0.5), math.log(0.25), math.log(0.125)


class Inadmissible(ValueError):
    """Schedule parameters outside the admissible set."""

    def __init__(self, violations):
        super().__init__("inadmissible schedule parameters: " + "; ".join(violations))
        self.violations = list(violations)


class Infeasible(RuntimeError):
    pass


def admissible(p: ScheduleParams):
    """``(ok, violated)`` for the parameter constraints of the schedule."""
    s, kappa, mu, k, m = p.s, p.kappa, p.mu, p.k, p.m
    checks = [
        ("s = 2", s == 2),
        ("k positive integer", float(k) == int(k) and k >= 1),
        ("1 < kappa", 1 < kappa),
        ("kappa < 5/4", kappa < 1.25),
        ("mu > kappa s", mu > kappa * s),
        ("kappa s > 2", kappa * s > 2),
        ("k + mu <= m", k + mu <= m),
        ("m > 3", m > 3),
        ("kappa < (eta + 3 - k)/2", kappa < (m - 3 + 3 - k) / 2),
    ]
    bad = [name for name, ok in checks if not ok]
    return not bad, bad


def _pow(expo: float, log_t: float) -> float:
    """``expo * ln t`` with ``0 * (-inf) = 0``; negative powers of a vanished t overflow."""
    if expo == 0:
        return 0.0
    if math.isinf(log_t) and expo < 0:
        raise OverflowError("negative power of t beyond the float range")
    return expo * log_t


def _lse(*xs) -> float:
    xs = [x for x in xs if x != -math.inf]
    if not xs:
        return -math.inf
    return float(np.logaddexp.reduce(np.array(xs, float)))


def _log_t(j: int, loglog_t0: float, kappa: float):
    ll = j * math.log(kappa) + loglog_t0
    with np.errstate(over="ignore"):
        return -float(np.exp(ll)), ll


@dataclass
class ScheduleState:
    j: int
    rho: float
    log_sigma: float
    log_t: float
    loglog_t: float
    K: dict
    N: dict
    delta: dict
    cascade: dict
    hypotheses: dict


@dataclass
class Evolution:
    params: ScheduleParams
    states: list
    passed: bool
    failures: list
    log_delta0: dict
    budget_log_delta0: float

    def verdict(self) -> dict:
        return {"certified": self.passed, "steps": len(self.states) - 1,
                "failures": [{"j": j, "condition": c} for j, c in self.failures[:20]],
                "log_delta0": {f"{a:g}": v for a, v in sorted(self.log_delta0.items())},
                "required_log_delta0": self.budget_log_delta0,
                "log_t0": self.states[0].log_t}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        st0 = self.states[0]
        kk, nk, dk = sorted(st0.K), sorted(st0.N), sorted(st0.delta)
        ck, hk = list(st0.cascade), list(st0.hypotheses)
        w.writerow(["j", "rho", "log_sigma", "log_t", "loglog_t"] + [f"logK({a:g})" for a in kk]
                   + [f"logN({a:g})" for a in nk] + [f"logdelta({a:g})" for a in dk]
                   + [f"log_{c}" for c in ck] + hk)
        fmt = lambda x: f"{x:.12g}"
        for st in self.states:
            w.writerow([st.j, fmt(st.rho), fmt(st.log_sigma), fmt(st.log_t), fmt(st.loglog_t)]
                       + [fmt(st.K[a]) for a in kk] + [fmt(st.N[a]) for a in nk]
                       + [fmt(st.delta[a]) for a in dk] + [fmt(st.cascade[c]) for c in ck]
                       + [int(st.hypotheses[h]) for h in hk])
        return buf.getvalue()


class _Ctx:
    """Per-run constants: log c_a, s(a), and log c-hat_a."""

    def __init__(self, p: ScheduleParams):
        self.p = p
        self.c = p.constants
        self.log_chat_unit = math.log(5.0 / (1.0 - 5.0 * p.sigma0))

    def logK(self, a, rho, log_sigma):
        return math.log(self.c.c(a)) - self.c.s(a) * (math.log(rho) + log_sigma)

    def logchat(self, a):
        return self.c.s(a) * self.log_chat_unit


def _orders(p: ScheduleParams):
    beta = p.constants.beta
    k, mu, m, a = p.k, p.mu, p.m, p.a
    n_orders = sorted({3.0, beta, k + 2.0, k + beta, k + mu + 2.0, m + 0.5, m + beta, m + 2.0, a + 1.0})
    k_orders = sorted(set(n_orders) | {1.0, 2.0, float(k), k + 1.0, float(m), m + 1.0, float(a)})
    d_orders = sorted({0.0, 1.0, float(k), k + mu, float(m)})
    return k_orders, n_orders, d_orders


def _initial_log_t(p: ScheduleParams) -> float:
    lt = p.log_t0 if p.log_t0 is not None else math.log(p.t0)
    if not lt < 0:
        raise ValueError("t0 must lie in (0, 1)")
    return lt


def delta0_budget(p: ScheduleParams) -> float:
    """Largest common ``ln delta_0(a)`` meeting the j = 0 hypotheses and ``B_0 <= 1/4``."""
    ctx = _Ctx(p)
    lt = _initial_log_t(p)
    rho, sigma = p.rho0, p.sigma0
    logN = {a: math.log(p.N0.get(a, p.N0.get(f"{a:g}", 1.0))) for a in [p.constants.beta]}
    beta = p.constants.beta
    b0 = QUARTER - (ctx.logK(p.m, rho, math.log(sigma)) + 2 * logN[beta] + _pow(p.mu - p.kappa * p.s, lt))
    h8 = (math.log(p.constants.gamma1) + 3.5 * math.log(rho) + (2 * p.n + 1) * math.log(sigma)
          + _pow(0.5, lt))
    return min(_pow(p.s, lt), h8, b0, 0.0)


def evolve(params: ScheduleParams, J: int = 1000, stop_on_fail: bool = False) -> Evolution:
    """Advance every bound of the schedule for ``J`` steps and decide the verdict."""
    ok, bad = admissible(params)
    if not ok:
        raise Inadmissible(bad)
    p = params
    ctx = _Ctx(p)
    s, kappa, mu, k, m = p.s, p.kappa, p.mu, p.k, p.m
    beta = p.constants.beta
    k_orders, n_orders, d_orders = _orders(p)
    lt0 = _initial_log_t(p)
    loglog0 = math.log(-lt0)
    alpha = (1 - kappa) * s + 0.5
    gam = kappa * (mu - kappa * s) + s
    log_g0, log_g1 = math.log(p.constants.gamma0), math.log(p.constants.gamma1)
    log_chat_s = math.log(p.constants.c_hat_smoothing)
    log_C0hat = 2 * ctx.logchat(beta) + 2 * ctx.logchat(m + 1)

    def lookup(table, a, default):
        for key in (a, f"{a:g}", str(a)):
            if key in table:
                return float(table[key])
        return default

    budget = delta0_budget(p)
    logN = {a: math.log(lookup(p.N0, a, 1.0)) for a in n_orders}
    ld = {a: (math.log(v) if (v := lookup(p.delta0, a, None)) is not None else budget) for a in d_orders}
    log_delta0 = dict(ld)
    # errors of orders 0, 1, k relative to t^s; higher orders absolute
    nrm = {a: ld[a] - s * lt0 for a in (0.0, 1.0, float(k))}
    nrm[1.0] = min(nrm[1.0], nrm[float(k)])
    nrm[0.0] = min(nrm[0.0], nrm[1.0])
    d_high = {k + mu: ld[k + mu], float(m): ld[float(m)]}

    rho, log_sigma = p.rho0, math.log(p.sigma0)
    B = None
    sumP = -math.inf
    states, failures = [], []
    for j in range(J + 1):
        lt, llt = _log_t(j, loglog0, kappa)
        K = {a: ctx.logK(a, rho, log_sigma) for a in k_orders}
        N = dict(logN)
        delta = {a: nrm[a] + _pow(s, lt) for a in nrm}
        delta.update(d_high)
        P = LOG3 + K[2.0] + N[3.0] + _pow(s - 1, lt)
        sumP = _lse(sumP, P)
        C = LOG2 + math.log(9.0) + ctx.logchat(m) + 2 * K[beta] + 2 * K[m + 1]
        Cp = log_C0hat + 2 * (LOG3 + K[beta]) + K[k + mu + 2]
        if B is None:
            B = K[float(m)] + 2 * N[beta] + _pow(mu - kappa * s, lt) + d_high[k + mu]
        cas = {
            "P": P,
            "sumP": sumP,
            "Q": LOG3 + ctx.logchat(2.0) + K[3.0] + _pow((kappa - 1) * (s - 1), lt),
            "a": LOG3 + K[float(m)] + 2 * N[beta] + N[k + beta] + _pow(alpha, lt),
            "a_tilde": math.log(27.0) + ctx.logchat(m) + 2 * K[beta] + K[k + beta] + _pow((kappa - 1) * alpha, lt),
            "B": B,
            "b": C + _pow((kappa - 1) * (mu - kappa * s), lt),
            "E": C + 2 * N[beta] + N[k + mu + 2] + _pow(gam, lt),
            "e": Cp + _pow((kappa - 1) * gam, lt),
            "f": Cp + C + 2 * N[3.0] + N[k + beta] + _pow(kappa * gam + s - mu - 1.5, lt),
            "A": LOG2 + K[k + 1.0] + N[k + 2.0] + _pow(s - 1, lt),
        }
        hyp = {
            "smoothing_margin": lt < math.log(rho) + log_sigma - log_chat_s,
            "graph_c2_bound": sumP <= log_g0,
            "error_vs_t_power": nrm[float(k)] <= 0.0,
            "error_smallness": (nrm[0.0] + _pow(s - 0.5, lt) <= log_g1 + 3.5 * math.log(rho)
                                + (2 * p.n + 1) * log_sigma) and delta[1.0] <= 0.0,
        }
        conds = {"a_j < 1/2": cas["a"] < HALF, "B_j < 1/2": cas["B"] < HALF, "E_j <= 1/4": cas["E"] <= QUARTER,
                 "f_j < 1/8": cas["f"] < EIGHTH, "b_j <= 1/2": cas["b"] <= HALF, "e_j < 1/2": cas["e"] < HALF}
        conds.update({f"hypothesis {name}": v for name, v in hyp.items()})
        for name, v in conds.items():
            if not v:
                failures.append((j, name))
        vals = list(K.values()) + list(N.values()) + list(cas.values()) + list(delta.values())
        if any(math.isnan(v) or v == math.inf for v in vals):
            raise FloatingPointError(f"log-domain overflow at step {j}")
        states.append(ScheduleState(j, rho, log_sigma, lt, llt, K, N, delta, cas, hyp))
        if (stop_on_fail and failures) or j == J:
            break
        # advance to j + 1
        # t^(-kappa s) (t^(1/2) + t^(-1/2) delta(1) + t^(-1) delta(0)) delta(k), exponents merged
        inner = _lse(_pow(alpha, lt), _pow((2 - kappa) * s - 0.5, lt) + nrm[1.0],
                     _pow((2 - kappa) * s - 1, lt) + nrm[0.0])
        new_k = K[float(m)] + 2 * N[beta] + _lse(
            _pow(mu - kappa * s, lt) + d_high[k + mu],
            N[k + beta] + nrm[float(k)] + inner)
        d1 = nrm[1.0] + _pow(s, lt)
        growth = _lse(0.0, 2 * N[3.0] + _pow(s - 1, lt) + nrm[1.0])
        new_kmu = K[m + 1] + growth + _lse(d_high[k + mu], N[k + mu + 2] + d1)
        new_m = K[m + 1] + growth + _lse(d_high[float(m)], N[m + 2] + d1)
        nrm = {0.0: new_k, 1.0: new_k, float(k): new_k}
        d_high = {k + mu: new_kmu, float(m): new_m}
        logN = {a: LOG3 + K[a] + N[a] for a in n_orders}
        B = _lse(cas["b"] + B, cas["E"])
        rho, log_sigma = rho * (1 - 5 * math.exp(log_sigma)), log_sigma - math.log(5.0)
    return Evolution(p, states, not failures, failures, log_delta0, budget)


@dataclass
class T0Result:
    log_t0: float
    t0: float
    evaluations: int
    expansions: int
    monotone: bool
    evolution: Evolution | None = field(default=None, repr=False)

    def to_json(self) -> str:
        return json.dumps({"log_t0": self.log_t0, "log10_t0": self.log_t0 / math.log(10.0), "t0": self.t0,
                           "evaluations": self.evaluations, "bracket_expansions": self.expansions,
                           "monotone_samples_pass": self.monotone}, sort_keys=True)


def find_t0(params: ScheduleParams, J: int = 1000, lower: float = 1e-300, rtol: float = 1e-3,
            max_expansions: int = 64, monotone_samples: int = 5) -> T0Result:
    """Largest ``t_0`` (as ``ln t_0``) whose evolution passes, by bisection in ``ln t_0``.

    The bracket starts at ``[lower, 1)``; when even ``lower`` fails it is
    widened geometrically in ``ln t_0`` since the required ``t_0`` can lie far
    below the float range.  The initial errors are set to their budget.
    """
    ok, bad = admissible(params)
    if not ok:
        raise Inadmissible(bad)
    count = 0

    def passes(lt):
        nonlocal count
        count += 1
        q = replace(params, log_t0=lt, delta0={})
        return evolve(q, J, stop_on_fail=True).passed

    lo = math.log(lower)
    expansions = 0
    while not passes(lo):
        expansions += 1
        if expansions > max_expansions:
            raise Infeasible("schedule infeasible under supplied constants")
        lo *= 2.0
    hi = 0.0
    while hi - lo > rtol * abs(lo):
        mid = 0.5 * (lo + hi)
        if passes(mid):
            lo = mid
        else:
            hi = mid
    samples = [lo * (1 + 0.5 * i) for i in range(1, monotone_samples + 1)]
    monotone = all(passes(x) for x in samples)
    evo = evolve(replace(params, log_t0=lo, delta0={}), J)
    return T0Result(lo, math.exp(lo), count, expansions, monotone, evo)


# -- convergence ratio tests -----------------------------------------------------
@dataclass
class SeriesVerdict:
    name: str
    verdict: str
    onset: int | None
    limiting_ratio: float
    log_ratios: list = field(repr=False)

    def to_dict(self) -> dict:
        return {"name": self.name, "verdict": self.verdict, "onset": self.onset,
                "limiting_ratio": self.limiting_ratio}


def _series(name, log_ratios, boundary=False) -> SeriesVerdict:
    r = np.asarray(log_ratios, float)
    onset = None
    if r.size and r[-1] < 0:
        bad = np.nonzero(~(r < 0))[0]
        onset = int(bad[-1] + 1) if bad.size else 0
    with np.errstate(over="ignore"):
        limit = float(np.exp(r[-1])) if r.size else math.nan
    if boundary:
        verdict = "boundary"
    elif onset is not None:
        verdict = "convergent"
    else:
        verdict = "inconclusive"
    return SeriesVerdict(name, verdict, onset, limit, r.tolist())


def interpolation_lambda(p: ScheduleParams) -> tuple[float, float]:
    """``(b, lambda)`` with ``b = lambda a + (1 - lambda)(m + 1/2)``."""
    top = p.m + 0.5
    if p.b is not None:
        b = p.b
    elif p.lam is not None:
        b = p.lam * p.a + (1 - p.lam) * top
    else:
        b = 0.5 * (p.a + top)
    if top == p.a:
        raise ValueError("a must differ from m + 1/2")
    return b, (top - b) / (top - p.a)


def convergence_report(params: ScheduleParams, J: int = 1000, evolution: Evolution | None = None) -> dict:
    """Ratio tests for the C^a series, the interpolation ratio and the composition sums."""
    evo = evolution or evolve(params, J)
    p = evo.params
    ctx = _Ctx(p)
    s, kappa, k, m, a = p.s, p.kappa, p.k, p.m, p.a
    beta = p.constants.beta
    b, lam = interpolation_lambda(p)
    lam14 = (m + 0.5 - b) / (m + 0.5 - k)
    r12a, r12b, r13, r14g, r14F, r14d, r14f = [], [], [], [], [], [], []
    for st in evo.states[:-1]:
        K, N, lt = st.K, st.N, st.log_t
        Kx = lambda x: K[x] if x in K else ctx.logK(x, st.rho, st.log_sigma)
        # sum K(a) N(k+2) t^(k-a+s)
        r12a.append(LOG2 + ctx.logchat(a) + Kx(k + 2.0) + _pow((kappa - 1) * (s + k - a), lt))
        # sum K(a) N(a+1) t^(s-1/2)
        extra = _pow(k - a - 1 + s, lt) + N[k + 2.0] - N[a + 1.0]
        r12b.append(ctx.logchat(a) + Kx(a + 1.0) + _pow((kappa - 1) * (s - 0.5), lt) + _lse(0.0, extra))
        ra = LOG3 + ctx.logchat(k + 1.0) + Kx(k + 2.0) + _pow((kappa - 1) * (s - 1), lt)
        rb = math.log(16.0) + ctx.logchat(m + 0.5) + Kx(m + beta) + Kx(beta) + N[beta]
        r13.append(lam * ra + (1 - lam) * rb if 0 < lam < 1 else (ra if lam >= 1 else rb))
        rk = ctx.logchat(k) + LOG3 + Kx(k + 2.0) + _pow((kappa - 1) * (s - 0.5), lt)
        r14g.append(rk)
        r14F.append(ctx.logchat(b) + lam14 * rk + (1 - lam14) * rb)
        r14d.append(ctx.logchat(b) + math.log(9.0) + Kx(3.0) + Kx(m + 0.5) + _pow((kappa - 1) * s, lt))
        B13 = _lse(LOG2 + Kx(m + 0.5) + N[m + 0.5], Kx(m + 0.5) + N[beta] + st.delta[float(m)],
                   Kx(m + 0.5) + N[m + beta] + _pow(s, lt))
        r14f.append(ctx.logchat(b) + LOG3 + Kx(3.0) + _pow((kappa - 1) * s, lt) + _lse(0.0, Kx(m + 0.5) + B13))
    out = {
        "series_k_plus_2": _series("sum K(a) N(k+2) t^(k-a+s)", r12a),
        "series_a_plus_1": _series("sum K(a) N(a+1) t^(s-1/2)", r12b),
        "interpolation": _series("(A ratio)^lambda (B ratio)^(1-lambda)", r13, boundary=not 0 < lam < 1),
        "composition_g": _series("sum |g_(2)|_k", r14g),
        "composition_F": _series("sum K |F|_k^lambda |F|_(m+1/2)^(1-lambda)", r14F, boundary=not 0 < lam14 < 1),
        "composition_delta": _series("sum K(a) N(3) delta(1) N(m+1/2)", r14d),
        "composition_f": _series("sum K(a) N(3) t^s (1 + |f~|_(m+1/2))", r14f),
    }
    return {"b": b, "lambda": lam, "series": out}
