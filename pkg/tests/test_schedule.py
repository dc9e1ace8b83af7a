import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crembed.config import EstimateConstants, ScheduleParams
from crembed.schedule import (Inadmissible, Infeasible, admissible, convergence_report, delta0_budget, evolve,
                              find_t0, interpolation_lambda)

P = ScheduleParams()


@pytest.fixture(scope="module")
def certified():
    return find_t0(P, J=1000)


def test_default_parameters_admissible():
    ok, bad = admissible(P)
    assert ok and bad == []
    assert P.kappa * P.s < P.mu < P.m - P.k


@pytest.mark.parametrize("change, name", [({"kappa": 1.3}, "kappa < 5/4"), ({"m": 3.0}, "m > 3"),
                                          ({"mu": 2.3}, "mu > kappa s"), ({"k": 0}, "k positive integer"),
                                          ({"kappa": 1.0}, "1 < kappa")])
def test_inadmissible_parameters_named(change, name):
    ok, bad = admissible(replace(P, **change))
    assert not ok and name in bad


def test_evolve_refuses_inadmissible():
    with pytest.raises(Inadmissible):
        evolve(replace(P, kappa=1.3), 10)


def test_t_sequence_is_iterated_power():
    ev = evolve(replace(P, t0=0.1), 3)
    assert math.exp(ev.states[1].log_t) == pytest.approx(0.1 ** 1.2)
    assert math.exp(ev.states[1].log_t) == pytest.approx(0.0631, abs=5e-5)
    assert ev.states[3].log_t == pytest.approx(1.2 ** 3 * math.log(0.1))


def test_radii_and_widths():
    ev = evolve(replace(P, t0=1e-300), 2)
    assert ev.states[1].rho == pytest.approx(0.8)
    assert math.exp(ev.states[1].log_sigma) == pytest.approx(1 / 125)


def test_large_t0_fails_early():
    ev = evolve(replace(P, t0=0.9), 50)
    assert not ev.passed
    assert ev.failures[0][0] <= 2
    assert any(c == "a_j < 1/2" for j, c in ev.failures if j == 0)


def test_certified_schedule_passes_long_run(certified):
    assert math.isfinite(certified.log_t0) and certified.log_t0 < 0
    assert certified.monotone
    ev = evolve(replace(P, log_t0=certified.log_t0), 1000)
    assert ev.passed and len(ev.states) == 1001


def test_bisection_brackets_the_threshold(certified):
    above = certified.log_t0 * (1 - 5e-3)  # larger t0
    assert not evolve(replace(P, log_t0=above, delta0={}), 1000, stop_on_fail=True).passed


def test_no_overflow_for_long_runs(certified):
    ev = evolve(replace(P, log_t0=certified.log_t0), 10_000)
    assert ev.passed
    assert all(math.isfinite(v) for v in ev.states[-1].K.values())


def test_doubling_constants_lowers_t0(certified):
    doubled = find_t0(replace(P, constants=P.constants.scaled(2.0)), J=1000)
    assert doubled.log_t0 < certified.log_t0


def test_t0_non_increasing_as_graph_budget_shrinks():
    logs = [find_t0(replace(P, constants=EstimateConstants(gamma0=g)), J=200).log_t0 for g in (0.45, 1e-3, 1e-9)]
    assert logs[0] >= logs[1] >= logs[2]


def test_graph_budget_check_tracks_sum():
    q = replace(P, log_t0=-800.0)
    total = evolve(q, 20).states[-1].cascade["sumP"]
    assert -700 < total < 0  # representable as a float budget
    for shift, ok in ((0.5, True), (-0.5, False)):
        ev = evolve(replace(q, constants=EstimateConstants(gamma0=math.exp(total + shift))), 20)
        assert ev.states[-1].hypotheses["graph_c2_bound"] is ok


def test_sum_of_graph_steps_matches_direct_sum(certified):
    ev = evolve(replace(P, log_t0=certified.log_t0), 300)
    P_j = np.array([s.cascade["P"] for s in ev.states])
    direct = np.logaddexp.reduce(P_j)
    assert ev.states[-1].cascade["sumP"] == pytest.approx(direct, rel=1e-12)
    assert direct <= math.log(P.constants.gamma0)
    # geometric tail bound with ratio eps = 1/2 once Q_j <= eps^j
    eps = 0.5
    assert math.exp(direct - P_j[0]) <= 1 / (1 - math.sqrt(eps))


def test_K_growth_bounded_by_geometry(certified):
    ev = evolve(replace(P, log_t0=certified.log_t0), 50)
    for a in (2.0, 3.0, 4.0):
        chat = P.constants.s(a) * math.log(5 / (1 - 5 * P.sigma0))
        for s0, s1 in zip(ev.states, ev.states[1:]):
            assert s1.K[a] - s0.K[a] <= chat + 1e-9


def test_delta_budget_meets_initial_hypotheses():
    q = replace(P, t0=1e-30)
    b = delta0_budget(q)
    assert b <= P.s * math.log(1e-30)


def test_infeasible_constants():
    huge = EstimateConstants(c_default=1e300)
    with pytest.raises(Infeasible):
        find_t0(replace(P, constants=huge), J=50, max_expansions=3)


def test_convergence_report_series(certified):
    rep = convergence_report(replace(P, log_t0=certified.log_t0), 1000)
    for key in ("series_k_plus_2", "series_a_plus_1", "composition_g", "composition_F"):
        sv = rep["series"][key]
        assert sv.verdict == "convergent" and sv.onset <= 50 and sv.limiting_ratio < 1
    assert rep["series"]["interpolation"].log_ratios[-1] < rep["series"]["interpolation"].log_ratios[0]


def test_interpolation_endpoint_is_boundary(certified):
    rep = convergence_report(replace(P, log_t0=certified.log_t0, b=P.m + 0.5), 200)
    assert rep["series"]["interpolation"].verdict == "boundary"


def test_interpolation_lambda():
    b, lam = interpolation_lambda(P)
    assert b == pytest.approx(0.5 * (P.a + P.m + 0.5)) and lam == pytest.approx(0.5)
    _, lam = interpolation_lambda(replace(P, b=P.m + 0.5))
    assert lam == 0.0


def test_csv_columns_stable(certified):
    ev = evolve(replace(P, log_t0=certified.log_t0), 5)
    text = ev.to_csv()
    lines = text.splitlines()
    assert lines[0].startswith("j,rho,log_sigma,log_t,loglog_t")
    assert len(lines) == 7 and text == ev.to_csv()


@settings(max_examples=25, deadline=None)
@given(st.floats(1.001, 1.249), st.floats(2.0, 4.0), st.floats(3.01, 8.0), st.integers(1, 4))
def test_admissible_matches_inequalities(kappa, mu, m, k):
    q = replace(P, kappa=kappa, mu=mu, m=m, k=k)
    want = (mu > 2 * kappa and 2 * kappa > 2 and k + mu <= m and m > 3 and kappa < min(1.25, (m - k) / 2))
    assert admissible(q)[0] == want


@settings(max_examples=6, deadline=None)
@given(st.floats(1.05, 1.2))
def test_verdict_monotone_in_t0(factor):
    res = find_t0(P, J=100)
    lower = res.log_t0 * factor
    assert evolve(replace(P, log_t0=lower, delta0={}), 100).passed
