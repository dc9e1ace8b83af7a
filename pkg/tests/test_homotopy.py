import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crembed.config import SolverConfig
from crembed.frames import normalize_initial, quadric, random_integrable
from crembed.homotopy import (PLUMBING_FLAG, HomotopyOperator, SolverError, contract_audit, exact_02_form, exact_form,
                              rows_to_csv)


@pytest.fixture(scope="module")
def op3():
    st_, _ = normalize_initial(quadric(3), resolution=17)
    return HomotopyOperator(st_)


@pytest.fixture(scope="module")
def op5():
    st_, _ = normalize_initial(random_integrable(5, seed=1, amplitude=0.05), resolution=9)
    return HomotopyOperator(st_)


def _rel(a, b):
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def test_zero_inputs(op5):
    phi0 = np.zeros((op5.n - 1, len(op5.omega)))
    assert not np.any(op5.solve_P(phi0))
    assert not np.any(op5.solve_Q(np.zeros((len(op5.pairs), len(op5.minus)))))
    defect, rel = op5.homotopy_defect(phi0)
    assert rel == 0.0 and not np.any(defect)


def test_plumbing_flag_below_contract_dimension(op3, op5):
    assert op3.plumbing and PLUMBING_FLAG in op3.flags
    assert op5.plumbing


def test_no_two_forms_in_dimension_three(op3):
    assert op3.d1 is None
    assert op3.dbar1(np.zeros((1, len(op3.omega)))).shape == (0, len(op3.minus))


@pytest.mark.parametrize("fixture", ["op3", "op5"])
def test_P_inverts_dbar_on_exact_forms(fixture, request):
    op = request.getfixturevalue(fixture)
    rng = np.random.default_rng(0)
    for _ in range(3):
        _, phi = exact_form(op, rng)
        assert _rel(op.dbar0(op.solve_P(phi)), phi) <= 1e-3


def test_Q_inverts_dbar_on_exact_two_forms(op5):
    rng = np.random.default_rng(1)
    for _ in range(3):
        _, psi = exact_02_form(op5, rng)
        assert _rel(op5.dbar1(op5.solve_Q(psi)), psi) <= 1e-2


def test_Q_flips_with_antisymmetric_input(op5):
    rng = np.random.default_rng(2)
    _, psi = exact_02_form(op5, rng)
    assert np.allclose(op5.solve_Q(-psi), -op5.solve_Q(psi), atol=1e-8 * np.abs(psi).max())


def test_exact_forms_have_small_defect(op5):
    rng = np.random.default_rng(3)
    _, phi = exact_form(op5, rng)
    _, rel = op5.homotopy_defect(phi)
    assert rel <= 1e-2
    assert op5.residual_report["relative_norm"] == rel


def test_random_forms_report_defect(op5):
    phi = np.random.default_rng(4).normal(size=(op5.n - 1, len(op5.omega)))
    _, rel = op5.homotopy_defect(phi)
    assert 0 < rel < np.inf


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 1000), st.floats(-2, 2, allow_nan=False))
def test_P_is_linear(seed, c):
    st_, _ = normalize_initial(quadric(3), resolution=9)
    op = HomotopyOperator(st_, SolverConfig(tol=1e-12))
    rng = np.random.default_rng(seed)
    _, a = exact_form(op, rng)
    _, b = exact_form(op, rng)
    lhs = op.solve_P(a + c * b)
    rhs = op.solve_P(a) + c * op.solve_P(b)
    assert np.linalg.norm(lhs - rhs) <= 1e-6 * (np.linalg.norm(op.solve_P(a)) + abs(c) * np.linalg.norm(op.solve_P(b)))


def test_halving_ridge_does_not_increase_residual():
    st_, _ = normalize_initial(quadric(3), resolution=9)
    _, phi = exact_form(HomotopyOperator(st_), np.random.default_rng(5))
    res = []
    for ridge in (1e-2, 5e-3, 2.5e-3, 1.25e-3):
        op = HomotopyOperator(st_, SolverConfig(ridge=ridge, tol=1e-12))
        res.append(np.linalg.norm(op.dbar0(op.solve_P(phi)) - phi))
    assert all(b <= a * (1 + 1e-9) for a, b in zip(res, res[1:]))


def test_iteration_limit_raises():
    st_, _ = normalize_initial(quadric(3), resolution=17)
    op = HomotopyOperator(st_, SolverConfig(max_iter=2, tol=1e-14))
    _, phi = exact_form(op, np.random.default_rng(6))
    with pytest.raises(SolverError):
        op.solve_P(phi)


def test_contract_audit_csv(op3):
    rows = contract_audit(op3, forms=3)
    assert all(np.isfinite(r.fitted_constant) and r.fitted_constant > 0 for r in rows)
    text = rows_to_csv(rows)
    assert text.splitlines()[0] == "form_id,a,lhs,rhs_skeleton,fitted_constant"
    assert len(text.splitlines()) == 4
