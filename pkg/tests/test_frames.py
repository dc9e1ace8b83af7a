import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crembed.frames import (GraphStructure, LinearPushforward, _complex_to_real, complex_coords, cubic_bump, dbar,
                            dilate, integrability_residual, levi_form, make_structure, normalize_initial, quadric,
                            random_integrable, state_from_structure, structure_from_dict)
from crembed.poly import random_poly


def test_quadric_tangential_fields():
    st_ = state_from_structure(quadric(5), resolution=9)
    b = st_.basis()
    z = complex_coords(st_.region.coords)
    for a in range(2):
        # Y_a = d/dz^a + i zbar^a d/dt
        assert np.allclose(b.y[a, 2 * a], 0.5) and np.allclose(b.y[a, 2 * a + 1], -0.5j)
        assert np.allclose(b.y[a, -1], 1j * np.conj(z[:, a]), atol=1e-12)


def test_quadric_has_zero_error():
    st_ = state_from_structure(quadric(3), resolution=17)
    assert np.abs(st_.error).max() == 0.0


@pytest.mark.parametrize("res", [17, 33])
def test_holomorphic_polynomial_is_cr_on_quadric(res):
    st_ = state_from_structure(quadric(3), resolution=res)
    host = st_.domain.host
    x = host.coords
    w = x[:, -1] + 1j * (x[:, 0] ** 2 + x[:, 1] ** 2)
    z = complex_coords(x)[:, 0]
    f = z ** 3 + z * w - 2 * w ** 2
    d, _ = dbar("M", f, st_, src=host, rows=st_.region)
    assert np.abs(d).max() <= 20 * st_.spacing ** 2


def test_levi_form_of_quadric():
    assert np.allclose(levi_form(quadric(5)).matrix, 2 * np.eye(2), atol=1e-8)
    st_, _ = normalize_initial(quadric(5), resolution=9)
    assert np.allclose(levi_form(st_).matrix, 2 * np.eye(2), atol=1e-8)


def test_levi_form_unitary_covariance():
    M = np.eye(5)
    M[:4, :4] = _complex_to_real(np.array([[1.3, 0.4j], [0.2, 0.8]]))
    s = LinearPushforward(quadric(5), M)
    g = levi_form(s).matrix
    rng = np.random.default_rng(2)
    U, _ = np.linalg.qr(rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)))
    L = np.eye(5)
    L[:4, :4] = _complex_to_real(U)
    g2 = levi_form(LinearPushforward(s, L)).matrix
    # frame indices follow zbar, so the congruence is by the conjugate unitary
    V = U.conj()
    assert np.allclose(g2, V @ g @ V.conj().T, atol=1e-8)


@pytest.mark.parametrize("seed", range(5))
def test_levi_eigenvalues_near_two_for_small_perturbations(seed):
    st_, _ = normalize_initial(random_integrable(5, seed=seed, amplitude=0.05), resolution=9)
    ev = levi_form(st_).eigenvalues
    assert np.all(np.abs(ev - 2) <= 0.2)


def test_normalization_fixes_quadric():
    _, rep = normalize_initial(quadric(3), resolution=9)
    assert np.allclose(rep["linear"], np.eye(3))
    assert np.allclose(rep["levi_change"], np.eye(3))
    assert np.abs(rep["F"].coeffs).max() < 1e-12


def test_normalization_undoes_linear_rescale():
    # the scaled structure has Xbar(0) = 2 d/dzbar, so the fix halves z'
    _, rep = normalize_initial(LinearPushforward(quadric(3), 2 * np.eye(3)), resolution=9)
    assert np.allclose(rep["linear"], np.diag([0.5, 0.5, 1.0]))


def test_normalized_error_vanishes_to_second_order():
    st_, _ = normalize_initial(cubic_bump(3, 0.05), resolution=33)
    r = np.sqrt((st_.region.coords ** 2).sum(1))
    fr = st_.frame()
    coeff = np.abs(fr.A).reshape(-1, len(r)).max(0) + np.abs(fr.B).reshape(-1, len(r)).max(0)
    shells = np.geomspace(0.1, 0.8, 8)
    sup = [coeff[(r > s / 1.3) & (r <= s)].max() for s in shells]
    slope = np.polyfit(np.log(shells), np.log(sup), 1)[0]
    assert slope >= 1.8


def test_dilation_fixes_quadric():
    st_, _ = normalize_initial(quadric(3), resolution=17)
    for rho in (2.0, 8.0):
        assert np.abs(dilate(st_, rho).error).max() == pytest.approx(0.0, abs=1e-12)


def test_dilation_rejects_nonpositive_factor():
    st_ = state_from_structure(quadric(3), resolution=9)
    with pytest.raises(ValueError):
        dilate(st_, 0.0)


def test_integrable_structures_close_under_brackets():
    st_, _ = normalize_initial(random_integrable(5, seed=0, amplitude=0.05), resolution=9)
    assert integrability_residual(st_) < 0.05


def test_structure_json_roundtrip():
    s = make_structure("random-integrable(3)", 5)
    back = structure_from_dict(s.to_dict())
    x = np.random.default_rng(0).uniform(-0.3, 0.3, size=(7, 5))
    assert np.allclose(back.vbar(x), s.vbar(x))


def test_unknown_structure_name():
    with pytest.raises(ValueError):
        make_structure("sphere", 3)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 0.2))
def test_graph_dbar_is_linear(seed, scale):
    rng = np.random.default_rng(seed)
    s = GraphStructure(3, random_poly(rng, 3, [3], scale))
    st_ = state_from_structure(s, graph=s.graph(), resolution=9)
    host = st_.domain.host
    u, v = rng.normal(size=(2, len(host)))
    c = complex(*rng.normal(size=2))
    du, _ = dbar("M", u, st_, src=host, rows=st_.region)
    dv, _ = dbar("M", v, st_, src=host, rows=st_.region)
    duv, _ = dbar("M", u + c * v, st_, src=host, rows=st_.region)
    assert np.allclose(duv, du + c * dv, atol=1e-10)
