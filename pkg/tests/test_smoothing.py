import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from crembed.grid import Lattice
from crembed.smoothing import (Mollifier, SupportViolation, build_mollifier, commutator, commutator_direct,
                               discrete_weights, lacunary_field, smooth, smoothing_rate)


def test_first_order_kernel_is_even_bump():
    moll = build_mollifier(1, 1)
    z = np.linspace(-moll.radius, moll.radius, 101)
    assert np.allclose(moll.chi1(z), moll.chi1(-z))
    assert moll.moment1d(0) == pytest.approx(1.0, abs=1e-10)
    assert abs(moll.moment1d(1)) < 1e-14


def test_moments_against_adaptive_quadrature():
    moll = build_mollifier(3, 4)
    for k in range(8):
        ref, _ = integrate.quad(lambda z: z ** k * float(moll.chi1(z)), -moll.radius, moll.radius,
                                epsabs=1e-14, limit=200)
        assert ref == pytest.approx(1.0 if k == 0 else 0.0, abs=1e-10)


def test_support_inside_unit_ball():
    for d in (1, 2, 3, 7):
        moll = build_mollifier(d, 4)
        assert moll.radius * math.sqrt(d) < 1
    with pytest.raises(ValueError):
        build_mollifier(2, 4, radius=0.8)


def test_mollifier_json_roundtrip():
    moll = build_mollifier(2, 3)
    back = Mollifier.from_json(moll.to_json())
    z = np.linspace(-0.5, 0.5, 9)
    assert np.allclose(back.chi1(z), moll.chi1(z))


def test_discrete_weights_reproduce_moments():
    moll = build_mollifier(1, 4)
    k, w, order = discrete_weights(moll, 0.3, 0.01)
    assert order == 9
    x = k * 0.01
    assert w.sum() == pytest.approx(1.0, abs=1e-13)
    for p in range(1, 10):
        assert abs((x ** p) @ w) < 1e-13


def test_below_one_cell_is_identity():
    moll = build_mollifier(1, 4)
    k, w, _ = discrete_weights(moll, 1e-4, 0.1)
    assert k.tolist() == [0] and w.tolist() == [1.0]


def test_coarse_scale_reduces_order_with_warning():
    moll = build_mollifier(1, 4)
    with pytest.warns(UserWarning):
        _, _, order = discrete_weights(moll, 0.05, 0.01)
    assert order < 9


@pytest.mark.parametrize("kind", ["constant", "linear"])
def test_smoothing_preserves_low_degree(kind):
    reg = Lattice(2, 81, 1.0).box()
    x = reg.coords
    u = np.full(len(reg), 2.5) if kind == "constant" else 1 + 3 * x[:, 0] - x[:, 1]
    su, r = smooth(u, reg, 0.2, build_mollifier(2, 4))
    assert len(r) > 0
    assert np.allclose(su, u[r.index_in(reg)], atol=1e-12)


def test_smoothing_margin_enforced():
    reg = Lattice(1, 41, 1.0).box()
    with pytest.raises(SupportViolation):
        smooth(np.zeros(len(reg)), reg, 0.5, build_mollifier(1, 4), rho=1.0, sigma=0.2)
    with pytest.raises(ValueError):
        smooth(np.zeros(len(reg)), reg, -0.1, build_mollifier(1, 4))


def test_smoothing_remainder_small_for_smooth_fields():
    # (I - S_t) u = O(t^(2m+2)) for smooth u
    reg = Lattice(1, 801, 1.0).box()
    u = np.sin(3 * reg.coords[:, 0])
    moll = build_mollifier(1, 4)
    errs = []
    for t in (0.1, 0.2):
        su, r = smooth(u, reg, t, moll)
        errs.append(np.abs(u[r.index_in(reg)] - su).max())
    assert errs[0] < errs[1] < 1e-4


@pytest.mark.filterwarnings("ignore:smoothing scale resolves")
@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-3, 3, allow_nan=False), min_size=2, max_size=2), st.floats(0.1, 0.3))
def test_smoothing_is_linear(c, t):
    reg = Lattice(2, 25, 1.0).box()
    x = reg.coords
    u, v = np.sin(2 * x[:, 0]), np.cos(x[:, 1]) * x[:, 0]
    moll = build_mollifier(2, 4)
    suv, _ = smooth(c[0] * u + c[1] * v, reg, t, moll)
    su, _ = smooth(u, reg, t, moll)
    sv, _ = smooth(v, reg, t, moll)
    assert np.allclose(suv, c[0] * su + c[1] * sv, atol=1e-10)


def test_commutator_vanishes_for_constant_coefficient_or_field():
    reg = Lattice(2, 81, 1.0).box()
    x = reg.coords
    moll = build_mollifier(2, 4)
    u = np.sin(3 * x[:, 0]) * x[:, 1]
    v, _ = commutator(u, np.full(len(reg), 1.7), reg, 0.2, moll)
    assert np.abs(v).max() < 1e-12
    v, _ = commutator(np.full(len(reg), -2.0), np.sin(x[:, 1]), reg, 0.2, moll)
    assert np.abs(v).max() < 1e-12


def test_commutator_matches_direct_difference():
    reg = Lattice(2, 81, 1.0).box()
    x = reg.coords
    moll = build_mollifier(2, 4)
    u = np.sin(2 * x[:, 0] + x[:, 1])
    w = np.cos(x[:, 1]) + 0.3 * x[:, 0]
    v, r = commutator(u, w, reg, 0.2, moll)
    vd, rd = commutator_direct(u, w, reg, 0.2, moll)
    common = r.intersect(rd)
    assert len(common) > 0
    assert np.allclose(v[common.index_in(r)], vd[common.index_in(rd)], atol=1e-9)


def test_smoothing_rate_rows():
    reg = Lattice(1, 1025, 2.0).box()
    rng = np.random.default_rng(0)
    u = lacunary_field(reg, 2, rng, range(0, 8))
    rows, slope = smoothing_rate(u, reg, [0.1, 0.2, 0.4], 0, 2, build_mollifier(1, 4), remainder=True)
    assert len(rows) == 3 and all(r.ratio > 0 for r in rows)
    assert 1.5 < slope < 2.5
