import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crembed.grid import Lattice, ResolutionError
from crembed.holder import audit_interpolation, audit_rule, derivative_masks, holder_norm, holder_ratio, norm


def _disc(res=21, dim=2):
    return Lattice(dim, res, 1.0).ball(1.0)


def _oracle_1d_norm(u, spacing, alpha):
    """Brute-force C^(1+alpha) norm on a 1D segment with np.gradient differences."""
    du = np.gradient(u, spacing, edge_order=1)
    x = np.arange(len(u)) * spacing
    dist = np.abs(x[:, None] - x[None, :])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(dist > 0, np.abs(du[:, None] - du[None, :]) / dist ** alpha, 0.0)
    return np.abs(u).max() + np.abs(du).max() + ratio.max()


@pytest.mark.parametrize("a", [0.0, 0.5, 1.0, 2.5])
def test_constant_field_norm_is_its_modulus(a):
    reg = _disc()
    assert norm(np.full(len(reg), -3.25), reg, a) == pytest.approx(3.25, abs=1e-12)


def test_linear_field_on_unit_ball():
    reg = _disc()
    assert norm(reg.coords[:, 0], reg, 1) == pytest.approx(2.0, abs=1e-12)


@pytest.mark.parametrize("res", [21, 81, 321])
def test_square_on_interval_matches_bruteforce_oracle(res):
    reg = Lattice(1, res, 1.0).box()
    x = reg.coords[:, 0]
    got = norm(x ** 2, reg, 1.5)
    assert got == pytest.approx(_oracle_1d_norm(x ** 2, reg.spacing, 0.5), rel=1e-12)
    # continuum value 1 + 2 + 2 sqrt 2 is approached at first order in the spacing
    assert abs(got - (3 + 2 * math.sqrt(2))) <= 3 * reg.spacing


def test_order_beyond_resolution_raises():
    reg = Lattice(2, 3, 1.0).box()
    with pytest.raises(ResolutionError):
        norm(np.zeros(len(reg)), reg, 2)


def test_negative_order_rejected():
    reg = _disc()
    with pytest.raises(ValueError):
        norm(np.zeros(len(reg)), reg, -1)


def test_masks_exclude_points_without_axis_neighbours():
    reg = _disc(res=5)
    m = derivative_masks(reg, 1)
    lonely = (reg.neighbor(1, 1) < 0) & (reg.neighbor(1, -1) < 0)
    assert lonely.any()
    assert not m[(0, 1)][lonely].any()


def test_vector_valued_fields_use_pointwise_euclidean_modulus():
    reg = _disc()
    v = np.stack([np.full(len(reg), 3.0), np.full(len(reg), 4.0)])
    assert norm(v, reg, 0) == pytest.approx(5.0)


def test_holder_ratio_of_linear_function():
    reg = Lattice(1, 41, 1.0).box()
    # |x - y| / |x - y|^(1/2) is largest at the diameter
    assert holder_ratio(reg.coords[:, 0], reg, 0.5) == pytest.approx(math.sqrt(2.0))


def _field(coeffs, coords):
    c = np.asarray(coeffs)
    return c[0] + c[1] * np.sin(2 * coords[:, 0] + c[2]) + c[3] * coords[:, 1] ** 2


coef = st.lists(st.floats(-2, 2, allow_nan=False), min_size=4, max_size=4)
orders = st.sampled_from([0.0, 0.5, 1.0, 1.5, 2.0])


@settings(max_examples=30, deadline=None)
@given(coef, st.floats(-5, 5, allow_nan=False), orders)
def test_norm_is_absolutely_homogeneous(c, lam, a):
    reg = _disc(11)
    u = _field(c, reg.coords)
    assert norm(lam * u, reg, a) == pytest.approx(abs(lam) * norm(u, reg, a), rel=1e-9, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(coef, coef, orders)
def test_norm_triangle_inequality(c1, c2, a):
    reg = _disc(11)
    u, v = _field(c1, reg.coords), _field(c2, reg.coords)
    assert norm(u + v, reg, a) <= norm(u, reg, a) + norm(v, reg, a) + 1e-9


@settings(max_examples=30, deadline=None)
@given(coef, orders, st.floats(0.3, 0.9))
def test_norm_monotone_in_domain(c, a, r):
    reg = _disc(13)
    u = _field(c, reg.coords)
    sub = reg.lattice.ball(r)
    assert norm(u, reg, a, within=sub) <= norm(u, reg, a) + 1e-12


@settings(max_examples=30, deadline=None)
@given(coef, orders)
def test_norm_dominates_lower_orders(c, a):
    reg = _disc(13)
    u = _field(c, reg.coords)
    assert norm(u, reg, 0) <= norm(u, reg, a) + 1e-12


@pytest.mark.parametrize("a", [0.5, 1.0, 2.0])
def test_norm_stable_under_refinement(a):
    vals = []
    for res in (33, 65, 129):
        reg = Lattice(2, res, 1.0).ball(0.9)
        vals.append(norm(np.sin(2 * reg.coords[:, 0]) * np.cos(reg.coords[:, 1]), reg, a))
    assert abs(vals[2] - vals[1]) <= abs(vals[1] - vals[0]) + 1e-3
    assert abs(vals[2] - vals[1]) / vals[2] < 0.05


def test_report_splits_sups_and_ratio():
    reg = Lattice(1, 41, 1.0).box()
    rep = holder_norm(reg.coords[:, 0] ** 2, reg, 1.5)
    assert len(rep.derivative_sups) == 2
    assert rep.value == pytest.approx(sum(rep.derivative_sups) + rep.holder_ratio)


def test_interpolation_audit_on_zero_and_sine():
    reg = Lattice(2, 33, 1.0).ball(1.0)
    assert audit_interpolation(np.zeros(len(reg)), reg, 0, 2, 0.5).ratio == 0.0
    rep = audit_interpolation(np.sin(4 * reg.coords[:, 0]), reg, 0, 2, 0.5)
    assert 0 < rep.ratio < math.inf


def test_product_rule_with_unit_factor():
    reg = _disc(17)
    v = np.sin(reg.coords[:, 0]) + reg.coords[:, 1] ** 2
    rep = audit_rule("product", u=np.ones(len(reg)), v=v, region=reg, a=1.5)
    assert rep.lhs == pytest.approx(norm(v, reg, 1.5))
    assert rep.ratio <= 1.0 + 1e-12


def test_chain_fixed_with_zero_map_is_constant():
    reg = _disc(17)
    rep = audit_rule("chain_fixed", g=np.zeros((2, 2, len(reg))), region=reg, a=1.5)
    assert rep.lhs == 0.0 and rep.ratio == 0.0


def test_convexity_rejects_non_convex_endpoints():
    from crembed.holder import HypothesisViolation
    reg = _disc(11)
    u = np.ones(len(reg))
    with pytest.raises(HypothesisViolation):
        audit_rule("convexity", u=u, v=u, region_u=reg, region_v=reg, ab=(3, 3), ab1=(0, 2), ab2=(2, 0))
