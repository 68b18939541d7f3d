import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oscillab.geometry import (DomainFamily, GeometryError, boundary_param, check_hypotheses, in_core,
                               in_perturbed, jacobian_exterior, jacobian_n_minus_1, profile_from_spec, rho,
                               t_map, theta)

SAW = profile_from_spec("sawtooth", slope=1.0)
SINE = profile_from_spec("sine", amplitude_coeff=1.0)
FLAT = profile_from_spec("flat")
EPS = st.sampled_from([0.2, 0.1, 0.05, 0.025, 0.01])
XP = st.floats(0.0, 1.0)


def test_flat_rho_is_zero():
    x = np.linspace(0, 1, 101)
    assert np.all(rho(FLAT, 0.1, x) == 0.0)


def test_sawtooth_rising_segment():
    assert rho(SAW, 0.1, 0.025) == pytest.approx(0.025, abs=1e-15)


def test_sawtooth_hand_table():
    # triangle wave of period 2*eps and peak eps at x = eps (eps = 0.1)
    xs = np.array([0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45])
    expected = np.array([0.0, 0.05, 0.1, 0.05, 0.0, 0.05, 0.1, 0.05, 0.0, 0.05])
    assert np.allclose(rho(SAW, 0.1, xs), expected, atol=1e-14)


def test_sine_value_and_slope_at_zero():
    assert rho(SINE, 0.1, 0.0) == 0.0
    assert SINE.drho(0.1, 0.0) == pytest.approx(1.0)


def test_rho_rejects_nonpositive_eps():
    with pytest.raises(GeometryError):
        rho(SAW, 0.0, 0.5)


def test_rho_rejects_coordinate_outside_chart(sawtooth_family):
    with pytest.raises(GeometryError):
        rho(SAW, 0.1, 1.5, sawtooth_family.chart("top"))


def test_t_map_examples():
    xp = np.linspace(0, 1, 7)
    for s in (-1.0, -0.3, 0.0, 0.4, 1.0):
        x, y = t_map(FLAT, 0.1, xp, np.full_like(xp, s))
        assert np.array_equal(y, np.full_like(xp, s))
    _, y = t_map(SAW, 0.1, xp, np.zeros_like(xp))
    assert np.allclose(y, rho(SAW, 0.1, xp))
    _, y = t_map(SAW, 0.1, xp, -np.ones_like(xp))
    assert np.allclose(y, -1.0)


def test_boundary_param_top_chart(sawtooth_family):
    p = boundary_param(sawtooth_family.chart("top"), SAW, 0.1, 0.025)
    assert np.allclose(p, (0.025, 1.025), atol=1e-15)


def test_sine_period_endpoint_lies_on_flat_side():
    fam = DomainFamily(SINE, (0.1,))
    x = 2 * math.pi * 0.1
    p = boundary_param(fam.chart("top"), SINE, 0.1, x)
    assert p[1] == pytest.approx(1.0, abs=1e-15)


@given(EPS, st.lists(XP, min_size=1, max_size=20))
def test_jacobian_at_least_one(eps, xs):
    fam = DomainFamily(SINE, (eps,))
    J, _ = jacobian_n_minus_1(fam.chart("top"), SINE, eps, np.array(xs))
    assert np.all(J >= 1.0 - 1e-15)


def test_jacobian_examples(sawtooth_family):
    ch = sawtooth_family.chart("top")
    x = np.linspace(0.013, 0.987, 50)
    J, _ = jacobian_n_minus_1(ch, FLAT, 0.1, x)
    assert np.allclose(J, 1.0)
    J, _ = jacobian_n_minus_1(ch, SAW, 0.1, x)
    assert np.allclose(J, math.sqrt(2))
    J, _ = jacobian_n_minus_1(ch, SINE, 0.05, np.array([0.0]))
    assert J[0] == pytest.approx(math.sqrt(2))


def test_jacobian_flags_kinks(sawtooth_family):
    _, kink = jacobian_n_minus_1(sawtooth_family.chart("top"), SAW, 0.1, np.array([0.1, 0.15]))
    assert kink.tolist() == [True, False]


def test_jacobian_exterior_surface_patch():
    # graph (u, v, u*v) at (1, 2): |(1,0,2) x (0,1,1)| = sqrt(6)
    jac = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 1.0]])
    assert jacobian_exterior(jac) == pytest.approx(math.sqrt(6))


@given(EPS, XP)
def test_t_map_matches_boundary_param(eps, x):
    fam = DomainFamily(SINE, (eps,))
    ch = fam.chart("top")
    xp, s = t_map(SINE, eps, x, 0.0, ch)
    assert np.allclose(ch.phi(xp, s), boundary_param(ch, SINE, eps, x), atol=1e-12)


@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 0.75)), min_size=1, max_size=30))
def test_theta_identity_on_core(pts):
    fam = DomainFamily(profile_from_spec("sine", amplitude_coeff=1.0), (0.1, 0.05))
    p = np.array(pts)
    assert in_core(fam, p).all()
    assert np.array_equal(theta(fam, 0.05, p), p)


def test_theta_identity_for_exterior_profile(sawtooth_family):
    p = np.random.default_rng(0).random((50, 2))
    assert np.array_equal(theta(sawtooth_family, 0.1, p), p)


def test_theta_flat_is_identity(flat_family):
    p = np.random.default_rng(1).random((50, 2))
    assert np.array_equal(theta(flat_family, 0.1, p), p)


def test_theta_signed_sine_lands_in_intersection():
    fam = DomainFamily(SINE, (0.1, 0.05))
    x = np.linspace(0, 1, 200)
    top = np.column_stack([x, np.ones_like(x)])
    for eps in fam.epsilons:
        q = theta(fam, eps, top)
        assert np.allclose(q[:, 1], 1.0 - SINE.depth_below(eps))
        assert in_perturbed(fam, eps, q).all()


def test_theta_rejects_outside_points(sawtooth_family):
    with pytest.raises(GeometryError):
        theta(sawtooth_family, 0.1, [0.5, 1.5])


def test_hypotheses_reports():
    flat = check_hypotheses(DomainFamily(FLAT, (0.1,)))
    assert flat.ok and all(v == 0 for v in flat.lipschitz.values())
    saw = check_hypotheses(DomainFamily(SAW, (0.2, 0.1, 0.05)))
    assert saw.passes["F_i"] and all(v == pytest.approx(1.0) for v in saw.lipschitz.values())
    steep = profile_from_spec("sawtooth", amplitude_law=(1.0, 0.5), period_law=(1.0, 1.0))
    rep = check_hypotheses(DomainFamily(steep, (0.1, 0.01)))
    assert not rep.passes["F_i"]
    assert rep.lipschitz[0.01] > rep.lipschitz[0.1]


@given(st.sampled_from(["sawtooth", "sine"]))
def test_sup_rho_nonincreasing(kind):
    prof = profile_from_spec(kind)
    x = np.linspace(0, 1, 10_000)
    sups = [np.abs(rho(prof, e, x)).max() for e in (0.2, 0.1, 0.05, 0.025)]
    assert all(b <= a + 1e-15 for a, b in zip(sups, sups[1:]))
    for e, s in zip((0.2, 0.1, 0.05, 0.025), sups):
        assert s <= e * max(abs(v) for v in prof.generator_bounds()) + 1e-15


def test_adjacent_oscillating_sides_rejected():
    with pytest.raises(GeometryError):
        DomainFamily(SAW, (0.1,), ("top", "left"))


def test_family_hausdorff_bound_shrinks(sawtooth_family):
    b = [sawtooth_family.hausdorff_bound(e) for e in sawtooth_family.epsilons]
    assert b == sorted(b, reverse=True) and b[-1] == pytest.approx(0.025)
