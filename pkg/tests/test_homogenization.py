import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oscillab.geometry import DomainFamily, profile_from_spec
from oscillab.homogenization import (GammaField, QuadratureResolutionError, SingularChartError,
                                     UnsupportedProfile, cauchy_verdict, gamma_closed_form, gamma_csv,
                                     gamma_empirical, gamma_for_family, gamma_i_empirical, gamma_quotient,
                                     gamma_sine_elliptic)

# frozen from (1/2pi) int_0^{2pi} sqrt(1 + cos^2 t) dt with scipy.integrate.quad (epsabs 1e-14)
SINE_GAMMA = 1.2160067234249796


def _family(kind, eps=(0.1, 0.01, 0.001), **kw):
    return DomainFamily(profile_from_spec(kind, **kw), eps)


def test_closed_form_values():
    ch = _family("flat").chart("top")
    assert gamma_closed_form(profile_from_spec("flat"), ch).values[0] == pytest.approx(1.0, abs=1e-12)
    saw = gamma_closed_form(profile_from_spec("sawtooth", slope=1.0), ch)
    assert abs(saw.values[0] - math.sqrt(2)) < 1e-9
    sine = gamma_closed_form(profile_from_spec("sine", amplitude_coeff=1.0), ch)
    assert sine.values[0] == pytest.approx(SINE_GAMMA, abs=1e-10)


def test_sine_closed_form_matches_elliptic_identity():
    # dual route: adaptive quadrature against the complete elliptic integral
    ch = _family("sine").chart("top")
    quad = gamma_closed_form(profile_from_spec("sine", amplitude_coeff=1.0), ch).values[0]
    assert quad == pytest.approx(gamma_sine_elliptic(1.0), abs=1e-12)


def test_independent_quadrature_oracle():
    from scipy.integrate import quad

    val = quad(lambda t: math.sqrt(1 + math.cos(t) ** 2), 0, 2 * math.pi, epsabs=1e-14)[0] / (2 * math.pi)
    assert val == pytest.approx(SINE_GAMMA, abs=1e-13)


def test_table_profile_without_period_is_unsupported():
    prof = profile_from_spec("table", samples=[(0, 0), (0.3, 1), (1, 0)], periodic=False)
    with pytest.raises(UnsupportedProfile):
        gamma_closed_form(prof, _family("flat").chart("top"))


def test_empirical_flat_and_sawtooth():
    fam = _family("flat")
    assert np.allclose(gamma_empirical(fam, fam.chart("top"), 5).values, 1.0)
    fam = _family("sawtooth", eps=(0.125, 0.0625, 1 / 64))
    g = gamma_empirical(fam, fam.chart("top"), 4)
    assert np.allclose(g.values, math.sqrt(2), atol=1e-12)
    assert g.provenance == "empirical" and g.meta["windows"] == 4


def test_empirical_sine_cells_match_adaptive_quadrature():
    from scipy.integrate import quad

    fam = _family("sine")
    eps = 1e-3
    g = gamma_empirical(fam, fam.chart("top"), 8, eps)
    for k in range(8):
        a, b = g.edges[k], g.edges[k + 1]
        ref = quad(lambda x: math.sqrt(1 + math.cos(x / eps) ** 2), a, b, limit=2000, epsabs=1e-13)[0] / (b - a)
        assert g.values[k] == pytest.approx(ref, abs=1e-10)


@pytest.mark.parametrize("kind", ["sine", "sawtooth"])
def test_empirical_error_decreases(kind):
    fam = _family(kind, eps=(1e-1, 1e-2, 1e-3, 1e-4))
    ch = fam.chart("top")
    exact = gamma_closed_form(fam.profile, ch).values[0]
    errs = [np.max(np.abs(gamma_empirical(fam, ch, 8, e).values - exact)) for e in fam.epsilons]
    assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))


def test_resolution_error():
    fam = _family("sine")
    with pytest.raises(QuadratureResolutionError):
        gamma_empirical(fam, fam.chart("top"), 8, nodes_per_period=3)


def test_quotient_examples():
    fam = _family("sawtooth")
    ch = fam.chart("top")
    g = gamma_quotient(GammaField.constant(ch, 1.7), ch)
    assert g.values[0] == pytest.approx(1.7)
    scaled = ch.scaled(2.0)
    gi = GammaField.constant(scaled, 2 * math.sqrt(2))
    assert gamma_quotient(gi, scaled).values[0] == pytest.approx(math.sqrt(2), abs=1e-12)
    flat = _family("flat")
    gi = gamma_i_empirical(flat, scaled, 4, 0.01)
    assert np.allclose(gamma_quotient(gi, scaled).values, 1.0)
    with pytest.raises(SingularChartError):
        gamma_quotient(GammaField.constant(ch, 1.0), ch.scaled(1e-14))


def test_chart_independence():
    fam = _family("sine", eps=(0.01, 0.001))
    ch = fam.chart("top")
    direct = gamma_empirical(fam, ch, 4, 1e-3).values
    scaled = ch.scaled(2.0)
    via = gamma_quotient(gamma_i_empirical(fam, scaled, 4, 1e-3), scaled).values
    assert np.allclose(direct, via, atol=2e-3)
    exact = gamma_closed_form(fam.profile, scaled).values[0]
    assert exact == pytest.approx(gamma_closed_form(fam.profile, ch).values[0], abs=1e-9)


@given(st.sampled_from(["flat", "sawtooth", "sine"]), st.floats(0.2, 3.0), st.integers(1, 12))
def test_gamma_at_least_one(kind, coeff, windows):
    kw = {"slope": coeff} if kind == "sawtooth" else {"amplitude_coeff": coeff} if kind == "sine" else {}
    fam = _family(kind, eps=(0.05, 0.01), **kw)
    for g in gamma_for_family(fam, windows).values():
        assert g.min() >= 1 - 1e-12
    assert gamma_empirical(fam, fam.chart("top"), windows).min() >= 1 - 1e-12


def test_non_oscillating_sides_have_unit_gamma():
    g = gamma_for_family(_family("sawtooth"))
    assert g["top"].values[0] == pytest.approx(math.sqrt(2))
    for side in ("bottom", "left", "right"):
        assert g[side].is_constant and g[side].values[0] == 1.0


def test_cauchy_verdict_for_nonperiodic_table():
    fam = DomainFamily(profile_from_spec("table", samples=[(0, 0), (0.3, 1), (1, 0)], periodic=False),
                       (0.1, 0.01, 0.001))
    cv = cauchy_verdict(fam, fam.chart("top"), 8)
    assert len(cv["gaps"]) == 2 and not cv["converged"]


def test_csv_columns():
    fam = _family("sine")
    text = gamma_csv([gamma_empirical(fam, fam.chart("top"), 2, 1e-3)])
    lines = text.strip().splitlines()
    assert lines[0] == "chart,cell_left,cell_right,gamma_value,provenance"
    assert len(lines) == 3 and "empirical(windows=2;eps=0.001)" in lines[1]
