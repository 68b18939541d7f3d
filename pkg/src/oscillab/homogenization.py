"""Homogenized boundary factor gamma.

gamma is the weak L^1 limit of the boundary Jacobians ``J_1 phi_{i,eps}``
divided by the flat Jacobian ``J_1 phi_i``.  For periodic profiles whose
amplitude and period scale together the limit is the period average of
``sqrt(1 + c**2 G'(t)**2)``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .geometry import BoundaryProfile, Chart, DomainFamily, jacobian_n_minus_1


class UnsupportedProfile(ValueError):
    pass


class QuadratureResolutionError(ValueError):
    pass


class SingularChartError(ValueError):
    pass


@dataclass(frozen=True)
class GammaField:
    """Piecewise-constant gamma on one chart.

    ``edges`` has ``len(values) + 1`` increasing chart coordinates; a
    constant field has a single cell spanning the chart interval.
    """

    chart: str
    edges: np.ndarray
    values: np.ndarray
    provenance: str = "closed_form"
    meta: dict = field(default_factory=dict)

    @classmethod
    def constant(cls, chart: Chart, value: float, provenance: str = "closed_form", **meta):
        a, b = chart.interval
        return cls(chart.name, np.array([a, b]), np.array([float(value)]), provenance, meta)

    def __call__(self, xp):
        """Nearest-window lookup."""
        xp = np.asarray(xp, float)
        idx = np.searchsorted(self.edges, xp, side="right") - 1
        return self.values[np.clip(idx, 0, len(self.values) - 1)]

    @property
    def is_constant(self) -> bool:
        return len(self.values) == 1

    def min(self) -> float:
        return float(np.min(self.values))


def _ratio(profile: BoundaryProfile) -> float | None:
    """Amplitude/period ratio if it is eps-independent, else None."""
    al, pl = profile.amplitude_law, profile.period_law
    if al.power != pl.power:
        return None
    return al.coeff / pl.coeff


def gamma_closed_form(profile: BoundaryProfile, chart: Chart, epsrel: float = 1e-10) -> GammaField:
    """Period average of the boundary Jacobian for periodic profiles."""
    if profile.kind == "flat":
        return GammaField.constant(chart, 1.0)
    if profile.amplitude_law.power > profile.period_law.power:
        # slopes vanish uniformly, so J -> 1
        return GammaField.constant(chart, 1.0)
    c = _ratio(profile)
    if c is None or not profile.is_periodic:
        raise UnsupportedProfile(
            f"no closed form for a {profile.kind} profile with these scaling laws; "
            "use gamma_empirical"
        )
    P = profile.generator_period
    kinks = []
    if profile.kind == "sawtooth":
        kinks = [1.0]
    elif profile.kind == "table":
        t0 = profile.samples[0][0]
        kinks = [s[0] - t0 for s in profile.samples[1:-1]]

    def integrand(t):
        d = profile.generator_derivative(np.asarray(t))
        return float(np.sqrt(1.0 + (c * d) ** 2))

    t0 = profile.samples[0][0] if profile.kind == "table" else 0.0
    pts = [t0] + [t0 + k for k in kinks] + [t0 + P]
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        val, _ = integrate.quad(integrand, a, b, epsabs=0.0, epsrel=epsrel, limit=200)
        total += val
    gamma_i = total / P
    # chart scale: J of phi_{i,eps} carries the factor |tangent|, so does phi_i
    return GammaField.constant(chart, gamma_i, "closed_form")


def gamma_sine_elliptic(amplitude_coeff: float, wavenumber: float = 1.0) -> float:
    """Closed form of the sine average through the complete elliptic integral."""
    from scipy.special import ellipe

    c2 = (amplitude_coeff * wavenumber) ** 2
    return 2.0 / math.pi * math.sqrt(1.0 + c2) * float(ellipe(c2 / (1.0 + c2)))


def _cell_integral(chart: Chart, profile: BoundaryProfile, eps: float, a: float, b: float,
                   nodes_per_period: int) -> float:
    period = profile.period(eps)
    span = b - a
    # subintervals of at most half a period, each with `nodes_per_period // 2` nodes
    gauss_n = max(4, nodes_per_period // 2)
    if period is None:
        m = max(1, int(math.ceil(span / (chart.scale * 1e-3))))
        sub = span / m
    else:
        sub = 0.5 * period / chart.scale
    cuts = np.linspace(a, b, max(1, int(math.ceil(span / sub - 1e-9))) + 1)
    bp = profile.breakpoints(eps, chart.scale * a, chart.scale * b) / chart.scale
    cuts = np.union1d(cuts, bp[(bp > a) & (bp < b)])
    xg, wg = np.polynomial.legendre.leggauss(gauss_n)
    lo, hi = cuts[:-1], cuts[1:]
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    x = (mid[:, None] + half[:, None] * xg[None, :]).ravel()
    w = (half[:, None] * wg[None, :]).ravel()
    J, _ = jacobian_n_minus_1(chart, profile, eps, x)
    # fixed-order reduction
    return float(np.sum(w * J))


def gamma_empirical(family: DomainFamily, chart: Chart, windows: int, eps: float | None = None,
                    nodes_per_period: int = 32) -> GammaField:
    """Window averages of ``J_1 phi_{i,eps}`` divided by ``J_1 phi_i``.

    Each of ``windows`` equal cells of the chart interval gets
    ``(1/|cell|) * integral_cell J`` computed with composite Gauss-Legendre
    quadrature, split at profile kinks.
    """
    if windows < 1:
        raise ValueError("windows must be >= 1")
    if nodes_per_period < 4:
        raise QuadratureResolutionError("need at least 4 quadrature nodes per oscillation period")
    eps = family.epsilons[-1] if eps is None else eps
    prof = family.profile
    a, b = chart.interval
    edges = np.linspace(a, b, windows + 1)
    vals = np.empty(windows)
    for k in range(windows):
        vals[k] = _cell_integral(chart, prof, eps, edges[k], edges[k + 1], nodes_per_period)
        vals[k] /= edges[k + 1] - edges[k]
    flat_J = chart.scale
    return GammaField(chart.name, edges, vals / flat_J, "empirical",
                      {"windows": windows, "eps": eps})


def gamma_quotient(gamma_i: GammaField, chart: Chart, tol: float = 1e-12) -> GammaField:
    """``gamma = gamma_i / J_1 phi_i`` on the chart's boundary cells."""
    mids = 0.5 * (gamma_i.edges[1:] + gamma_i.edges[:-1])
    J, _ = jacobian_n_minus_1(chart, None, None, mids)
    if np.any(J < tol):
        raise SingularChartError("flat parametrization has vanishing Jacobian")
    return GammaField(chart.name, gamma_i.edges.copy(), gamma_i.values / J, gamma_i.provenance,
                      dict(gamma_i.meta))


def gamma_i_empirical(family: DomainFamily, chart: Chart, windows: int, eps: float,
                      nodes_per_period: int = 32) -> GammaField:
    """Window averages of ``J_1 phi_{i,eps}`` itself (no division)."""
    g = gamma_empirical(family, chart, windows, eps, nodes_per_period)
    return GammaField(g.chart, g.edges, g.values * chart.scale, "empirical", g.meta)


def gamma_for_family(family: DomainFamily, windows: int = 8) -> dict[str, GammaField]:
    """gamma on every side: closed form when available, else empirical at
    the finest epsilon, and 1 on non-oscillating sides."""
    out = {}
    for name, ch in family.charts.items():
        if name not in family.oscillating:
            out[name] = GammaField.constant(ch, 1.0)
            continue
        try:
            out[name] = gamma_closed_form(family.profile, ch)
        except UnsupportedProfile:
            out[name] = gamma_empirical(family, ch, windows)
    return out


def cauchy_verdict(family: DomainFamily, chart: Chart, windows: int, tol: float = 1e-3) -> dict:
    """Cauchy test of window averages across the epsilon list."""
    fields = [gamma_empirical(family, chart, windows, e) for e in family.epsilons]
    gaps = [float(np.max(np.abs(f1.values - f0.values))) for f0, f1 in zip(fields, fields[1:])]
    converged = bool(gaps) and gaps[-1] <= tol
    return {"fields": fields, "gaps": gaps, "converged": converged}


def gamma_csv(fields: list[GammaField]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["chart", "cell_left", "cell_right", "gamma_value", "provenance"])
    for f in fields:
        prov = f.provenance
        if prov == "empirical":
            prov = f"empirical(windows={f.meta.get('windows')};eps={f.meta.get('eps'):.6g})"
        for k in range(len(f.values)):
            w.writerow([f.chart, f"{f.edges[k]:.10g}", f"{f.edges[k + 1]:.10g}",
                        f"{f.values[k]:.12g}", prov])
    return buf.getvalue()
