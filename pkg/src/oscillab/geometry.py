"""Reference domain, oscillating boundary profiles and chart maps.

The reference domain is an axis-aligned rectangle.  Each side is described
by an isometric chart ``Phi(x', s) = origin + x' * tangent + s * normal``
where ``normal`` is the outward unit normal, so ``s < 0`` points into the
domain.  Oscillating sides carry a :class:`BoundaryProfile` and the perturbed
boundary is the graph ``s = rho_eps(x')`` pushed through the chart.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class GeometryError(ValueError):
    """Raised for out-of-range arguments or inconsistent domain setups."""


@dataclass(frozen=True)
class ScaleLaw:
    """Power law ``eps -> coeff * eps**power``."""

    coeff: float = 1.0
    power: float = 1.0

    def __call__(self, eps: float) -> float:
        return self.coeff * eps ** self.power


_KINDS = ("flat", "sawtooth", "sine", "table")


@dataclass(frozen=True)
class BoundaryProfile:
    """Family ``rho_eps(x') = amplitude(eps) * G(x' / period(eps))``.

    ``G`` is the generator selected by ``kind``:

    * ``flat``: ``G = 0``
    * ``sawtooth``: triangle wave of slope ``+-slope`` and period 2 with
      ``G(0) = 0`` and ``G(1) = slope``
    * ``sine``: ``amplitude_coeff * sin(wavenumber * t)``
    * ``table``: piecewise-linear interpolation of ``samples``; extended
      periodically when ``periodic`` is set, clamped otherwise
    """

    kind: str = "flat"
    slope: float = 1.0
    amplitude_coeff: float = 1.0
    wavenumber: float = 1.0
    samples: tuple[tuple[float, float], ...] = ()
    periodic: bool = True
    amplitude_law: ScaleLaw = field(default_factory=ScaleLaw)
    period_law: ScaleLaw = field(default_factory=ScaleLaw)

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise GeometryError(f"unknown profile kind {self.kind!r}")
        if self.kind == "table":
            if len(self.samples) < 2:
                raise GeometryError("table profile needs at least two samples")
            t = np.array([s[0] for s in self.samples], dtype=float)
            if np.any(np.diff(t) <= 0):
                raise GeometryError("table sample coordinates must increase")

    # -- generator ---------------------------------------------------------

    @property
    def generator_period(self) -> float | None:
        if self.kind == "sawtooth":
            return 2.0
        if self.kind == "sine":
            return 2.0 * math.pi / abs(self.wavenumber)
        if self.kind == "table" and self.periodic:
            return self.samples[-1][0] - self.samples[0][0]
        return None

    @property
    def is_periodic(self) -> bool:
        return self.kind == "flat" or self.generator_period is not None

    def _table(self):
        t = np.array([s[0] for s in self.samples], dtype=float)
        v = np.array([s[1] for s in self.samples], dtype=float)
        return t, v

    def _wrap(self, t):
        t0 = self.samples[0][0]
        p = self.generator_period
        return t0 + np.mod(t - t0, p)

    def generator(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "flat":
            return np.zeros_like(t)
        if self.kind == "sawtooth":
            return self.slope * np.abs(t - 2.0 * np.round(t / 2.0))
        if self.kind == "sine":
            return self.amplitude_coeff * np.sin(self.wavenumber * t)
        tt, vv = self._table()
        if self.periodic:
            t = self._wrap(t)
        return np.interp(t, tt, vv)

    def generator_derivative(self, t):
        """One-sided (right) derivative at kinks."""
        t = np.asarray(t, dtype=float)
        if self.kind == "flat":
            return np.zeros_like(t)
        if self.kind == "sawtooth":
            frac = np.mod(t, 2.0)
            return np.where(frac < 1.0, self.slope, -self.slope)
        if self.kind == "sine":
            return self.amplitude_coeff * self.wavenumber * np.cos(self.wavenumber * t)
        tt, vv = self._table()
        slopes = np.diff(vv) / np.diff(tt)
        if self.periodic:
            t = self._wrap(t)
        idx = np.searchsorted(tt, t, side="right") - 1
        inside = (idx >= 0) & (idx < len(slopes))
        return np.where(inside, slopes[np.clip(idx, 0, len(slopes) - 1)], 0.0)

    def generator_bounds(self) -> tuple[float, float]:
        """(min G, max G) over one period or the whole table."""
        if self.kind == "flat":
            return 0.0, 0.0
        if self.kind == "sawtooth":
            return min(0.0, self.slope), max(0.0, self.slope)
        if self.kind == "sine":
            a = abs(self.amplitude_coeff)
            return -a, a
        v = [s[1] for s in self.samples]
        return min(v), max(v)

    def generator_lipschitz(self) -> float:
        if self.kind == "flat":
            return 0.0
        if self.kind == "sawtooth":
            return abs(self.slope)
        if self.kind == "sine":
            return abs(self.amplitude_coeff * self.wavenumber)
        tt, vv = self._table()
        return float(np.max(np.abs(np.diff(vv) / np.diff(tt))))

    @property
    def exterior(self) -> bool:
        """True when ``rho_eps >= 0`` everywhere (Omega inside Omega_eps)."""
        return self.generator_bounds()[0] >= 0.0

    @property
    def sign(self) -> str:
        return "exterior" if self.exterior else "signed"

    # -- rho ---------------------------------------------------------------

    def _check_eps(self, eps):
        if not eps > 0:
            raise GeometryError(f"epsilon must be positive, got {eps}")

    def rho(self, eps: float, x):
        self._check_eps(eps)
        return self.amplitude_law(eps) * self.generator(np.asarray(x, float) / self.period_law(eps))

    def drho(self, eps: float, x):
        self._check_eps(eps)
        scale = self.amplitude_law(eps) / self.period_law(eps)
        return scale * self.generator_derivative(np.asarray(x, float) / self.period_law(eps))

    def sup_abs(self, eps: float) -> float:
        lo, hi = self.generator_bounds()
        return self.amplitude_law(eps) * max(abs(lo), abs(hi))

    def lipschitz(self, eps: float) -> float:
        """ess-sup of ``|rho_eps'|``."""
        return self.amplitude_law(eps) / self.period_law(eps) * self.generator_lipschitz()

    def depth_below(self, eps: float) -> float:
        """``max(0, -min rho_eps)``: how far the graph dips into Omega."""
        return self.amplitude_law(eps) * max(0.0, -self.generator_bounds()[0])

    def period(self, eps: float) -> float | None:
        p = self.generator_period
        return None if p is None else p * self.period_law(eps)

    def breakpoints(self, eps: float, a: float, b: float) -> np.ndarray:
        """Chart coordinates in ``[a, b]`` where ``rho_eps`` has a kink."""
        L = self.period_law(eps)
        if self.kind == "sawtooth":
            k0, k1 = math.ceil(a / L - 1e-12), math.floor(b / L + 1e-12)
            return np.arange(k0, k1 + 1) * L
        if self.kind == "table":
            tt, _ = self._table()
            if not self.periodic:
                pts = tt * L
            else:
                p = self.generator_period
                n0 = math.floor((a / L - tt[0]) / p) - 1
                n1 = math.ceil((b / L - tt[0]) / p) + 1
                pts = np.concatenate([(tt[:-1] + n * p) * L for n in range(n0, n1 + 1)])
            return np.unique(pts[(pts >= a - 1e-14) & (pts <= b + 1e-14)])
        return np.zeros(0)


@dataclass(frozen=True)
class Chart:
    """Affine chart ``Phi(x', s) = origin + x' * tangent + s * normal``.

    ``scale`` is ``|tangent|``; isometric charts have ``scale == 1``.  The
    profile is stored in physical arc length along the side, so the chart
    view of it is ``rho_chart(x') = rho(scale * x')``.
    """

    name: str
    origin: tuple[float, float]
    direction: tuple[float, float]
    normal: tuple[float, float]
    length: float
    scale: float = 1.0

    @property
    def tangent(self) -> np.ndarray:
        return self.scale * np.asarray(self.direction, float)

    @property
    def interval(self) -> tuple[float, float]:
        return 0.0, self.length / self.scale

    @property
    def lipschitz_constants(self) -> tuple[float, float]:
        """(forward, backward) Lipschitz constants of Phi."""
        return max(self.scale, 1.0), max(1.0 / self.scale, 1.0)

    def phi(self, xp, s):
        xp = np.asarray(xp, float)
        s = np.asarray(s, float)
        o = np.asarray(self.origin, float)
        t = self.tangent
        n = np.asarray(self.normal, float)
        return o + xp[..., None] * t + s[..., None] * n

    def phi_inverse(self, p):
        p = np.asarray(p, float)
        d = p - np.asarray(self.origin, float)
        u = np.asarray(self.direction, float)
        n = np.asarray(self.normal, float)
        return d @ u / self.scale, d @ n

    def flat_param(self, xp):
        """``phi_i(x') = Phi_i(x', 0)``."""
        return self.phi(xp, np.zeros_like(np.asarray(xp, float)))

    def check_coordinate(self, xp):
        a, b = self.interval
        xp = np.asarray(xp, float)
        if np.any(xp < a - 1e-12) or np.any(xp > b + 1e-12):
            raise GeometryError(f"chart coordinate outside [{a}, {b}] on chart {self.name}")

    def rho(self, profile: BoundaryProfile, eps: float, xp):
        return profile.rho(eps, self.scale * np.asarray(xp, float))

    def drho(self, profile: BoundaryProfile, eps: float, xp):
        return self.scale * profile.drho(eps, self.scale * np.asarray(xp, float))

    def scaled(self, factor: float) -> "Chart":
        return Chart(self.name, self.origin, self.direction, self.normal, self.length, self.scale * factor)


def jacobian_exterior(jac) -> float:
    """(N-1)-dimensional Jacobian of an ``N x (N-1)`` Jacobian matrix.

    ``sqrt(sum_j det(jac with row j deleted)**2)``, the norm of the exterior
    product of the columns.
    """
    jac = np.atleast_2d(np.asarray(jac, float))
    n, m = jac.shape
    if m != n - 1:
        raise GeometryError(f"expected an N x (N-1) matrix, got {jac.shape}")
    total = 0.0
    for j in range(n):
        minor = np.delete(jac, j, axis=0)
        total += np.linalg.det(minor) ** 2 if m > 0 else 1.0
    return math.sqrt(total)


def rectangle_charts(width: float, height: float) -> dict[str, Chart]:
    """Isometric charts of the four sides, outward normals."""
    return {
        "bottom": Chart("bottom", (0.0, 0.0), (1.0, 0.0), (0.0, -1.0), width),
        "right": Chart("right", (width, 0.0), (0.0, 1.0), (1.0, 0.0), height),
        "top": Chart("top", (0.0, height), (1.0, 0.0), (0.0, 1.0), width),
        "left": Chart("left", (0.0, 0.0), (0.0, 1.0), (-1.0, 0.0), height),
    }


_ADJACENT = {
    "top": ("left", "right"),
    "bottom": ("left", "right"),
    "left": ("top", "bottom"),
    "right": ("top", "bottom"),
}


@dataclass(frozen=True)
class DomainFamily:
    """Rectangle ``[0, width] x [0, height]`` with oscillating sides.

    ``core_margin`` is the depth of the band along each oscillating side
    outside of which every transfer map is the identity (the core
    ``K_{eps_0}``).
    """

    profile: BoundaryProfile = field(default_factory=BoundaryProfile)
    epsilons: tuple[float, ...] = (0.2, 0.1, 0.05, 0.025)
    oscillating: tuple[str, ...] = ("top",)
    width: float = 1.0
    height: float = 1.0
    core_margin: float = 0.25

    def __post_init__(self):
        eps = self.epsilons
        if not eps or any(e <= 0 for e in eps):
            raise GeometryError("epsilons must be positive")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise GeometryError("epsilons must be strictly decreasing")
        for side in self.oscillating:
            if side not in _ADJACENT:
                raise GeometryError(f"unknown side {side!r}")
            if any(adj in self.oscillating for adj in _ADJACENT[side]):
                raise GeometryError("adjacent oscillating sides are not supported")
        if len(set(self.oscillating)) != len(self.oscillating):
            raise GeometryError("duplicate oscillating side")
        limit = min(self.width, self.height) / (2.0 if len(self.oscillating) > 1 else 1.0)
        if not 0 < self.core_margin < limit:
            raise GeometryError("core_margin must lie inside the domain")

    @property
    def charts(self) -> dict[str, Chart]:
        return rectangle_charts(self.width, self.height)

    def chart(self, side: str) -> Chart:
        return self.charts[side]

    @property
    def reference_area(self) -> float:
        return self.width * self.height

    def area(self, eps: float, n: int = 200_001) -> float:
        """``|Omega_eps|`` by the trapezoid rule on the graph (exact at kinks)."""
        total = self.reference_area
        for side in self.oscillating:
            ch = self.chart(side)
            a, b = ch.interval
            x = np.union1d(np.linspace(a, b, n), self.profile.breakpoints(eps, a, b))
            total += np.trapezoid(ch.rho(self.profile, eps, x), x) * ch.scale
        return float(total)

    def hausdorff_bound(self, eps: float) -> float:
        return self.profile.sup_abs(eps) if self.oscillating else 0.0


# -- chart-level maps ------------------------------------------------------


def rho(profile: BoundaryProfile, eps: float, xp, chart: Chart | None = None):
    if chart is not None:
        chart.check_coordinate(xp)
        return chart.rho(profile, eps, xp)
    return profile.rho(eps, xp)


def t_map(profile: BoundaryProfile, eps: float, xp, s, chart: Chart | None = None):
    """``T_eps(x', s)``: the piecewise-linear vertical stretch of the chart
    cube carrying ``s = 0`` onto the graph of ``rho_eps``."""
    s = np.asarray(s, float)
    if np.any(np.abs(s) > 1.0):
        raise GeometryError("s must lie in [-1, 1]")
    r = chart.rho(profile, eps, xp) if chart is not None else profile.rho(eps, xp)
    r = np.broadcast_to(r, np.broadcast(s, r).shape)
    s = np.broadcast_to(s, r.shape)
    lower = s + s * r + r
    upper = s - s * r + r
    return np.broadcast_to(np.asarray(xp, float), r.shape), np.where(s < 0, lower, upper)


def boundary_param(chart: Chart, profile: BoundaryProfile, eps: float, xp):
    """``phi_{i,eps}(x') = Phi_i(T_eps(x', 0))``."""
    chart.check_coordinate(xp)
    return chart.phi(xp, chart.rho(profile, eps, xp))


def jacobian_n_minus_1(chart: Chart, profile: BoundaryProfile, eps: float | None, xp):
    """``J_1 phi_{i,eps}(x')`` (``eps=None`` gives the flat ``phi_i``).

    Returns ``(J, at_kink)``; at a kink the right derivative is used and the
    flag is set.
    """
    xp = np.atleast_1d(np.asarray(xp, float))
    t = chart.tangent
    n = np.asarray(chart.normal, float)
    if eps is None:
        d = np.zeros_like(xp)
        kink = np.zeros(xp.shape, bool)
    else:
        d = chart.drho(profile, eps, xp)
        a, b = chart.interval
        bp = profile.breakpoints(eps, chart.scale * a, chart.scale * b) / chart.scale
        kink = np.zeros(xp.shape, bool)
        if bp.size:
            bp = np.sort(bp)
            j = np.clip(np.searchsorted(bp, xp), 1, len(bp) - 1) if len(bp) > 1 else np.zeros(len(xp), int)
            near = np.minimum(np.abs(xp - bp[j]), np.abs(xp - bp[np.maximum(j - 1, 0)]))
            kink = near < 1e-13
    cols = t[None, :] + d[:, None] * n[None, :]
    # N = 2: the 1x1 minors of the 2x1 Jacobian are its two entries
    J = np.hypot(cols[:, 0], cols[:, 1])
    return J, kink


def theta(family: DomainFamily, eps: float, p):
    """Interior map ``theta_eps: Omega -> K_eps``.

    Identity for exterior profiles.  For signed profiles each band of depth
    ``core_margin`` along an oscillating side is compressed linearly so that
    the side lands on the flat line ``s = -depth_below(eps)``, which lies in
    ``Omega`` and ``Omega_eps``.  Points deeper than the band are fixed.
    """
    p = np.array(p, dtype=float, copy=True)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    tol = 1e-12
    if np.any(p[:, 0] < -tol) or np.any(p[:, 0] > family.width + tol) or \
            np.any(p[:, 1] < -tol) or np.any(p[:, 1] > family.height + tol):
        raise GeometryError("theta: point outside the reference domain")
    if family.profile.exterior or not family.oscillating:
        return p[0] if single else p
    delta = family.core_margin
    a = family.profile.depth_below(eps)
    if a >= delta:
        raise GeometryError("profile dips below the core margin")
    for side in family.oscillating:
        ch = family.chart(side)
        xp, s = ch.phi_inverse(p)
        band = s > -delta
        s_new = -delta + (s[band] + delta) * (delta - a) / delta
        p[band] = ch.phi(xp[band], s_new)
    return p[0] if single else p


def theta_inverse_jacobian(family: DomainFamily, eps: float, p) -> np.ndarray:
    """``J_N theta_eps^{-1}`` at points of ``K_eps``."""
    p = np.atleast_2d(np.asarray(p, float))
    out = np.ones(len(p))
    if family.profile.exterior:
        return out
    delta = family.core_margin
    a = family.profile.depth_below(eps)
    for side in family.oscillating:
        _, s = family.chart(side).phi_inverse(p)
        out[s > -delta] = delta / (delta - a)
    return out


def in_core(family: DomainFamily, p, tol: float = 1e-12) -> np.ndarray:
    """Mask of points in ``K_{eps_0}`` (at least ``core_margin`` deep)."""
    p = np.atleast_2d(np.asarray(p, float))
    mask = np.ones(len(p), bool)
    for side in family.oscillating:
        _, s = family.chart(side).phi_inverse(p)
        mask &= s <= -family.core_margin + tol
    return mask


def in_perturbed(family: DomainFamily, eps: float, p, tol: float = 1e-12) -> np.ndarray:
    """Membership oracle for ``Omega_eps`` via the graph inequality."""
    p = np.atleast_2d(np.asarray(p, float))
    ok = np.ones(len(p), bool)
    for side, ch in family.charts.items():
        xp, s = ch.phi_inverse(p)
        if side in family.oscillating:
            a, b = ch.interval
            inside = (xp >= a - tol) & (xp <= b + tol)
            r = ch.rho(family.profile, eps, np.clip(xp, a, b))
            ok &= np.where(inside, s <= r + tol, True)
        else:
            ok &= s <= tol
    return ok


# -- hypothesis checks -----------------------------------------------------


@dataclass
class HypothesisReport:
    lipschitz: dict[float, float]
    sup_rho: dict[float, float]
    sign: str
    passes: dict[str, bool]
    notes: list[str]

    @property
    def ok(self) -> bool:
        return all(self.passes.values())


def check_hypotheses(family: DomainFamily, samples: int = 10_000) -> HypothesisReport:
    """Measure the constants behind (H), (F) and (I) on the configured family."""
    prof = family.profile
    lip: dict[float, float] = {}
    sup: dict[float, float] = {}
    notes: list[str] = []
    for eps in family.epsilons:
        lmax = smax = 0.0
        for side in family.oscillating:
            ch = family.chart(side)
            a, b = ch.interval
            x = np.linspace(a, b, samples)
            bp = prof.breakpoints(eps, ch.scale * a, ch.scale * b) / ch.scale
            # sample derivatives off the kinks
            xm = 0.5 * (np.union1d(x, bp)[1:] + np.union1d(x, bp)[:-1])
            lmax = max(lmax, float(np.max(np.abs(ch.drho(prof, eps, xm)), initial=0.0)), prof.lipschitz(eps))
            smax = max(smax, float(np.max(np.abs(ch.rho(prof, eps, np.union1d(x, bp))), initial=0.0)))
        lip[eps] = lmax
        sup[eps] = smax

    pa, pl = prof.amplitude_law.power, prof.period_law.power
    flat = prof.kind == "flat" or not family.oscillating
    passes = {}
    # (H): uniform convergence rho -> 0 and graph inside the chart cube
    h_ok = flat or (pa > 0 and all(v < 1.0 for v in sup.values()))
    passes["H"] = bool(h_ok)
    if not h_ok:
        notes.append("(H) rho_eps does not vanish uniformly or leaves the chart")
    # (F)(i): eps-uniform Lipschitz bound; decided by the scaling exponent
    f1 = flat or prof.generator_lipschitz() == 0 or pa >= pl
    passes["F_i"] = bool(f1)
    if not f1:
        notes.append(
            "(F)(i) fails: |rho_eps'| grows like eps^%g; family is outside the "
            "Lipschitz-deformation class" % (pa - pl)
        )
    # (F)(ii): existence of the weak limit of J
    f2 = flat or pa > pl or prof.is_periodic
    passes["F_ii"] = bool(f2)
    if not f2:
        notes.append("(F)(ii) not guaranteed for a non-periodic table; use the empirical Cauchy test")
    # (I): band compression must stay inside the core margin
    i_ok = flat or prof.exterior or all(prof.depth_below(e) < family.core_margin for e in family.epsilons)
    passes["I"] = bool(i_ok)
    if not i_ok:
        notes.append("(I) profile dips deeper than the core margin")
    return HypothesisReport(lip, sup, "flat" if flat else prof.sign, passes, notes)


def sample_profile_points(profile: BoundaryProfile, eps: float, a: float, b: float,
                          spacing: float) -> np.ndarray:
    """Chart coordinates in ``[a, b]`` with gaps ``<= spacing``.

    Kinks are included and every smooth piece between them is subdivided
    evenly.
    """
    knots = np.union1d([a, b], profile.breakpoints(eps, a, b))
    knots = knots[(knots >= a) & (knots <= b)]
    pieces = [np.array([a])]
    for lo, hi in zip(knots[:-1], knots[1:]):
        if hi - lo < 1e-14:
            continue
        n = max(1, math.ceil((hi - lo) / spacing - 1e-9))
        pieces.append(np.linspace(lo, hi, n + 1)[1:])
    return np.concatenate(pieces)


def profile_from_spec(kind: str, **kw) -> BoundaryProfile:
    """Convenience constructor accepting plain numbers for the laws."""
    for key in ("amplitude_law", "period_law"):
        v = kw.get(key)
        if isinstance(v, (int, float)):
            kw[key] = ScaleLaw(float(v), 1.0)
        elif isinstance(v, dict):
            kw[key] = ScaleLaw(float(v.get("coeff", 1.0)), float(v.get("power", 1.0)))
        elif isinstance(v, Sequence) and not isinstance(v, str):
            kw[key] = ScaleLaw(float(v[0]), float(v[1]))
    if "samples" in kw:
        kw["samples"] = tuple((float(a), float(b)) for a, b in kw["samples"])
    return BoundaryProfile(kind=kind, **kw)
