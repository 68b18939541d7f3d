"""Scalar nonlinearities, the C^2 cutoff, and the discrete load maps.

A :class:`LoadMap` turns a nodal vector ``u`` into the functional
``psi -> int f(u) psi + int w g(u) psi`` (``w = gamma`` on the reference
domain) and its derivative into the matrix
``int f'(e) v z + int w g'(e) v z``.  Nonlinearities are evaluated at
quadrature points of the interpolated field.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .fem import _TRI_BARY, FemSystem, _csr


@dataclass(frozen=True)
class Nonlinearity:
    """``u -> (f(u), f'(u), f''(u))`` with a name and parameters."""

    name: str
    params: dict
    f0: Callable
    f1: Callable
    f2: Callable
    cutoff: float = math.inf

    def __call__(self, u):
        return self.f0(np.asarray(u, float))

    def d1(self, u):
        return self.f1(np.asarray(u, float))

    def d2(self, u):
        return self.f2(np.asarray(u, float))

    @property
    def is_zero(self) -> bool:
        return self.name == "constant" and self.params.get("c", 0.0) == 0.0


def _const(c):
    return lambda u: np.full_like(u, c, dtype=float)


def bistable(a: float = 1.0, b: float = 1.0) -> Nonlinearity:
    """``b u - a u^3``."""
    return Nonlinearity("bistable", {"a": a, "b": b},
                        lambda u: b * u - a * u ** 3,
                        lambda u: b - 3 * a * u ** 2,
                        lambda u: -6 * a * u)


def logistic(r: float = 1.0) -> Nonlinearity:
    """``r u (1 - u)``."""
    return Nonlinearity("logistic", {"r": r},
                        lambda u: r * u * (1 - u),
                        lambda u: r * (1 - 2 * u),
                        lambda u: np.full_like(u, -2 * r, dtype=float))


def sine(a: float = 1.0, k: float = 1.0) -> Nonlinearity:
    """``a sin(k u)``."""
    return Nonlinearity("sine", {"a": a, "k": k},
                        lambda u: a * np.sin(k * u),
                        lambda u: a * k * np.cos(k * u),
                        lambda u: -a * k * k * np.sin(k * u))


def linear(c: float = 1.0) -> Nonlinearity:
    """``c u``."""
    return Nonlinearity("linear", {"c": c}, lambda u: c * u, _const(c), _const(0.0))


def constant(c: float = 0.0) -> Nonlinearity:
    return Nonlinearity("constant", {"c": c}, _const(c), _const(0.0), _const(0.0))


REGISTRY = {
    "bistable": bistable,
    "logistic": logistic,
    "sine": sine,
    "linear": linear,
    "constant": constant,
}


def make(name: str, params: dict | None = None, cutoff_at: float | None = None) -> Nonlinearity:
    if name not in REGISTRY:
        raise KeyError(f"unknown nonlinearity {name!r}; choose from {sorted(REGISTRY)}")
    nl = REGISTRY[name](**(params or {}))
    if cutoff_at is not None and math.isfinite(cutoff_at):
        nl = cutoff(nl, cutoff_at)
    return nl


# quintic blend pieces on t in [0, 1]:
#   a' = (1-t)^3 (1+3t): a(0)=0, a'(0)=1, a''(0)=0, a'(1)=a''(1)=0
#   b' = t (1-t)^2:      b(0)=0, b'(0)=0, b''(0)=1, b'(1)=b''(1)=0
def _a(t):
    return t - 2 * t ** 3 + 2 * t ** 4 - 0.6 * t ** 5


def _a1(t):
    return (1 - t) ** 3 * (1 + 3 * t)


def _a2(t):
    return -12 * t * (1 - t) ** 2


def _b(t):
    return 0.5 * t ** 2 - 2 * t ** 3 / 3 + 0.25 * t ** 4


def _b1(t):
    return t * (1 - t) ** 2


def _b2(t):
    return (1 - t) * (1 - 3 * t)


def cutoff(raw: Nonlinearity, U: float) -> Nonlinearity:
    """C^2 clamp: ``raw`` on ``[-U, U]``, constant beyond ``2U``.

    On ``U <= |u| <= 2U`` the value is the quintic Hermite extension
    matching value, slope and curvature at ``|u| = U`` and with zero slope
    and curvature at ``2U``.  Applying the cutoff twice changes nothing.
    ``U = inf`` returns ``raw`` unchanged.
    """
    if not math.isfinite(U):
        return raw
    if U <= 0:
        raise ValueError("cutoff bound must be positive")
    inner = raw

    def parts(u):
        u = np.asarray(u, float)
        s = np.where(u < 0, -1.0, 1.0)
        edge = s * U
        t = np.clip((np.abs(u) - U) / U, 0.0, 1.0)
        v0, v1, v2 = inner.f0(edge), inner.f1(edge), inner.f2(edge)
        return u, s, t, v0, v1, v2, np.abs(u) <= U

    def f0(u):
        u, s, t, v0, v1, v2, mid = parts(u)
        ext = v0 + s * U * v1 * _a(t) + U * U * v2 * _b(t)
        return np.where(mid, inner.f0(u), ext)

    def f1(u):
        u, s, t, v0, v1, v2, mid = parts(u)
        ext = v1 * _a1(t) + s * U * v2 * _b1(t)
        return np.where(mid, inner.f1(u), ext)

    def f2(u):
        u, s, t, v0, v1, v2, mid = parts(u)
        ext = s * v1 * _a2(t) / U + v2 * _b2(t)
        ext = np.where(t >= 1.0, 0.0, ext)
        return np.where(mid, inner.f2(u), ext)

    return Nonlinearity(raw.name, dict(raw.params), f0, f1, f2, cutoff=U)


@dataclass
class LoadMap:
    """Discrete ``h(u)`` on one assembled system."""

    sys: FemSystem
    f: Nonlinearity
    g: Nonlinearity
    _iq: tuple = field(default=None, repr=False)

    def __post_init__(self):
        T = self.sys.mesh.triangles
        w = self.sys.tri_area / 3.0
        self._iq = (T, w)

    def _interior_values(self, u):
        T, _ = self._iq
        return u[T] @ _TRI_BARY.T  # (nt, 3): value at each quadrature point

    def apply(self, u) -> np.ndarray:
        u = np.asarray(u, float)
        n = self.sys.n
        T, w = self._iq
        fq = self.f(self._interior_values(u)) * w[:, None]  # (nt, q)
        out = np.zeros(n)
        np.add.at(out, T.ravel(), (fq @ _TRI_BARY).ravel())
        bq = self.sys.bq
        gv = self.g(bq.interp(u)) * self.sys.bweight
        out += bq.load(n, gv)
        return out

    def interior_jacobian(self, e) -> sp.csr_matrix:
        e = np.asarray(e, float)
        T, w = self._iq
        dq = self.f.d1(self._interior_values(e)) * w[:, None]  # (nt, q)
        loc = np.einsum("tq,qi,qj->tij", dq, _TRI_BARY, _TRI_BARY)
        rows = np.repeat(T, 3, axis=1).ravel()
        cols = np.tile(T, (1, 3)).ravel()
        return _csr(loc.ravel(), rows, cols, self.sys.n)

    def boundary_jacobian(self, e) -> sp.csr_matrix:
        bq = self.sys.bq
        return bq.matrix(self.sys.n, self.sys.bweight * self.g.d1(bq.interp(np.asarray(e, float))))

    def jacobian(self, e) -> sp.csr_matrix:
        return (self.interior_jacobian(e) + self.boundary_jacobian(e)).tocsr()


def apply_h(load: LoadMap, u) -> np.ndarray:
    return load.apply(u)


def apply_h_prime(load: LoadMap, e) -> sp.csr_matrix:
    return load.jacobian(e)
