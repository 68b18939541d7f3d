"""Semiflow, equilibria and attractor samples of ``M u' + K u = h(u)``.

Time stepping offers a linearly implicit (IMEX) Euler scheme and a fully
implicit Euler scheme with Newton.  Equilibria come from a damped Newton
multistart; their stability is read off the spectrum of the Jacobian
``K - h'(e)``.  Attractor samples are equilibria plus snapshots along
orbits leaving the unstable equilibria.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import EigenError, FemSystem, dual_norm, eig_smallest, norms
from .nonlinear import LoadMap

SCHEMES = ("imex_euler", "implicit_euler")


class StepFailure(RuntimeError):
    pass


class NoEquilibrium(RuntimeError):
    pass


# -- time stepping ---------------------------------------------------------


class Stepper:
    """One-step map with the matrix ``M + dt K`` factorized once."""

    def __init__(self, sys: FemSystem, load: LoadMap, dt: float, scheme: str = "imex_euler",
                 newton_tol: float = 1e-10, newton_maxit: int = 12):
        if dt <= 0:
            raise ValueError("dt must be positive")
        if scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        self.sys, self.load, self.dt, self.scheme = sys, load, dt, scheme
        self.newton_tol, self.newton_maxit = newton_tol, newton_maxit
        self.A = sp.csc_matrix(sys.M + dt * sys.K)
        self._lu = spla.splu(self.A)

    def __call__(self, u):
        u = np.asarray(u, float)
        M, dt = self.sys.M, self.dt
        rhs = M @ u + dt * self.load.apply(u)
        u1 = self._lu.solve(rhs)
        if self.scheme == "imex_euler":
            return u1
        # backward Euler: G(v) = (M + dt K) v - dt h(v) - M u = 0, IMEX value as guess
        b = M @ u
        scale = max(np.linalg.norm(b), 1e-300)
        for _ in range(self.newton_maxit):
            G = self.A @ u1 - dt * self.load.apply(u1) - b
            if np.linalg.norm(G) <= self.newton_tol * scale:
                return u1
            J = sp.csc_matrix(self.A - dt * self.load.jacobian(u1))
            u1 = u1 - spla.spsolve(J, G)
            if not np.all(np.isfinite(u1)):
                break
        G = self.A @ u1 - dt * self.load.apply(u1) - b
        if np.all(np.isfinite(u1)) and np.linalg.norm(G) <= self.newton_tol * scale:
            return u1
        raise StepFailure(f"implicit Euler Newton did not converge at dt={dt:g}; retry with dt={dt / 2:g}")


def step(sys: FemSystem, load: LoadMap, u, dt: float, scheme: str = "imex_euler"):
    return Stepper(sys, load, dt, scheme)(u)


@dataclass
class Trajectory:
    times: np.ndarray
    snapshots: np.ndarray  # (n_snap, n)
    terminal: np.ndarray
    terminal_time: float
    residual: float
    converged: bool
    residual_history: list = field(default_factory=list)
    checkpoints: dict = field(default_factory=dict)


def integrate(sys: FemSystem, load: LoadMap, u0, T: float, dt: float, scheme: str = "imex_euler",
              stride: int = 0, checkpoints=(), tol: float = 1e-8, stop_early: bool = True,
              stepper: Stepper | None = None) -> Trajectory:
    """March from ``u0`` to ``T``.

    Snapshots every ``stride`` steps (0: only start and end); the states
    at the requested ``checkpoints`` are stored by time.  With
    ``stop_early`` the run ends once ``||u^{n+1}-u^n||_{L2}/dt < tol``;
    later checkpoints then receive the terminal state.
    """
    if T < dt:
        raise ValueError("T must be at least dt")
    st = stepper or Stepper(sys, load, dt, scheme)
    nsteps = int(round(T / dt))
    cp_steps = {int(round(t / dt)): t for t in checkpoints}
    u = np.array(u0, float)
    times, snaps = [0.0], [u.copy()]
    cps = {}
    if 0 in cp_steps:
        cps[cp_steps[0]] = u.copy()
    hist = []
    res = math.inf
    converged = False
    n = 0
    for n in range(1, nsteps + 1):
        u_new = st(u)
        d = u_new - u
        res = math.sqrt(max(0.0, float(d @ (sys.M @ d)))) / dt
        hist.append(res)
        u = u_new
        if not np.all(np.isfinite(u)):
            raise StepFailure(f"non-finite state at t={n * dt:g}")
        if n in cp_steps:
            cps[cp_steps[n]] = u.copy()
        if stride and n % stride == 0:
            times.append(n * dt)
            snaps.append(u.copy())
        if res < tol:
            converged = True
            if stop_early:
                break
    if times[-1] != n * dt:
        times.append(n * dt)
        snaps.append(u.copy())
    for k, t in cp_steps.items():
        cps.setdefault(t, u.copy())
    return Trajectory(np.array(times), np.array(snaps), u, n * dt, res, converged, hist, cps)


# -- equilibria ------------------------------------------------------------


@dataclass
class Equilibrium:
    e: np.ndarray
    residual: float
    lambda_min: float
    hyperbolic: bool
    basin: list
    eigenvalues: np.ndarray
    unstable: np.ndarray  # (n, m) unstable directions, H1-normalized
    h1: float
    mean: float


@dataclass
class EquilibriumSet:
    members: list
    seeds_tried: int
    newton_histories: list = field(default_factory=list)
    delta_hyp: float = 1e-3

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    @property
    def vectors(self) -> list:
        return [m.e for m in self.members]

    @property
    def all_hyperbolic(self) -> bool:
        return all(m.hyperbolic for m in self.members)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "residual", "lambda_min", "hyperbolic", "H1_norm"])
        for i, m in enumerate(self.members):
            w.writerow([i, f"{m.residual:.6e}", f"{m.lambda_min:.10f}", int(m.hyperbolic), f"{m.h1:.10f}"])
        return buf.getvalue()


def default_seeds(sys: FemSystem, seed: int = 0, n_bumps: int = 8, constants=(-2, -1, 0, 1, 2)) -> list:
    """Constant states plus smooth random Gaussian bumps (deterministic in ``seed``)."""
    V = sys.mesh.vertices
    out = [np.full(len(V), float(c)) for c in constants]
    rng = np.random.default_rng(seed)
    lo, hi = V.min(axis=0), V.max(axis=0)
    for _ in range(n_bumps):
        c = lo + rng.random(2) * (hi - lo)
        r = 0.1 + 0.2 * rng.random()
        a = rng.uniform(-2.0, 2.0)
        base = rng.uniform(-1.0, 1.0)
        out.append(base + a * np.exp(-np.sum((V - c) ** 2, axis=1) / (2 * r * r)))
    return out


def newton(sys: FemSystem, load: LoadMap, e0, tol: float = 1e-9, maxit: int = 40):
    """Damped Newton on ``F(e) = K e - h(e)``; residual in the discrete H^-1 norm.

    Returns ``(e, residual, history, converged)``.
    """
    e = np.array(e0, float)

    def F(v):
        return sys.K @ v - load.apply(v)

    Fe = F(e)
    r = dual_norm(sys, Fe)
    hist = [r]
    for _ in range(maxit):
        if r <= tol:
            return e, r, hist, True
        J = sp.csc_matrix(sys.K - load.jacobian(e))
        try:
            d = spla.splu(J).solve(Fe)
        except RuntimeError:
            return e, r, hist, False
        if not np.all(np.isfinite(d)):
            return e, r, hist, False
        t = 1.0
        while t > 1e-4:
            cand = e - t * d
            Fc = F(cand)
            rc = dual_norm(sys, Fc) if np.all(np.isfinite(Fc)) else math.inf
            if rc < (1 - 1e-4 * t) * r or rc <= tol:
                break
            t *= 0.5
        else:
            return e, r, hist, False
        e, Fe, r = cand, Fc, rc
        hist.append(r)
    return e, r, hist, r <= tol


def jacobian_operator(sys: FemSystem, load: LoadMap, e) -> sp.csr_matrix:
    """Linearization ``K - h'(e)`` of the equilibrium map (governs stability)."""
    return (sys.K - load.jacobian(e)).tocsr()


def linearized_operator(sys: FemSystem, load: LoadMap, e, convention: str = "robin") -> sp.csr_matrix:
    """``K - M_{f'(e)} + B_{g'(e)}`` (``robin``) or the Jacobian ``K - h'(e)``.

    The ``robin`` form treats ``g'(e)`` as a Robin coefficient, so a
    positive boundary slope raises the spectrum.
    """
    if convention == "jacobian":
        return jacobian_operator(sys, load, e)
    if convention != "robin":
        raise ValueError("convention must be 'robin' or 'jacobian'")
    return (sys.K - load.interior_jacobian(e) + load.boundary_jacobian(e)).tocsr()


def linearized_spectrum(sys: FemSystem, load: LoadMap, e, k: int = 5, convention: str = "robin",
                        seed: int = 0):
    """``k`` smallest eigenpairs of the linearization about ``e``."""
    return eig_smallest(linearized_operator(sys, load, e, convention), sys.M, k, seed=seed)


def _classify(sys, load, e, k, delta_hyp, seed):
    k = min(k, sys.n - 1)
    lams, W = eig_smallest(jacobian_operator(sys, load, e), sys.M, k, seed=seed)
    unstable = W[:, lams < -delta_hyp]
    for j in range(unstable.shape[1]):
        unstable[:, j] /= norms(sys, unstable[:, j])["H1"]
    hyperbolic = bool(np.min(np.abs(lams)) > delta_hyp)
    return lams, unstable, hyperbolic


def find_equilibria(sys: FemSystem, load: LoadMap, seeds=None, *, seed: int = 0, tol: float = 1e-9,
                    merge_radius: float = 1e-4, delta_hyp: float = 1e-3, k_eig: int = 6,
                    maxit: int = 40) -> EquilibriumSet:
    """Newton multistart, merging roots closer than ``merge_radius`` in H1."""
    seeds = default_seeds(sys, seed) if seeds is None else list(seeds)
    if not seeds:
        raise ValueError("at least one seed is required")
    roots: list[tuple[np.ndarray, float, list]] = []
    hists = []
    for i, s0 in enumerate(seeds):
        e, r, hist, ok = newton(sys, load, s0, tol, maxit)
        hists.append(hist)
        if not ok:
            continue
        for root in roots:
            d = e - root[0]
            if math.sqrt(max(0.0, float(d @ (sys.K @ d)))) < merge_radius:
                root[2].append(i)
                break
        else:
            roots.append((e, r, [i]))
    if not roots:
        raise NoEquilibrium(f"none of {len(seeds)} seeds converged")
    ones = np.ones(sys.n)
    area = float(ones @ (sys.M @ ones))
    members = []
    for e, r, basin in roots:
        lams, unstable, hyp = _classify(sys, load, e, k_eig, delta_hyp, seed)
        members.append(Equilibrium(e, r, float(lams[0]), hyp, basin, lams, unstable,
                                   norms(sys, e)["H1"], float(ones @ (sys.M @ e)) / area))
    members.sort(key=lambda m: (round(m.mean, 8), round(m.h1, 8)))
    return EquilibriumSet(members, len(seeds), hists, delta_hyp)


# -- attractor samples -----------------------------------------------------


@dataclass
class AttractorSample:
    points: list
    labels: list  # "eq:i", "orbit:i:+/-", "terminal:j"
    transient: list
    equilibria: EquilibriumSet

    @property
    def has_transients(self) -> bool:
        return any(self.transient)


def _nearest(sys, u, eqs):
    best, bd = -1, math.inf
    for i, m in enumerate(eqs):
        d = u - m.e
        dist = math.sqrt(max(0.0, float(d @ (sys.K @ d))))
        if dist < bd:
            best, bd = i, dist
    return best, bd


def _arc_sample(sys, states, spacing):
    """Thin a state sequence to points about ``spacing`` apart in H1 arc length."""
    kept = [states[0]]
    acc = 0.0
    prev = states[0]
    for s in states[1:]:
        d = s - prev
        acc += math.sqrt(max(0.0, float(d @ (sys.K @ d))))
        prev = s
        if acc >= spacing:
            kept.append(s)
            acc = 0.0
    if kept[-1] is not states[-1]:
        kept.append(states[-1])
    return kept


def sample_attractor(sys: FemSystem, load: LoadMap, eqs: EquilibriumSet, seeds=(), T_max: float = 40.0,
                     dt: float = 1e-2, kick: float = 1e-3, spacing: float = 1e-2, orbits: bool = True,
                     tol: float = 1e-8) -> AttractorSample:
    """Equilibria, orbits leaving unstable equilibria, and terminal states of ``seeds``.

    Orbit runs start at ``e +- kick * w`` for every unstable direction ``w``
    (H1-normalized) and are recorded every ``spacing`` of H1 arc length.
    Runs that do not equilibrate by ``T_max`` are marked transient.
    """
    st = Stepper(sys, load, dt)
    pts, labels, trans = [], [], []
    for i, m in enumerate(eqs):
        pts.append(m.e)
        labels.append(f"eq:{i}")
        trans.append(False)
    if orbits:
        for i, m in enumerate(eqs):
            for j in range(m.unstable.shape[1]):
                for sgn, tag in ((1.0, "+"), (-1.0, "-")):
                    u0 = m.e + sgn * kick * m.unstable[:, j]
                    tr = integrate(sys, load, u0, T_max, dt, stride=1, tol=tol, stepper=st)
                    for s in _arc_sample(sys, list(tr.snapshots), spacing)[1:]:
                        pts.append(s)
                        labels.append(f"orbit:{i}.{j}{tag}")
                        trans.append(not tr.converged)
    for j, s0 in enumerate(seeds):
        tr = integrate(sys, load, s0, T_max, dt, tol=tol, stepper=st)
        pts.append(tr.terminal)
        k, _ = _nearest(sys, tr.terminal, eqs)
        labels.append(f"terminal:{j}->eq:{k}")
        trans.append(not tr.converged)
    return AttractorSample(pts, labels, trans, eqs)


def snapshot_dump(traj: Trajectory) -> str:
    """Snapshots as plain text: one ``FIELD t=<time> n=<size>`` block each."""
    buf = io.StringIO()
    for t, u in zip(traj.times, traj.snapshots):
        buf.write(f"FIELD t={t:.10g} n={len(u)}\n")
        buf.write("\n".join(f"{v:.16e}" for v in u))
        buf.write("\n")
    return buf.getvalue()
