"""P1 finite elements for the ``-Laplace + 1`` form with boundary terms.

The system holds exact P1 stiffness and mass matrices, weighted boundary
mass matrices from a 2-point Gauss rule per boundary edge, and the
quadrature tables reused by the nonlinear load maps.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import TriMesh

DIRECT_LIMIT = 50_000

# 2-point Gauss on [0, 1]
_G2_T = np.array([0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0)])
_G2_W = np.array([0.5, 0.5])
# degree-2 interior rule: points (1/6, 1/6, 2/3) and permutations, equal weights
_TRI_BARY = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])


class AssemblyError(ValueError):
    pass


class SolverError(RuntimeError):
    def __init__(self, msg, history=None):
        super().__init__(msg)
        self.history = [] if history is None else list(history)


class EigenError(RuntimeError):
    pass


def _weight_fn(w) -> Callable:
    if w is None:
        return lambda xp: np.ones_like(xp)
    if callable(w):
        return lambda xp: np.asarray(w(xp), float) * np.ones_like(xp)
    c = float(w)
    return lambda xp: np.full_like(xp, c)


@dataclass
class BoundaryQuadrature:
    """Quadrature nodes on boundary edges.

    ``vid`` holds the two edge vertices for every node, ``phi`` the two
    P1 basis values there, ``measure`` the arc-length weight, ``side`` and
    ``xp`` the chart tag and coordinate.
    """

    vid: np.ndarray
    phi: np.ndarray
    measure: np.ndarray
    side: np.ndarray
    xp: np.ndarray

    def matrix(self, n: int, weight: np.ndarray | None = None) -> sp.csr_matrix:
        m = self.measure if weight is None else self.measure * weight
        a, b = self.vid[:, 0], self.vid[:, 1]
        pa, pb = self.phi[:, 0], self.phi[:, 1]
        rows = np.concatenate([a, a, b, b])
        cols = np.concatenate([a, b, a, b])
        vals = np.concatenate([m * pa * pa, m * pa * pb, m * pb * pa, m * pb * pb])
        return _csr(vals, rows, cols, n)

    def load(self, n: int, values: np.ndarray) -> np.ndarray:
        out = np.zeros(n)
        np.add.at(out, self.vid[:, 0], self.measure * values * self.phi[:, 0])
        np.add.at(out, self.vid[:, 1], self.measure * values * self.phi[:, 1])
        return out

    def interp(self, u: np.ndarray) -> np.ndarray:
        return u[self.vid[:, 0]] * self.phi[:, 0] + u[self.vid[:, 1]] * self.phi[:, 1]


def _csr(vals, rows, cols, n) -> sp.csr_matrix:
    A = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    A.eliminate_zeros()
    A.sort_indices()
    return A


def boundary_quadrature(mesh: TriMesh, curve: bool = False) -> BoundaryQuadrature:
    """2-point Gauss nodes on every boundary edge.

    With ``curve=True`` edges on an oscillating graph are integrated in the
    chart coordinate with the arc-length factor ``sqrt(1 + rho'^2)``, so the
    boundary measure is that of the true curve rather than the chord.
    """
    fam = mesh.family
    V = mesh.vertices
    E = mesh.boundary_edges
    pa, pb = V[E[:, 0]], V[E[:, 1]]
    chord = np.linalg.norm(pb - pa, axis=1)
    nq = 2 * len(E)
    vid = np.repeat(E, 2, axis=0)
    t = np.tile(_G2_T, len(E))
    phi = np.column_stack([1.0 - t, t])
    measure = np.repeat(chord, 2) * np.tile(_G2_W, len(E))
    x0 = np.repeat(mesh.edge_xp[:, 0], 2)
    x1 = np.repeat(mesh.edge_xp[:, 1], 2)
    xp = x0 + t * (x1 - x0)
    side = np.repeat(mesh.edge_side, 2)
    if curve and mesh.eps is not None:
        graph = np.repeat(mesh.edge_graph, 2)
        for name in fam.oscillating:
            m = graph & (side == name)
            if not m.any():
                continue
            ch = fam.chart(name)
            J = ch.scale * np.sqrt(1.0 + ch.drho(fam.profile, mesh.eps, xp[m]) ** 2)
            measure[m] = np.abs(x1[m] - x0[m]) * np.tile(_G2_W, int(m.sum()) // 2) * J
    assert len(measure) == nq
    return BoundaryQuadrature(vid, phi, measure, side, xp)


@dataclass
class FemSystem:
    """Assembled matrices of one mesh.

    ``K = S + M`` is the form ``int grad u . grad v + u v``; ``B1`` is the
    unweighted boundary mass and ``Bw`` the boundary mass with weight ``w``
    (``w = 1`` on perturbed domains, ``w = gamma`` on the reference domain).
    """

    mesh: TriMesh
    S: sp.csr_matrix
    M: sp.csr_matrix
    K: sp.csr_matrix
    B1: sp.csr_matrix
    Bw: sp.csr_matrix
    bq: BoundaryQuadrature
    bweight: np.ndarray
    tri_area: np.ndarray
    curve: bool = False
    _solver: "SPDSolver | None" = field(default=None, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.mesh.n_vertices

    def solver(self) -> "SPDSolver":
        if self._solver is None:
            self._solver = SPDSolver(self.K)
        return self._solver

    def solve(self, b):
        return self.solver().solve(b)

    def boundary_matrix(self, weight: np.ndarray) -> sp.csr_matrix:
        """Boundary mass with an extra per-node weight (times the stored ``w``)."""
        return self.bq.matrix(self.n, self.bweight * weight)

    def dump(self, which: str = "K") -> str:
        return matrix_market(getattr(self, which))


def _weights_on_nodes(mesh: TriMesh, bq: BoundaryQuadrature, weights) -> np.ndarray:
    if weights is None:
        return np.ones(len(bq.measure))
    if not isinstance(weights, Mapping):
        return _weight_fn(weights)(bq.xp)
    unknown = set(weights) - set(mesh.family.charts)
    if unknown:
        raise AssemblyError(f"weights given for unknown sides {sorted(unknown)}")
    out = np.ones(len(bq.measure))
    for name in np.unique(bq.side):
        m = bq.side == name
        if name in weights:
            out[m] = _weight_fn(weights[name])(bq.xp[m])
    return out


def assemble(mesh: TriMesh, weights=None, curve: bool = False) -> FemSystem:
    """Assemble ``S, M, K, B1, Bw`` on ``mesh``.

    ``weights`` is None (w = 1), a constant, a callable of the chart
    coordinate, or a mapping side -> constant/callable (missing sides get 1).
    """
    V, T = mesh.vertices, mesh.triangles
    n = len(V)
    if len(mesh.edge_side) != len(mesh.boundary_edges):
        raise AssemblyError("boundary tags do not match boundary edges")
    if len(mesh.boundary_edges) and (mesh.boundary_edges.max() >= n or mesh.boundary_edges.min() < 0):
        raise AssemblyError("boundary edge references a missing vertex")
    P = V[T]
    d1 = P[:, 1] - P[:, 0]
    d2 = P[:, 2] - P[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    if np.any(det <= 0):
        raise AssemblyError("triangles must be counterclockwise and non-degenerate")
    area = 0.5 * det
    # gradients of barycentric coordinates
    e = np.stack([P[:, 2] - P[:, 1], P[:, 0] - P[:, 2], P[:, 1] - P[:, 0]], axis=1)
    grad = np.stack([-e[:, :, 1], e[:, :, 0]], axis=2) / det[:, None, None]
    Sloc = np.einsum("tik,tjk->tij", grad, grad) * area[:, None, None]
    Mloc = (np.ones((3, 3)) + np.eye(3))[None] * (area / 12.0)[:, None, None]
    rows = np.repeat(T, 3, axis=1).ravel()
    cols = np.tile(T, (1, 3)).ravel()
    S = _csr(Sloc.ravel(), rows, cols, n)
    M = _csr(Mloc.ravel(), rows, cols, n)
    K = _csr(Sloc.ravel() + Mloc.ravel(), rows, cols, n)
    bq = boundary_quadrature(mesh, curve)
    bw = _weights_on_nodes(mesh, bq, weights)
    B1 = bq.matrix(n)
    Bw = bq.matrix(n, bw)
    return FemSystem(mesh, S, M, K, B1, Bw, bq, bw, area, curve)


# -- solvers ---------------------------------------------------------------


def pcg(A, b, M_inv=None, tol: float = 1e-10, maxiter: int | None = None, x0=None):
    """Preconditioned conjugate gradients; returns ``(x, residual_history)``.

    Raises :class:`SolverError` (with the history) when the relative
    residual does not fall below ``tol`` within ``maxiter`` iterations.
    """
    n = len(b)
    maxiter = 10 * n if maxiter is None else maxiter
    bn = np.linalg.norm(b)
    if bn == 0:
        return np.zeros(n), [0.0]
    x = np.zeros(n) if x0 is None else np.array(x0, float)
    r = b - A @ x
    z = r if M_inv is None else M_inv(r)
    p = z.copy()
    rz = r @ z
    hist = [np.linalg.norm(r) / bn]
    for _ in range(maxiter):
        if hist[-1] <= tol:
            return x, hist
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        hist.append(np.linalg.norm(r) / bn)
        z = r if M_inv is None else M_inv(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    if hist[-1] <= tol:
        return x, hist
    raise SolverError(f"PCG did not converge in {maxiter} iterations (residual {hist[-1]:.2e})", hist)


class SPDSolver:
    """Reusable solver for one SPD matrix.

    Below :data:`DIRECT_LIMIT` unknowns a sparse LU factorization is kept;
    above it, PCG with an incomplete-LU preconditioner is used.
    """

    def __init__(self, A, tol: float = 1e-10, direct_limit: int = DIRECT_LIMIT):
        self.A = sp.csc_matrix(A)
        self.tol = tol
        self.n = self.A.shape[0]
        self.direct = self.n < direct_limit
        self.history: list[float] = []
        if self.direct:
            self._lu = spla.splu(self.A)
        else:
            ilu = spla.spilu(self.A, drop_tol=1e-5, fill_factor=10)
            self._prec = ilu.solve

    def solve(self, b):
        b = np.asarray(b, float)
        if b.ndim == 2:
            return np.column_stack([self.solve(b[:, j]) for j in range(b.shape[1])])
        if self.direct:
            x = self._lu.solve(b)
            bn = np.linalg.norm(b)
            res = np.linalg.norm(self.A @ x - b) / bn if bn else 0.0
            if res > self.tol:
                # one step of iterative refinement
                x = x + self._lu.solve(b - self.A @ x)
                res = np.linalg.norm(self.A @ x - b) / bn
            self.history = [res]
            if res > self.tol:
                raise SolverError(f"direct solve residual {res:.2e} above {self.tol:g}", [res])
            return x
        x, self.history = pcg(self.A, b, self._prec, self.tol)
        return x


def solve_spd(A, b, tol: float = 1e-10, direct_limit: int = DIRECT_LIMIT):
    """Solve ``A x = b`` for SPD ``A`` to relative residual ``tol``."""
    return SPDSolver(A, tol, direct_limit).solve(b)


# -- norms -----------------------------------------------------------------


def norms(sys: FemSystem, u) -> dict:
    u = np.asarray(u, float)
    return {
        "L2": math.sqrt(max(0.0, float(u @ (sys.M @ u)))),
        "H1": math.sqrt(max(0.0, float(u @ (sys.K @ u)))),
        "bL2": math.sqrt(max(0.0, float(u @ (sys.B1 @ u)))),
    }


def norm(sys: FemSystem, u, tag: str = "H1") -> float:
    if tag == "H-1":
        return dual_norm(sys, sys.M @ np.asarray(u, float))
    return norms(sys, u)[tag]


def dual_norm(sys: FemSystem, phi) -> float:
    """Discrete Riesz norm ``sqrt(phi^T K^{-1} phi)``."""
    phi = np.asarray(phi, float)
    if not np.any(phi):
        return 0.0
    return math.sqrt(max(0.0, float(phi @ sys.solve(phi))))


# -- eigenproblems ---------------------------------------------------------


def _ldl_inertia(A):
    """Number of negative pivots of a symmetric-pivoted LU of ``A``.

    Returns ``(count, reliable)``; ``reliable`` is False when the
    factorization left the diagonal, in which case the count is not the
    inertia.
    """
    lu = spla.splu(sp.csc_matrix(A), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                   options={"SymmetricMode": True})
    reliable = bool(np.array_equal(lu.perm_r, lu.perm_c))
    return int(np.sum(lu.U.diagonal() < 0)), reliable, lu


def eig_smallest(K_lin, M, k: int = 5, sigma: float | None = None, seed: int = 0,
                 residual_tol: float = 1e-8, retries: int = 3):
    """``k`` smallest eigenpairs of ``K_lin w = lam M w``.

    Shift-invert Lanczos (ARPACK) around a shift placed below the spectrum.
    The shift is validated by the inertia of ``K_lin - sigma M``; it is moved
    down when eigenvalues lie below it and by 1 after a failed
    factorization.  Returns ``(lams, W)`` with ascending ``lams`` and
    M-orthonormal columns of ``W``.
    """
    n = K_lin.shape[0]
    if not 1 <= k <= 20 or k >= n:
        raise EigenError(f"k must be in [1, min(20, n-1)], got {k}")
    K_lin = sp.csc_matrix(K_lin)
    M = sp.csc_matrix(M)
    if sigma is None:
        # Gershgorin-type lower bound on the generalized spectrum
        dK = K_lin.diagonal()
        off = np.asarray(abs(K_lin).sum(axis=1)).ravel() - np.abs(dK)
        mdiag = M.diagonal()
        sigma = float(np.min((dK - off) / mdiag)) - 1.0
        sigma = min(sigma, -1.0)
    lu = None
    attempts = 0
    while True:
        try:
            neg, reliable, lu = _ldl_inertia(K_lin - sigma * M)
        except RuntimeError:
            attempts += 1
            if attempts > retries:
                raise EigenError(f"factorization failed at shift {sigma:g} after {retries} retries")
            sigma -= 1.0
            continue
        if neg == 0 or not reliable:
            break
        attempts += 1
        if attempts > retries + 8:
            raise EigenError(f"could not place the shift below the spectrum (last {sigma:g})")
        sigma -= max(1.0, 2.0 * abs(sigma))
    op = spla.LinearOperator((n, n), matvec=lu.solve, dtype=float)
    v0 = np.random.default_rng(seed).standard_normal(n)
    ncv = min(n, max(2 * k + 1, 20))
    lams, W = spla.eigsh(K_lin, k=k, M=M, sigma=sigma, which="LM", OPinv=op, v0=v0, ncv=ncv,
                         tol=1e-14)
    order = np.argsort(lams)
    lams, W = lams[order], W[:, order]
    if np.any(lams <= sigma):
        raise EigenError("eigenvalues found below the shift; spectrum bound violated")
    # M-orthonormalize (clusters may come back slightly skewed)
    G = W.T @ (M @ W)
    L = np.linalg.cholesky(0.5 * (G + G.T))
    W = np.linalg.solve(L, W.T).T
    # Rayleigh-Ritz within the span keeps eigenvalue/vector pairs consistent
    H = W.T @ (K_lin @ W)
    lams, Q = np.linalg.eigh(0.5 * (H + H.T))
    W = W @ Q
    for j in range(k):
        w = W[:, j]
        # deterministic sign: largest-magnitude entry positive
        if w[np.argmax(np.abs(w))] < 0:
            W[:, j] = -w
    res = np.linalg.norm(K_lin @ W - (M @ W) * lams[None, :], axis=0)
    if np.any(res > residual_tol):
        raise EigenError(f"eigen-residual {res.max():.2e} above {residual_tol:g}")
    return lams, W


def matrix_market(A) -> str:
    buf = io.BytesIO()
    scipy.io.mmwrite(buf, sp.coo_matrix(A), comment="oscillab", precision=17)
    return buf.getvalue().decode()
