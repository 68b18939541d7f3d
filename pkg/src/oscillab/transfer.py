"""Transfer operators between the reference mesh and a perturbed mesh.

``R_E`` extends a field on Omega to Omega_eps: P1 interpolation inside
Omega, and even reflection across the oscillating side for the vertices
of the exterior bumps.  ``R_Ehat`` restricts a field on Omega_eps to
Omega through the interior map ``theta_eps``.  The dual map ``E*`` on
functionals is the transpose of ``R_Ehat``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fem import FemSystem, dual_norm
from .geometry import DomainFamily, GeometryError, in_core, theta
from .mesh import TriMesh, interpolation_matrix

NORM_TAGS = ("L2", "H1", "H-1")


@dataclass
class TransferOps:
    ref: FemSystem
    pert: FemSystem
    R_E: sp.csr_matrix  # (n_eps, n_0)
    R_Ehat: sp.csr_matrix  # (n_0, n_eps)
    core: np.ndarray  # Omega vertices inside K_{eps0}
    reflected: np.ndarray  # Omega_eps vertices extended by reflection

    @property
    def family(self) -> DomainFamily:
        return self.ref.mesh.family

    @property
    def eps(self):
        return self.pert.mesh.eps


def reflect_points(family: DomainFamily, pts: np.ndarray):
    """Mirror points lying outside Omega across the oscillating side.

    Returns the mirrored coordinates and a mask of the points that moved.
    """
    out = np.array(pts, float)
    moved = np.zeros(len(out), bool)
    for side in family.oscillating:
        ch = family.chart(side)
        xp, s = ch.phi_inverse(out)
        m = s > 0
        if m.any():
            out[m] = ch.phi(xp[m], -s[m])
            moved |= m
    return out, moved


def extension_matrix(ref: TriMesh, pert: TriMesh, tol: float = 1e-10):
    fam = ref.family
    pts, moved = reflect_points(fam, pert.vertices)
    R, ext = interpolation_matrix(ref, pts, tol)
    if ext.any():
        bad = pert.vertices[np.flatnonzero(ext)[0]]
        raise GeometryError(f"reflected point of {bad} lies outside the reference mesh; "
                            "amplitude too large for the reflection extension")
    return R, moved


def restriction_matrix(ref: TriMesh, pert: TriMesh, tol: float = 1e-10):
    fam = ref.family
    eps = pert.eps
    pts = ref.vertices if eps is None else theta(fam, eps, ref.vertices)
    R, ext = interpolation_matrix(pert, pts, tol)
    if ext.any():
        bad = ref.vertices[np.flatnonzero(ext)[0]]
        raise GeometryError(f"theta({bad}) lies outside the perturbed mesh")
    return R


def build_transfer(ref: FemSystem, pert: FemSystem) -> TransferOps:
    R_E, moved = extension_matrix(ref.mesh, pert.mesh)
    R_Eh = restriction_matrix(ref.mesh, pert.mesh)
    core = in_core(ref.mesh.family, ref.mesh.vertices)
    return TransferOps(ref, pert, R_E, R_Eh, core, moved)


def extend_E(ops: TransferOps, u):
    return ops.R_E @ np.asarray(u, float)


def restrict_Ehat(ops: TransferOps, u_eps):
    return ops.R_Ehat @ np.asarray(u_eps, float)


def dual_Estar(ops: TransferOps, phi):
    """``E*`` phi: the functional ``u_eps -> phi(Ehat u_eps)``."""
    return ops.R_Ehat.T @ np.asarray(phi, float)


def _norm(sys: FemSystem, d, tag: str) -> float:
    if tag == "L2":
        return math.sqrt(max(0.0, float(d @ (sys.M @ d))))
    if tag == "H1":
        return math.sqrt(max(0.0, float(d @ (sys.K @ d))))
    if tag == "H-1":
        return dual_norm(sys, sys.M @ d)
    raise ValueError(f"norm tag must be one of {NORM_TAGS}")


def e_distance(ops: TransferOps, u_eps, u, tag: str = "H1") -> float:
    """``||u_eps - E u||`` on Omega_eps."""
    d = np.asarray(u_eps, float) - extend_E(ops, u)
    return _norm(ops.pert, d, tag)


def pairwise_h1(sys: FemSystem, A: np.ndarray, B: np.ndarray, refine: int = 3) -> np.ndarray:
    """H1 distances between the columns of ``A`` and ``B``.

    A Gram-matrix pass ranks candidates; for each row the ``refine``
    nearest entries are recomputed from explicit differences so that
    minima are free of cancellation error.
    """
    KA = sys.K @ A
    KB = sys.K @ B
    na = np.einsum("ij,ij->j", A, KA)
    nb = np.einsum("ij,ij->j", B, KB)
    D2 = na[:, None] + nb[None, :] - 2.0 * (A.T @ KB)
    D = np.sqrt(np.maximum(D2, 0.0))
    r = min(refine, D.shape[1])
    for i in range(D.shape[0]):
        for j in np.argsort(D[i], kind="stable")[:r]:
            d = A[:, i] - B[:, j]
            D[i, j] = math.sqrt(max(0.0, float(d @ (sys.K @ d))))
    return D


def set_semidistance(ops: TransferOps, S_eps, S0, direction: str = "upper") -> float:
    """Hausdorff semidistance between a set on Omega_eps and the extension of a set on Omega.

    ``upper``: sup over ``S_eps`` of inf over ``S0``; ``lower``: sup over
    ``S0`` of inf over ``S_eps``.
    """
    S_eps, S0 = list(S_eps), list(S0)
    if not S_eps or not S0:
        raise ValueError("semidistance needs two nonempty sets")
    A = np.column_stack(S_eps)
    B = ops.R_E @ np.column_stack(S0)
    if direction == "upper":
        return float(pairwise_h1(ops.pert, A, B).min(axis=1).max())
    if direction == "lower":
        return float(pairwise_h1(ops.pert, B, A).min(axis=1).max())
    raise ValueError("direction must be 'upper' or 'lower'")
