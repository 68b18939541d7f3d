import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from oscillab.fem import (AssemblyError, EigenError, SolverError, SPDSolver, assemble, dual_norm,
                          eig_smallest, matrix_market, norm, norms, pcg, solve_spd)
from oscillab.geometry import DomainFamily, profile_from_spec
from oscillab.mesh import mesh_domain

FLAT = DomainFamily(profile_from_spec("flat"), (0.1,))
SAW = DomainFamily(profile_from_spec("sawtooth", slope=1.0), (0.1, 0.05))


@pytest.fixture(scope="module")
def sq():
    return assemble(mesh_domain(FLAT, None, 1 / 16))


@pytest.fixture(scope="module")
def sq64():
    return assemble(mesh_domain(FLAT, None, 1 / 64))


def test_symmetry_and_totals(sq):
    one = np.ones(sq.n)
    for A in (sq.K, sq.M, sq.B1, sq.Bw):
        assert abs(A - A.T).max() <= 1e-13 * abs(A).max()
    assert one @ (sq.M @ one) == pytest.approx(1.0, abs=1e-13)
    assert one @ (sq.K @ one) == pytest.approx(1.0, abs=1e-13)
    assert one @ (sq.B1 @ one) == pytest.approx(4.0, abs=1e-12)


def test_gamma_weight_on_top_only(sq):
    m = sq.mesh
    s = assemble(m, {"top": math.sqrt(2), "bottom": 0.0, "left": 0.0, "right": 0.0})
    one = np.ones(s.n)
    assert one @ (s.Bw @ one) == pytest.approx(math.sqrt(2), abs=1e-12)


def test_curve_quadrature_sees_arc_length():
    m = mesh_domain(SAW, 0.05, 1 / 16)
    one = np.ones(m.n_vertices)
    chord = assemble(m, None, curve=False)
    curve = assemble(m, None, curve=True)
    assert one @ (curve.B1 @ one) == pytest.approx(3 + math.sqrt(2), abs=1e-12)
    assert one @ (chord.B1 @ one) == pytest.approx(3 + math.sqrt(2), abs=1e-12)  # exact chords on a sawtooth
    sine = DomainFamily(profile_from_spec("sine"), (0.05,))
    ms = mesh_domain(sine, 0.05, 1 / 16)
    from scipy.integrate import quad

    exact = quad(lambda x: math.sqrt(1 + math.cos(x / 0.05) ** 2), 0, 1, limit=500)[0]

    def top_length(curve):
        bq = assemble(ms, None, curve=curve).bq
        return bq.measure[bq.side == "top"].sum()

    assert abs(top_length(True) - exact) < 1e-4
    assert abs(top_length(True) - exact) < abs(top_length(False) - exact)


def test_inconsistent_tags_rejected(sq):
    from dataclasses import replace

    bad = replace(sq.mesh, edge_side=sq.mesh.edge_side[:-1])
    with pytest.raises(AssemblyError):
        assemble(bad)


def test_solver_examples(sq):
    one = np.ones(sq.n)
    assert np.allclose(solve_spd(sq.M, sq.M @ one), 1.0, atol=1e-10)
    v = np.random.default_rng(0).standard_normal(sq.n)
    x = solve_spd(sq.K, sq.K @ v)
    assert np.linalg.norm(x - v) / np.linalg.norm(v) <= 1e-9


def test_iterative_path_matches_direct(sq):
    b = sq.M @ np.random.default_rng(1).standard_normal(sq.n)
    s = SPDSolver(sq.K, direct_limit=0)
    x = s.solve(b)
    assert np.linalg.norm(sq.K @ x - b) / np.linalg.norm(b) <= 1e-10
    assert np.allclose(x, solve_spd(sq.K, b), atol=1e-8)


def test_pcg_failure_carries_history(sq):
    b = np.random.default_rng(2).standard_normal(sq.n)
    with pytest.raises(SolverError) as info:
        pcg(sq.K, b, maxiter=3)
    assert len(info.value.history) == 4


def test_norm_examples(sq, sq64):
    n = norms(sq, np.ones(sq.n))
    assert n["L2"] == pytest.approx(1.0) and n["H1"] == pytest.approx(1.0) and n["bL2"] == pytest.approx(2.0)
    assert norms(sq, np.zeros(sq.n)) == {"L2": 0.0, "H1": 0.0, "bL2": 0.0}
    V = sq64.mesh.vertices
    u = np.cos(np.pi * V[:, 0]) * np.cos(np.pi * V[:, 1])
    # int u^2 = 1/4, int |grad u|^2 = pi^2/2
    assert norms(sq64, u)["H1"] == pytest.approx(math.sqrt(0.25 + math.pi ** 2 / 2), rel=1e-2)


def test_dual_norm_examples(sq):
    assert dual_norm(sq, np.zeros(sq.n)) == 0.0
    assert dual_norm(sq, sq.M @ np.ones(sq.n)) == pytest.approx(1.0, abs=1e-12)
    assert norm(sq, np.ones(sq.n), "H-1") == pytest.approx(1.0, abs=1e-12)


@given(st.integers(0, 2 ** 31))
def test_riesz_isometry(seed):
    s = _small()
    u = np.random.default_rng(seed).standard_normal(s.n)
    assert dual_norm(s, s.K @ u) == pytest.approx(norms(s, u)["H1"], rel=1e-9)


@given(st.integers(0, 2 ** 31))
def test_rayleigh_bound(seed):
    s = _small()
    u = np.random.default_rng(seed).standard_normal(s.n)
    assert u @ (s.K @ u) >= u @ (s.M @ u)


_CACHE = {}


def _small():
    if "s" not in _CACHE:
        _CACHE["s"] = assemble(mesh_domain(SAW, 0.1, 1 / 8), None, curve=True)
    return _CACHE["s"]


def test_neumann_spectrum(sq64):
    lams, W = eig_smallest(sq64.K, sq64.M, 4)
    exact = np.array([1, 1 + math.pi ** 2, 1 + math.pi ** 2, 1 + 2 * math.pi ** 2])
    assert np.all(np.abs(lams - exact) / exact < 0.02)
    assert lams[0] == pytest.approx(1.0, abs=1e-10)
    assert np.allclose(np.abs(W[:, 0]), 1.0, atol=1e-8)  # |Omega|^{-1/2} = 1
    G = W.T @ (sq64.M @ W)
    assert np.allclose(G, np.eye(4), atol=1e-10)
    res = np.linalg.norm(sq64.K @ W - (sq64.M @ W) * lams, axis=0)
    assert np.all(res <= 1e-8)
    assert np.all(np.diff(lams) >= 0)


def test_boundary_term_raises_ground_state(sq):
    base = eig_smallest(sq.K, sq.M, 1)[0][0]
    robin = eig_smallest(sq.K + sq.B1, sq.M, 1)[0][0]
    assert robin > base


def test_indefinite_operator_gets_shifted(sq):
    lams, _ = eig_smallest(sq.K - 5.0 * sq.M, sq.M, 3, sigma=0.0)
    assert lams[0] == pytest.approx(-4.0, abs=1e-9)


def test_eig_rejects_bad_k(sq):
    with pytest.raises(EigenError):
        eig_smallest(sq.K, sq.M, 25)


def test_permutation_invariance(sq):
    from dataclasses import replace

    m = sq.mesh
    rng = np.random.default_rng(3)
    perm = rng.permutation(m.n_vertices)
    inv = np.argsort(perm)
    m2 = replace(m, vertices=m.vertices[perm], triangles=inv[m.triangles], boundary_edges=inv[m.boundary_edges],
                 _locator=None)
    s2 = assemble(m2)
    u = np.sin(3 * m.vertices[:, 0]) + m.vertices[:, 1] ** 2
    a, b = norms(sq, u), norms(s2, u[perm])
    for k in a:
        assert a[k] == pytest.approx(b[k], rel=1e-10)
    l1 = eig_smallest(sq.K, sq.M, 4)[0]
    l2 = eig_smallest(s2.K, s2.M, 4)[0]
    assert np.allclose(l1, l2, rtol=1e-10)


def test_matrix_market_dump(sq):
    text = matrix_market(sq.M)
    assert text.startswith("%%MatrixMarket matrix coordinate real")
    import io

    import scipy.io

    back = scipy.io.mmread(io.BytesIO(text.encode()))
    assert abs(sp.csr_matrix(back) - sq.M).max() == 0.0
