import math

import numpy as np
import pytest

from oscillab.dynamics import (NoEquilibrium, StepFailure, Stepper, default_seeds, find_equilibria, integrate,
                               linearized_spectrum, newton, sample_attractor, snapshot_dump, step)
from oscillab.fem import assemble, norms
from oscillab.geometry import DomainFamily, profile_from_spec
from oscillab.nonlinear import LoadMap, bistable, constant, linear, logistic

FLAT = DomainFamily(profile_from_spec("flat"), (0.1,))
SAW = DomainFamily(profile_from_spec("sawtooth", slope=1.0), (0.1,))


def _mesh(h):
    from oscillab.mesh import mesh_domain

    return mesh_domain(FLAT, None, h)


SQ = assemble(_mesh(1 / 16))
ZERO = LoadMap(SQ, constant(0.0), constant(0.0))
BISTABLE = LoadMap(SQ, bistable(2.0, 3.0), constant(0.0))


def test_decay_of_constants_imex():
    tr = integrate(SQ, ZERO, np.full(SQ.n, 2.0), 1.0, 1e-3, stop_early=False)
    assert np.allclose(tr.terminal, 2 * math.exp(-1), rtol=1e-3)


def test_constants_fixed_by_linear_source():
    load = LoadMap(SQ, linear(1.0), constant(0.0))
    u = np.full(SQ.n, 0.7)
    d = step(SQ, load, u, 1e-2) - u
    assert math.sqrt(d @ (SQ.M @ d)) <= 1e-8


def test_equilibrium_is_invariant():
    eqs = find_equilibria(SQ, BISTABLE, seed=0)
    e = eqs.members[-1].e
    st = Stepper(SQ, BISTABLE, 1e-3)
    u = e.copy()
    for _ in range(100):
        u = st(u)
    assert norms(SQ, u - e)["H1"] <= 1e-6


def test_converged_flag_for_equilibrium_start():
    tr = integrate(SQ, BISTABLE, np.ones(SQ.n), 1.0, 1e-2)
    assert tr.converged and tr.terminal_time == pytest.approx(1e-2)


def test_energy_decay_without_sources():
    rng = np.random.default_rng(0)
    tr = integrate(SQ, ZERO, rng.standard_normal(SQ.n), 0.5, 1e-2, stride=1, stop_early=False)
    l2 = [math.sqrt(u @ (SQ.M @ u)) for u in tr.snapshots]
    assert all(b <= a + 1e-14 for a, b in zip(l2, l2[1:]))
    assert np.all(np.diff(tr.times) > 0)


def test_small_random_start_settles_on_stable_equilibrium():
    eqs = find_equilibria(SQ, BISTABLE, seed=0)
    rng = np.random.default_rng(5)
    tr = integrate(SQ, BISTABLE, 0.05 * rng.standard_normal(SQ.n) + 0.02, 40.0, 1e-2)
    assert tr.converged
    dists = [norms(SQ, tr.terminal - m.e)["H1"] for m in eqs]
    assert min(dists) < 1e-4 and eqs.members[int(np.argmin(dists))].lambda_min > 0


def test_schemes_agree():
    u0 = 0.3 + 0.5 * np.cos(np.pi * SQ.mesh.vertices[:, 0])
    a = integrate(SQ, BISTABLE, u0, 1.0, 1e-3, "imex_euler", stop_early=False).terminal
    b = integrate(SQ, BISTABLE, u0, 1.0, 1e-3, "implicit_euler", stop_early=False).terminal
    assert norms(SQ, a - b)["H1"] <= 1e-2


def test_time_step_halving_is_first_order():
    u0 = 0.3 + 0.5 * np.cos(np.pi * SQ.mesh.vertices[:, 0])
    runs = [integrate(SQ, BISTABLE, u0, 0.5, dt, stop_early=False).terminal for dt in (4e-3, 2e-3, 1e-3, 5e-4)]
    diffs = [norms(SQ, a - b)["H1"] for a, b in zip(runs, runs[1:])]
    ratios = [a / b for a, b in zip(diffs, diffs[1:])]
    assert all(1.6 <= r <= 2.4 for r in ratios), ratios


def test_step_failure_suggests_half_step():
    load = LoadMap(SQ, bistable(50.0, 1.0), constant(0.0))
    with pytest.raises(StepFailure, match="retry with dt"):
        Stepper(SQ, load, 5.0, "implicit_euler", newton_maxit=1)(np.full(SQ.n, 3.0))


def test_equilibria_trivial_cases():
    z = find_equilibria(SQ, ZERO, seed=0)
    assert len(z) == 1 and np.abs(z.members[0].e).max() < 1e-12
    one = find_equilibria(SQ, LoadMap(SQ, constant(1.0), constant(0.0)), seed=0)
    assert len(one) == 1 and np.allclose(one.members[0].e, 1.0, atol=1e-10)


def test_bistable_equilibria_and_signature():
    eqs = find_equilibria(SQ, BISTABLE, seed=0)
    assert len(eqs) == 3
    means = [m.mean for m in eqs]
    assert means == pytest.approx([-1.0, 0.0, 1.0], abs=1e-9)
    lmins = [m.lambda_min for m in eqs]
    assert lmins == pytest.approx([4.0, -2.0, 4.0], rel=0.05)
    assert eqs.all_hyperbolic
    assert all(m.residual <= 1e-9 for m in eqs)
    assert eqs.members[1].unstable.shape[1] == 1
    for a in eqs:
        for b in eqs:
            if a is not b:
                assert norms(SQ, a.e - b.e)["H1"] >= 1e-4
    lines = eqs.to_csv().splitlines()
    assert lines[0] == "id,residual,lambda_min,hyperbolic,H1_norm" and len(lines) == 4


def test_newton_quadratic_convergence():
    e0 = 1.3 + 0.1 * np.cos(np.pi * SQ.mesh.vertices[:, 1])
    e, r, hist, ok = newton(SQ, BISTABLE, e0)
    assert ok
    tail = [h for h in hist if h > 1e-14][-3:]
    C = [b / a ** 2 for a, b in zip(tail, tail[1:])]
    assert max(C) < 10.0


def test_hyperbolicity_stable_under_refinement():
    fine = assemble(_mesh(1 / 32))
    a = find_equilibria(SQ, BISTABLE, seed=0)
    b = find_equilibria(fine, LoadMap(fine, bistable(2.0, 3.0), constant(0.0)), seed=0)
    for x, y in zip(a, b):
        assert np.sign(x.lambda_min) == np.sign(y.lambda_min)
        assert abs(x.lambda_min - y.lambda_min) <= 0.2 * abs(y.lambda_min)


def test_no_equilibrium_error():
    # Newton with a single iteration from a far seed cannot converge
    with pytest.raises(NoEquilibrium):
        find_equilibria(SQ, BISTABLE, [np.full(SQ.n, 50.0)], maxit=1)


def test_linearized_spectrum_examples():
    z = np.zeros(SQ.n)
    lam, _ = linearized_spectrum(SQ, ZERO, z, 3)
    assert lam[0] == pytest.approx(1.0, abs=1e-10)
    assert lam[1] == pytest.approx(1 + math.pi ** 2, rel=0.02)
    lam3, _ = linearized_spectrum(SQ, LoadMap(SQ, linear(3.0), constant(0.0)), z, 3)
    assert np.allclose(lam3, lam - 3.0, atol=1e-9)
    firsts = [linearized_spectrum(SQ, LoadMap(SQ, constant(0.0), linear(c)), z, 1)[0][0] for c in (0.0, 1.0, 2.0)]
    assert firsts[0] < firsts[1] < firsts[2]


def test_sample_attractor_cases():
    z = find_equilibria(SQ, ZERO, seed=0)
    A = sample_attractor(SQ, ZERO, z, default_seeds(SQ, 0, n_bumps=3), T_max=20.0)
    assert all(norms(SQ, p)["H1"] < 1e-6 for p in A.points)
    eqs = find_equilibria(SQ, BISTABLE, seed=0)
    A = sample_attractor(SQ, BISTABLE, eqs, default_seeds(SQ, 1, n_bumps=3, constants=()), T_max=20.0)
    assert not A.has_transients
    ends = [lab for lab in A.labels if lab.startswith("terminal")]
    assert all(lab.endswith("eq:0") or lab.endswith("eq:2") for lab in ends)
    orbit_last = {}
    for p, lab in zip(A.points, A.labels):
        if lab.startswith("orbit"):
            orbit_last[lab] = p
    targets = {round(float(np.mean(p)), 3) for p in orbit_last.values()}
    assert targets == {-1.0, 1.0}
    B = sample_attractor(SQ, BISTABLE, eqs, seeds=[m.e for m in eqs], orbits=False)
    assert len(B.points) == 2 * len(eqs)
    for p, m in zip(B.points[len(eqs):], eqs):
        assert np.allclose(p, m.e, atol=1e-8)


def test_sample_attractor_flags_transients():
    eqs = find_equilibria(SQ, BISTABLE, seed=0)
    A = sample_attractor(SQ, BISTABLE, eqs, seeds=[np.full(SQ.n, 0.01)], T_max=0.05, orbits=False)
    assert A.has_transients


def test_snapshot_dump_format():
    tr = integrate(SQ, ZERO, np.ones(SQ.n), 0.02, 1e-2, stride=1, stop_early=False)
    text = snapshot_dump(tr)
    assert text.count("FIELD t=") == 3
    assert text.splitlines()[0] == f"FIELD t=0 n={SQ.n}"


def test_boundary_nonlinearity_on_oscillating_mesh():
    from oscillab.mesh import mesh_domain

    sys = assemble(mesh_domain(SAW, 0.1, 1 / 16), None, curve=True)
    eqs = find_equilibria(sys, LoadMap(sys, bistable(2.0, 3.0), logistic(0.25)), seed=0)
    assert len(eqs) == 3 and eqs.all_hyperbolic
