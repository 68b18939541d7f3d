"""epsilon-sweeps comparing the perturbed problems with the gamma-weighted limit.

Every sweep evaluates one or more metric series along the configured
epsilon list, for the gamma-weighted limit problem and for a negative
control whose limit uses ``gamma = 1``.  With ``mesh.refine`` the sweep is
repeated at ``h/2`` and a metric value is attributed to epsilon only if it
changes by less than ``thresholds.attribution`` (relative).
"""
from __future__ import annotations

import csv
import io
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig
from .dynamics import (default_seeds, find_equilibria, integrate, linearized_spectrum,
                       sample_attractor)
from .fem import assemble, dual_norm, norms
from .geometry import DomainFamily
from .homogenization import gamma_for_family
from .mesh import mesh_domain
from .nonlinear import LoadMap
from .transfer import build_transfer, dual_Estar, extend_E, set_semidistance


class NonHyperbolicLimit(RuntimeError):
    """A limit equilibrium failed the hyperbolicity test."""


CASES = ("limit", "control")


# -- result type -------------------------------------------------------------


def fitted_slope(eps, vals, floor: float = 0.0) -> float:
    """Decay exponent: least-squares slope of ``log(vals)`` against ``log(eps)``.

    Positive when the metric shrinks with epsilon; NaN with fewer than two
    values above ``floor``.
    """
    e = np.asarray(eps, float)
    v = np.asarray(vals, float)
    m = v > floor
    if m.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(e[m]), np.log(v[m]), 1)[0])


@dataclass
class SweepResult:
    name: str
    metrics: tuple  # metric series names, first one is primary
    rows: list = field(default_factory=list)  # dicts: case, epsilon, h, <metric>..., aux...
    verdicts: dict = field(default_factory=dict)  # (case, metric) -> verdict string
    slopes: dict = field(default_factory=dict)
    attribution: dict = field(default_factory=dict)  # metric -> list of relative changes
    caveats: list = field(default_factory=list)

    def series(self, metric: str | None = None, case: str = "limit", h: float | None = None):
        metric = metric or self.metrics[0]
        rows = [r for r in self.rows if r["case"] == case and (h is None or r["h"] == h)]
        if h is None and rows:
            h0 = max(r["h"] for r in rows)
            rows = [r for r in rows if r["h"] == h0]
        rows.sort(key=lambda r: -r["epsilon"])
        return np.array([r["epsilon"] for r in rows]), np.array([r[metric] for r in rows])

    @property
    def consistent(self) -> bool:
        return all(self.verdicts.get(("limit", m), "").endswith("consistent") and
                   not self.verdicts[("limit", m)].startswith("inconclusive") for m in self.metrics)

    def verdict_line(self) -> str:
        parts = []
        for m in self.metrics:
            v = self.verdicts.get(("limit", m), "n/a")
            c = self.verdicts.get(("control", m))
            s = self.slopes.get(m, float("nan"))
            part = f"{m}: {v}" + (f" (exponent {s:.2f})" if math.isfinite(s) else "")
            if c is not None:
                part += f"; gamma=1 control: {c}"
            parts.append(part)
        line = f"{self.name}: " + " | ".join(parts)
        if self.caveats:
            line += " [caveat: " + "; ".join(self.caveats) + "]"
        return line

    def to_csv(self) -> str:
        aux = []
        for r in self.rows:
            for k in r:
                if k not in ("case", "epsilon", "h", *self.metrics) and k not in aux:
                    aux.append(k)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["case", "epsilon", "h", *self.metrics, *aux])
        order = {c: i for i, c in enumerate(CASES)}
        for r in sorted(self.rows, key=lambda r: (order.get(r["case"], 9), -r["h"], -r["epsilon"])):
            w.writerow([r["case"], f"{r['epsilon']:.6g}", f"{r['h']:.8g}",
                        *[_fmt(r[m]) for m in self.metrics], *[_fmt(r.get(k, "")) for k in aux]])
        return buf.getvalue()


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.9e}"
    return str(v)


# -- verdicts ------------------------------------------------------------------


def judge(eps, vals, th, rel_changes=None) -> str:
    """Verdict for one metric series.

    ``consistent`` requires: nonincreasing after the first entry, a
    positive decay exponent (the metric shrinks with epsilon), finest value at most ``th.ratio`` times the coarsest, a
    last-step ratio at most ``th.plateau`` and (when supplied) every
    relative h-refinement change below ``th.attribution``.
    """
    vals = np.asarray(vals, float)
    if np.all(vals <= th.noise):
        return "noise level (epsilon-independent)"
    reasons = []
    if len(vals) < 2:
        return "inconclusive (single epsilon)"
    if np.any(np.diff(vals[1:]) > 0):
        reasons.append("not monotone")
    s = fitted_slope(eps, vals, th.noise)
    if not s > 0:
        reasons.append("no decay")
    if vals[-1] > th.ratio * vals[0]:
        reasons.append(f"finest/coarsest {vals[-1] / vals[0]:.2f} > {th.ratio:g}")
    if vals[-2] > 0 and vals[-1] / vals[-2] > th.plateau:
        reasons.append(f"plateau (last ratio {vals[-1] / vals[-2]:.2f})")
    if rel_changes is not None:
        bad = [e for e, r in zip(eps, rel_changes) if r is not None and r >= th.attribution]
        if bad:
            reasons.append("mesh-dominated at eps=" + ",".join(f"{e:g}" for e in bad))
    if reasons:
        return "inconclusive (" + "; ".join(reasons) + ")"
    return "consistent"


# -- shared state ----------------------------------------------------------------


def probe_fields(V: np.ndarray, family: DomainFamily) -> list:
    """Five smooth fields on the reference domain (H1 norms of order one)."""
    x = V[:, 0] / family.width
    y = V[:, 1] / family.height
    c = np.cos
    return [
        np.ones(len(V)),
        c(np.pi * x),
        c(np.pi * y),
        c(np.pi * x) * c(np.pi * y),
        0.5 + 0.5 * c(2 * np.pi * x) * np.sin(np.pi * y / 2),
    ]


class Level:
    """Reference mesh and systems at one mesh size, with per-epsilon caches."""

    def __init__(self, lab: "Lab", h: float):
        self.lab, self.h = lab, h
        fam = lab.family
        self.mesh0 = mesh_domain(fam, None, h)
        gamma_w = {side: fld for side, fld in lab.gamma.items() if side in fam.oscillating}
        self.sys0 = {"limit": assemble(self.mesh0, gamma_w), "control": assemble(self.mesh0, None)}
        self._pert = {}
        self._lock = threading.Lock()

    def load0(self, case: str) -> LoadMap:
        return LoadMap(self.sys0[case], *self.lab.nl)

    def pert(self, eps: float):
        with self._lock:
            if eps in self._pert:
                return self._pert[eps]
        mesh = mesh_domain(self.lab.family, eps, self.h)
        sys = assemble(mesh, None, curve=True)
        ops = build_transfer(self.sys0["limit"], sys)
        out = (sys, ops, LoadMap(sys, *self.lab.nl))
        with self._lock:
            self._pert.setdefault(eps, out)
            return self._pert[eps]


class Lab:
    """Everything a run needs: family, gamma, nonlinearities, mesh levels."""

    def __init__(self, cfg: ExperimentConfig, threads: int = 1):
        self.cfg = cfg
        self.family = cfg.family()
        self.gamma = gamma_for_family(self.family, cfg.gamma.windows)
        self.nl = cfg.nonlinearity.build()
        self.threads = max(1, int(threads))
        self._levels = {}

    @property
    def hs(self) -> list:
        h = self.cfg.mesh.h
        return [h, h / 2] if self.cfg.mesh.refine else [h]

    def level(self, h: float) -> Level:
        if h not in self._levels:
            self._levels[h] = Level(self, h)
        return self._levels[h]

    def map_eps(self, fn):
        eps = list(self.family.epsilons)
        if self.threads == 1:
            return [fn(e) for e in eps]
        with ThreadPoolExecutor(self.threads) as pool:
            return list(pool.map(fn, eps))


# -- kernels ----------------------------------------------------------------------
# A kernel receives a Level and returns a function eps -> {case: {metric: value, aux...}}.


def _resolvent_kernel(lvl: Level):
    s0 = lvl.sys0["limit"]
    phis = [s0.M @ f for f in probe_fields(lvl.mesh0.vertices, lvl.lab.family)]
    v0 = [s0.solve(p) for p in phis]

    def run(eps):
        sys, ops, _ = lvl.pert(eps)
        vals = []
        for p, v in zip(phis, v0):
            ve = sys.solve(dual_Estar(ops, p))
            vals.append(norms(sys, ve - extend_E(ops, v))["H1"])
        row = {"metric": max(vals)}
        row.update({f"probe{j}": val for j, val in enumerate(vals)})
        return {"limit": row}

    return run


def _nonlinearity_kernel(lvl: Level):
    fam = lvl.lab.family
    probes = []
    s0 = lvl.sys0["limit"]
    for u in probe_fields(lvl.mesh0.vertices, fam):
        nrm = norms(s0, u)["H1"]
        probes.append(u * min(1.0, 2.0 / nrm) if nrm > 0 else u)
    h0 = {c: [lvl.load0(c).apply(u) for u in probes] for c in CASES}

    def run(eps):
        sys, ops, load = lvl.pert(eps)
        he = [load.apply(extend_E(ops, u)) for u in probes]
        out = {}
        for c in CASES:
            vals = [dual_norm(sys, a - dual_Estar(ops, b)) for a, b in zip(he, h0[c])]
            out[c] = {"metric": max(vals), **{f"probe{j}": v for j, v in enumerate(vals)}}
        return out

    return run


def _simple(lams, j, tol):
    gaps = []
    if j > 0:
        gaps.append(abs(lams[j] - lams[j - 1]))
    if j + 1 < len(lams):
        gaps.append(abs(lams[j + 1] - lams[j]))
    return min(gaps) > tol * max(1.0, abs(lams[j]))


def _spectral_kernel(lvl: Level):
    cfg = lvl.lab.cfg
    k = cfg.spectral.k
    seed = cfg.seed
    ref = {}
    pairs = {}
    if cfg.spectral.mode == "zero":
        for c in CASES:
            s0 = lvl.sys0[c]
            lam, W = linearized_spectrum(s0, lvl.load0(c), np.zeros(s0.n), k + 1, seed=seed)
            ref[c] = [(np.zeros(s0.n), lam, W)]
    else:
        for c in CASES:
            s0 = lvl.sys0[c]
            L0 = lvl.load0(c)
            eqs = find_equilibria(s0, L0, seed=seed, delta_hyp=cfg.thresholds.delta_hyp,
                                  merge_radius=cfg.thresholds.merge_radius)
            ref[c] = [(m.e, *linearized_spectrum(s0, L0, m.e, k + 1, seed=seed)) for m in eqs if m.hyperbolic]

    def run(eps):
        sys, ops, load = lvl.pert(eps)
        out = {}
        if cfg.spectral.mode == "zero":
            targets = [np.zeros(sys.n)]
        else:
            pairs.setdefault(eps, [m.e for m in find_equilibria(sys, load, seed=seed)])
        for c in CASES:
            rel_all, ef_all = [], []
            for idx, (e0, lam0, W0) in enumerate(ref[c]):
                if cfg.spectral.mode == "zero":
                    ee = targets[0]
                else:
                    Ee0 = extend_E(ops, e0)
                    ee = min(pairs[eps], key=lambda v: norms(sys, v - Ee0)["H1"])
                lam, W = linearized_spectrum(sys, load, ee, k + 1, seed=seed)
                rel = np.abs(lam[:k] - lam0[:k]) / np.abs(lam0[:k])
                ef = []
                for j in range(k):
                    if not _simple(lam0, j, cfg.spectral.cluster_tol):
                        ef.append(float("nan"))
                        continue
                    Ew = extend_E(ops, W0[:, j])
                    ef.append(min(norms(sys, W[:, j] - Ew)["H1"], norms(sys, W[:, j] + Ew)["H1"]))
                rel_all.append(rel)
                ef_all.append(ef)
            rel = np.max(rel_all, axis=0)
            ef = np.max(ef_all, axis=0)
            row = {"metric": float(rel.max())}
            row.update({f"relgap{j + 1}": float(v) for j, v in enumerate(rel)})
            row.update({f"efgap{j + 1}": float(v) for j, v in enumerate(ef)})
            out[c] = row
        return out

    return run


def _equilibria_kernel(lvl: Level):
    cfg = lvl.lab.cfg
    th = cfg.thresholds
    ref = {}
    for c in CASES:
        eqs = find_equilibria(lvl.sys0[c], lvl.load0(c), seed=cfg.seed, delta_hyp=th.delta_hyp,
                              merge_radius=th.merge_radius)
        if c == "limit" and not eqs.all_hyperbolic:
            bad = [i for i, m in enumerate(eqs) if not m.hyperbolic]
            raise NonHyperbolicLimit(
                f"limit equilibria {bad} are not hyperbolic (|lambda| <= {th.delta_hyp:g}); "
                "lower semicontinuity is not guaranteed, sweep aborted")
        ref[c] = eqs
    lvl.lab.limit_equilibria = ref["limit"]

    def run(eps):
        sys, ops, load = lvl.pert(eps)
        Ee = find_equilibria(sys, load, seed=cfg.seed, delta_hyp=th.delta_hyp, merge_radius=th.merge_radius)
        out = {}
        for c in CASES:
            out[c] = {
                "upper": set_semidistance(ops, Ee.vectors, ref[c].vectors, "upper"),
                "lower": set_semidistance(ops, Ee.vectors, ref[c].vectors, "lower"),
                "n_eps": len(Ee),
                "n_limit": len(ref[c]),
                "card_match": len(Ee) == len(ref[c]),
            }
        return out

    return run


def _trajectory_kernel(lvl: Level):
    cfg = lvl.lab.cfg
    tm = cfg.time
    V = lvl.mesh0.vertices
    fam = lvl.lab.family
    x = V[:, 0] / fam.width
    y = V[:, 1] / fam.height
    u0 = 0.3 + 0.5 * np.cos(np.pi * x) * np.cos(np.pi * y)
    ref = {c: integrate(lvl.sys0[c], lvl.load0(c), u0, tm.T, tm.dt, tm.scheme, checkpoints=tm.checkpoints,
                        stop_early=False)
           for c in CASES}

    def run(eps):
        sys, ops, load = lvl.pert(eps)
        tr = integrate(sys, load, extend_E(ops, u0), tm.T, tm.dt, tm.scheme, checkpoints=tm.checkpoints,
                       stop_early=False)
        out = {}
        for c in CASES:
            vals = {t: norms(sys, tr.checkpoints[t] - extend_E(ops, ref[c].checkpoints[t]))["L2"]
                    for t in tm.checkpoints}
            out[c] = {"metric": max(vals.values()), **{f"t={t:g}": v for t, v in vals.items()}}
        return out

    return run


def _attractor_kernel(lvl: Level):
    cfg = lvl.lab.cfg
    th, at = cfg.thresholds, cfg.attractor
    seeds0 = default_seeds(lvl.sys0["limit"], cfg.seed, n_bumps=at.n_seeds, constants=())
    ref = {}
    for c in CASES:
        s0, L0 = lvl.sys0[c], lvl.load0(c)
        eqs = find_equilibria(s0, L0, seed=cfg.seed, delta_hyp=th.delta_hyp, merge_radius=th.merge_radius)
        ref[c] = sample_attractor(s0, L0, eqs, seeds0, at.T_max, at.dt, at.kick, at.spacing)

    def run(eps):
        sys, ops, load = lvl.pert(eps)
        eqs = find_equilibria(sys, load, seed=cfg.seed, delta_hyp=th.delta_hyp, merge_radius=th.merge_radius)
        seeds = [extend_E(ops, s) for s in seeds0]
        A = sample_attractor(sys, load, eqs, seeds, at.T_max, at.dt, at.kick, at.spacing)
        out = {}
        for c in CASES:
            out[c] = {
                "upper": set_semidistance(ops, A.points, ref[c].points, "upper"),
                "lower": set_semidistance(ops, A.points, ref[c].points, "lower"),
                "n_eps": len(A.points),
                "n_limit": len(ref[c].points),
                "transients": int(sum(A.transient) + sum(ref[c].transient)),
            }
        return out

    return run


KERNELS = {
    "resolvent": (_resolvent_kernel, ("metric",), ("limit",)),
    "nonlinearity": (_nonlinearity_kernel, ("metric",), CASES),
    "spectral": (_spectral_kernel, ("metric",), CASES),
    "equilibria": (_equilibria_kernel, ("upper", "lower"), CASES),
    "trajectory": (_trajectory_kernel, ("metric",), CASES),
    "attractor": (_attractor_kernel, ("upper", "lower"), CASES),
}


def run_sweep(lab: Lab, name: str) -> SweepResult:
    """Evaluate one sweep at every configured mesh size and attach verdicts."""
    kernel, metrics, cases = KERNELS[name]
    res = SweepResult(name, metrics)
    th = lab.cfg.thresholds
    for h in lab.hs:
        run = kernel(lab.level(h))
        per_eps = lab.map_eps(run)
        for eps, out in zip(lab.family.epsilons, per_eps):
            for c in cases:
                res.rows.append({"case": c, "epsilon": eps, "h": h, **out[c]})
    h0 = lab.hs[0]
    for m in metrics:
        eps, v = res.series(m, "limit", h0)
        rel = None
        if len(lab.hs) > 1:
            _, v2 = res.series(m, "limit", lab.hs[1])
            rel = [None if max(a, b) <= th.noise else abs(a - b) / max(b, th.noise) for a, b in zip(v, v2)]
            res.attribution[m] = rel
        res.slopes[m] = fitted_slope(eps, v, th.noise)
        verdict = judge(eps, v, th, rel)
        if name == "attractor":
            if any(r.get("transients", 0) for r in res.rows):
                verdict = "inconclusive (transients present)"
            elif verdict == "consistent":
                verdict = f"{m}-semicontinuity consistent"
        res.verdicts[("limit", m)] = verdict
        if "control" in cases:
            ce, cv = res.series(m, "control", h0)
            cverdict = judge(ce, cv, th)
            if name == "attractor" and cverdict == "consistent":
                cverdict = f"{m}-semicontinuity consistent"
            res.verdicts[("control", m)] = cverdict
    if name in ("equilibria", "attractor"):
        res.caveats.append("multistart may miss equilibria; completeness of the sample is not verified")
    return res
