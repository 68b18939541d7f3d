"""Experiment configuration: TOML file -> validated dataclasses.

Validation errors raise :class:`ConfigError` carrying the dotted key path
of the offending entry (for example ``epsilons`` or ``mesh.h``).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import tomli

from .geometry import BoundaryProfile, DomainFamily, ScaleLaw
from .nonlinear import REGISTRY as NL_REGISTRY
from .nonlinear import Nonlinearity, make

SWEEPS = ("resolvent", "nonlinearity", "spectral", "equilibria", "trajectory", "attractor")
SIDES = ("bottom", "right", "top", "left")
PROFILE_KINDS = ("flat", "sawtooth", "sine", "table")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class DomainSpec:
    width: float = 1.0
    height: float = 1.0
    oscillating: tuple = ("top",)
    core_margin: float = 0.25


@dataclass
class ProfileSpec:
    kind: str = "flat"
    slope: float = 1.0
    amplitude_coeff: float = 1.0
    wavenumber: float = 1.0
    samples: tuple = ()
    periodic: bool = True
    amplitude_law: tuple = (1.0, 1.0)
    period_law: tuple = (1.0, 1.0)

    def build(self) -> BoundaryProfile:
        return BoundaryProfile(self.kind, self.slope, self.amplitude_coeff, self.wavenumber,
                               tuple(tuple(s) for s in self.samples), self.periodic,
                               ScaleLaw(*self.amplitude_law), ScaleLaw(*self.period_law))


@dataclass
class MeshSpec:
    h: float = 1 / 64
    refine: bool = True


@dataclass
class NLSpec:
    name: str = "constant"
    params: dict = field(default_factory=dict)


@dataclass
class NonlinearitySpec:
    f: NLSpec = field(default_factory=NLSpec)
    g: NLSpec = field(default_factory=NLSpec)
    cutoff: float = math.inf

    def build(self) -> tuple[Nonlinearity, Nonlinearity]:
        U = self.cutoff if math.isfinite(self.cutoff) else None
        return make(self.f.name, self.f.params, U), make(self.g.name, self.g.params, U)


@dataclass
class TimeSpec:
    dt: float = 1e-3
    T: float = 1.0
    scheme: str = "imex_euler"
    checkpoints: tuple = (0.1, 0.5, 1.0)


@dataclass
class GammaSpec:
    windows: int = 8
    eps: float = 1e-3
    nodes_per_period: int = 32


@dataclass
class Thresholds:
    delta_hyp: float = 1e-3
    merge_radius: float = 1e-4
    ratio: float = 0.5
    plateau: float = 0.9
    attribution: float = 0.25
    noise: float = 1e-8


@dataclass
class SpectralSpec:
    k: int = 5
    mode: str = "zero"  # or "equilibria"
    cluster_tol: float = 1e-6


@dataclass
class AttractorSpec:
    T_max: float = 40.0
    dt: float = 1e-2
    kick: float = 1e-3
    spacing: float = 5e-3
    n_seeds: int = 4


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    domain: DomainSpec = field(default_factory=DomainSpec)
    profile: ProfileSpec = field(default_factory=ProfileSpec)
    epsilons: tuple = (0.2, 0.1, 0.05, 0.025)
    mesh: MeshSpec = field(default_factory=MeshSpec)
    nonlinearity: NonlinearitySpec = field(default_factory=NonlinearitySpec)
    time: TimeSpec = field(default_factory=TimeSpec)
    gamma: GammaSpec = field(default_factory=GammaSpec)
    sweeps: tuple = SWEEPS
    output_dir: str = "oscillab-out"
    seed: int = 0
    thresholds: Thresholds = field(default_factory=Thresholds)
    spectral: SpectralSpec = field(default_factory=SpectralSpec)
    attractor: AttractorSpec = field(default_factory=AttractorSpec)

    def family(self) -> DomainFamily:
        d = self.domain
        return DomainFamily(self.profile.build(), tuple(self.epsilons), tuple(d.oscillating),
                            d.width, d.height, d.core_margin)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["nonlinearity"]["cutoff"] = (None if not math.isfinite(self.nonlinearity.cutoff)
                                         else self.nonlinearity.cutoff)
        return out


# -- validation helpers ----------------------------------------------------


def _num(v, path, *, positive=False, nonneg=False, integer=False, lo=None, hi=None):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, f"expected a number, got {type(v).__name__}")
    if integer and not isinstance(v, int):
        raise ConfigError(path, "expected an integer")
    v = int(v) if integer else float(v)
    if not math.isfinite(v):
        raise ConfigError(path, "must be finite")
    if positive and v <= 0:
        raise ConfigError(path, "must be positive")
    if nonneg and v < 0:
        raise ConfigError(path, "must be nonnegative")
    if lo is not None and v <= lo:
        raise ConfigError(path, f"must exceed {lo}")
    if hi is not None and v >= hi:
        raise ConfigError(path, f"must be below {hi}")
    return v


def _table(v, path) -> dict:
    if not isinstance(v, dict):
        raise ConfigError(path, "expected a table")
    return v


def _check_keys(tbl: dict, allowed, path: str):
    for k in tbl:
        if k not in allowed:
            where = f"{path}.{k}" if path else k
            raise ConfigError(where, "unknown key")


def _law(v, path) -> tuple:
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return (_num(v, path, positive=True), 1.0)
    if isinstance(v, list):
        if len(v) != 2:
            raise ConfigError(path, "expected [coeff, power]")
        return (_num(v[0], f"{path}[0]", positive=True), _num(v[1], f"{path}[1]", positive=True))
    t = _table(v, path)
    _check_keys(t, ("coeff", "power"), path)
    return (_num(t.get("coeff", 1.0), f"{path}.coeff", positive=True),
            _num(t.get("power", 1.0), f"{path}.power", positive=True))


def _nl(v, path) -> NLSpec:
    t = _table(v, path)
    _check_keys(t, ("name", "params"), path)
    name = t.get("name")
    if name not in NL_REGISTRY:
        raise ConfigError(f"{path}.name", f"must be one of {sorted(NL_REGISTRY)}")
    params = _table(t.get("params", {}), f"{path}.params")
    params = {k: _num(p, f"{path}.params.{k}") for k, p in params.items()}
    try:
        NL_REGISTRY[name](**params)
    except TypeError as exc:
        raise ConfigError(f"{path}.params", str(exc)) from None
    return NLSpec(name, params)


def parse_config(data: dict) -> ExperimentConfig:
    """Validate a decoded TOML document."""
    cfg = ExperimentConfig()
    top = ("name", "epsilons", "sweeps", "output_dir", "seed", "domain", "profile", "mesh",
           "nonlinearity", "time", "gamma", "thresholds", "spectral", "attractor")
    _check_keys(data, top, "")
    if "name" in data:
        if not isinstance(data["name"], str):
            raise ConfigError("name", "expected a string")
        cfg.name = data["name"]

    if "epsilons" in data:
        eps = data["epsilons"]
        if not isinstance(eps, list) or not eps:
            raise ConfigError("epsilons", "expected a nonempty list")
        vals = [_num(e, f"epsilons[{i}]", lo=0.0, hi=1.0) for i, e in enumerate(eps)]
        if any(b >= a for a, b in zip(vals, vals[1:])):
            raise ConfigError("epsilons", "must be strictly decreasing")
        cfg.epsilons = tuple(vals)

    if "sweeps" in data:
        sw = data["sweeps"]
        if not isinstance(sw, list):
            raise ConfigError("sweeps", "expected a list")
        for i, s in enumerate(sw):
            if s not in SWEEPS:
                raise ConfigError(f"sweeps[{i}]", f"must be one of {list(SWEEPS)}")
        cfg.sweeps = tuple(sw)

    if "output_dir" in data:
        if not isinstance(data["output_dir"], str):
            raise ConfigError("output_dir", "expected a string")
        cfg.output_dir = data["output_dir"]
    if "seed" in data:
        cfg.seed = _num(data["seed"], "seed", nonneg=True, integer=True)

    if "domain" in data:
        t = _table(data["domain"], "domain")
        _check_keys(t, ("width", "height", "oscillating", "core_margin"), "domain")
        d = cfg.domain
        d.width = _num(t.get("width", d.width), "domain.width", positive=True)
        d.height = _num(t.get("height", d.height), "domain.height", positive=True)
        d.core_margin = _num(t.get("core_margin", d.core_margin), "domain.core_margin", positive=True)
        osc = t.get("oscillating", list(d.oscillating))
        if not isinstance(osc, list) or any(s not in SIDES for s in osc):
            raise ConfigError("domain.oscillating", f"expected a list drawn from {list(SIDES)}")
        d.oscillating = tuple(osc)

    if "profile" in data:
        t = _table(data["profile"], "profile")
        _check_keys(t, ("kind", "slope", "amplitude_coeff", "wavenumber", "samples", "periodic",
                        "amplitude_law", "period_law"), "profile")
        p = cfg.profile
        kind = t.get("kind", p.kind)
        if kind not in PROFILE_KINDS:
            raise ConfigError("profile.kind", f"must be one of {list(PROFILE_KINDS)}")
        p.kind = kind
        for key in ("slope", "amplitude_coeff", "wavenumber"):
            if key in t:
                setattr(p, key, _num(t[key], f"profile.{key}"))
        if "periodic" in t:
            if not isinstance(t["periodic"], bool):
                raise ConfigError("profile.periodic", "expected true or false")
            p.periodic = t["periodic"]
        if "samples" in t:
            s = t["samples"]
            if not isinstance(s, list) or len(s) < 2:
                raise ConfigError("profile.samples", "expected a list of at least two [t, value] pairs")
            rows = []
            for i, r in enumerate(s):
                if not isinstance(r, list) or len(r) != 2:
                    raise ConfigError(f"profile.samples[{i}]", "expected a [t, value] pair")
                rows.append((_num(r[0], f"profile.samples[{i}][0]"), _num(r[1], f"profile.samples[{i}][1]")))
            if any(b[0] <= a[0] for a, b in zip(rows, rows[1:])):
                raise ConfigError("profile.samples", "coordinates must increase")
            p.samples = tuple(rows)
        elif kind == "table":
            raise ConfigError("profile.samples", "required for kind = 'table'")
        for key in ("amplitude_law", "period_law"):
            if key in t:
                setattr(p, key, _law(t[key], f"profile.{key}"))

    if "mesh" in data:
        t = _table(data["mesh"], "mesh")
        _check_keys(t, ("h", "refine"), "mesh")
        cfg.mesh.h = _num(t.get("h", cfg.mesh.h), "mesh.h", positive=True, hi=1.0)
        if "refine" in t:
            if not isinstance(t["refine"], bool):
                raise ConfigError("mesh.refine", "expected true or false")
            cfg.mesh.refine = t["refine"]

    if "nonlinearity" in data:
        t = _table(data["nonlinearity"], "nonlinearity")
        _check_keys(t, ("f", "g", "cutoff"), "nonlinearity")
        nl = cfg.nonlinearity
        if "f" in t:
            nl.f = _nl(t["f"], "nonlinearity.f")
        if "g" in t:
            nl.g = _nl(t["g"], "nonlinearity.g")
        if "cutoff" in t:
            nl.cutoff = _num(t["cutoff"], "nonlinearity.cutoff", positive=True)

    if "time" in data:
        t = _table(data["time"], "time")
        _check_keys(t, ("dt", "T", "scheme", "checkpoints"), "time")
        tm = cfg.time
        tm.dt = _num(t.get("dt", tm.dt), "time.dt", positive=True)
        tm.T = _num(t.get("T", tm.T), "time.T", positive=True)
        if tm.T < tm.dt:
            raise ConfigError("time.T", "must be at least time.dt")
        scheme = t.get("scheme", tm.scheme)
        if scheme not in ("imex_euler", "implicit_euler"):
            raise ConfigError("time.scheme", "must be 'imex_euler' or 'implicit_euler'")
        tm.scheme = scheme
        if "checkpoints" in t:
            cps = t["checkpoints"]
            if not isinstance(cps, list) or not cps:
                raise ConfigError("time.checkpoints", "expected a nonempty list")
            vals = [_num(c, f"time.checkpoints[{i}]", nonneg=True) for i, c in enumerate(cps)]
            if max(vals) > tm.T + 1e-12:
                raise ConfigError("time.checkpoints", "checkpoints must not exceed time.T")
            tm.checkpoints = tuple(vals)

    if "gamma" in data:
        t = _table(data["gamma"], "gamma")
        _check_keys(t, ("windows", "eps", "nodes_per_period"), "gamma")
        g = cfg.gamma
        g.windows = _num(t.get("windows", g.windows), "gamma.windows", positive=True, integer=True)
        g.eps = _num(t.get("eps", g.eps), "gamma.eps", lo=0.0, hi=1.0)
        g.nodes_per_period = _num(t.get("nodes_per_period", g.nodes_per_period), "gamma.nodes_per_period",
                                  positive=True, integer=True)

    if "thresholds" in data:
        t = _table(data["thresholds"], "thresholds")
        th = cfg.thresholds
        _check_keys(t, tuple(asdict(th)), "thresholds")
        for k in asdict(th):
            if k in t:
                setattr(th, k, _num(t[k], f"thresholds.{k}", positive=True))

    if "spectral" in data:
        t = _table(data["spectral"], "spectral")
        _check_keys(t, ("k", "mode", "cluster_tol"), "spectral")
        sp_ = cfg.spectral
        sp_.k = _num(t.get("k", sp_.k), "spectral.k", positive=True, integer=True)
        if sp_.k > 20:
            raise ConfigError("spectral.k", "at most 20 eigenpairs")
        mode = t.get("mode", sp_.mode)
        if mode not in ("zero", "equilibria"):
            raise ConfigError("spectral.mode", "must be 'zero' or 'equilibria'")
        sp_.mode = mode
        sp_.cluster_tol = _num(t.get("cluster_tol", sp_.cluster_tol), "spectral.cluster_tol", positive=True)

    if "attractor" in data:
        t = _table(data["attractor"], "attractor")
        at = cfg.attractor
        _check_keys(t, tuple(asdict(at)), "attractor")
        at.T_max = _num(t.get("T_max", at.T_max), "attractor.T_max", positive=True)
        at.dt = _num(t.get("dt", at.dt), "attractor.dt", positive=True)
        at.kick = _num(t.get("kick", at.kick), "attractor.kick", positive=True)
        at.spacing = _num(t.get("spacing", at.spacing), "attractor.spacing", positive=True)
        at.n_seeds = _num(t.get("n_seeds", at.n_seeds), "attractor.n_seeds", nonneg=True, integer=True)

    # cross-field checks
    try:
        cfg.family()
    except ValueError as exc:
        raise ConfigError("domain", str(exc)) from None
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    """Read and validate a TOML configuration file."""
    p = Path(path)
    try:
        with p.open("rb") as fh:
            data = tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError("<file>", f"not valid TOML: {exc}") from None
    return parse_config(data)


def loads_config(text: str) -> ExperimentConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError("<file>", f"not valid TOML: {exc}") from None
    return parse_config(data)


def merge(cfg: ExperimentConfig, **overrides: Any) -> ExperimentConfig:
    from dataclasses import replace

    return replace(cfg, **overrides)
