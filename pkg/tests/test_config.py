import math

import pytest

from oscillab.config import ConfigError, ExperimentConfig, loads_config, parse_config
from oscillab.corpora import CORPORA, corpus

FULL = """
name = "demo"
epsilons = [0.1, 0.05]
sweeps = ["resolvent", "spectral"]
output_dir = "out"
seed = 7

[domain]
width = 1.0
height = 1.0
oscillating = ["top", "bottom"]
core_margin = 0.2

[profile]
kind = "sine"
amplitude_coeff = 0.5
wavenumber = 2.0
amplitude_law = [1.0, 1.0]
period_law = {coeff = 1.0, power = 1.0}

[mesh]
h = 0.05
refine = false

[nonlinearity]
f = {name = "bistable", params = {a = 2.0, b = 3.0}}
g = {name = "logistic", params = {r = 0.25}}
cutoff = 4.0

[time]
dt = 0.01
T = 2.0
scheme = "implicit_euler"
checkpoints = [0.5, 2.0]

[gamma]
windows = 4
eps = 0.01
nodes_per_period = 16

[thresholds]
delta_hyp = 1e-4
ratio = 0.4

[spectral]
k = 4
mode = "equilibria"

[attractor]
T_max = 10.0
n_seeds = 1
"""


def test_full_schema_round_trip():
    cfg = loads_config(FULL)
    assert cfg.name == "demo" and cfg.seed == 7 and cfg.epsilons == (0.1, 0.05)
    assert cfg.domain.oscillating == ("top", "bottom")
    assert cfg.profile.kind == "sine" and cfg.profile.period_law == (1.0, 1.0)
    assert cfg.nonlinearity.f.name == "bistable" and cfg.nonlinearity.cutoff == 4.0
    f, g = cfg.nonlinearity.build()
    assert f(1.0) == pytest.approx(1.0) and g(1.0) == pytest.approx(0.0)
    assert cfg.time.scheme == "implicit_euler" and cfg.time.checkpoints == (0.5, 2.0)
    assert cfg.thresholds.delta_hyp == 1e-4 and cfg.thresholds.ratio == 0.4
    assert cfg.spectral.k == 4 and cfg.attractor.n_seeds == 1
    fam = cfg.family()
    assert fam.profile.kind == "sine" and fam.core_margin == 0.2
    d = cfg.to_dict()
    assert d["nonlinearity"]["cutoff"] == 4.0
    assert math.isinf(ExperimentConfig().nonlinearity.cutoff)
    assert ExperimentConfig().to_dict()["nonlinearity"]["cutoff"] is None


def test_defaults_when_empty():
    cfg = loads_config("")
    assert cfg.epsilons == (0.2, 0.1, 0.05, 0.025)
    assert cfg.gamma.nodes_per_period == 32 and cfg.thresholds.attribution == 0.25


@pytest.mark.parametrize("text, path", [
    ("epsilons = [0.1, 0.2]", "epsilons"),
    ("epsilons = []", "epsilons"),
    ("epsilons = [1.5]", "epsilons[0]"),
    ("epsilons = [0.1, 'x']", "epsilons[1]"),
    ("[mesh]\nh = -1", "mesh.h"),
    ("[mesh]\nh = 0.1\nrefine = 1", "mesh.refine"),
    ("[mesh]\nsize = 0.1", "mesh.size"),
    ("colour = 1", "colour"),
    ("[time]\ndt = 0.1\nT = 0.01", "time.T"),
    ("[time]\nscheme = 'rk4'", "time.scheme"),
    ("[time]\nT = 1.0\ncheckpoints = [2.0]", "time.checkpoints"),
    ("[profile]\nkind = 'square'", "profile.kind"),
    ("[profile]\nkind = 'table'", "profile.samples"),
    ("[profile]\nkind = 'table'\nsamples = [[0, 0], [0, 1]]", "profile.samples"),
    ("[nonlinearity]\nf = {name = 'cubic'}", "nonlinearity.f.name"),
    ("[nonlinearity]\nf = {name = 'bistable', params = {q = 1.0}}", "nonlinearity.f.params"),
    ("[nonlinearity]\ncutoff = 0", "nonlinearity.cutoff"),
    ("sweeps = ['everything']", "sweeps[0]"),
    ("seed = -1", "seed"),
    ("seed = 1.5", "seed"),
    ("[spectral]\nk = 50", "spectral.k"),
    ("[spectral]\nmode = 'all'", "spectral.mode"),
    ("[thresholds]\nratio = -0.5", "thresholds.ratio"),
    ("[domain]\noscillating = ['top', 'left']", "domain"),
    ("[domain]\noscillating = ['middle']", "domain.oscillating"),
    ("mesh = 3", "mesh"),
    ("epsilons = [0.1,", "<file>"),
])
def test_schema_violations_name_the_key(text, path):
    with pytest.raises(ConfigError) as info:
        loads_config(text)
    assert info.value.path == path
    assert str(info.value).startswith(f"{path}:")


@pytest.mark.parametrize("name", sorted(CORPORA))
def test_corpora_validate(name):
    cfg = corpus(name)
    assert cfg.name == name
    cfg.family()
    assert list(cfg.epsilons) == sorted(cfg.epsilons, reverse=True)
    # corpora survive a round trip through the parser
    d = cfg.to_dict()
    d["nonlinearity"].pop("cutoff")
    for key in ("f", "g"):
        d["nonlinearity"][key] = {"name": d["nonlinearity"][key]["name"], "params": d["nonlinearity"][key]["params"]}
    d["profile"] = {k: v for k, v in d["profile"].items() if k != "samples"}
    d["epsilons"] = list(d["epsilons"])
    d["sweeps"] = list(d["sweeps"])
    d["domain"]["oscillating"] = list(d["domain"]["oscillating"])
    d["time"]["checkpoints"] = list(d["time"]["checkpoints"])
    d["profile"]["amplitude_law"] = list(d["profile"]["amplitude_law"])
    d["profile"]["period_law"] = list(d["profile"]["period_law"])
    again = parse_config(d)
    assert again.to_dict() == cfg.to_dict()
