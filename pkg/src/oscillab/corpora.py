"""Built-in experiment corpora, stored as configuration text."""
from __future__ import annotations

from .config import ExperimentConfig, loads_config

FLAT_SANITY = """
name = "flat-sanity"
epsilons = [0.2, 0.1, 0.05]

[profile]
kind = "flat"

[mesh]
h = 0.0625
refine = false

[nonlinearity.f]
name = "bistable"
params = { a = 2.0, b = 3.0 }

[nonlinearity.g]
name = "logistic"
params = { r = 0.25 }

[attractor]
T_max = 20.0
n_seeds = 2
"""

SAWTOOTH_GAMMA = """
name = "sawtooth-gamma"
epsilons = [0.04, 0.02, 0.01, 0.005]

[profile]
kind = "sawtooth"
slope = 1.0

[mesh]
h = 0.03125
refine = true

[nonlinearity.f]
name = "bistable"
params = { a = 2.0, b = 3.0 }

[nonlinearity.g]
name = "logistic"
params = { r = 0.25 }
"""

CORPORA = {"flat-sanity": FLAT_SANITY, "sawtooth-gamma": SAWTOOTH_GAMMA}


def corpus(name: str) -> ExperimentConfig:
    if name not in CORPORA:
        raise KeyError(f"unknown corpus {name!r}; available: {sorted(CORPORA)}")
    return loads_config(CORPORA[name])
