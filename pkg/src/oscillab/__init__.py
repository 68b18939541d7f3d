"""Reaction-diffusion problems on domains with rapidly oscillating boundaries.

Finite-element tools to compare the perturbed problems on ``Omega_eps``
with the gamma-weighted limit problem on the reference domain.
"""
from .config import ConfigError, ExperimentConfig, load_config, loads_config
from .geometry import BoundaryProfile, DomainFamily, profile_from_spec
from .homogenization import gamma_for_family
from .mesh import mesh_domain
from .fem import assemble

__version__ = "0.1.0"

__all__ = [
    "BoundaryProfile",
    "ConfigError",
    "DomainFamily",
    "ExperimentConfig",
    "assemble",
    "gamma_for_family",
    "load_config",
    "loads_config",
    "mesh_domain",
    "profile_from_spec",
]
