"""Built-in stochastic simulators behind one pluggable interface.

Every model exposes `spec` (a SimulatorSpec), `prior` (with logpdf and
sample) and `simulate(theta, rng) -> (statistics, aux)`, where `aux` is
extra per-draw data needed by specialised distances (only the pedigree
model uses it, returning simulated observed genotypes).
"""

from __future__ import annotations

from .base import (
    LogScaleExponentialPrior,
    SimulatorSpec,
    StandardNormalPrior,
    UniformBoxPrior,
)
from .coalescent import (
    CoalescentModel,
    coalescent_parametric_posterior,
    simulate_coalescent,
    simulate_tree_length,
)
from .gamma import GammaModel, simulate_gamma
from .gk import GKModel, gk_sample, gk_statistics
from .pedigree import (
    GENOTYPE_CODES,
    Pedigree,
    PedigreeModel,
    load_genotypes,
    load_pedigree,
    pedigree_statistics,
    simulate_pedigree,
)

MODEL_NAMES = ("coalescent", "gamma", "gk", "pedigree")

_BUILDERS = {
    "coalescent": CoalescentModel,
    "gamma": GammaModel,
    "gk": GKModel,
    "pedigree": PedigreeModel,
}


def get_model(name: str, **options):
    """Instantiate a built-in model by registry name."""
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {MODEL_NAMES}") from None
    return builder(**options)


__all__ = [
    "GENOTYPE_CODES",
    "MODEL_NAMES",
    "CoalescentModel",
    "GKModel",
    "GammaModel",
    "LogScaleExponentialPrior",
    "Pedigree",
    "PedigreeModel",
    "SimulatorSpec",
    "StandardNormalPrior",
    "UniformBoxPrior",
    "coalescent_parametric_posterior",
    "get_model",
    "gk_sample",
    "gk_statistics",
    "load_genotypes",
    "load_pedigree",
    "pedigree_statistics",
    "simulate_coalescent",
    "simulate_gamma",
    "simulate_pedigree",
    "simulate_tree_length",
]
