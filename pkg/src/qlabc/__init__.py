"""ABC-MCMC with quasi-likelihood proposal distributions.

Builds proposal densities for likelihood-free MCMC automatically from a
pilot-run regression of summary statistics on parameters, and bundles
the benchmark simulators and command line used to exercise them.
"""

from ._kernels import BACKEND
from .errors import QlabcError
from .inference import (
    ChainConfig,
    ChainOutput,
    DistanceSpec,
    ProposalQL,
    abc_importance_sampling,
    abc_mcmc,
    abc_rejection,
    diagnostics,
    distance,
    log_bayes_factor,
    select_epsilon,
    verify_proposition1,
)
from .models import get_model
from .numerics import RandomStream
from .smoothers import fit_additive, fit_spline, fit_variance
from .surrogate import (
    PilotData,
    PilotDesign,
    SurrogateModel,
    fit_surrogate,
    load_surrogate,
    run_pilot,
    save_surrogate,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ChainConfig",
    "ChainOutput",
    "DistanceSpec",
    "PilotData",
    "PilotDesign",
    "ProposalQL",
    "QlabcError",
    "RandomStream",
    "SurrogateModel",
    "__version__",
    "abc_importance_sampling",
    "abc_mcmc",
    "abc_rejection",
    "diagnostics",
    "distance",
    "fit_additive",
    "fit_spline",
    "fit_surrogate",
    "fit_variance",
    "get_model",
    "load_surrogate",
    "log_bayes_factor",
    "run_pilot",
    "save_surrogate",
    "select_epsilon",
    "verify_proposition1",
]
