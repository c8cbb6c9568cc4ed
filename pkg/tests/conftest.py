"""Shared fixtures: fitted surrogates are expensive, build them once."""

from __future__ import annotations

import numpy as np
import pytest

from qlabc.models import get_model
from qlabc.numerics import RandomStream
from qlabc.smoothers import VarianceSurface, fit_spline
from qlabc.surrogate import PilotDesign, SurrogateModel, fit_surrogate, run_pilot


def make_identity_surrogate(half_width: float = 2000.0, variance: float = 1.0) -> SurrogateModel:
    """Exact f(t) = t surrogate with constant variance, for reductions."""
    x = np.linspace(-half_width, half_width, 1001)
    spline = fit_spline(x, x.copy())
    return SurrogateModel(
        model_name="identity",
        domain=np.array([[-half_width, half_width]]),
        forward_spline=spline,
        variance_surfaces=(VarianceSurface(kind="constant", constant_value=variance),),
        axes=[x],
        forward_table=spline.value(x)[:, None],
    )


def make_linear_surrogate(slope: float = 2.0, half_width: float = 4.0, variance: float = 1.0) -> SurrogateModel:
    x = np.linspace(-half_width, half_width, 1001)
    spline = fit_spline(x, slope * x)
    return SurrogateModel(
        model_name="linear",
        domain=np.array([[-half_width, half_width]]),
        forward_spline=spline,
        variance_surfaces=(VarianceSurface(kind="constant", constant_value=variance),),
        axes=[x],
        forward_table=spline.value(x)[:, None],
    )


@pytest.fixture(scope="session")
def identity_surrogate():
    return make_identity_surrogate()


@pytest.fixture(scope="session")
def coalescent_model():
    return get_model("coalescent", sample_size=100)


@pytest.fixture(scope="session")
def coalescent_pilot(coalescent_model):
    design = PilotDesign(coalescent_model.spec.param_box, 1000)
    return run_pilot(design, coalescent_model, master_seed=11)


@pytest.fixture(scope="session")
def coalescent_surrogate(coalescent_pilot):
    return fit_surrogate(coalescent_pilot, "smooth")


@pytest.fixture(scope="session")
def coalescent_surrogate_constant(coalescent_pilot):
    return fit_surrogate(coalescent_pilot, "constant")


@pytest.fixture(scope="session")
def gamma_model():
    return get_model("gamma", sample_size=10)


@pytest.fixture(scope="session")
def gamma_pilot(gamma_model):
    design = PilotDesign(gamma_model.spec.param_box, 100)
    return run_pilot(design, gamma_model, master_seed=7)


@pytest.fixture(scope="session")
def gamma_surrogate(gamma_pilot):
    return fit_surrogate(gamma_pilot, "smooth")


@pytest.fixture(scope="session")
def rng():
    return RandomStream(20240601).generator
