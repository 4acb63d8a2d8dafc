"""Bayesian two-stage estimation of the mode and maximum of a regression surface.

Tensor-product B-spline posteriors give a first-stage credible rectangle for
the mode; a local quadratic posterior fitted to fresh samples inside the
rectangle refines it.
"""

from ._backend import BACKEND
from .basis import (
    KnotVector,
    TensorBasisSpec,
    basis_matrix,
    derivative_matrix,
    design_matrix,
    make_uniform_knots,
    tensor_derivative_matrix,
)
from .credible import (
    BandRadius,
    CredibleRect,
    ModeEstimate,
    argmax_surface,
    band_radius,
    credible_sets_membership,
    envelope_rect,
    induce_mu_M_samples,
    mode_of_mean,
)
from .experiments import ExperimentSpec, RunRecord, f0_surface, monte_carlo
from .posterior import (
    CoefficientPosterior,
    GaussianCoeffPrior,
    NumericalError,
    SurfacePosterior,
    fit,
    marginal_logpost_J,
)
from .stage2 import PolySpec, Stage2Prior, fit_stage2, induce_stage2_mu_M, solve_mode

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "KnotVector", "TensorBasisSpec", "basis_matrix", "derivative_matrix",
    "design_matrix", "make_uniform_knots", "tensor_derivative_matrix", "BandRadius",
    "CredibleRect", "ModeEstimate", "argmax_surface", "band_radius",
    "credible_sets_membership", "envelope_rect", "induce_mu_M_samples", "mode_of_mean",
    "ExperimentSpec", "RunRecord", "f0_surface", "monte_carlo", "CoefficientPosterior",
    "GaussianCoeffPrior", "NumericalError", "SurfacePosterior", "fit", "marginal_logpost_J",
    "PolySpec", "Stage2Prior", "fit_stage2", "induce_stage2_mu_M", "solve_mode",
]
