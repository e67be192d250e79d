"""Derivative-based Shapley values, activity scores and DGSM."""

from .expr import Expression, eval_with_gradient, parse_expression
from .gradients import ADProvider, EvalCounter, ExternalModel, FDProvider, gradient_at
from .inputs import (
    CorrelatedNormal,
    IndependentInputs,
    Normal,
    Uniform,
    gauss_legendre_grid,
    kucherenko_constant,
    sample,
)
from .measures import (
    activity_scores,
    check_activity_bound,
    check_linear_identity,
    check_poincare_bound,
    dershap,
    dershap_truncated,
    dgsm,
    dgsm_abs,
    normalize,
)
from .models import builtin_catalog, get_model
from .oracles import imp, shapley_exact, sobol_estimate
from .spectral import CMatrix, abs_entrywise, eigendecompose, estimate_c_mc, estimate_c_quadrature

__version__ = "0.1.0"
