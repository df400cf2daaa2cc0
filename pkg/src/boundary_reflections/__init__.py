"""Method of reflections for 2D Laplace problems around several objects."""

__version__ = "0.1.0"

from .bvp import BoundaryCondition, ProblemSpec, solve_direct, solve_initial, solve_one_object
from .geometry import BoundaryCurve, GeometryLayout, layout_metrics, make_circle, make_cshape
from .potentials import HarmonicField, evaluate_field, layer_matrix
from .reflections import (
    ReflectionForm,
    correction_residual,
    estimate_contraction,
    kappa_criterion,
    run_reflections,
)

__all__ = [
    "BoundaryCondition",
    "BoundaryCurve",
    "GeometryLayout",
    "HarmonicField",
    "ProblemSpec",
    "ReflectionForm",
    "correction_residual",
    "estimate_contraction",
    "evaluate_field",
    "kappa_criterion",
    "layer_matrix",
    "layout_metrics",
    "make_circle",
    "make_cshape",
    "run_reflections",
    "solve_direct",
    "solve_initial",
    "solve_one_object",
]
