"""Reproducible numerical experiments built on the solver and the engine."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .bvp import BoundaryCondition, Discretization, ProblemSpec, solve_direct
from .geometry import GeometryLayout, make_circle, make_cshape, triangle_centers, triangle_layout
from .projection_lab import (
    intersection_projector,
    iterate,
    orth_projector,
    random_subspaces,
)
from .reflections import ReflectionForm, error_propagation, run_reflections

log = logging.getLogger(__name__)

FORM_KEYS = ("seq", "par", "avg")


def forms_for(n_objects: int) -> dict:
    return {
        "seq": ReflectionForm.sequential(),
        "par": ReflectionForm.parallel(),
        "avg": ReflectionForm.averaged(n_objects),
    }


def padded(errors: np.ndarray, length: int) -> np.ndarray:
    out = np.full(length, np.nan)
    out[: len(errors)] = errors
    return out


# --- three balls in a disc -------------------------------------------------------


def triangle_problem(side, radius=0.5, nodes=128, container_radius=10.0, container_nodes=256, datum=1.0):
    layout = triangle_layout(side, radius, nodes, container_radius, container_nodes)
    return ProblemSpec(layout, [BoundaryCondition.dirichlet(datum)] * 3)


@dataclass
class FormRun:
    status: str
    errors: np.ndarray
    contraction: Optional[float]
    max_correction_residual: float
    final_error: float


@dataclass
class TriangleRun:
    side: float
    runs: dict


def triangle_convergence(
    sides: Sequence[float],
    radius: float = 0.5,
    nodes: int = 128,
    container_radius: float = 10.0,
    container_nodes: int = 256,
    datum: float = 1.0,
    cycles: int = 100,
    tol: float = 1e-10,
    seed: int = 0,
    workers: int = 1,
    contraction_cycles: int = 40,
) -> list:
    """All three forms for ``cycles`` cycles at each triangle side length.

    Contraction factors come from error-propagation runs of the same problem.
    """
    out = []
    for side in sides:
        problem = triangle_problem(side, radius, nodes, container_radius, container_nodes, datum)
        disc = Discretization(problem)
        ref = solve_direct(problem, disc)
        runs = {}
        for key, form in forms_for(3).items():
            _, rep = run_reflections(
                problem, form, cycles, tol, reference=ref, seed=seed, workers=workers,
                stop_early=False, disc=disc,
            )
            _, prop = error_propagation(problem, form, contraction_cycles, reference=ref, disc=disc, seed=seed)
            runs[key] = FormRun(rep.status, rep.errors, prop.contraction, rep.max_correction_residual, rep.final_error)
            log.info("side %g %s: %s after %d cycles, error %.3e", side, key, rep.status, rep.cycles, rep.final_error)
        out.append(TriangleRun(float(side), runs))
    return out


# --- disc surrounded by a C-shape ------------------------------------------------


def divergence_problem(
    disk_radius=2.0,
    r_inner=3.0,
    r_outer=5.0,
    half_angle_deg=30.0,
    disk_nodes=128,
    cshape_nodes=1024,
    container_radius=10.0,
    container_nodes=256,
    dirichlet_datum=1.0,
    neumann_datum=1.0,
):
    disk = make_circle((0.0, 0.0), disk_radius, disk_nodes, name="disk")
    cshape = make_cshape((0.0, 0.0), r_inner, r_outer, math.radians(half_angle_deg), cshape_nodes, name="cshape")
    container = make_circle((0.0, 0.0), container_radius, container_nodes, name="container")
    layout = GeometryLayout((disk, cshape), container)
    return ProblemSpec(
        layout,
        [BoundaryCondition.dirichlet(dirichlet_datum), BoundaryCondition.neumann(neumann_datum)],
    )


def divergence_case(cycles: int = 200, tol: float = 1e-6, seed: int = 0, workers: int = 1, **geometry) -> dict:
    problem = divergence_problem(**geometry)
    disc = Discretization(problem)
    ref = solve_direct(problem, disc)
    runs = {}
    for key, form in forms_for(2).items():
        _, rep = run_reflections(problem, form, cycles, tol, reference=ref, seed=seed, workers=workers, disc=disc)
        runs[key] = FormRun(rep.status, rep.errors, rep.contraction, rep.max_correction_residual, rep.final_error)
        log.info("divergence case %s: %s after %d cycles", key, rep.status, rep.cycles)
    return runs


# --- exterior Neumann distance sweep ---------------------------------------------


def sweep_problem(side, radius=1.0, nodes=128, datum=None):
    """Three equal discs on a triangle of side ``side`` in the plane, Neumann data."""
    objs = tuple(
        make_circle(c, radius, nodes, name=f"ball{k + 1}") for k, c in enumerate(triangle_centers(side))
    )
    datum = datum if datum is not None else (lambda x, y, theta: np.cos(theta))
    return ProblemSpec(GeometryLayout(objs), [BoundaryCondition.neumann(datum)] * 3)


@dataclass
class SweepResult:
    distances: np.ndarray
    coefficients: dict
    slopes: dict
    intercepts: dict
    fit_count: int
    correction_residual: float = 0.0


def loglog_fit(x, y):
    """Least-squares line through ``(log x, log y)``; returns (slope, intercept)."""
    slope, intercept = np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)
    return float(slope), float(intercept)


def distance_sweep(
    distances: Sequence[float] = (2.5, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0),
    radius: float = 1.0,
    nodes: int = 128,
    cycles: int = 30,
    discard: int = 2,
    fit_count: int = 5,
    seed: int = 0,
    workers: int = 1,
) -> SweepResult:
    """Contraction factor of each form against the triangle side length.

    Errors are measured on the object boundary nodes; each factor is fitted
    from an error-propagation run.  Slopes use the ``fit_count`` largest
    distances.
    """
    d = np.array(sorted(float(x) for x in distances))
    coefs = {k: np.zeros(len(d)) for k in FORM_KEYS}
    corr = 0.0
    for idx, side in enumerate(d):
        problem = sweep_problem(side, radius, nodes)
        disc = Discretization(problem)
        ref = solve_direct(problem, disc)
        for key, form in forms_for(3).items():
            _, rep = error_propagation(
                problem, form, cycles, metric="boundary", reference=ref, disc=disc,
                discard=discard, seed=seed, workers=workers,
            )
            if rep.contraction is None:
                raise RuntimeError(f"could not fit a contraction factor at distance {side} ({key})")
            coefs[key][idx] = rep.contraction
            corr = max(corr, rep.max_correction_residual)
        log.info("distance %g: %s", side, {k: coefs[k][idx] for k in FORM_KEYS})
    n_fit = min(fit_count, len(d))
    slopes, intercepts = {}, {}
    for key in FORM_KEYS:
        slopes[key], intercepts[key] = loglog_fit(d[-n_fit:], coefs[key][-n_fit:])
    return SweepResult(d, coefs, slopes, intercepts, n_fit, corr)


# --- projections -----------------------------------------------------------------


@dataclass
class ProjectionDemo:
    errors_alternating: np.ndarray
    errors_averaged: np.ndarray
    intersection_dim: int


def projection_demo(seed: int = 0, dim: int = 8, dims=(5, 5, 6), shared: int = 2, steps: int = 200, bases=None):
    """Alternating and averaged projections from a random start, errors against the oracle."""
    rng = np.random.default_rng(seed)
    if bases is None:
        bases = random_subspaces(rng, dim, dims, shared)
    P = [orth_projector(b) for b in bases]
    P_cap = intersection_projector(bases)
    v0 = rng.standard_normal(P[0].shape[0])
    alt = iterate("alternating", P, v0, steps, oracle=P_cap)
    avg = iterate("averaged", P, v0, steps, oracle=P_cap)
    return ProjectionDemo(alt.errors, avg.errors, int(round(np.trace(P_cap))))
