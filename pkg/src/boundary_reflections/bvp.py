"""Boundary value problems with per-object conditions.

Representation, one block of unknowns per carrier curve:

* container: double layer ``mu_0``; interior value trace equation.
* Dirichlet object: double layer ``mu`` plus a point source of strength
  ``alpha`` at the object's anchor; the side condition ``int mu ds = 0``
  makes the block square.
* Neumann object: single layer ``sigma``; exterior normal trace equation.
* fourth-type object: single layer ``sigma`` and an unknown boundary
  constant ``c``; equations ``trace - c = d`` and ``-int sigma ds = Q``.

Without a container the problem is posed in the unbounded exterior.  Fields
then decay or grow like a multiple of ``log|x|``; no constant is added at
infinity.  With that normalization the exterior Dirichlet problem is
singular for a curve of logarithmic capacity one (a unit circle, for
example); such layouts are reported as singular.  Exterior Neumann data
must have zero mean.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Union

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack

from .geometry import BoundaryCurve, GeometryLayout, layout_metrics
from .potentials import (
    HarmonicField,
    LayerDensity,
    ParticularSolution,
    PointSource,
    layer_eval_matrix,
    layer_matrix,
    point_source_matrix,
)

log = logging.getLogger(__name__)

CONTAINER = -1
KINDS = ("dirichlet", "neumann", "fourth")
COND_WARN = 1e12
ZERO_MEAN_TOL = 1e-8

Datum = Union[float, np.ndarray, Callable]


class ProblemError(ValueError):
    """Ill-posed or inconsistent problem data."""


class SingularProblemError(ProblemError):
    """The discrete system is numerically singular."""


@dataclass(frozen=True, eq=False)
class BoundaryCondition:
    """Condition on one object boundary.

    ``datum`` is a scalar, an array of nodal values, or a callable
    ``f(x, y, theta)`` where ``theta`` is the polar angle of a node about the
    object's anchor.  Fourth-type conditions carry only the total ``flux``.
    """

    kind: str
    datum: Datum = 0.0
    flux: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ProblemError(f"unknown condition type {self.kind!r}")

    @classmethod
    def dirichlet(cls, datum: Datum = 0.0) -> "BoundaryCondition":
        return cls("dirichlet", datum)

    @classmethod
    def neumann(cls, datum: Datum = 0.0) -> "BoundaryCondition":
        return cls("neumann", datum)

    @classmethod
    def fourth_type(cls, flux: float = 0.0) -> "BoundaryCondition":
        return cls("fourth", 0.0, float(flux))

    def nodal(self, curve: BoundaryCurve) -> np.ndarray:
        if self.kind == "fourth":
            return np.zeros(curve.n_nodes)
        d = self.datum
        if callable(d):
            x, y = curve.points[:, 0], curve.points[:, 1]
            theta = np.arctan2(y - curve.anchor[1], x - curve.anchor[0])
            vals = np.broadcast_to(np.asarray(d(x, y, theta), dtype=float), (curve.n_nodes,))
            return np.array(vals)
        arr = np.asarray(d, dtype=float)
        if arr.ndim == 0:
            return np.full(curve.n_nodes, float(arr))
        if arr.shape != (curve.n_nodes,):
            raise ProblemError(f"datum has {arr.size} values, curve {curve.name!r} has {curve.n_nodes} nodes")
        return arr.copy()

    def homogeneous(self) -> "BoundaryCondition":
        return BoundaryCondition(self.kind, 0.0, 0.0)


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Layout, one condition per object, optional particular solution.

    A volume source ``f`` enters only through ``particular`` (a known
    ``u_p`` with ``-Laplace(u_p) = f``); the container then carries
    ``u = 0``.
    """

    layout: GeometryLayout
    conditions: tuple
    particular: Optional[ParticularSolution] = None

    def __post_init__(self):
        object.__setattr__(self, "conditions", tuple(self.conditions))
        if len(self.conditions) != self.layout.n_objects:
            raise ProblemError(
                f"{len(self.conditions)} conditions for {self.layout.n_objects} objects"
            )
        if self.particular is not None and self.layout.exterior:
            raise ProblemError("a particular solution requires a container")
        layout_metrics(self.layout)

    @property
    def n_objects(self) -> int:
        return self.layout.n_objects

    @property
    def exterior(self) -> bool:
        return self.layout.exterior

    def data(self, i: int) -> np.ndarray:
        return self.conditions[i].nodal(self.layout.objects[i])

    def homogeneous(self) -> "ProblemSpec":
        """Same geometry and condition types, all data zero."""
        return ProblemSpec(self.layout, tuple(c.homogeneous() for c in self.conditions))


@dataclass(eq=False)
class BVPSolution:
    """Field plus the raw unknown blocks keyed by carrier (``CONTAINER`` or object index)."""

    field: HarmonicField
    blocks: dict
    constants: dict
    condition: float = 1.0


def _factor(matrix: np.ndarray, label: str):
    lu, piv = sla.lu_factor(matrix, check_finite=True)
    anorm = np.linalg.norm(matrix, 1)
    rcond, info = lapack.dgecon(lu, anorm, norm="1")
    rcond = float(rcond)
    if rcond < 1e-15 or not np.isfinite(rcond):
        raise SingularProblemError(f"{label}: system is singular (ill-posed condition combination)")
    cond = 1.0 / rcond
    if cond > COND_WARN:
        log.warning("%s: condition estimate %.3g exceeds %.0e", label, cond, COND_WARN)
    return (lu, piv), cond


class Discretization:
    """Cached Nyström matrices for one problem.

    Carrier keys are object indices ``0..N-1`` and ``CONTAINER``.  Each
    carrier owns an unknown block; ``trace_matrix`` maps a block to the value
    or normal trace of its field on any curve of the layout.
    """

    def __init__(self, problem: ProblemSpec):
        self.problem = problem
        self.layout = problem.layout
        self.kinds = [c.kind for c in problem.conditions]
        self._traces: dict = {}
        self._systems: dict = {}
        self._evals: dict = {}

    # -- bookkeeping
    def curve(self, key) -> BoundaryCurve:
        return self.layout.container if key == CONTAINER else self.layout.objects[key]

    @property
    def carriers(self) -> list:
        keys = list(range(self.problem.n_objects))
        return keys + ([CONTAINER] if self.layout.container is not None else [])

    def block_size(self, key) -> int:
        n = self.curve(key).n_nodes
        if key == CONTAINER or self.kinds[key] == "neumann":
            return n
        return n + 1

    def zero_block(self, key) -> np.ndarray:
        return np.zeros(self.block_size(key))

    def equation_trace(self, key) -> str:
        return "normal" if key != CONTAINER and self.kinds[key] == "neumann" else "value"

    # -- matrices
    def trace_matrix(self, source, target, trace: str) -> np.ndarray:
        """Block of ``source`` -> ``trace`` of its field on curve ``target``."""
        k = (source, target, trace)
        mat = self._traces.get(k)
        if mat is not None:
            return mat
        src, tgt = self.curve(source), self.curve(target)
        side = "interior" if target == CONTAINER else "exterior"
        if source == CONTAINER:
            mat = layer_matrix(src, tgt, "double", trace, side)
        else:
            kind = self.kinds[source]
            layer = "double" if kind == "dirichlet" else "single"
            core = layer_matrix(src, tgt, layer, trace, side)
            if kind == "dirichlet":
                col = point_source_matrix(src.anchor, tgt.points, trace, tgt.normals)
                mat = np.column_stack([core, col])
            elif kind == "fourth":
                mat = np.column_stack([core, np.zeros(tgt.n_nodes)])
            else:
                mat = core
        mat.setflags(write=False)
        self._traces[k] = mat
        return mat

    def eval_matrix(self, source, points_key, points) -> np.ndarray:
        """Block of ``source`` -> field values at a registered point set."""
        k = (source, points_key)
        mat = self._evals.get(k)
        if mat is not None:
            return mat
        src = self.curve(source)
        if source == CONTAINER:
            mat = layer_eval_matrix(src, points, "double")
        else:
            kind = self.kinds[source]
            layer = "double" if kind == "dirichlet" else "single"
            core = layer_eval_matrix(src, points, layer)
            if kind == "dirichlet":
                mat = np.column_stack([core, point_source_matrix(src.anchor, points)])
            elif kind == "fourth":
                mat = np.column_stack([core, np.zeros(len(points))])
            else:
                mat = core
        mat.setflags(write=False)
        self._evals[k] = mat
        return mat

    def _equation_rows(self, key, carriers) -> list:
        """Row blocks for the equations owned by carrier ``key``."""
        trace = self.equation_trace(key)
        main = [self.trace_matrix(src, key, trace) for src in carriers]
        if key == CONTAINER or self.kinds[key] == "neumann":
            return [main]
        n = self.curve(key).n_nodes
        w = self.curve(key).weights
        extra = []
        for pos, src in enumerate(carriers):
            width = self.block_size(src)
            row = np.zeros((1, width))
            if src == key:
                if self.kinds[key] == "dirichlet":
                    row[0, :n] = w
                else:
                    row[0, :n] = -w
                    main[pos] = main[pos].copy()
                    main[pos][:, n] = -1.0
            extra.append(row)
        return [main, extra]

    def system(self, carriers: tuple):
        """LU factors of the coupled system restricted to ``carriers``."""
        entry = self._systems.get(carriers)
        if entry is not None:
            return entry
        rows = []
        for key in carriers:
            rows.extend(self._equation_rows(key, carriers))
        matrix = np.block(rows)
        label = "system " + ",".join("container" if k == CONTAINER else f"O{k}" for k in carriers)
        entry = _factor(matrix, label)
        self._systems[carriers] = entry
        return entry

    def solve(self, carriers: tuple, rhs: dict, fluxes: dict) -> tuple:
        """Solve on ``carriers`` with main right-hand sides ``rhs[key]``.

        ``fluxes[key]`` supplies the side-condition value for fourth-type
        objects; Dirichlet side rows are zero.
        """
        parts = []
        for key in carriers:
            parts.append(np.asarray(rhs.get(key, np.zeros(self.curve(key).n_nodes)), dtype=float))
            if key != CONTAINER and self.kinds[key] != "neumann":
                parts.append(np.array([fluxes.get(key, 0.0) if self.kinds[key] == "fourth" else 0.0]))
        (lu_piv), cond = self.system(carriers)
        x = sla.lu_solve(lu_piv, np.concatenate(parts))
        blocks, pos = {}, 0
        for key in carriers:
            size = self.block_size(key)
            blocks[key] = x[pos:pos + size]
            pos += size
        return blocks, cond

    def object_carriers(self, i: int) -> tuple:
        return (i, CONTAINER) if self.layout.container is not None else (i,)

    def solve_object(self, i: int, data: np.ndarray, flux: float = 0.0) -> dict:
        """One-object problem: condition of object ``i`` with ``data``, container zero."""
        self._check_exterior_mean(i, data)
        blocks, _ = self.solve(self.object_carriers(i), {i: data}, {i: flux})
        return blocks

    def _check_exterior_mean(self, i, data):
        if not self.layout.exterior or self.kinds[i] != "neumann":
            return
        w = self.curve(i).weights
        total = abs(float(w @ data))
        if total > ZERO_MEAN_TOL * max(float(w @ np.abs(data)), 1e-300):
            raise ProblemError(
                f"exterior Neumann data on object {i} has nonzero mean; no decaying solution exists"
            )

    # -- fields and traces
    def field(self, blocks: dict, particular: Optional[ParticularSolution] = None) -> HarmonicField:
        layers, sources = [], []
        for key in sorted(blocks, key=lambda k: (k == CONTAINER, k)):
            vec = blocks[key]
            curve = self.curve(key)
            n = curve.n_nodes
            if key == CONTAINER:
                layers.append(LayerDensity(curve, "double", vec.copy()))
            elif self.kinds[key] == "dirichlet":
                layers.append(LayerDensity(curve, "double", vec[:n].copy()))
                sources.append(PointSource(curve.anchor.copy(), float(vec[n])))
            else:
                layers.append(LayerDensity(curve, "single", vec[:n].copy()))
        return HarmonicField(tuple(layers), tuple(sources), particular)

    def constants(self, blocks: dict) -> dict:
        return {
            k: float(v[-1]) for k, v in blocks.items()
            if k != CONTAINER and self.kinds[k] == "fourth"
        }

    def block_trace(self, blocks: dict, target, trace: str) -> np.ndarray:
        out = np.zeros(self.curve(target).n_nodes)
        for key, vec in blocks.items():
            out += self.trace_matrix(key, target, trace) @ vec
        return out

    def particular_trace(self, target, trace: str) -> np.ndarray:
        part = self.problem.particular
        curve = self.curve(target)
        if part is None:
            return np.zeros(curve.n_nodes)
        if trace == "value":
            return np.asarray(part.value(curve.points), dtype=float)
        return np.sum(np.asarray(part.gradient(curve.points)) * curve.normals, axis=1)

    def boundary_operator(self, i: int, trace_values: dict) -> np.ndarray:
        """Apply the object operator to a dict of precomputed traces of one field."""
        kind = self.kinds[i]
        if kind == "neumann":
            return trace_values["normal"]
        v = trace_values["value"]
        if kind == "fourth":
            return v - self.curve(i).mean(v)
        return v

    def apply_operator(self, i: int, blocks: dict) -> np.ndarray:
        """``B_i`` of the field held in ``blocks`` (no particular part)."""
        trace = "normal" if self.kinds[i] == "neumann" else "value"
        return self.boundary_operator(i, {trace: self.block_trace(blocks, i, trace)})


def solve_direct(problem: ProblemSpec, disc: Optional[Discretization] = None) -> BVPSolution:
    """Solve the full coupled problem in one linear system."""
    disc = disc or Discretization(problem)
    rhs, fluxes = {}, {}
    for i, cond in enumerate(problem.conditions):
        trace = disc.equation_trace(i)
        data = problem.data(i) - disc.particular_trace(i, trace)
        disc._check_exterior_mean(i, data)
        rhs[i] = data
        fluxes[i] = cond.flux
    if problem.layout.container is not None:
        rhs[CONTAINER] = -disc.particular_trace(CONTAINER, "value")
    blocks, cond = disc.solve(tuple(disc.carriers), rhs, fluxes)
    return BVPSolution(disc.field(blocks, problem.particular), blocks, disc.constants(blocks), cond)


def solve_one_object(
    problem: ProblemSpec,
    i: int,
    data=None,
    flux: Optional[float] = None,
    disc: Optional[Discretization] = None,
) -> BVPSolution:
    """Problem with only object ``i`` present (its own condition type).

    ``data`` defaults to the problem's datum on object ``i`` and ``flux`` to
    its fourth-type flux.  The container, if any, carries zero data.
    """
    disc = disc or Discretization(problem)
    if not 0 <= i < problem.n_objects:
        raise ProblemError(f"object index {i} out of range")
    cond = problem.conditions[i]
    d = problem.data(i) if data is None else np.asarray(data, dtype=float)
    q = cond.flux if flux is None else float(flux)
    blocks = disc.solve_object(i, d, q)
    _, c = disc.system(disc.object_carriers(i))
    return BVPSolution(disc.field(blocks), blocks, disc.constants(blocks), c)


def solve_initial(problem: ProblemSpec, disc: Optional[Discretization] = None) -> BVPSolution:
    """Initial approximation for the reflection iteration.

    Solves ``-Laplace u = f`` with ``u = 0`` on the container, then adds the
    one-object solution with zero datum and the prescribed flux for every
    fourth-type object.  For pure Dirichlet/Neumann problems without a
    source the result is the zero field.
    """
    disc = disc or Discretization(problem)
    blocks = {}
    if problem.layout.container is not None and problem.particular is not None:
        res, _ = disc.solve((CONTAINER,), {CONTAINER: -disc.particular_trace(CONTAINER, "value")}, {})
        blocks[CONTAINER] = res[CONTAINER]
    for i, cond in enumerate(problem.conditions):
        if cond.kind != "fourth" or cond.flux == 0.0:
            continue
        sol = disc.solve_object(i, np.zeros(disc.curve(i).n_nodes), cond.flux)
        for key, vec in sol.items():
            blocks[key] = blocks.get(key, 0.0) + vec
    return BVPSolution(disc.field(blocks, problem.particular), blocks, disc.constants(blocks))
