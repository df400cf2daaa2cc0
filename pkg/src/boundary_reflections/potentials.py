"""Layer potentials of the 2D Laplacian and harmonic field evaluation.

Fundamental solution ``Phi(x) = -log|x| / (2*pi)``.  Single layer
``S sigma(x) = int Phi(x - y) sigma(y) ds_y``, double layer
``D mu(x) = int d_{n_y} Phi(x - y) mu(y) ds_y``.  Self-interactions use the
trapezoidal rule, with Kress product quadrature for the logarithmic part of
the single layer.

Jump relations for a counterclockwise curve with outward normal:

* double layer value: ``K mu -/+ mu/2`` (interior/exterior side)
* single layer normal derivative: ``K' sigma +/- sigma/2`` (interior/exterior)
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .geometry import BoundaryCurve

log = logging.getLogger(__name__)

LAYERS = ("single", "double")
TRACES = ("value", "normal")
SIDES = ("interior", "exterior")
INV_2PI = 1.0 / (2.0 * math.pi)

NEAR_FACTOR = 5.0


class PotentialError(ValueError):
    pass


def kress_matrix(n: int) -> np.ndarray:
    """Weights ``R[i, j]`` with ``sum_j R[i, j] f(t_j)`` approximating
    ``int_0^{2pi} log(4 sin^2((t_i - s)/2)) f(s) ds`` for trigonometric ``f``."""
    m = n // 2
    k = np.arange(1, m)
    tau = np.pi * np.arange(n) / m
    row = -(2 * np.pi / m) * (np.cos(np.outer(tau, k)) @ (1.0 / k)) - (np.pi / m**2) * np.cos(m * tau)
    idx = np.arange(n)
    return row[np.abs(idx[:, None] - idx[None, :])]


def _check_kinds(layer, trace):
    if layer not in LAYERS:
        raise PotentialError(f"unknown layer {layer!r}")
    if trace not in TRACES:
        raise PotentialError(f"unknown trace {trace!r}")


def _self_matrix(curve: BoundaryCurve, layer: str, trace: str, side: str) -> np.ndarray:
    if side not in SIDES:
        raise PotentialError(f"unknown side {side!r}")
    n = curve.n_nodes
    x = curve.points
    w = curve.weights
    diff = x[:, None, :] - x[None, :, :]
    r2 = np.einsum("ijk,ijk->ij", diff, diff)
    np.fill_diagonal(r2, 1.0)
    diag_k = -curve.curvature * w * (INV_2PI / 2.0)
    sign = -1.0 if side == "interior" else 1.0

    if layer == "single" and trace == "value":
        t = curve.t
        dt = t[:, None] - t[None, :]
        log_sin = np.log(4.0 * np.sin(dt / 2.0) ** 2 + np.eye(n))
        smooth = -INV_2PI * (0.5 * np.log(r2) - 0.5 * log_sin)
        np.fill_diagonal(smooth, -INV_2PI * np.log(curve.speed))
        mat = -(1.0 / (4.0 * np.pi)) * kress_matrix(n) + curve.dt * smooth
        return mat * curve.speed[None, :]
    if layer == "double" and trace == "value":
        ny = curve.normals
        mat = INV_2PI * np.einsum("ijk,jk->ij", diff, ny) / r2 * w[None, :]
        np.fill_diagonal(mat, diag_k)
        return mat + sign * 0.5 * np.eye(n)
    if layer == "single" and trace == "normal":
        nx = curve.normals
        mat = -INV_2PI * np.einsum("ijk,ik->ij", diff, nx) / r2 * w[None, :]
        np.fill_diagonal(mat, diag_k)
        return mat - sign * 0.5 * np.eye(n)
    raise PotentialError(
        "normal derivative of a double layer on its own curve is hypersingular and not supported"
    )


def layer_eval_matrix(
    source: BoundaryCurve,
    points,
    layer: str,
    quantity: str = "value",
    normals=None,
) -> np.ndarray:
    """Matrix from nodal densities on ``source`` to values at off-curve points.

    ``quantity`` is ``"value"``, ``"normal"`` (needs ``normals``) or
    ``"gradient"`` (returns shape ``(2, m, n)``).  Plain trapezoidal rule;
    accurate only for points well separated from ``source``.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    diff = pts[:, None, :] - source.points[None, :, :]
    r2 = np.einsum("ijk,ijk->ij", diff, diff)
    w = source.weights[None, :]
    if np.any(r2 == 0.0):
        raise PotentialError("evaluation point coincides with a source node")
    if layer == "single":
        if quantity == "value":
            return -INV_2PI * 0.5 * np.log(r2) * w
        grad = -INV_2PI * diff / r2[:, :, None] * w[:, :, None]
    elif layer == "double":
        ny = source.normals
        dot = np.einsum("ijk,jk->ij", diff, ny)
        if quantity == "value":
            return INV_2PI * dot / r2 * w
        grad = INV_2PI * (
            ny[None, :, :] / r2[:, :, None] - 2.0 * (dot / r2**2)[:, :, None] * diff
        ) * w[:, :, None]
    else:
        raise PotentialError(f"unknown layer {layer!r}")
    if quantity == "gradient":
        return np.moveaxis(grad, 2, 0)
    if quantity == "normal":
        if normals is None:
            raise PotentialError("normal derivative needs target normals")
        nx = np.atleast_2d(np.asarray(normals, dtype=float))
        return np.einsum("ijk,ik->ij", grad, nx)
    raise PotentialError(f"unknown quantity {quantity!r}")


def layer_matrix(
    source: BoundaryCurve,
    target: BoundaryCurve,
    layer: str,
    trace: str = "value",
    side: str = "exterior",
) -> np.ndarray:
    """Dense matrix mapping nodal densities on ``source`` to a trace on ``target``.

    When ``target is source`` the boundary limit from ``side`` (relative to the
    region the curve encloses) is returned, jump term included.  Otherwise
    the curves must be disjoint and the plain off-curve rule is used.
    """
    _check_kinds(layer, trace)
    if target is source:
        return _self_matrix(source, layer, trace, side)
    return layer_eval_matrix(source, target.points, layer, trace, target.normals)


def point_source_matrix(location, points, quantity: str = "value", normals=None) -> np.ndarray:
    """Values of ``Phi(x - location)`` (unit strength) at ``points``."""
    z = np.asarray(location, dtype=float).reshape(2)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    diff = pts - z
    r2 = np.sum(diff**2, axis=1)
    if quantity == "value":
        return -INV_2PI * 0.5 * np.log(r2)
    grad = -INV_2PI * diff / r2[:, None]
    if quantity == "gradient":
        return grad.T
    if quantity == "normal":
        return np.sum(grad * np.asarray(normals, dtype=float), axis=1)
    raise PotentialError(f"unknown quantity {quantity!r}")


# --- fields --------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LayerDensity:
    curve: BoundaryCurve
    layer: str
    density: np.ndarray

    def __post_init__(self):
        if self.layer not in LAYERS:
            raise PotentialError(f"unknown layer {self.layer!r}")
        if self.density.shape != (self.curve.n_nodes,):
            raise PotentialError("density length does not match curve nodes")


@dataclass(frozen=True)
class PointSource:
    location: np.ndarray
    strength: float


@dataclass(frozen=True)
class ParticularSolution:
    """User supplied ``u_p`` with ``-Laplace(u_p) = f``; value and gradient callables."""

    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class HarmonicField:
    """Superposition of layer potentials, point sources and an optional particular part."""

    layers: tuple = ()
    sources: tuple = ()
    particular: Optional[ParticularSolution] = None

    def __add__(self, other: "HarmonicField") -> "HarmonicField":
        if self.particular is not None and other.particular is not None:
            raise PotentialError("cannot add two particular solutions")
        return HarmonicField(
            self.layers + other.layers,
            self.sources + other.sources,
            self.particular or other.particular,
        )

    def scaled(self, factor: float) -> "HarmonicField":
        if self.particular is not None:
            raise PotentialError("cannot scale a field with a particular part")
        return HarmonicField(
            tuple(LayerDensity(c.curve, c.layer, factor * c.density) for c in self.layers),
            tuple(PointSource(s.location, factor * s.strength) for s in self.sources),
        )

    def curves(self) -> list:
        seen = []
        for comp in self.layers:
            if all(comp.curve is not c for c in seen):
                seen.append(comp.curve)
        return seen

    def __call__(self, points) -> np.ndarray:
        return evaluate_field(self, points).values

    def trace(self, curve: BoundaryCurve, trace: str = "value", side: str = "exterior") -> np.ndarray:
        """Boundary trace on ``curve``; own layers use the limit from ``side``."""
        out = np.zeros(curve.n_nodes)
        for comp in self.layers:
            out += layer_matrix(comp.curve, curve, comp.layer, trace, side) @ comp.density
        for src in self.sources:
            out += src.strength * point_source_matrix(src.location, curve.points, trace, curve.normals)
        if self.particular is not None:
            if trace == "value":
                out += self.particular.value(curve.points)
            else:
                out += np.sum(self.particular.gradient(curve.points) * curve.normals, axis=1)
        return out


def zero_field() -> HarmonicField:
    return HarmonicField()


@dataclass(frozen=True)
class FieldEvaluation:
    """Evaluated field; ``near_curve`` flags points where plain quadrature may lose accuracy."""

    values: np.ndarray
    near_curve: np.ndarray

    @property
    def any_near(self) -> bool:
        return bool(np.any(self.near_curve))


def _curve_distance_to_points(curve: BoundaryCurve, pts: np.ndarray):
    diff = pts[:, None, :] - curve.points[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    j = np.argmin(d2, axis=1)
    return np.sqrt(d2[np.arange(len(pts)), j]), j


def _refined_distance(curve: BoundaryCurve, p: np.ndarray, t0: float) -> float:
    """Distance from ``p`` to the curve near parameter ``t0``.

    The foot point is located by a bounded search on the squared distance;
    the offset is then measured along the local normal, which is insensitive
    to the remaining parameter error.
    """
    res = minimize_scalar(
        lambda s: float(np.sum((curve.position(np.array(s)) - p) ** 2)),
        bounds=(t0 - curve.dt, t0 + curve.dt),
        method="bounded",
        options={"xatol": 1e-14},
    )
    s, h = float(res.x), 1e-5
    tang = curve.position(np.array(s + h)) - curve.position(np.array(s - h))
    tang /= np.linalg.norm(tang)
    off = p - curve.position(np.array(s))
    return float(abs(off[0] * tang[1] - off[1] * tang[0]))


def evaluate_field(field: HarmonicField, points, quantity: str = "value") -> FieldEvaluation:
    """Evaluate a field (``quantity`` is ``"value"`` or ``"gradient"``) away from its curves.

    Raises ``PotentialError`` for points lying on a carrier curve.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    m = len(pts)
    near = np.zeros(m, dtype=bool)
    for curve in field.curves():
        dist, j = _curve_distance_to_points(curve, pts)
        close = dist < NEAR_FACTOR * curve.spacing
        near |= close
        for i in np.flatnonzero(dist < curve.spacing):
            scale = max(1.0, float(np.max(np.abs(curve.points))))
            if _refined_distance(curve, pts[i], float(curve.t[j[i]])) <= 1e-12 * scale:
                raise PotentialError(f"point {pts[i].tolist()} lies on curve {curve.name!r}")
    if near.any():
        log.debug("%d evaluation points are close to a boundary curve", int(near.sum()))

    if quantity == "value":
        out = np.zeros(m)
        for comp in field.layers:
            out += layer_eval_matrix(comp.curve, pts, comp.layer, "value") @ comp.density
        for src in field.sources:
            out += src.strength * point_source_matrix(src.location, pts, "value")
        if field.particular is not None:
            out += field.particular.value(pts)
    elif quantity == "gradient":
        out = np.zeros((m, 2))
        for comp in field.layers:
            g = layer_eval_matrix(comp.curve, pts, comp.layer, "gradient")
            out += np.stack([g[0] @ comp.density, g[1] @ comp.density], axis=1)
        for src in field.sources:
            out += src.strength * point_source_matrix(src.location, pts, "gradient").T
        if field.particular is not None:
            out += field.particular.gradient(pts)
    else:
        raise PotentialError(f"unknown quantity {quantity!r}")
    return FieldEvaluation(out, near)


# --- binary dump ---------------------------------------------------------------

_MAGIC = b"LAYRMAT1"


def save_matrix(path, matrix: np.ndarray) -> None:
    """Write a dense matrix as magic, two little-endian int64 dims, then float64 row-major data."""
    a = np.ascontiguousarray(matrix, dtype="<f8")
    if a.ndim != 2:
        raise PotentialError("only 2D matrices can be dumped")
    with open(Path(path), "wb") as fh:
        fh.write(_MAGIC)
        fh.write(np.array(a.shape, dtype="<i8").tobytes())
        fh.write(a.tobytes())


def load_matrix(path) -> np.ndarray:
    with open(Path(path), "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise PotentialError("not a matrix dump")
        rows, cols = np.frombuffer(fh.read(16), dtype="<i8")
        data = np.frombuffer(fh.read(), dtype="<f8")
    return data.reshape(int(rows), int(cols)).astype(float)
