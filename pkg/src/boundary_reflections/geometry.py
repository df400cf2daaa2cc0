"""Closed parametric boundary curves and multi-object layouts.

Every curve is sampled at ``n`` equispaced parameter values
``t_k = 2*pi*k/n`` so that the periodic trapezoidal rule applies.  Normals
are the right-hand normals ``(y', -x')/|x'|``; on a counterclockwise curve
they point out of the enclosed region.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

TWO_PI = 2.0 * math.pi
MIN_NODES = 16
DEFAULT_BLEND_WIDTH = 0.05 * TWO_PI


class GeometryError(ValueError):
    """Invalid curve parameters or an inadmissible layout."""


@dataclass(frozen=True, eq=False)
class BoundaryCurve:
    """A discretized closed curve.

    Attributes
    ----------
    name : str
        Label used in reports.
    t : ndarray, shape (n,)
        Parameter nodes in ``[0, 2*pi)``.
    points : ndarray, shape (n, 2)
        Node positions.
    d1, d2 : ndarray, shape (n, 2)
        First and second derivatives of the parametrization at the nodes.
    position : callable
        Parametrization ``x(t)`` for arbitrary parameter arrays.
    anchor : ndarray, shape (2,)
        A point strictly inside the enclosed region.
    orientation : int
        +1 for counterclockwise, -1 for clockwise.
    """

    name: str
    t: np.ndarray
    points: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    position: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    anchor: np.ndarray = field(repr=False)
    orientation: int = 1

    def __post_init__(self):
        n = len(self.t)
        if n < MIN_NODES or n % 2:
            raise GeometryError(f"node count must be even and >= {MIN_NODES}, got {n}")
        for arr in (self.t, self.points, self.d1, self.d2, self.anchor):
            arr.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return len(self.t)

    @property
    def speed(self) -> np.ndarray:
        return np.hypot(self.d1[:, 0], self.d1[:, 1])

    @property
    def tangents(self) -> np.ndarray:
        return self.d1 / self.speed[:, None]

    @property
    def normals(self) -> np.ndarray:
        tau = self.tangents
        return np.column_stack([tau[:, 1], -tau[:, 0]])

    @property
    def curvature(self) -> np.ndarray:
        """Signed curvature, positive on convex counterclockwise arcs."""
        cross = self.d1[:, 0] * self.d2[:, 1] - self.d1[:, 1] * self.d2[:, 0]
        return cross / self.speed**3

    @property
    def dt(self) -> float:
        return TWO_PI / self.n_nodes

    @property
    def weights(self) -> np.ndarray:
        """Arclength quadrature weights ``dt * |x'(t_k)|``."""
        return self.dt * self.speed

    @property
    def perimeter(self) -> float:
        return float(np.sum(self.weights))

    @property
    def spacing(self) -> float:
        """Largest distance between consecutive nodes."""
        return float(np.max(self.weights))

    def mean(self, values: np.ndarray) -> float:
        """Arclength mean of nodal values."""
        w = self.weights
        return float(w @ values / w.sum())

    def integrate(self, values: np.ndarray) -> float:
        return float(self.weights @ values)

    def reversed(self) -> "BoundaryCurve":
        """Same point set traversed the other way; normals are negated."""
        idx = (-np.arange(self.n_nodes)) % self.n_nodes
        pos = self.position
        return BoundaryCurve(
            name=self.name,
            t=self.t.copy(),
            points=self.points[idx].copy(),
            d1=-self.d1[idx],
            d2=self.d2[idx].copy(),
            position=lambda t: pos((TWO_PI - np.asarray(t, dtype=float)) % TWO_PI),
            anchor=self.anchor.copy(),
            orientation=-self.orientation,
        )

    def winding_number(self, point) -> float:
        """Quadrature of the winding integral about ``point``."""
        rel = self.points - np.asarray(point, dtype=float)
        cross = rel[:, 0] * self.d1[:, 1] - rel[:, 1] * self.d1[:, 0]
        return float(np.sum(cross / np.sum(rel**2, axis=1)) * self.dt / TWO_PI)

    def contains(self, points) -> np.ndarray:
        """Even-odd test of ``points`` against the node polygon."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        xv, yv = self.points[:, 0], self.points[:, 1]
        xw, yw = np.roll(xv, -1), np.roll(yv, -1)
        px, py = pts[:, 0:1], pts[:, 1:2]
        straddle = (yv > py) != (yw > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_cross = xv + (py - yv) * (xw - xv) / (yw - yv)
        hits = straddle & (px < x_cross)
        return (np.count_nonzero(hits, axis=1) % 2) == 1


def _check_nodes(n_nodes: int) -> None:
    if int(n_nodes) != n_nodes or n_nodes < MIN_NODES or n_nodes % 2:
        raise GeometryError(f"node count must be even and >= {MIN_NODES}, got {n_nodes}")


def _params(n_nodes: int) -> np.ndarray:
    return TWO_PI * np.arange(n_nodes) / n_nodes


def make_circle(center, radius: float, n_nodes: int = 128, name: str = "circle") -> BoundaryCurve:
    """Counterclockwise circle with node 0 at angle zero."""
    if not radius > 0:
        raise GeometryError(f"radius must be positive, got {radius}")
    _check_nodes(n_nodes)
    c = np.asarray(center, dtype=float).reshape(2)
    r = float(radius)

    def position(t):
        t = np.asarray(t, dtype=float)
        return np.stack([c[0] + r * np.cos(t), c[1] + r * np.sin(t)], axis=-1)

    t = _params(n_nodes)
    cos, sin = np.cos(t), np.sin(t)
    return BoundaryCurve(
        name=name,
        t=t,
        points=position(t),
        d1=np.column_stack([-r * sin, r * cos]),
        d2=np.column_stack([-r * cos, -r * sin]),
        position=position,
        anchor=c.copy(),
    )


# --- C-shape -----------------------------------------------------------------


def _smoothstep(xi):
    """C-infinity step from 0 to 1 on [0, 1] and its first two derivatives."""
    xi = np.clip(np.asarray(xi, dtype=float), 0.0, 1.0)
    # exp(-1/a) is zero to double precision below 1e-3
    inside = (xi > 1e-3) & (xi < 1.0 - 1e-3)
    a = np.where(inside, xi, 0.5)
    b = 1.0 - a
    g = np.exp(-1.0 / a)
    k = np.exp(-1.0 / b)
    g1, k1 = g / a**2, -k / b**2
    g2, k2 = g * (1.0 - 2.0 * a) / a**4, k * (1.0 - 2.0 * b) / b**4
    den = g + k
    num1 = g1 * k - g * k1
    phi = g / den
    phi1 = num1 / den**2
    phi2 = ((g2 * k - g * k2) * den - 2.0 * num1 * (g1 + k1)) / den**3
    phi = np.where(inside, phi, (xi >= 1.0).astype(float))
    phi1 = np.where(inside, phi1, 0.0)
    phi2 = np.where(inside, phi2, 0.0)
    return phi, phi1, phi2


@dataclass(frozen=True)
class _Arc:
    """Circle arc parametrized by arclength ``u`` from its start point."""

    center: np.ndarray
    radius: float
    start_angle: float
    direction: int
    length: float

    def eval(self, u):
        u = np.asarray(u, dtype=float)
        ang = self.start_angle + self.direction * u / self.radius
        cos, sin = np.cos(ang), np.sin(ang)
        r, s = self.radius, self.direction
        x = np.stack([self.center[0] + r * cos, self.center[1] + r * sin], axis=-1)
        dx = np.stack([-s * sin, s * cos], axis=-1)
        ddx = np.stack([-cos / r, -sin / r], axis=-1)
        return x, dx, ddx


class _BlendedPath:
    """Chain of tangent-continuous arcs with smoothed junctions.

    Near each junction the two neighbouring arcs (each continued along its
    own circle) are mixed with a C-infinity partition of unity over an
    arclength window of half-width ``h``.
    """

    def __init__(self, arcs: Sequence[_Arc], half_width: float, offset: float):
        self.arcs = list(arcs)
        self.starts = np.concatenate([[0.0], np.cumsum([a.length for a in arcs])])
        self.length = float(self.starts[-1])
        self.h = half_width
        self.offset = offset

    def _piece(self, i, s):
        i = i % len(self.arcs)
        s_start = self.starts[i]
        return self.arcs[i].eval(s - s_start)

    def eval_arclength(self, s):
        s = np.mod(np.asarray(s, dtype=float) + self.offset, self.length)
        x = np.zeros(s.shape + (2,))
        dx = np.zeros_like(x)
        ddx = np.zeros_like(x)
        n_arcs = len(self.arcs)
        idx = np.clip(np.searchsorted(self.starts, s, side="right") - 1, 0, n_arcs - 1)
        for i in range(n_arcs):
            sel = idx == i
            if not np.any(sel):
                continue
            si = s[sel]
            xa, da, dda = self._piece(i, si)
            x[sel], dx[sel], ddx[sel] = xa, da, dda
            # junction at the start of piece i (with piece i-1)
            rel = si - self.starts[i]
            near = rel < self.h
            if np.any(near):
                self._blend(i - 1, i, si[near], self.starts[i], x, dx, ddx, sel, near)
            # junction at the end of piece i (with piece i+1)
            rel_end = self.starts[i + 1] - si
            near = rel_end < self.h
            if np.any(near):
                self._blend(i, i + 1, si[near], self.starts[i + 1], x, dx, ddx, sel, near)
        return x, dx, ddx

    def _blend(self, ia, ib, s, s_junction, x, dx, ddx, sel, near):
        n_arcs = len(self.arcs)
        arc_a, arc_b = self.arcs[ia % n_arcs], self.arcs[ib % n_arcs]
        # local arclength measured from the junction
        rel = s - s_junction
        xa, da, dda = arc_a.eval(arc_a.length + rel)
        xb, db, ddb = arc_b.eval(rel)
        phi, phi1, phi2 = _smoothstep((rel + self.h) / (2.0 * self.h))
        phi1 = phi1 / (2.0 * self.h)
        phi2 = phi2 / (2.0 * self.h) ** 2
        diff = xb - xa
        xs = (1 - phi)[:, None] * xa + phi[:, None] * xb
        d1 = (1 - phi)[:, None] * da + phi[:, None] * db + phi1[:, None] * diff
        d2 = (
            (1 - phi)[:, None] * dda
            + phi[:, None] * ddb
            + 2.0 * phi1[:, None] * (db - da)
            + phi2[:, None] * diff
        )
        where = np.flatnonzero(sel)[near]
        x[where], dx[where], ddx[where] = xs, d1, d2


def make_cshape(
    center,
    r_inner: float,
    r_outer: float,
    opening_half_angle: float,
    n_nodes: int = 512,
    blend_width: float = DEFAULT_BLEND_WIDTH,
    name: str = "cshape",
) -> BoundaryCurve:
    """C-shaped curve: annular sector closed by two semicircular caps.

    The opening faces the positive x direction.  The four arc/cap junctions
    are replaced by C-infinity blends over a parameter window of width
    ``blend_width`` (in the ``[0, 2*pi)`` parameter), so the curve is smooth.
    """
    if not 0 < r_inner < r_outer:
        raise GeometryError(f"need 0 < r_inner < r_outer, got {r_inner}, {r_outer}")
    if not 0 < opening_half_angle < math.pi / 2:
        raise GeometryError("opening half-angle must lie in (0, pi/2)")
    if not blend_width > 0:
        raise GeometryError("blend width must be positive")
    _check_nodes(n_nodes)
    c = np.asarray(center, dtype=float).reshape(2)
    alpha = float(opening_half_angle)
    cap_r = 0.5 * (r_outer - r_inner)
    mid_r = 0.5 * (r_outer + r_inner)
    sweep = TWO_PI - 2.0 * alpha
    end = TWO_PI - alpha

    def ray(theta, rad):
        return c + rad * np.array([math.cos(theta), math.sin(theta)])

    arcs = [
        _Arc(c, r_outer, alpha, +1, r_outer * sweep),
        _Arc(ray(end, mid_r), cap_r, end, +1, math.pi * cap_r),
        _Arc(c, r_inner, end, -1, r_inner * sweep),
        _Arc(ray(alpha, mid_r), cap_r, alpha + math.pi, +1, math.pi * cap_r),
    ]
    total = sum(a.length for a in arcs)
    half_width = 0.5 * blend_width / TWO_PI * total
    shortest = min(a.length for a in arcs)
    if half_width >= 0.5 * shortest:
        raise GeometryError("blend width too large for the cap size")
    # start at the middle of the outer arc, away from any junction
    path = _BlendedPath(arcs, half_width, offset=0.5 * arcs[0].length)
    scale = path.length / TWO_PI

    def position(t):
        t = np.asarray(t, dtype=float)
        x, _, _ = path.eval_arclength(t * scale)
        return x

    t = _params(n_nodes)
    x, dx, ddx = path.eval_arclength(t * scale)
    return BoundaryCurve(
        name=name,
        t=t,
        points=x,
        d1=dx * scale,
        d2=ddx * scale**2,
        position=position,
        anchor=c + np.array([-mid_r, 0.0]),
    )


def cshape_nominal_perimeter(r_inner, r_outer, opening_half_angle) -> float:
    """Arc-length sum of the unsmoothed C-shape pieces."""
    sweep = TWO_PI - 2.0 * opening_half_angle
    return (r_inner + r_outer) * sweep + math.pi * (r_outer - r_inner)


# --- layouts -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GeometryLayout:
    """Container (optional) and ordered objects."""

    objects: tuple
    container: Optional[BoundaryCurve] = None

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        if not self.objects:
            raise GeometryError("layout needs at least one object")
        for curve in self.curves:
            if curve.orientation != 1:
                raise GeometryError(f"curve {curve.name!r} must be counterclockwise")

    @property
    def n_objects(self) -> int:
        return len(self.objects)

    @property
    def exterior(self) -> bool:
        return self.container is None

    @property
    def curves(self) -> list:
        extra = [self.container] if self.container is not None else []
        return list(self.objects) + extra


@dataclass(frozen=True)
class LayoutMetrics:
    distances: np.ndarray
    perimeters: np.ndarray
    container_distances: Optional[np.ndarray]
    report: str


def _refine_distance(a: BoundaryCurve, b: BoundaryCurve, ta: float, tb: float, tol=1e-13):
    """Joint simplex search for the closest parameter pair near ``(ta, tb)``."""

    def d2(s):
        diff = a.position(np.array(s[0])) - b.position(np.array(s[1]))
        return float(diff @ diff)

    simplex = np.array([[ta, tb], [ta + a.dt, tb], [ta, tb + b.dt]])
    res = minimize(d2, [ta, tb], method="Nelder-Mead",
                   options={"xatol": tol, "fatol": 1e-30, "initial_simplex": simplex, "maxiter": 4000})
    return math.sqrt(min(res.fun, d2([ta, tb])))


def curve_distance(a: BoundaryCurve, b: BoundaryCurve) -> float:
    """Minimal distance between two curves (node search + local refinement)."""
    diff = a.points[:, None, :] - b.points[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    i, j = np.unravel_index(np.argmin(d2), d2.shape)
    coarse = math.sqrt(d2[i, j])
    return min(coarse, _refine_distance(a, b, float(a.t[i]), float(b.t[j])))


def layout_metrics(layout: GeometryLayout) -> LayoutMetrics:
    """Pairwise minimal distances and perimeters; rejects overlapping objects."""
    objs = layout.objects
    n = len(objs)
    dist = np.zeros((n, n))
    problems = []
    for i, j in itertools.combinations(range(n), 2):
        a, b = objs[i], objs[j]
        if np.any(a.contains(b.points)) or np.any(b.contains(a.points)):
            problems.append(f"objects {i} ({a.name}) and {j} ({b.name}) overlap")
            d = 0.0
        else:
            d = curve_distance(a, b)
            if d <= 0.0:
                problems.append(f"objects {i} ({a.name}) and {j} ({b.name}) touch")
        dist[i, j] = dist[j, i] = d
    cont = None
    if layout.container is not None:
        cont = np.zeros(n)
        for i, obj in enumerate(objs):
            if not np.all(layout.container.contains(obj.points)):
                problems.append(f"object {i} ({obj.name}) is not inside the container")
            else:
                cont[i] = curve_distance(obj, layout.container)
    if problems:
        raise GeometryError("; ".join(problems))
    perims = np.array([o.perimeter for o in objs])
    lines = [f"{n} objects, all pairwise disjoint"]
    if n > 1:
        off = dist[~np.eye(n, dtype=bool)]
        lines.append(f"min separation {off.min():.6g}")
    return LayoutMetrics(dist, perims, cont, "; ".join(lines))


def triangle_centers(side: float) -> np.ndarray:
    """Vertices of an equilateral triangle with centroid at the origin."""
    rc = side / math.sqrt(3.0)
    angles = np.deg2rad([90.0, 210.0, 330.0])
    return rc * np.column_stack([np.cos(angles), np.sin(angles)])


def triangle_layout(
    side: float,
    radius: float = 1.0,
    n_nodes: int = 128,
    container_radius: Optional[float] = 10.0,
    container_nodes: int = 256,
) -> GeometryLayout:
    """Three equal circles at the vertices of an equilateral triangle."""
    if side <= 2.0 * radius:
        raise GeometryError(
            f"triangle side {side} must exceed the diameter {2 * radius} (circles would overlap)"
        )
    objs = [
        make_circle(c, radius, n_nodes, name=f"ball{k + 1}")
        for k, c in enumerate(triangle_centers(side))
    ]
    container = None
    if container_radius is not None:
        container = make_circle((0.0, 0.0), container_radius, container_nodes, name="container")
    return GeometryLayout(tuple(objs), container)
