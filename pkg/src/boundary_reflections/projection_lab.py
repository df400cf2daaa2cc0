"""Finite-dimensional analogue of the reflection iterations.

Closed subspaces of a Hilbert space are modelled by column spans in R^n.
The sequential form corresponds to the method of alternating projections,
the averaged parallel form to the iteration with ``(1/N) sum_j P_j``.
A non-Euclidean inner product ``<x, y>_G = x^T G y`` is handled by
mapping vectors to ``L^T x`` with ``G = L L^T``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla

RANK_TOL = 1e-10


class ProjectionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SubspaceBasis:
    """Spanning vectors (columns) of a subspace of R^n, with an orthonormal basis cached."""

    vectors: np.ndarray
    orthonormal: np.ndarray

    @classmethod
    def from_vectors(cls, vectors, metric: Optional[np.ndarray] = None) -> "SubspaceBasis":
        v = np.atleast_2d(np.asarray(vectors, dtype=float))
        if v.ndim != 2 or v.shape[1] == 0:
            raise ProjectionError("need a 2D array with at least one column")
        if metric is not None:
            v = to_metric_coordinates(v, metric)
        u, s, _ = np.linalg.svd(v, full_matrices=False)
        if s[-1] <= RANK_TOL * max(s[0], 1.0):
            raise ProjectionError("spanning vectors are linearly dependent")
        return cls(v, u)

    @property
    def ambient_dim(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.orthonormal.shape[1]

    def complement(self) -> np.ndarray:
        """Orthonormal basis of the orthogonal complement."""
        return sla.null_space(self.orthonormal.T)


def to_metric_coordinates(vectors: np.ndarray, metric: np.ndarray) -> np.ndarray:
    """Map vectors so that the Euclidean product equals the ``metric`` product."""
    L = np.linalg.cholesky(np.asarray(metric, dtype=float))
    return L.T @ vectors


def orth_projector(basis: SubspaceBasis) -> np.ndarray:
    q = basis.orthonormal
    return q @ q.T


def check_projector(P: np.ndarray) -> None:
    """Raise unless ``P`` is an orthogonal projector (idempotent, symmetric, spectrum in {0, 1})."""
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ProjectionError("projector must be a square matrix")
    scale = max(np.linalg.norm(P, 2), 1.0)
    if np.linalg.norm(P @ P - P, 2) > 1e-12 * scale:
        raise ProjectionError("matrix is not idempotent")
    if np.linalg.norm(P - P.T, 2) > 1e-12:
        raise ProjectionError("matrix is not symmetric")
    w = np.linalg.eigvalsh(0.5 * (P + P.T))
    if np.any(np.minimum(np.abs(w), np.abs(w - 1.0)) > 1e-10):
        raise ProjectionError("eigenvalues are not in {0, 1}")


def _as_bases(items) -> list:
    return [b if isinstance(b, SubspaceBasis) else SubspaceBasis.from_vectors(b) for b in items]


def intersection_basis(bases: Sequence[SubspaceBasis], tol: float = RANK_TOL) -> np.ndarray:
    """Orthonormal basis of the intersection, from the stacked complement constraints."""
    bases = _as_bases(bases)
    n = bases[0].ambient_dim
    if any(b.ambient_dim != n for b in bases):
        raise ProjectionError("subspaces live in different ambient spaces")
    rows = [b.complement().T for b in bases]
    stacked = np.vstack([r for r in rows if r.size] or [np.zeros((0, n))])
    if stacked.shape[0] == 0:
        return np.eye(n)
    return sla.null_space(stacked, rcond=tol)


def intersection_projector(bases: Sequence[SubspaceBasis]) -> np.ndarray:
    z = intersection_basis(bases)
    return z @ z.T


@dataclass
class IterationResult:
    iterates: np.ndarray
    errors: np.ndarray
    limit: np.ndarray


def iteration_operator(kind: str, projectors: Sequence[np.ndarray], weights=None, nu: Optional[float] = None):
    """One-step operator of an iteration.

    ``alternating``: ``P_N ... P_1``.  ``averaged``: ``sum_j w_j P_j``
    (equal weights by default).  ``relaxed``: ``(1 - N nu) I + nu sum_j P_j``,
    the projection form of the relaxed parallel reflections, equal to the
    averaged operator when ``nu = 1/N``.
    """
    if not projectors:
        raise ProjectionError("need at least one projector")
    n = projectors[0].shape[0]
    if any(P.shape != (n, n) for P in projectors):
        raise ProjectionError("projectors have inconsistent dimensions")
    N = len(projectors)
    if kind == "alternating":
        T = np.eye(n)
        for P in projectors:
            T = P @ T
        return T
    if kind == "averaged":
        w = np.full(N, 1.0 / N) if weights is None else np.asarray(weights, dtype=float)
        if w.shape != (N,) or np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ProjectionError("weights must be positive and sum to one")
        return sum(wj * P for wj, P in zip(w, projectors))
    if kind == "relaxed":
        if nu is None or not 0 < nu <= 1:
            raise ProjectionError("relaxed iteration needs nu in (0, 1]")
        return (1.0 - N * nu) * np.eye(n) + nu * sum(projectors)
    raise ProjectionError(f"unknown iteration {kind!r}")


def iterate(kind: str, projectors, v0, steps: int, weights=None, nu=None, oracle=None) -> IterationResult:
    """Run ``steps`` iterations from ``v0``; errors are measured against ``oracle @ v0``."""
    projectors = [np.asarray(P, dtype=float) for P in projectors]
    T = iteration_operator(kind, projectors, weights, nu)
    v = np.asarray(v0, dtype=float).copy()
    if v.shape != (T.shape[0],):
        raise ProjectionError(f"start vector has shape {v.shape}, expected ({T.shape[0]},)")
    P_cap = oracle if oracle is not None else _intersection_from_projectors(projectors)
    target = P_cap @ v
    its = [v.copy()]
    for _ in range(steps):
        v = T @ v
        its.append(v.copy())
    its = np.array(its)
    errs = np.linalg.norm(its - target, axis=1)
    return IterationResult(its, errs, target)


def _intersection_from_projectors(projectors) -> np.ndarray:
    bases = []
    for P in projectors:
        w, V = np.linalg.eigh(P)
        bases.append(SubspaceBasis.from_vectors(V[:, w > 0.5]))
    return intersection_projector(bases)


def error_operator_norms(kind: str, projectors, steps: int, oracle=None, **kw) -> np.ndarray:
    """Operator norms ``||T^k - P_cap||`` for ``k = 1..steps``."""
    projectors = [np.asarray(P, dtype=float) for P in projectors]
    T = iteration_operator(kind, projectors, **kw)
    P_cap = oracle if oracle is not None else _intersection_from_projectors(projectors)
    out, Tk = [], np.eye(T.shape[0])
    for _ in range(steps):
        Tk = T @ Tk
        out.append(np.linalg.norm(Tk - P_cap, 2))
    return np.array(out)


def _restricted(basis: SubspaceBasis, P_cap: np.ndarray) -> np.ndarray:
    """Orthonormal basis of ``M cap (intersection)^perp``."""
    r = (np.eye(P_cap.shape[0]) - P_cap) @ basis.orthonormal
    if r.size == 0:
        return r
    u, s, _ = np.linalg.svd(r, full_matrices=False)
    return u[:, s > 1e-8]


def friedrichs_cosine(M1, M2) -> float:
    """Cosine of the Friedrichs angle; 0 when either reduced subspace is trivial."""
    b1, b2 = _as_bases([M1, M2])
    P_cap = intersection_projector([b1, b2])
    r1, r2 = _restricted(b1, P_cap), _restricted(b2, P_cap)
    if r1.shape[1] == 0 or r2.shape[1] == 0:
        return 0.0
    return float(min(1.0, np.linalg.svd(r1.T @ r2, compute_uv=False)[0]))


def dixmier_cosine(M1, M2) -> float:
    """Largest cosine between the subspaces without removing the intersection."""
    b1, b2 = _as_bases([M1, M2])
    return float(min(1.0, np.linalg.svd(b1.orthonormal.T @ b2.orthonormal, compute_uv=False)[0]))


def principal_angles(M1, M2) -> np.ndarray:
    b1, b2 = _as_bases([M1, M2])
    return sla.subspace_angles(b1.orthonormal, b2.orthonormal)[::-1]


@dataclass(frozen=True)
class GapResult:
    norm_squared: float
    c0: float


def xu_zikatanov_gap(bases) -> GapResult:
    """``||P_N ... P_1 - P_cap||^2 = c0 / (1 + c0)``, solved for ``c0``.

    The norm is computed directly; ``c0`` follows from the identity.  When
    the norm equals one the product does not converge and ``c0`` is infinite.
    """
    bases = _as_bases(bases)
    projectors = [orth_projector(b) for b in bases]
    P_cap = intersection_projector(bases)
    T = iteration_operator("alternating", projectors)
    lhs = float(np.linalg.norm(T - P_cap, 2) ** 2)
    c0 = np.inf if lhs >= 1.0 - 1e-15 else lhs / (1.0 - lhs)
    return GapResult(lhs, c0)


def fixed_space(T: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis of the eigenvalue-one eigenspace of a symmetric operator."""
    w, V = np.linalg.eigh(0.5 * (T + T.T))
    return V[:, np.abs(w - 1.0) <= tol]


def same_subspace(A: np.ndarray, B: np.ndarray, tol: float = 1e-10) -> bool:
    if A.shape[1] != B.shape[1]:
        return False
    if A.shape[1] == 0:
        return True
    return bool(np.linalg.norm(A @ A.T - B @ B.T, 2) <= tol)


def random_subspaces(rng: np.random.Generator, n: int, dims: Sequence[int], shared: int = 0):
    """Random subspaces of R^n that all contain a common random ``shared``-dimensional part."""
    common = rng.standard_normal((n, shared))
    out = []
    for d in dims:
        if d < shared:
            raise ProjectionError("subspace dimension below the shared part")
        extra = rng.standard_normal((n, d - shared))
        out.append(SubspaceBasis.from_vectors(np.hstack([common, extra])))
    return out


def line(theta: float) -> SubspaceBasis:
    return SubspaceBasis.from_vectors(np.array([[np.cos(theta)], [np.sin(theta)]]))
