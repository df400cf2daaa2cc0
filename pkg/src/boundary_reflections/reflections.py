"""Method of reflections: sequential, parallel and relaxed-parallel cycles.

Each reflection ``u_i^{(k)}`` is the solution of a one-object problem on
object ``i`` (container kept at zero) whose datum is built from the traces
of earlier reflections.  The parallel form is the relaxed form with
``nu = 1`` and runs through the same code path.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .bvp import CONTAINER, BVPSolution, Discretization, ProblemError, ProblemSpec, solve_direct, solve_initial
from .geometry import GeometryError, GeometryLayout, layout_metrics
from .potentials import HarmonicField, evaluate_field

log = logging.getLogger(__name__)

DIVERGENCE_THRESHOLD = 1e20
ERROR_FLOOR = 1e-13
MIN_FIT_CYCLES = 8
N_PROBES = 200


class ReflectionError(RuntimeError):
    """A one-object solve failed inside a cycle."""


@dataclass(frozen=True)
class ReflectionForm:
    """``kind`` is ``sequential``, ``parallel`` or ``relaxed`` (with ``nu``)."""

    kind: str
    nu: float = 1.0

    def __post_init__(self):
        if self.kind not in ("sequential", "parallel", "relaxed"):
            raise ValueError(f"unknown reflection form {self.kind!r}")
        if not 0.0 < self.nu <= 1.0:
            raise ValueError(f"relaxation factor must lie in (0, 1], got {self.nu}")
        if self.kind != "relaxed" and self.nu != 1.0:
            raise ValueError("only the relaxed form takes a relaxation factor")

    @classmethod
    def sequential(cls) -> "ReflectionForm":
        return cls("sequential")

    @classmethod
    def parallel(cls) -> "ReflectionForm":
        return cls("parallel")

    @classmethod
    def relaxed(cls, nu: float) -> "ReflectionForm":
        return cls("relaxed", float(nu))

    @classmethod
    def averaged(cls, n_objects: int) -> "ReflectionForm":
        return cls("relaxed", 1.0 / n_objects)

    @classmethod
    def parse(cls, name: str, n_objects: int) -> "ReflectionForm":
        key = name.strip().lower()
        if key in ("seq", "sequential"):
            return cls.sequential()
        if key in ("par", "parallel"):
            return cls.parallel()
        if key in ("avg", "avgpar", "averaged"):
            return cls.averaged(n_objects)
        if key.startswith("relaxed:"):
            return cls.relaxed(float(key.split(":", 1)[1]))
        raise ValueError(f"unknown reflection form {name!r}")

    @property
    def is_sequential(self) -> bool:
        return self.kind == "sequential"

    @property
    def weight(self) -> float:
        return 1.0 if self.kind != "relaxed" else self.nu

    @property
    def label(self) -> str:
        if self.kind == "relaxed":
            return f"relaxed(nu={self.nu:.6g})"
        return self.kind


@dataclass
class CycleRecord:
    """Everything recorded for one cycle ``k`` (``k >= 1``)."""

    k: int
    reflections: Optional[list]
    data_norms: np.ndarray
    reflection_norms: np.ndarray
    boundary_residuals: np.ndarray
    correction_residuals: np.ndarray
    error: float
    increment: float = math.nan


@dataclass(eq=False)
class ReflectionTrace:
    """Per-cycle reflections and the running approximation.

    ``accumulated`` holds the unknown blocks of ``u^{(k)}`` as the running
    sum ``u^{(0)} + nu * sum of reflections``.  Reflections older than
    ``keep_cycles`` are dropped from ``cycles`` (their contribution stays in
    ``accumulated``).
    """

    form: ReflectionForm
    disc: Discretization
    initial: dict
    accumulated: dict
    initial_error: float
    cycles: list = field(default_factory=list)
    particular: object = None

    @property
    def n_cycles(self) -> int:
        return len(self.cycles)

    def approximation(self) -> HarmonicField:
        return self.disc.field(self.accumulated, self.particular)

    def reflection(self, k: int, i: int) -> HarmonicField:
        rec = self.cycles[k - 1]
        if rec.reflections is None:
            raise KeyError(f"reflections of cycle {k} were compacted")
        return self.disc.field(rec.reflections[i])

    def errors(self) -> np.ndarray:
        return np.array([self.initial_error] + [c.error for c in self.cycles])

    def increments(self) -> np.ndarray:
        """Metric norm of ``u^{(k)} - u^{(k-1)}`` for ``k = 1..``."""
        return np.array([c.increment for c in self.cycles])


@dataclass
class ConvergenceReport:
    status: str
    cycles: int
    final_error: float
    errors: np.ndarray
    contraction: Optional[float]
    fit_residual: Optional[float]
    max_correction_residual: float
    form: str = ""

    @property
    def converged(self) -> bool:
        return self.status == "converged"


# --- probe cloud ---------------------------------------------------------------


def probe_points(layout: GeometryLayout, n: int = N_PROBES, seed: int = 0) -> np.ndarray:
    """Seeded points in the fluid region, each at least five node spacings from every curve."""
    rng = np.random.default_rng(seed)
    curves = layout.curves
    if layout.container is not None:
        pts_all = layout.container.points
    else:
        pts_all = np.vstack([c.points for c in layout.objects])
    lo, hi = pts_all.min(axis=0), pts_all.max(axis=0)
    if layout.container is None:
        pad = 0.5 * (hi - lo).max()
        lo, hi = lo - pad, hi + pad
    out = []
    for _ in range(1000):
        cand = rng.uniform(lo, hi, size=(4 * n, 2))
        ok = np.ones(len(cand), dtype=bool)
        if layout.container is not None:
            ok &= layout.container.contains(cand)
        for obj in layout.objects:
            ok &= ~obj.contains(cand)
        for c in curves:
            diff = cand[:, None, :] - c.points[None, :, :]
            dmin = np.sqrt(np.min(np.einsum("ijk,ijk->ij", diff, diff), axis=1))
            ok &= dmin > 5.0 * c.spacing
        out.extend(cand[ok])
        if len(out) >= n:
            return np.array(out[:n])
    raise GeometryError("could not place probe points; the fluid region is too thin for the discretization")


# --- engine --------------------------------------------------------------------


def _add_blocks(a: dict, b: dict, scale: float = 1.0) -> dict:
    out = {k: v.copy() for k, v in a.items()}
    for k, v in b.items():
        out[k] = out[k] + scale * v if k in out else scale * v
    return out


def subtract_blocks(a: dict, b: dict) -> dict:
    return _add_blocks(a, b, -1.0)


class _Metric:
    """Values of a block field at the error-metric points."""

    def __init__(self, disc: Discretization, kind: str, probes: Optional[np.ndarray]):
        self.disc = disc
        self.kind = kind
        self.probes = probes

    def of_blocks(self, blocks: dict) -> np.ndarray:
        d = self.disc
        if self.kind == "probe":
            out = np.zeros(len(self.probes))
            for key in sorted(blocks, key=lambda k: (k == CONTAINER, k)):
                out = out + d.eval_matrix(key, "probe", self.probes) @ blocks[key]
            return out
        parts = []
        for i in range(d.problem.n_objects):
            parts.append(d.block_trace(blocks, i, "value"))
        return np.concatenate(parts)

    def of_particular(self, particular) -> np.ndarray:
        if particular is None:
            return 0.0
        if self.kind == "probe":
            return np.asarray(particular.value(self.probes), dtype=float)
        return np.concatenate(
            [particular.value(self.disc.curve(i).points) for i in range(self.disc.problem.n_objects)]
        )

    def of_field(self, fld: HarmonicField) -> np.ndarray:
        if self.kind == "probe":
            return evaluate_field(fld, self.probes).values
        return np.concatenate(
            [fld.trace(self.disc.curve(i), "value") for i in range(self.disc.problem.n_objects)]
        )


def _operator_traces(disc: Discretization, blocks: dict) -> list:
    """``B_i`` of one reflection field on every object."""
    return [disc.apply_operator(i, blocks) for i in range(disc.problem.n_objects)]


def _initial_operator(disc: Discretization, blocks: dict, particular) -> list:
    out = _operator_traces(disc, blocks)
    if particular is None:
        return out
    for i in range(disc.problem.n_objects):
        trace = "normal" if disc.kinds[i] == "neumann" else "value"
        out[i] = out[i] + disc.boundary_operator(i, {trace: disc.particular_trace(i, trace)})
    return out


def _inf(v) -> float:
    return float(np.max(np.abs(v))) if np.size(v) else 0.0


def run_reflections(
    problem: ProblemSpec,
    form: ReflectionForm,
    max_cycles: int = 100,
    tol: float = 1e-10,
    reference: Union[str, None, BVPSolution, HarmonicField] = "direct",
    metric: str = "probe",
    initial: Optional[BVPSolution] = None,
    workers: int = 1,
    seed: int = 0,
    n_probes: int = N_PROBES,
    stop_early: bool = True,
    keep_cycles: Optional[int] = None,
    fit_floor: float = ERROR_FLOOR,
    disc: Optional[Discretization] = None,
):
    """Run reflection cycles until convergence, divergence or ``max_cycles``.

    Parameters
    ----------
    reference
        ``"direct"`` (default) solves the coupled problem once and measures
        the relative l2 error against it; a ``BVPSolution`` or
        ``HarmonicField`` is used as given; ``None`` switches to the
        relative increment norm.  A zero reference gives absolute errors.
    metric
        ``"probe"`` (seeded points in the fluid) or ``"boundary"`` (object
        nodes).
    initial
        Override for ``u^{(0)}``; defaults to :func:`solve_initial`.
    workers
        Thread count for the independent solves of a parallel cycle.  The
        merge order is fixed, so results do not depend on it.
    stop_early
        When false, all ``max_cycles`` are run unless values overflow.

    Returns
    -------
    (ReflectionTrace, ConvergenceReport)
    """
    if max_cycles < 1:
        raise ValueError("max_cycles must be positive")
    if metric not in ("probe", "boundary"):
        raise ValueError(f"unknown metric {metric!r}")
    disc = disc or Discretization(problem)
    n_obj = problem.n_objects
    nu = form.weight

    init = initial if initial is not None else solve_initial(problem, disc)
    particular = problem.particular if initial is None else initial.field.particular
    u0 = {k: np.array(v, dtype=float) for k, v in init.blocks.items()}

    probes = probe_points(problem.layout, n_probes, seed) if metric == "probe" else None
    met = _Metric(disc, metric, probes)
    if isinstance(reference, str):
        if reference != "direct":
            raise ValueError(f"unknown reference {reference!r}")
        reference = solve_direct(problem, disc)
    if isinstance(reference, BVPSolution):
        ref_vals = met.of_blocks(reference.blocks) + met.of_particular(reference.field.particular)
    elif isinstance(reference, HarmonicField):
        ref_vals = met.of_field(reference)
    else:
        ref_vals = None
    ref_norm = float(np.linalg.norm(ref_vals)) if ref_vals is not None else 0.0

    # pre-factor every one-object system before any threads start
    for i in range(n_obj):
        disc.system(disc.object_carriers(i))

    data = [problem.data(i) for i in range(n_obj)]
    acc_B = _initial_operator(disc, u0, particular)
    vals = met.of_blocks(u0) + met.of_particular(particular)

    def error_of(values, increment):
        if ref_vals is not None:
            diff = float(np.linalg.norm(values - ref_vals))
            return diff / ref_norm if ref_norm > 0 else diff
        if increment is None:
            return math.inf
        return float(np.linalg.norm(increment)) / max(float(np.linalg.norm(values)), 1e-300)

    trace = ReflectionTrace(
        form=form, disc=disc, initial=u0, accumulated={k: v.copy() for k, v in u0.items()},
        initial_error=error_of(vals, None), particular=particular,
    )

    def solve(i, d):
        try:
            return disc.solve_object(i, d, 0.0)
        except (ProblemError, np.linalg.LinAlgError) as exc:
            raise ReflectionError(f"cycle {len(trace.cycles) + 1}, object {i}: {exc}") from exc

    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    prev_B = None  # prev_B[j][i] = B_i r_j of the previous cycle
    status = "max_cycles"
    try:
        for k in range(1, max_cycles + 1):
            refl = [None] * n_obj
            cur_B = [None] * n_obj
            d_used = [None] * n_obj
            if form.is_sequential:
                for i in range(n_obj):
                    if k == 1:
                        d = data[i] - acc_B[i]
                    else:
                        d = np.zeros_like(data[i])
                        for j in range(i + 1, n_obj):
                            d = d - prev_B[j][i]
                    for j in range(i):
                        d = d - cur_B[j][i]
                    d_used[i] = d
                    refl[i] = solve(i, d)
                    cur_B[i] = _operator_traces(disc, refl[i])
            else:
                for i in range(n_obj):
                    if k == 1:
                        d = data[i] - acc_B[i]
                    else:
                        s = np.zeros_like(data[i])
                        for j in range(n_obj):
                            if j != i:
                                s = s + prev_B[j][i]
                        d = -(nu * s - (1.0 - nu) * prev_B[i][i]) if nu != 1.0 else -s
                    d_used[i] = d
                if pool is not None:
                    refl = list(pool.map(solve, range(n_obj), d_used))
                    cur_B = list(pool.map(lambda r: _operator_traces(disc, r), refl))
                else:
                    refl = [solve(i, d_used[i]) for i in range(n_obj)]
                    cur_B = [_operator_traces(disc, r) for r in refl]

            # correction identities, measured before the update
            corr = np.zeros(n_obj)
            for i in range(n_obj):
                terms = [acc_B[i]]
                js = range(i + 1) if form.is_sequential else [i]
                terms += [cur_B[j][i] for j in js]
                total = terms[0].copy()
                for t in terms[1:]:
                    total = total + t
                scale = max(1.0, _inf(data[i]), *(_inf(t) for t in terms))
                corr[i] = _inf(total - data[i]) / scale

            # update u^{(k)} = u^{(k-1)} + nu * sum_i r_i in fixed order
            increment_vals = np.zeros_like(vals)
            for i in range(n_obj):
                trace.accumulated = _add_blocks(trace.accumulated, refl[i], nu)
                increment_vals = increment_vals + met.of_blocks(refl[i])
                for j in range(n_obj):
                    acc_B[j] = acc_B[j] + nu * cur_B[i][j]
            increment_vals = nu * increment_vals
            vals = vals + increment_vals

            err = error_of(vals, increment_vals)
            bres = np.array([_inf(acc_B[i] - data[i]) for i in range(n_obj)])
            rnorm = np.array([max(_inf(v) for v in r.values()) for r in refl])
            trace.cycles.append(
                CycleRecord(
                    k, refl, np.array([_inf(d) for d in d_used]), rnorm, bres, corr, err,
                    float(np.linalg.norm(increment_vals)),
                )
            )
            if keep_cycles is not None and len(trace.cycles) > keep_cycles:
                trace.cycles[-keep_cycles - 1].reflections = None
            prev_B = cur_B
            log.debug("%s cycle %d error %.3e", form.label, k, err)

            if not np.isfinite(err) or err > DIVERGENCE_THRESHOLD:
                status = "diverged"
                if stop_early or not np.isfinite(err):
                    break
            elif err < tol and stop_early:
                status = "converged"
                break
        if not stop_early and status != "diverged" and trace.cycles[-1].error < tol:
            status = "converged"
    finally:
        if pool is not None:
            pool.shutdown()

    errors = trace.errors()
    report = ConvergenceReport(
        status=status,
        cycles=trace.n_cycles,
        final_error=float(errors[-1]),
        errors=errors,
        contraction=None,
        fit_residual=None,
        max_correction_residual=float(max(np.max(c.correction_residuals) for c in trace.cycles)),
        form=form.label,
    )
    try:
        report.contraction, report.fit_residual = estimate_contraction(report, 0, floor=fit_floor)
    except ValueError:
        pass
    return trace, report


def correction_residual(trace: ReflectionTrace, cycle: int) -> np.ndarray:
    """Per-object deviation from the partial-corrector identity at ``cycle`` (1-based).

    Sequential: ``B_i(u^{(k-1)} + sum_{j<=i} u_j^{(k)}) = b_i``.
    Parallel/relaxed: ``B_i(u^{(k-1)} + u_i^{(k)}) = b_i``.
    Normalized by ``max(1, size of the terms)``.
    """
    if not 1 <= cycle <= trace.n_cycles:
        raise IndexError(f"cycle {cycle} not recorded")
    return trace.cycles[cycle - 1].correction_residuals.copy()


def estimate_contraction(report_or_errors, discard: int = 0, floor: float = ERROR_FLOOR):
    """Least-squares fit of ``log(error)`` against the cycle index.

    Returns ``(K, residual)`` with ``K = exp(slope)`` and the root-mean-square
    deviation of the fit in log space.  Only finite errors above ``floor``
    after the first ``discard`` entries are used; at least eight are needed.
    """
    errs = report_or_errors.errors if isinstance(report_or_errors, ConvergenceReport) else report_or_errors
    errs = np.asarray(errs, dtype=float)
    idx = np.arange(len(errs))[discard:]
    e = errs[discard:]
    ok = np.isfinite(e) & (e > floor)
    if np.count_nonzero(ok) < MIN_FIT_CYCLES:
        raise ValueError(
            f"only {np.count_nonzero(ok)} usable cycles above {floor:g}; need {MIN_FIT_CYCLES}"
        )
    x, y = idx[ok].astype(float), np.log(e[ok])
    A = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - y) ** 2)))
    return float(np.exp(coef[0])), resid


def error_propagation(
    problem: ProblemSpec,
    form: ReflectionForm,
    cycles: int,
    metric: str = "probe",
    reference: Optional[BVPSolution] = None,
    disc: Optional[Discretization] = None,
    discard: int = 0,
    fit_floor: float = 1e-290,
    **kwargs,
):
    """Iterate on the error ``u^{(k)} - u`` directly.

    The reflections are linear in the data, so running the homogeneous
    problem from ``u^{(0)} - u`` reproduces the error of the original run.
    Errors are absolute.  Roundoff in the first datum leaves a plateau near
    machine precision relative to the start, while the per-cycle increments
    keep decaying at the same asymptotic rate; the contraction factor is
    therefore fitted to the increment norms, after ``discard`` leading
    cycles.
    """
    disc = disc or Discretization(problem)
    reference = reference or solve_direct(problem, disc)
    u0 = solve_initial(problem, disc)
    start = subtract_blocks(u0.blocks, reference.blocks)
    hom = problem.homogeneous()
    hdisc = Discretization(hom)
    hdisc._traces, hdisc._systems, hdisc._evals = disc._traces, disc._systems, disc._evals
    init = BVPSolution(hdisc.field(start), start, {})
    trace, report = run_reflections(
        hom, form, max_cycles=cycles, tol=0.0, reference=HarmonicField(), metric=metric,
        initial=init, stop_early=False, disc=hdisc, **kwargs,
    )
    incs = np.concatenate([[np.nan], trace.increments()])
    report.contraction, report.fit_residual = None, None
    try:
        report.contraction, report.fit_residual = estimate_contraction(
            incs, max(discard, 1), floor=fit_floor
        )
    except ValueError:
        pass
    return trace, report


# --- sufficient condition ------------------------------------------------------


@dataclass(frozen=True)
class KappaResult:
    kappa: np.ndarray
    kappa_max: float
    bound: float
    satisfied: bool


def kappa_value(S_i: float, S_j: float, C_i: float, d: float) -> float:
    if not d > 0:
        raise ValueError(f"distance must be positive, got {d}")
    factor = S_i * S_j * C_i**2 / (4.0 * math.pi) ** 2
    return factor * min(1.0 / d**2 + 2.0 / d**4, 1.0 / d**4 + 16.0 / d**6)


def kappa_criterion(layout_or_data, C: Optional[Sequence[float]] = None, N: Optional[int] = None) -> KappaResult:
    """Evaluate the pairwise coupling bound and the test ``N(N-1) kappa(N) < 1``.

    ``layout_or_data`` is a :class:`GeometryLayout` or a tuple
    ``(perimeters, distances)`` with a symmetric distance matrix.  ``C``
    defaults to ones and must be ``>= 1``.  A satisfied test is a
    sufficient condition only.
    """
    if isinstance(layout_or_data, GeometryLayout):
        m = layout_metrics(layout_or_data)
        S, D = m.perimeters, m.distances
    else:
        S, D = (np.asarray(a, dtype=float) for a in layout_or_data)
    n = len(S)
    C = np.ones(n) if C is None else np.asarray(C, dtype=float)
    if np.any(C < 1.0):
        raise ValueError("constants C_i must be >= 1")
    N = n if N is None else int(N)
    kap = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                kap[i, j] = kappa_value(S[i], S[j], C[i], D[i, j])
    kmax = float(kap.max()) if n > 1 else 0.0
    bound = N * (N - 1) * kmax
    return KappaResult(kap, kmax, bound, bound < 1.0)
