import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from boundary_reflections.bvp import (
    CONTAINER,
    BoundaryCondition,
    Discretization,
    ProblemError,
    ProblemSpec,
    SingularProblemError,
    solve_direct,
    solve_initial,
    solve_one_object,
)
from boundary_reflections.geometry import GeometryLayout, make_circle
from boundary_reflections.potentials import ParticularSolution, evaluate_field

RADII = np.array([2.0, 5.0, 8.0])


def radial_points(rho, angle=0.7):
    return np.column_stack([rho * np.cos(angle), rho * np.sin(angle)])


def flux_through(field, curve, side="exterior"):
    """Outward flux of ``field`` through ``curve`` from its boundary normal trace."""
    return curve.integrate(field.trace(curve, "normal", side))


def probe_flux(field, center, radius, n=256):
    probe = make_circle(center, radius, n)
    g = evaluate_field(field, probe.points, "gradient").values
    return probe.integrate(np.sum(g * probe.normals, axis=1))


def test_annulus_dirichlet(annulus_layout):
    sol = solve_direct(ProblemSpec(annulus_layout, [BoundaryCondition.dirichlet(1.0)]))
    exact = np.log(RADII / 10) / np.log(0.1)
    np.testing.assert_allclose(sol.field(radial_points(RADII)), exact, atol=1e-8)
    assert sol.field(radial_points(np.array([5.0])))[0] == pytest.approx(0.30103, abs=1e-5)


def test_zero_data_gives_zero_field(annulus_layout):
    sol = solve_direct(ProblemSpec(annulus_layout, [BoundaryCondition.dirichlet(0.0)]))
    assert np.max(np.abs(sol.field(radial_points(RADII)))) == 0.0


@pytest.mark.parametrize("Q", [1.0, -2.5])
def test_annulus_fourth_type(annulus_layout, Q):
    sol = solve_direct(ProblemSpec(annulus_layout, [BoundaryCondition.fourth_type(Q)]))
    np.testing.assert_allclose(sol.field(radial_points(RADII)), Q / (2 * math.pi) * np.log(RADII / 10), atol=1e-8)
    assert sol.constants[0] == pytest.approx(Q / (2 * math.pi) * math.log(0.1), abs=1e-8)
    inner = annulus_layout.objects[0]
    tr = sol.field.trace(inner, "value", "exterior")
    assert np.std(tr) <= 1e-8
    assert flux_through(sol.field, inner) == pytest.approx(Q, abs=1e-9)


def test_annulus_neumann(annulus_layout):
    A = 0.75
    sol = solve_direct(ProblemSpec(annulus_layout, [BoundaryCondition.neumann(A)]))
    np.testing.assert_allclose(sol.field(radial_points(RADII)), A * np.log(RADII / 10), atol=1e-8)


def test_annulus_with_particular_solution(annulus_layout):
    # -Laplace u = 4 with u_p = -rho^2; u = 0 on both circles
    part = ParticularSolution(lambda p: -np.sum(p**2, axis=1), lambda p: -2.0 * p)
    sol = solve_direct(ProblemSpec(annulus_layout, [BoundaryCondition.dirichlet(0.0)], part))
    exact = -RADII**2 + 1 + 99 / math.log(10) * np.log(RADII)
    np.testing.assert_allclose(sol.field(radial_points(RADII)), exact, atol=1e-8)


def _mixed_problem(kinds, seed=0, nodes=96):
    rng = np.random.default_rng(seed)
    centres = [(-3.0, 0.5), (2.5, 1.0), (0.0, -4.0)]
    objects = [make_circle(c, 1.0 + 0.3 * k, nodes, name=f"o{k}") for k, c in enumerate(centres[: len(kinds)])]
    conds = []
    for kind in kinds:
        a, b = rng.standard_normal(2)
        if kind == "fourth":
            conds.append(BoundaryCondition.fourth_type(a))
        else:
            conds.append(BoundaryCondition(kind, lambda x, y, th, a=a, b=b: a + b * np.cos(2 * th)))
    layout = GeometryLayout(tuple(objects), make_circle((0, 0), 10.0, 256))
    return ProblemSpec(layout, conds)


def _residuals(problem, sol):
    out = []
    for i, cond in enumerate(problem.conditions):
        curve = problem.layout.objects[i]
        if cond.kind == "dirichlet":
            out.append(np.max(np.abs(sol.field.trace(curve, "value") - problem.data(i))))
        elif cond.kind == "neumann":
            out.append(np.max(np.abs(sol.field.trace(curve, "normal") - problem.data(i))))
        else:
            tr = sol.field.trace(curve, "value")
            out.append(np.max(np.abs(tr - sol.constants[i])))
            out.append(abs(flux_through(sol.field, curve) - cond.flux))
    cont = problem.layout.container
    out.append(np.max(np.abs(sol.field.trace(cont, "value", "interior"))))
    return max(out)


@given(kinds=st.lists(st.sampled_from(["dirichlet", "neumann", "fourth"]), min_size=1, max_size=3),
       seed=st.integers(0, 1000))
def test_direct_solve_boundary_residuals(kinds, seed):
    problem = _mixed_problem(kinds, seed)
    sol = solve_direct(problem)
    assert _residuals(problem, sol) <= 1e-9


def test_maximum_principle(rng):
    problem = _mixed_problem(["dirichlet", "dirichlet", "dirichlet"], seed=3)
    sol = solve_direct(problem)
    data = np.concatenate([problem.data(i) for i in range(3)] + [np.zeros(1)])
    pts = rng.uniform(-9.5, 9.5, size=(2000, 2))
    pts = pts[np.hypot(*pts.T) < 9.0]
    for c in problem.layout.objects:
        radius = c.perimeter / (2 * math.pi)
        pts = pts[np.hypot(*(pts - c.anchor).T) > radius + 0.3]
    vals = sol.field(pts)
    assert vals.min() >= data.min() - 1e-8
    assert vals.max() <= data.max() + 1e-8


def test_probe_flux_equals_enclosed_charge():
    # exterior problem with two charged equivalued objects: total flux is the total charge
    objects = (make_circle((-2.0, 0.0), 1.0, 96), make_circle((2.0, 0.5), 1.0, 96))
    problem = ProblemSpec(GeometryLayout(objects), [BoundaryCondition.fourth_type(1.5), BoundaryCondition.fourth_type(-0.4)])
    sol = solve_direct(problem)
    assert probe_flux(sol.field, (0.0, 0.0), 7.0) == pytest.approx(1.1, abs=1e-8)
    assert probe_flux(sol.field, (-2.0, 0.0), 2.0) == pytest.approx(1.5, abs=1e-8)


def test_one_object_matches_direct():
    layout = GeometryLayout((make_circle((0, 0), 1.0, 128),), make_circle((0, 0), 10.0, 128))
    problem = ProblemSpec(layout, [BoundaryCondition.dirichlet(1.0)])
    a = solve_one_object(problem, 0)
    b = solve_direct(problem)
    pts = radial_points(np.linspace(1.5, 9.0, 12))
    np.testing.assert_allclose(a.field(pts), b.field(pts), atol=1e-10)


def test_one_object_zero_rhs_is_zero():
    problem = _mixed_problem(["dirichlet", "neumann"])
    sol = solve_one_object(problem, 0, data=np.zeros(96))
    assert np.max(np.abs(sol.field(radial_points(RADII)))) == 0.0


def test_fourth_type_reflection_has_zero_flux(rng):
    problem = _mixed_problem(["fourth", "dirichlet"])
    curve = problem.layout.objects[0]
    d = rng.standard_normal(96)
    d -= curve.mean(d)
    sol = solve_one_object(problem, 0, data=d, flux=0.0)
    assert abs(flux_through(sol.field, curve)) <= 1e-9
    tr = sol.field.trace(curve, "value")
    np.testing.assert_allclose(tr - curve.mean(tr), d, atol=1e-9)


def test_initial_zero_for_dirichlet_neumann():
    problem = _mixed_problem(["dirichlet", "neumann"])
    sol = solve_initial(problem)
    assert sol.blocks == {}
    assert np.all(sol.field(radial_points(RADII)) == 0.0)


def test_initial_fourth_type_single_object(annulus_layout):
    Q = 2.0
    sol = solve_initial(ProblemSpec(annulus_layout, [BoundaryCondition.fourth_type(Q)]))
    np.testing.assert_allclose(sol.field(radial_points(RADII)), Q / (2 * math.pi) * np.log(RADII / 10), atol=1e-8)


def test_initial_fourth_type_fluxes():
    problem = _mixed_problem(["fourth", "fourth"], seed=5)
    sol = solve_initial(problem)
    for i, cond in enumerate(problem.conditions):
        assert flux_through(sol.field, problem.layout.objects[i]) == pytest.approx(cond.flux, abs=1e-8)


def test_initial_with_particular_solution(annulus_layout):
    part = ParticularSolution(lambda p: -np.sum(p**2, axis=1), lambda p: -2.0 * p)
    sol = solve_initial(ProblemSpec(annulus_layout, [BoundaryCondition.dirichlet(0.0)], part))
    cont = annulus_layout.container
    np.testing.assert_allclose(sol.field.trace(cont, "value", "interior"), 0.0, atol=1e-10)
    assert CONTAINER in sol.blocks


def test_exterior_dirichlet_radius_two():
    layout = GeometryLayout((make_circle((0, 0), 2.0, 64),))
    sol = solve_direct(ProblemSpec(layout, [BoundaryCondition.dirichlet(1.0)]))
    rho = np.array([3.0, 6.0, 20.0])
    np.testing.assert_allclose(sol.field(radial_points(rho)), np.log(rho) / math.log(2.0), atol=1e-10)


def test_exterior_dirichlet_capacity_one_is_singular():
    layout = GeometryLayout((make_circle((0, 0), 1.0, 64),))
    with pytest.raises(SingularProblemError):
        solve_direct(ProblemSpec(layout, [BoundaryCondition.dirichlet(1.0)]))


def test_exterior_neumann_dipole():
    layout = GeometryLayout((make_circle((0, 0), 1.0, 64),))
    sol = solve_direct(ProblemSpec(layout, [BoundaryCondition.neumann(lambda x, y, th: np.cos(th))]))
    rho, ang = np.array([1.5, 3.0, 10.0]), 0.4
    np.testing.assert_allclose(sol.field(radial_points(rho, ang)), -np.cos(ang) / rho, atol=1e-12)


def test_exterior_neumann_with_nonzero_mean_rejected():
    layout = GeometryLayout((make_circle((0, 0), 1.0, 64),))
    with pytest.raises(ProblemError, match="nonzero mean"):
        solve_direct(ProblemSpec(layout, [BoundaryCondition.neumann(1.0)]))


def test_problem_validation(annulus_layout):
    with pytest.raises(ProblemError):
        ProblemSpec(annulus_layout, [])
    with pytest.raises(ProblemError):
        BoundaryCondition("robin", 1.0)
    with pytest.raises(ProblemError):
        ProblemSpec(GeometryLayout((make_circle((0, 0), 1.0, 32),)), [BoundaryCondition.dirichlet(0.0)],
                    ParticularSolution(lambda p: 0 * p[:, 0], lambda p: 0 * p))
    with pytest.raises(ProblemError, match="nodes"):
        ProblemSpec(annulus_layout, [BoundaryCondition.dirichlet(np.ones(5))]).data(0)
    with pytest.raises(ProblemError):
        solve_one_object(ProblemSpec(annulus_layout, [BoundaryCondition.dirichlet(1.0)]), 3)


def test_discretization_caches_systems(annulus_layout):
    disc = Discretization(ProblemSpec(annulus_layout, [BoundaryCondition.dirichlet(1.0)]))
    a = disc.system(disc.object_carriers(0))
    b = disc.system(disc.object_carriers(0))
    assert a is b
