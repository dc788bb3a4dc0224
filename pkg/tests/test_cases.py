"""Tests for the benchmark definitions, mesh preparation and study driver."""

import dataclasses
import math

import numpy as np
import pytest

from vgs.cases import (
    CaseError,
    MESH_FAMILIES,
    _verify_manufactured,
    build_case_mesh,
    build_family_mesh,
    case_by_name,
    default_resolutions,
    make_space,
    resolution_for,
    run_convergence_study,
    solve_case,
    study_row,
)
from vgs.cases import test1_signorini as signorini_iterations_case
from vgs.cases import test2_signorini_exact as heterogeneous_exact_case
from vgs.cases import test3_obstacle as obstacle_load_case
from vgs.mesh import TAG_CONTACT, TAG_DIRICHLET, TAG_NEUMANN
from vgs.solver import kkt_residuals


# ---------------------------------------------------------------------------
# closed-form data of the heterogeneous benchmark


def test_heterogeneous_case_is_self_consistent():
    # construction re-derives -div(flux) by finite differences and raises
    # on any mismatch with the hard-coded source
    case = heterogeneous_exact_case()
    assert case.exact is not None
    assert case.problem.sense == "upper"
    assert case.problem.exact is case.exact
    assert case.problem.split_y == 0.5
    assert case.problem.load_refine >= 1


def test_tampered_source_is_rejected():
    case = heterogeneous_exact_case()
    good = case.problem.source
    bad = dataclasses.replace(
        case.problem, source=lambda x, y: -np.asarray(good(x, y))
    )
    with pytest.raises(CaseError, match="manufactured identity"):
        _verify_manufactured(bad, case.exact)


def test_tampered_gradient_is_rejected():
    case = heterogeneous_exact_case()
    good = case.exact.gradient
    bad = dataclasses.replace(
        case.exact, gradient=lambda x, y: 1.001 * np.asarray(good(x, y))
    )
    with pytest.raises(CaseError, match="manufactured identity"):
        _verify_manufactured(case.problem, bad)


def test_solution_and_flux_continuous_across_material_line():
    case = heterogeneous_exact_case()
    xs = np.linspace(0.0, 1.0, 17)
    eps = 1e-9
    below = np.asarray(case.exact.value(xs, 0.5 - eps))
    above = np.asarray(case.exact.value(xs, 0.5 + eps))
    assert np.all(np.abs(below - above) < 1e-7)
    # the full solution value on the line itself is zero
    assert np.all(np.abs(np.asarray(case.exact.value(xs, 0.5))) < 1e-15)
    # normal (vertical) flux component matches across the jump in the tensor
    fb = np.asarray(case.exact.flux_field(xs, 0.5 - eps))[..., 1]
    fa = np.asarray(case.exact.flux_field(xs, 0.5 + eps))[..., 1]
    assert np.all(np.abs(fb - fa) < 1e-6)


def test_contact_side_structure():
    case = heterogeneous_exact_case()
    # lower half of x=0: strictly below the bound, zero outward flux
    assert float(case.exact.value(0.0, 0.25)) < 0.0
    assert float(case.exact.normal_flux(0.0, 0.25)) == 0.0
    # upper half: on the bound, strictly negative outward flux
    assert float(case.exact.value(0.0, 0.75)) == 0.0
    assert float(case.exact.normal_flux(0.0, 0.75)) < 0.0


def test_diffusion_jumps_at_material_line():
    case = heterogeneous_exact_case()
    low = case.problem.diffusion.at(0.3, 0.25)
    up = case.problem.diffusion.at(0.3, 0.75)
    assert np.allclose(low, 100.0 * np.eye(2))
    assert np.allclose(up, np.eye(2))


# ---------------------------------------------------------------------------
# lookups and validation


def test_benchmark_lookup_by_name():
    assert case_by_name("test1").name == "test1"
    assert case_by_name("test2").name == "test2"
    assert case_by_name("test3").name == "test3"
    assert float(case_by_name("test3", C=-7.5).problem.source(0.3, 0.4)) == -7.5
    with pytest.raises(CaseError, match="unknown case"):
        case_by_name("test4")


@pytest.mark.parametrize("bad", [0.0, 5.0, float("nan")])
def test_nonnegative_load_is_rejected(bad):
    with pytest.raises(ValueError, match="negative"):
        obstacle_load_case(bad)


def test_family_lookup():
    assert build_family_mesh("tri", 3).n_cells == 18
    assert build_family_mesh("hex", 7).n_cells == 52
    assert build_family_mesh("kershaw", 5).n_cells == 25
    assert set(MESH_FAMILIES) == {"tri", "hex", "kershaw"}
    with pytest.raises(CaseError, match="unknown mesh family"):
        build_family_mesh("voronoi", 3)


def test_scheme_lookup():
    mesh = build_family_mesh("tri", 2)
    assert type(make_space(mesh, "hmm")).__name__ == "HybridSpace"
    assert type(make_space(mesh, "p1")).__name__ == "P1Space"
    with pytest.raises(CaseError, match="unknown scheme"):
        make_space(mesh, "q1")


# ---------------------------------------------------------------------------
# resolution selection


def test_resolution_matches_targets():
    assert resolution_for("tri", 0.05) == 28  # sqrt(2)/28 = 0.0505
    hex_ns = [resolution_for("hex", h) for h in (0.24, 0.13, 0.07, 0.03)]
    assert hex_ns == [7, 12, 23, 53]
    with pytest.raises(CaseError, match="positive"):
        resolution_for("tri", 0.0)


def test_resolution_even_restriction():
    n = resolution_for("tri", 0.06, even=True)
    assert n % 2 == 0
    assert abs(math.sqrt(2.0) / n - 0.06) < abs(math.sqrt(2.0) / (n + 2) - 0.06)
    assert abs(math.sqrt(2.0) / n - 0.06) < abs(math.sqrt(2.0) / (n - 2) - 0.06)


def test_default_resolutions_per_case():
    assert default_resolutions(signorini_iterations_case(), "tri", 4) == [23, 28, 57, 91]
    assert default_resolutions(heterogeneous_exact_case(), "hex", 4) == [7, 12, 23, 53]
    # families with cells that would cross the material line stay even
    tri2 = default_resolutions(heterogeneous_exact_case(), "tri", 3)
    assert all(n % 2 == 0 for n in tri2)
    assert tri2 == sorted(set(tri2))


def test_default_resolutions_extend_by_halving():
    case = signorini_iterations_case()
    ns = default_resolutions(case, "tri", 5)
    assert len(ns) == 5
    assert all(a < b for a, b in zip(ns, ns[1:]))
    # the extra level continues the sequence at roughly half the mesh size
    assert 1.7 < ns[4] / ns[3] < 2.3
    with pytest.raises(CaseError, match="at least one level"):
        default_resolutions(case, "tri", 0)


# ---------------------------------------------------------------------------
# case meshes: tags and material-line alignment


def test_case_mesh_tags_bottom_contact():
    mesh = build_case_mesh(signorini_iterations_case(), "tri", 5)
    contact = mesh.faces_with_tag(TAG_CONTACT)
    dirichlet = mesh.faces_with_tag(TAG_DIRICHLET)
    neumann = mesh.faces_with_tag(TAG_NEUMANN)
    assert len(contact) == 5 and len(dirichlet) == 5 and len(neumann) == 10
    assert np.all(np.abs(mesh.face_centroid[contact, 1]) < 1e-12)
    assert np.all(np.abs(mesh.face_centroid[dirichlet, 1] - 1.0) < 1e-12)


def test_case_mesh_resolves_material_line():
    case = heterogeneous_exact_case()
    for family, n in (("hex", 7), ("tri", 5), ("kershaw", 5)):
        mesh = build_case_mesh(case, family, n)
        for c in range(mesh.n_cells):
            ys = mesh.vertices[mesh.cell_loop(c), 1]
            assert ys.max() <= 0.5 + 1e-12 or ys.min() >= 0.5 - 1e-12
        contact = mesh.faces_with_tag(TAG_CONTACT)
        assert len(contact) > 0
        assert np.all(np.abs(mesh.face_centroid[contact, 0]) < 1e-12)


def test_case_mesh_all_dirichlet_for_obstacle():
    mesh = build_case_mesh(obstacle_load_case(), "tri", 4)
    assert len(mesh.faces_with_tag(TAG_DIRICHLET)) == len(mesh.boundary_faces())


# ---------------------------------------------------------------------------
# solves


def test_contact_solve_iteration_count_small():
    case = signorini_iterations_case()
    mesh = build_case_mesh(case, "tri", 12)
    space, solution = solve_case(case, mesh)
    assert solution.state.converged
    assert 2 <= solution.state.niter <= 9
    assert solution.state.niter <= len(mesh.faces_with_tag(TAG_CONTACT))
    residuals = kkt_residuals(mesh, space, case.problem, solution)
    assert max(residuals.values()) <= 1e-9


def test_contact_solution_touches_bound_on_part_of_the_edge():
    case = signorini_iterations_case()
    mesh = build_case_mesh(case, "tri", 12)
    space, solution = solve_case(case, mesh)
    contact = mesh.faces_with_tag(TAG_CONTACT)
    vals = solution.values[space.face_dofs(contact)]
    assert np.all(vals >= -1e-12)  # lower bound respected
    assert np.any(vals < -1e-12 + 1e-6) and np.any(vals > 1e-3)


def test_obstacle_iterations_grow_as_load_shrinks():
    mesh = build_case_mesh(obstacle_load_case(), "tri", 12)
    niters = {}
    for load in (-5.0, -20.0):
        case = obstacle_load_case(load)
        space, solution = solve_case(case, mesh, "hmm")
        assert solution.state.converged
        barrier_at_centres = case.problem.barrier(
            mesh.cell_centre[:, 0], mesh.cell_centre[:, 1]
        )
        cell_vals = solution.values[space.cell_dofs()]
        assert np.all(cell_vals >= barrier_at_centres - 1e-9)
        niters[load] = solution.state.niter
    assert niters[-5.0] >= niters[-20.0]


# ---------------------------------------------------------------------------
# studies


def test_study_shape_and_determinism():
    case = signorini_iterations_case()
    first = run_convergence_study(case, "hmm", resolutions=[4, 6]).csv_text()
    second = run_convergence_study(case, "hmm", resolutions=[4, 6]).csv_text()
    assert first == second
    lines = first.strip().splitlines()
    assert lines[0] == "h,err_fun,err_grad,order_fun,order_grad,niter,WD,CD"
    assert len(lines) == 3
    # no exact solution: error and indicator columns are the undefined marker
    row = lines[1].split(",")
    assert row[1] == row[2] == row[3] == row[4] == "-"
    assert int(row[5]) >= 1


def test_study_records_errors_and_orders():
    case = heterogeneous_exact_case()
    report = run_convergence_study(case, "hmm", resolutions=[4, 8], family="tri")
    rows = report.csv_text().strip().splitlines()[1:]
    cells = [r.split(",") for r in rows]
    assert float(cells[0][1]) > float(cells[1][1]) > 0.0
    assert float(cells[0][2]) > float(cells[1][2]) > 0.0
    assert cells[0][3] == "-" and float(cells[1][3]) > 0.5


def test_study_records_indicators():
    case = heterogeneous_exact_case()
    report = run_convergence_study(
        case, "hmm", resolutions=[4, 8], family="tri", indicators=True
    )
    rows = [r.split(",") for r in report.csv_text().strip().splitlines()[1:]]
    wd = [float(r[6]) for r in rows]
    cd = [float(r[7]) for r in rows]
    assert wd[1] < wd[0]  # conformity defect shrinks under refinement
    assert all(c > 0.0 for c in cd)


def test_study_without_exact_leaves_indicator_defined():
    # the coercivity estimate needs no exact solution; the flux defect does
    case = signorini_iterations_case()
    row = study_row(case, build_case_mesh(case, "tri", 4), "hmm", indicators=True)
    assert row.wd is None
    assert row.cd is not None and row.cd > 0.0


def test_study_marks_failed_level_and_continues():
    case = signorini_iterations_case()
    broken = dataclasses.replace(case.problem, barrier=lambda x, y: float("nan"))
    case = dataclasses.replace(case, problem=broken)
    report = run_convergence_study(case, "hmm", resolutions=[4, 6])
    rows = report.csv_text().strip().splitlines()[1:]
    assert len(rows) == 2
    for row in rows:
        h, rest = row.split(",", 1)
        assert float(h) > 0.0
        assert rest == "-,-,-,-,-,-,-"


def test_vertex_scheme_study_runs_on_triangles_by_default():
    case = heterogeneous_exact_case()
    report = run_convergence_study(case, "p1", resolutions=[6, 12])
    rows = [r.split(",") for r in report.csv_text().strip().splitlines()[1:]]
    assert float(rows[1][3]) > 1.5  # function error is second order
    assert float(rows[1][4]) > 0.8
