"""Tests for error norms, indicators, defect terms and convergence reports."""

import io
import math

import numpy as np
import pytest

from vgs import mesh as vm
from vgs.analysis import (
    AnalysisError,
    ConvergenceReport,
    ErrorRecord,
    boundary_defect,
    coercivity_estimate,
    consistency_indicator,
    interior_defect,
    l2_errors,
    limit_conformity_indicator,
    orders,
)
from vgs.discretization import HybridSpace, P1Space
from vgs.quadrature import polygon_quadrature


def _mixed_mesh(n=4):
    mesh = vm.build_triangular_mesh(n)
    vm.tag_boundary(
        mesh,
        lambda x, y: vm.TAG_CONTACT
        if x < 1e-12
        else (vm.TAG_DIRICHLET if y < 1e-12 or y > 1 - 1e-12 else vm.TAG_NEUMANN),
    )
    return mesh


def _dirichlet_mesh(n=4):
    mesh = vm.build_triangular_mesh(n)
    vm.tag_boundary(mesh, lambda x, y: vm.TAG_DIRICHLET)
    return mesh


# ---------------------------------------------------------------------------
# L2 errors


def test_affine_interpolation_has_zero_gradient_error():
    for build in (vm.build_triangular_mesh, vm.build_hexagonal_mesh):
        mesh = build(4)
        vm.tag_boundary(mesh, lambda x, y: vm.TAG_DIRICHLET)
        space = HybridSpace(mesh)
        u = space.interpolate(lambda x, y: 2.0 * x - 3.0 * y + 0.25)
        res = l2_errors(space, u, lambda x, y: 2 * x - 3 * y + 0.25,
                        lambda x, y: np.stack([np.full_like(x, 2.0),
                                               np.full_like(x, -3.0)], axis=-1))
        assert res.gradient <= 1e-12
        assert 0 < res.function < 0.3
        assert not res.absolute


def test_p1_reproduces_affine_exactly():
    mesh = _dirichlet_mesh(3)
    space = P1Space(mesh)
    u = space.interpolate(lambda x, y: 1.0 - x + 4.0 * y)
    res = l2_errors(space, u, lambda x, y: 1 - x + 4 * y,
                    lambda x, y: np.stack([np.full_like(x, -1.0),
                                           np.full_like(x, 4.0)], axis=-1))
    assert res.function <= 1e-13
    assert res.gradient <= 1e-13


def test_zero_exact_solution_flags_absolute():
    mesh = _dirichlet_mesh(2)
    space = HybridSpace(mesh)
    res = l2_errors(space, np.zeros(space.n_dofs), lambda x, y: 0.0 * x,
                    lambda x, y: np.zeros(x.shape + (2,)))
    assert res.absolute
    assert res.function == 0.0
    assert res.gradient == 0.0


def test_relative_error_of_zero_vector_is_one():
    mesh = _dirichlet_mesh(3)
    space = HybridSpace(mesh)
    res = l2_errors(space, np.zeros(space.n_dofs), lambda x, y: x,
                    lambda x, y: np.stack([np.ones_like(x), np.zeros_like(x)], axis=-1))
    assert res.function == pytest.approx(1.0, abs=1e-12)
    assert res.gradient == pytest.approx(1.0, abs=1e-12)


def test_quadrature_refinement_env_is_small_perturbation(monkeypatch):
    mesh = _dirichlet_mesh(6)
    space = HybridSpace(mesh)
    u = space.interpolate(lambda x, y: math.sin(math.pi * x) * y)
    exact = (lambda x, y: np.sin(np.pi * x) * y,
             lambda x, y: np.stack([np.pi * np.cos(np.pi * x) * y,
                                    np.sin(np.pi * x)], axis=-1))
    base = l2_errors(space, u, *exact)
    monkeypatch.setenv("VGS_QUAD_REFINE", "1")
    refined = l2_errors(space, u, *exact)
    assert refined.function == pytest.approx(base.function, rel=0.01)
    assert refined.gradient == pytest.approx(base.gradient, rel=0.01)
    monkeypatch.setenv("VGS_QUAD_REFINE", "oops")
    with pytest.raises(AnalysisError):
        l2_errors(space, u, *exact)


def test_split_line_error_measurement_sees_jump():
    # gradient of the exact field jumps across y = 1/2; with the split the
    # piecewise interpolant of each half is measured exactly
    mesh = vm.build_triangular_mesh(3)  # odd: cells straddle y = 1/2
    vm.tag_boundary(mesh, lambda x, y: vm.TAG_DIRICHLET)
    space = P1Space(mesh)

    def val(x, y):
        return np.where(y < 0.5, y, 0.5)

    def grad(x, y):
        gy = np.where(y < 0.5, 1.0, 0.0)
        return np.stack([np.zeros_like(x), gy], axis=-1)

    u = space.interpolate(lambda x, y: min(y, 0.5))
    res = l2_errors(space, u, val, grad, split_y=0.5)
    # closed forms: the interpolant misses the kink by a tent of height 1/12
    # over the band y in [1/3, 2/3]; norms: |exact| = sqrt(1/6), |grad| = sqrt(1/2)
    assert res.function == pytest.approx((1.0 / 36.0) / math.sqrt(1.0 / 6.0), rel=1e-12)
    assert res.gradient == pytest.approx(math.sqrt(1.0 / 6.0), rel=1e-12)
    # without splitting, quadrature puts points of straddling cells on the
    # wrong branch of the exact field and mis-measures the function error
    res_nosplit = l2_errors(space, u, val, grad)
    assert res_nosplit.function != pytest.approx(res.function, rel=1e-6)


# ---------------------------------------------------------------------------
# consistency indicator


def test_consistency_affine_is_function_part_only():
    mesh = _dirichlet_mesh(4)
    space = HybridSpace(mesh)
    u = space.interpolate(lambda x, y: x + y)
    s = consistency_indicator(space, u, lambda x, y: x + y,
                              lambda x, y: np.ones(x.shape + (2,)))
    # independent function-part oracle: cellwise quadrature of (phi - phi(x_K))^2
    total = 0.0
    for cell in range(mesh.n_cells):
        poly = mesh.cell_polygon(cell)
        pts, wts = polygon_quadrature(poly, degree=2)
        xc, yc = mesh.cell_centre[cell]
        diff = (pts[:, 0] + pts[:, 1]) - (xc + yc)
        total += float(wts @ diff**2)
    assert s == pytest.approx(math.sqrt(total), abs=1e-12)


def test_consistency_zero_target_zero_vector():
    mesh = _dirichlet_mesh(2)
    space = HybridSpace(mesh)
    assert consistency_indicator(space, np.zeros(space.n_dofs),
                                 lambda x, y: 0.0 * x,
                                 lambda x, y: np.zeros(x.shape + (2,))) == 0.0


def test_consistency_order_for_smooth_target():
    vals = []
    hs = []
    for n in (4, 8, 16):
        mesh = _dirichlet_mesh(n)
        space = HybridSpace(mesh)
        u = space.interpolate(lambda x, y: math.sin(math.pi * x) * math.sin(math.pi * y))
        s = consistency_indicator(
            space, u,
            lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y),
            lambda x, y: np.stack([np.pi * np.cos(np.pi * x) * np.sin(np.pi * y),
                                   np.pi * np.sin(np.pi * x) * np.cos(np.pi * y)],
                                  axis=-1))
        vals.append(s)
        hs.append(mesh.h_max)
    rates = orders(hs, vals)
    assert all(r >= 0.9 for r in rates)


# ---------------------------------------------------------------------------
# limit-conformity


def test_constant_field_has_no_conformity_defect():
    # discrete divergence theorem: for constant fields the defect vanishes
    for build in (vm.build_triangular_mesh, vm.build_hexagonal_mesh):
        mesh = build(4)
        vm.tag_boundary(mesh, lambda x, y: vm.TAG_DIRICHLET if y > 1 - 1e-12
                        else vm.TAG_NEUMANN)
        space = HybridSpace(mesh)
        w = limit_conformity_indicator(
            space,
            lambda x, y: np.stack([np.full_like(x, 0.7), np.full_like(x, -1.3)], axis=-1),
            lambda x, y: np.zeros_like(x))
        assert w <= 1e-10


def test_zero_field_zero_defect():
    mesh = _mixed_mesh(3)
    space = HybridSpace(mesh)
    w = limit_conformity_indicator(space, lambda x, y: np.zeros(x.shape + (2,)),
                                   lambda x, y: np.zeros_like(x))
    assert w == 0.0


def test_conforming_space_has_no_defect_for_polynomial_fields():
    rng = np.random.default_rng(42)
    for n in (3, 5):
        mesh = _mixed_mesh(n)
        space = P1Space(mesh)
        for _ in range(5):
            c = rng.standard_normal((2, 4, 4)) * 0.5
            # keep total degree <= 3 so the degree-5 rules are exact for
            # every integrand appearing in the defect functional
            for i in range(4):
                for j in range(4):
                    if i + j > 3:
                        c[:, i, j] = 0.0

            def psi(x, y, c=c):
                xp = np.stack([np.ones_like(x), x, x**2, x**3], axis=-1)
                yp = np.stack([np.ones_like(y), y, y**2, y**3], axis=-1)
                out = np.einsum("qi,kij,qj->qk", xp, c, yp)
                return out

            def div_psi(x, y, c=c):
                dxp = np.stack([np.zeros_like(x), np.ones_like(x), 2 * x, 3 * x**2],
                               axis=-1)
                yp = np.stack([np.ones_like(y), y, y**2, y**3], axis=-1)
                xp = np.stack([np.ones_like(x), x, x**2, x**3], axis=-1)
                dyp = np.stack([np.zeros_like(y), np.ones_like(y), 2 * y, 3 * y**2],
                               axis=-1)
                return (np.einsum("qi,ij,qj->q", dxp, c[0], yp)
                        + np.einsum("qi,ij,qj->q", xp, c[1], dyp))

            assert limit_conformity_indicator(space, psi, div_psi) <= 1e-8


def test_conformity_defect_is_homogeneous():
    mesh = _mixed_mesh(4)
    space = HybridSpace(mesh)

    def psi(x, y):
        return np.stack([np.sin(np.pi * y), x * y], axis=-1)

    def div_psi(x, y):
        return x

    base = limit_conformity_indicator(space, psi, div_psi)
    c = -3.7
    scaled = limit_conformity_indicator(
        space, lambda x, y: c * psi(x, y), lambda x, y: c * div_psi(x, y))
    assert scaled == pytest.approx(abs(c) * base, rel=1e-10)
    assert base > 1e-6  # genuinely non-conforming


def test_conformity_defect_decreases_under_refinement():
    vals = []
    for n in (4, 8, 16):
        mesh = _mixed_mesh(n)
        space = HybridSpace(mesh)
        vals.append(limit_conformity_indicator(
            space,
            lambda x, y: np.stack([np.sin(np.pi * y), np.cos(np.pi * x)], axis=-1),
            lambda x, y: np.zeros_like(x)))
    assert vals[1] / vals[0] <= 0.75
    assert vals[2] / vals[1] <= 0.75


def test_conformity_requires_pinned_space():
    mesh = vm.build_triangular_mesh(2)
    vm.tag_boundary(mesh, lambda x, y: vm.TAG_NEUMANN)
    space = HybridSpace(mesh)
    with pytest.raises(AnalysisError):
        limit_conformity_indicator(space, lambda x, y: np.zeros(x.shape + (2,)),
                                   lambda x, y: np.zeros_like(x))


# ---------------------------------------------------------------------------
# coercivity


def test_p1_coercivity_bounded_by_poincare_constant():
    # full Dirichlet: the estimate is the discrete operator norm, which for a
    # conforming space sits below the continuous constant 1/(sqrt(2) pi)
    bound = 1.0 / (math.sqrt(2.0) * math.pi)
    prev = 0.0
    for n in (4, 8):
        space = P1Space(_dirichlet_mesh(n))
        cd = coercivity_estimate(space)
        assert prev <= cd <= bound * (1.0 + 1e-10)
        prev = cd
    assert prev >= 0.9 * bound  # n=8 already close to the limit


def test_single_free_dof_direct_ratio():
    verts = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]
    faces = [(0, 1), (1, 2), (2, 0)]
    mesh = vm.build_mesh(verts, faces, [[0, 1, 2]])
    vm.tag_boundary(mesh, lambda x, y: vm.TAG_DIRICHLET)
    space = HybridSpace(mesh)
    cd = coercivity_estimate(space)
    M = space.function_mass_matrix().toarray()
    K = space.gradient_matrix().toarray()
    assert cd == pytest.approx(math.sqrt(M[0, 0] / K[0, 0]), rel=1e-12)


def test_coercivity_invariant_under_cell_relabeling():
    verts = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
    faces = [(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)]
    mesh_a = vm.build_mesh(verts, faces, [[0, 1, 4], [4, 2, 3]])
    mesh_b = vm.build_mesh(verts, faces, [[4, 2, 3], [0, 1, 4]])
    for m in (mesh_a, mesh_b):
        vm.tag_boundary(m, lambda x, y: vm.TAG_DIRICHLET)
    ca = coercivity_estimate(HybridSpace(mesh_a))
    cb = coercivity_estimate(HybridSpace(mesh_b))
    assert ca == pytest.approx(cb, rel=1e-6)


def test_trace_term_increases_estimate():
    mesh = _mixed_mesh(4)
    space = HybridSpace(mesh)
    with_trace = coercivity_estimate(space)  # auto: natural faces exist
    without = coercivity_estimate(space, include_trace=False)
    assert with_trace >= without


def test_coercivity_stable_across_refinement():
    vals = [coercivity_estimate(HybridSpace(_dirichlet_mesh(n))) for n in (6, 12)]
    assert abs(vals[1] - vals[0]) <= 0.1 * vals[1]


def test_coercivity_requires_pinning():
    mesh = vm.build_triangular_mesh(2)
    vm.tag_boundary(mesh, lambda x, y: vm.TAG_NEUMANN)
    with pytest.raises(AnalysisError):
        coercivity_estimate(HybridSpace(mesh))


# ---------------------------------------------------------------------------
# defect terms


def test_interior_defect_closed_form():
    # quadratic bowl, unit residual scale: the centroid interpolant misses
    # the bowl by exactly its cellwise second moment
    for n in (4, 8):
        mesh = _dirichlet_mesh(n)
        space = HybridSpace(mesh)
        v = space.interpolate(lambda x, y: 0.5 * (x * x + y * y))
        val = interior_defect(space, lambda x, y: np.full_like(x, 2.0),
                              lambda x, y: 0.5 * (x * x + y * y), v)
        assert val == pytest.approx(1.0 / (9.0 * n * n), rel=1e-12)


def test_interior_defect_zero_residual():
    mesh = _dirichlet_mesh(3)
    space = HybridSpace(mesh)
    v = space.interpolate(lambda x, y: x * y)
    assert interior_defect(space, lambda x, y: np.zeros_like(x),
                           lambda x, y: x * y, v) == 0.0


def test_boundary_defect_closed_forms():
    n = 4
    mesh = vm.build_triangular_mesh(n)
    vm.tag_boundary(mesh, lambda x, y: vm.TAG_CONTACT if y < 1e-12 else vm.TAG_DIRICHLET)
    faces = mesh.faces_with_tag(vm.TAG_CONTACT)

    # face-midpoint trace: defect h^2/12 for a quadratic trace, unit flux
    hyb = HybridSpace(mesh)
    v = hyb.interpolate(lambda x, y: x * x)
    val = boundary_defect(hyb, lambda x, y: np.full_like(x, -1.0),
                          lambda x, y: x * x, v, faces)
    assert val == pytest.approx(1.0 / (12.0 * n * n), rel=1e-12)

    # affine endpoint trace: the chord sits above the convex trace, so with a
    # negative flux the defect is exactly -h^2/6
    p1 = P1Space(mesh)
    vp = p1.interpolate(lambda x, y: x * x)
    val_p1 = boundary_defect(p1, lambda x, y: np.full_like(x, -1.0),
                             lambda x, y: x * x, vp, faces)
    assert val_p1 == pytest.approx(-1.0 / (6.0 * n * n), rel=1e-12)


def test_boundary_defect_vanishes_on_matching_trace():
    mesh = vm.build_triangular_mesh(3)
    vm.tag_boundary(mesh, lambda x, y: vm.TAG_CONTACT if y < 1e-12 else vm.TAG_DIRICHLET)
    faces = mesh.faces_with_tag(vm.TAG_CONTACT)
    space = P1Space(mesh)
    v = space.interpolate(lambda x, y: 1.0 + x)  # trace affine: interpolant exact
    val = boundary_defect(space, lambda x, y: -np.exp(x), lambda x, y: 1.0 + x,
                          v, faces)
    assert abs(val) <= 1e-14


# ---------------------------------------------------------------------------
# orders and reports


def test_orders_basic_arithmetic():
    assert orders([0.2, 0.1], [0.4, 0.2]) == pytest.approx([1.0])
    assert orders([0.2, 0.1], [0.3, 0.3]) == pytest.approx([0.0])
    with pytest.raises(AnalysisError):
        orders([0.1, 0.2], [1.0, 2.0])
    with pytest.raises(AnalysisError):
        orders([0.1], [1.0])
    with pytest.raises(AnalysisError):
        orders([0.2, 0.1], [1.0])


def test_orders_reported_table_arithmetic():
    errs = [0.4360, 0.2038, 0.1041, 0.0542]
    hs = [0.24, 0.13, 0.07, 0.03]
    got = orders(hs, errs)
    assert got == pytest.approx([1.2406, 1.0853, 0.7703], abs=1e-3)


def test_error_record_validation():
    with pytest.raises(AnalysisError):
        ErrorRecord(h=0.0)
    with pytest.raises(AnalysisError):
        ErrorRecord(h=0.1, err_fun=-1.0)


def test_report_csv_layout_and_stability():
    rep = ConvergenceReport()
    rep.add(ErrorRecord(h=0.25, err_fun=0.4, err_grad=0.8, niter=4, wd=0.5))
    rep.add(ErrorRecord(h=0.125, err_fun=0.2, err_grad=0.4, niter=5, wd=0.25))
    rep.add(ErrorRecord(h=0.0625))  # failed level: only h known
    text = rep.csv_text()
    lines = text.strip().split("\n")
    assert lines[0] == "h,err_fun,err_grad,order_fun,order_grad,niter,WD,CD"
    assert lines[1] == "0.25,0.4,0.8,-,-,4,0.5,-"
    assert lines[2] == "0.125,0.2,0.4,1,1,5,0.25,-"
    assert lines[3] == "0.0625,-,-,-,-,-,-,-"
    assert text == rep.csv_text()  # stable across calls
    buf = io.StringIO()
    rep.to_csv(buf)
    assert buf.getvalue() == text


def test_report_rejects_nondecreasing_h():
    rep = ConvergenceReport()
    rep.add(ErrorRecord(h=0.1))
    with pytest.raises(AnalysisError):
        rep.add(ErrorRecord(h=0.1))


def test_report_file_roundtrip(tmp_path):
    rep = ConvergenceReport()
    rep.add(ErrorRecord(h=0.5, err_fun=1.0, err_grad=2.0, niter=1))
    path = tmp_path / "report.csv"
    rep.to_csv(path)
    assert path.read_text() == rep.csv_text()
