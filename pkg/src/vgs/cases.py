"""Benchmark problems, mesh families, and convergence studies.

Three unit-square contact benchmarks are provided:

* :func:`test1_signorini` -- lower-bound contact along the bottom edge
  with a sinusoidal source; tracked through iteration counts.
* :func:`test2_signorini_exact` -- heterogeneous-diffusion contact
  problem with a closed-form solution, used to measure convergence
  orders.  The source term is hard-coded from the exact derivatives and
  re-verified against the gradient by finite differences on import of
  the case.
* :func:`test3_obstacle` -- constant-load obstacle problem over a
  pyramid barrier; tracked through iteration counts across load sizes.

:func:`run_convergence_study` drives the build/solve/measure loop over a
refining mesh family and tabulates errors, orders, iteration counts and
(optionally) scheme-quality indicators into a
:class:`~vgs.analysis.ConvergenceReport`.
"""

from __future__ import annotations

import dataclasses
import functools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .analysis import (
    ConvergenceReport,
    ErrorRecord,
    coercivity_estimate,
    l2_errors,
    limit_conformity_indicator,
)
from .assembly import DiffusionField
from .discretization import HybridSpace, P1Space
from .mesh import (
    TAG_CONTACT,
    TAG_DIRICHLET,
    TAG_NEUMANN,
    PolytopalMesh,
    build_distorted_quad_mesh,
    build_hexagonal_mesh,
    build_triangular_mesh,
    split_mesh_at_line,
    tag_boundary,
)
from .solver import SolverError, VIProblem, kkt_residuals, solve_obstacle, solve_signorini

__all__ = [
    "CaseError",
    "ExactSolution",
    "TestCase",
    "test1_signorini",
    "test2_signorini_exact",
    "test3_obstacle",
    "case_by_name",
    "MESH_FAMILIES",
    "build_family_mesh",
    "build_case_mesh",
    "make_space",
    "solve_case",
    "resolution_for",
    "needs_even_resolution",
    "case_resolution",
    "default_resolutions",
    "refined_quadrature_case",
    "study_row",
    "run_convergence_study",
]

log = logging.getLogger(__name__)

_PI = math.pi


class CaseError(Exception):
    """Raised when a benchmark definition is inconsistent or misused."""


# --------------------------------------------------------------------------
# case containers


@dataclass(frozen=True)
class ExactSolution:
    """Closed-form solution data attached to a benchmark.

    All callables accept scalar or array coordinates.  ``value`` and
    ``gradient`` describe the solution itself; ``flux_field`` is the
    diffusive flux (tensor times gradient), ``div_flux`` its divergence
    (the negated source) and ``normal_flux`` its outward normal component
    along the contact edge.  ``split_y`` marks a horizontal line across
    which the data are only piecewise smooth, so quadrature must split
    cells there.
    """

    value: object
    gradient: object
    flux_field: object = None
    div_flux: object = None
    normal_flux: object = None
    split_y: float | None = None


@dataclass
class TestCase:
    """A ready-to-run benchmark: problem data plus mesh/report defaults.

    ``classifier`` assigns boundary-condition tags from coordinates;
    ``family`` names the default mesh family and ``target_hs`` the mesh
    sizes a default study aims for.  ``reference`` stores frozen
    comparison numbers (iteration counts, errors) used by reports and
    regression checks.
    """

    name: str
    problem: VIProblem
    classifier: object
    family: str
    target_hs: tuple
    exact: ExactSolution | None = None
    reference: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# boundary classifiers (evaluated strictly inside each boundary face, so
# corner vertices never reach them; the order of the checks is immaterial)

_EDGE_TOL = 1e-9


def _tag_bottom_contact(x: float, y: float) -> int:
    """Contact along y=0, fixed top edge, natural side edges."""
    if y < _EDGE_TOL:
        return TAG_CONTACT
    if y > 1.0 - _EDGE_TOL:
        return TAG_DIRICHLET
    return TAG_NEUMANN


def _tag_left_contact(x: float, y: float) -> int:
    """Contact along x=0, fixed bottom/top edges, natural right edge."""
    if x < _EDGE_TOL:
        return TAG_CONTACT
    if x > 1.0 - _EDGE_TOL:
        return TAG_NEUMANN
    return TAG_DIRICHLET


def _tag_dirichlet(x: float, y: float) -> int:
    """The whole boundary is fixed."""
    return TAG_DIRICHLET


# --------------------------------------------------------------------------
# manufactured-solution verification


def _verify_manufactured(problem: VIProblem, exact: ExactSolution, *,
                         points: int = 20, delta: float = 1e-6,
                         tol: float = 1e-8, seed: int = 20260825) -> None:
    """Check that minus the flux divergence equals the source.

    The divergence of ``diffusion @ gradient`` is formed by central
    differences of the exact gradient at ``points`` random locations per
    smooth subregion, keeping a margin so the stencil never crosses a
    material line.  A mismatch beyond ``tol`` (relative to the source
    magnitude) means the hard-coded derivatives are inconsistent.
    """
    rng = np.random.default_rng(seed)
    cuts = [0.0, 1.0] if exact.split_y is None else [0.0, exact.split_y, 1.0]
    margin = 16.0 * delta

    def grad(x: float, y: float) -> np.ndarray:
        return np.asarray(exact.gradient(x, y), dtype=np.float64).reshape(2)

    for lo, hi in zip(cuts[:-1], cuts[1:]):
        xs = rng.uniform(margin, 1.0 - margin, points)
        ys = rng.uniform(lo + margin, hi - margin, points)
        for xi, yi in zip(xs, ys):
            lam = problem.diffusion.at(xi, yi)
            div = (
                (lam @ grad(xi + delta, yi))[0] - (lam @ grad(xi - delta, yi))[0]
                + (lam @ grad(xi, yi + delta))[1] - (lam @ grad(xi, yi - delta))[1]
            ) / (2.0 * delta)
            f = float(problem.source(xi, yi))
            if abs(div + f) > tol * (1.0 + abs(f)):
                raise CaseError(
                    f"manufactured identity fails at ({xi:.6f}, {yi:.6f}): "
                    f"-div(flux) = {-div:.12g} but source = {f:.12g}"
                )


# --------------------------------------------------------------------------
# closed-form data of the heterogeneous contact benchmark
#
# The solution is P(y)*cos(pi x) below the material line y = 1/2 (where
# the diffusion is 100*I) and x*g(x)*G(y) above it (diffusion I), with
#   P(y) = -y*(y-1/2)^2,   g(x) = (1+cos(pi x))/2,   G(y) = (1-y)*(y-1/2)^2.
# Both pieces and their normal fluxes vanish on y = 1/2, so the composite
# lies in H^1 with square-integrable flux divergence.  The solution is
# zero on the bottom and top edges (fixed), has zero normal derivative on
# the right edge (natural), and meets the contact conditions on the left
# edge: below the midpoint it is negative with zero flux, above it it is
# zero with strictly negative flux.


def _t2_lower_value(x, y):
    return -y * (y - 0.5) ** 2 * np.cos(_PI * x)


def _t2_upper_value(x, y):
    return x * (1.0 + np.cos(_PI * x)) / 2.0 * (1.0 - y) * (y - 0.5) ** 2


def _t2_value(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return np.where(y < 0.5, _t2_lower_value(x, y), _t2_upper_value(x, y))


def _t2_lower_gradient(x, y):
    gx = _PI * y * (y - 0.5) ** 2 * np.sin(_PI * x)
    gy = -(y - 0.5) * (3.0 * y - 0.5) * np.cos(_PI * x)
    return np.stack(np.broadcast_arrays(gx, gy), axis=-1)


def _t2_upper_gradient(x, y):
    phi = x * (1.0 + np.cos(_PI * x)) / 2.0
    dphi = (1.0 + np.cos(_PI * x)) / 2.0 - 0.5 * _PI * x * np.sin(_PI * x)
    big_g = (1.0 - y) * (y - 0.5) ** 2
    dbig_g = (y - 0.5) * (2.5 - 3.0 * y)
    return np.stack(np.broadcast_arrays(dphi * big_g, phi * dbig_g), axis=-1)


def _t2_gradient(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    mask = np.asarray(y < 0.5)[..., None]
    return np.where(mask, _t2_lower_gradient(x, y), _t2_upper_gradient(x, y))


def _t2_source(x, y):
    """Hard-coded -div(diffusion * gradient) of the closed-form solution."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    low = 100.0 * np.cos(_PI * x) * (
        -_PI ** 2 * y * (y - 0.5) ** 2 + 6.0 * y - 2.0
    )
    big_g = (1.0 - y) * (y - 0.5) ** 2
    up = (
        _PI * np.sin(_PI * x) * big_g
        + 0.5 * _PI ** 2 * x * np.cos(_PI * x) * big_g
        + x * (1.0 + np.cos(_PI * x)) * (3.0 * y - 2.0)
    )
    return np.where(y < 0.5, low, up)


def _t2_flux(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    scale = np.where(np.asarray(y < 0.5), 100.0, 1.0)[..., None]
    return scale * _t2_gradient(x, y)


def _t2_div_flux(x, y):
    return -_t2_source(x, y)


def _t2_normal_flux(x, y):
    """Outward normal flux on the contact edge x = 0."""
    y = np.asarray(y, dtype=np.float64)
    return np.where(y < 0.5, 0.0, -(1.0 - y) * (y - 0.5) ** 2)


def _t2_diffusion(x, y):
    return 100.0 if y < 0.5 else 1.0


# --------------------------------------------------------------------------
# benchmark constructors


def test1_signorini() -> TestCase:
    """Contact benchmark with a sinusoidal source and no closed form.

    The solution is pushed down onto the bound u >= 0 along half of the
    bottom edge; the active-set iteration typically settles in 4-6 steps,
    far below its worst-case bound (one step per contact face).
    """
    problem = VIProblem(
        kind="signorini",
        diffusion=DiffusionField(1.0),
        source=lambda x, y: 2.0 * _PI * np.sin(2.0 * _PI * np.asarray(x, dtype=np.float64)),
        barrier=lambda x, y: 0.0,
        sense="lower",
    )
    reference = {
        "h": (0.0625, 0.05, 0.025, 0.0156),
        "contact_faces": (16, 20, 40, 46),
        "niter": (4, 5, 5, 6),
    }
    return TestCase(
        name="test1",
        problem=problem,
        classifier=_tag_bottom_contact,
        family="tri",
        target_hs=(0.0625, 0.05, 0.025, 0.0156),
        reference=reference,
    )


def test2_signorini_exact() -> TestCase:
    """Heterogeneous contact benchmark with a closed-form solution.

    See the module-level comment above the ``_t2_*`` helpers for the
    construction.  The hard-coded source is re-verified against the
    gradient by finite differences before the case is returned, so a
    transcription slip in any derivative raises :class:`CaseError` here
    rather than polluting convergence measurements.
    """
    exact = ExactSolution(
        value=_t2_value,
        gradient=_t2_gradient,
        flux_field=_t2_flux,
        div_flux=_t2_div_flux,
        normal_flux=_t2_normal_flux,
        split_y=0.5,
    )
    problem = VIProblem(
        kind="signorini",
        diffusion=DiffusionField(_t2_diffusion),
        source=_t2_source,
        barrier=lambda x, y: 0.0,
        sense="upper",
        exact=exact,
        load_refine=1,
        split_y=0.5,
    )
    reference = {
        "h": (0.24, 0.13, 0.07, 0.03),
        "err_fun": (0.6858, 0.2531, 0.1355, 0.0758),
        "err_grad": (0.4360, 0.2038, 0.1041, 0.0542),
        "niter": (5, 5, 6, 7),
        "skewed": {"contact_faces": 34, "niter": 7, "err_fun": 0.017, "err_grad": 0.019},
    }
    case = TestCase(
        name="test2",
        problem=problem,
        classifier=_tag_left_contact,
        family="hex",
        target_hs=(0.24, 0.13, 0.07, 0.03),
        exact=exact,
        reference=reference,
    )
    _verify_manufactured(problem, exact)
    return case


def _pyramid_barrier(x, y):
    """Negated distance to the boundary of the unit square."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return -np.minimum(np.minimum(x, 1.0 - x), np.minimum(y, 1.0 - y))


def test3_obstacle(C: float = -20.0) -> TestCase:
    """Constant-load obstacle benchmark over a pyramid barrier.

    The membrane is pressed down by the constant load ``C < 0`` against
    the barrier; smaller ``|C|`` makes the active set harder to pin down
    and raises the iteration count.
    """
    C = float(C)
    if not C < 0.0:
        raise ValueError(f"load constant must be negative, got {C!r}")
    problem = VIProblem(
        kind="obstacle",
        diffusion=DiffusionField(1.0),
        source=lambda x, y: np.asarray(x, dtype=np.float64) * 0.0 + C,
        barrier=_pyramid_barrier,
        sense="lower",
    )
    reference = {
        "h": (0.062, 0.050, 0.025, 0.016),
        "cells": (872, 1342, 5422, 14006),
        "niter": {
            -5.0: (11, 12, 20, 29),
            -10.0: (9, 10, 18, 23),
            -15.0: (8, 9, 13, 19),
            -20.0: (8, 7, 12, 14),
        },
    }
    return TestCase(
        name="test3",
        problem=problem,
        classifier=_tag_dirichlet,
        family="tri",
        target_hs=(0.062, 0.050, 0.025, 0.016),
        reference=reference,
    )


def case_by_name(name: str, *, C: float = -20.0) -> TestCase:
    """Look up a benchmark constructor by its short name."""
    if name == "test1":
        return test1_signorini()
    if name == "test2":
        return test2_signorini_exact()
    if name == "test3":
        return test3_obstacle(C)
    raise CaseError(f"unknown case {name!r} (expected 'test1', 'test2' or 'test3')")


# --------------------------------------------------------------------------
# mesh families


MESH_FAMILIES = ("tri", "hex", "kershaw")


def build_family_mesh(family: str, n: int, *, amp: float = 0.6) -> PolytopalMesh:
    """Build an untagged unit-square mesh of the given family."""
    if family == "tri":
        return build_triangular_mesh(n)
    if family == "hex":
        return build_hexagonal_mesh(n)
    if family == "kershaw":
        return build_distorted_quad_mesh(n, amp)
    raise CaseError(f"unknown mesh family {family!r} (expected one of {MESH_FAMILIES})")


def build_case_mesh(case: TestCase, family: str, n: int, *, amp: float = 0.6) -> PolytopalMesh:
    """Build a mesh and tag its boundary for the given benchmark.

    When the case's data jump across a horizontal line, cells crossing
    that line are first cut in two so the cellwise diffusion tensor and
    the contact transition resolve the line exactly; cell-centre methods
    lose accuracy in the whole crossing band otherwise.
    """
    mesh = build_family_mesh(family, n, amp=amp)
    if case.exact is not None and case.exact.split_y is not None:
        mesh = split_mesh_at_line(mesh, case.exact.split_y)
    return tag_boundary(mesh, case.classifier)


@functools.lru_cache(maxsize=None)
def _family_h(family: str, n: int, amp: float) -> float:
    return build_family_mesh(family, n, amp=amp).h_max


def resolution_for(family: str, h_target: float, *, amp: float = 0.6,
                   even: bool = False) -> int:
    """Resolution whose measured mesh size best matches ``h_target``.

    The mesh size decreases monotonically with the resolution parameter
    in every family, so the gap to the target is unimodal and a local
    descent from a predicted starting point (mesh size scales like 1/n)
    finds the best match while building only a handful of probe meshes.
    ``even=True`` restricts the search to even resolutions, which keeps
    the horizontal midline of the square resolved by mesh lines.
    """
    if not h_target > 0.0:
        raise CaseError(f"target mesh size must be positive, got {h_target!r}")
    step = 2 if even else 1
    scale = _family_h(family, 8, amp) * 8.0
    n = max(2, int(round(scale / h_target)))
    n -= n % step

    def gap(m: int) -> float:
        return abs(_family_h(family, m, amp) - h_target)

    while n - step >= 2 and gap(n - step) <= gap(n):
        n -= step
    while gap(n + step) < gap(n):
        n += step
        if n > 4096:
            raise CaseError(f"no {family} resolution reaches mesh size {h_target}")
    return n


def needs_even_resolution(case: TestCase, family: str) -> bool:
    """Whether the family should stay on even resolutions for this case.

    Even resolutions put a mesh line on the horizontal midline, so cases
    whose data jump there need no cell cutting.  The hexagonal family has
    no such parity (its zigzag rows always cross) and is exempt.
    """
    return (
        case.exact is not None
        and case.exact.split_y is not None
        and family != "hex"
    )


def case_resolution(case: TestCase, family: str, h_target: float, *,
                    amp: float = 0.6) -> int:
    """Resolution matching ``h_target``, honouring the case's parity needs."""
    return resolution_for(
        family, h_target, amp=amp, even=needs_even_resolution(case, family)
    )


def default_resolutions(case: TestCase, family: str, levels: int, *,
                        amp: float = 0.6) -> list[int]:
    """Resolutions matching the case's target mesh sizes.

    Extra levels beyond the stored targets continue by doubling the
    resolution (mesh size scales like its inverse, so this halves it).
    Families whose cells would straddle a material line are kept on even
    resolutions; collisions (two targets mapping to the same resolution)
    are bumped apart so refinement stays strict.
    """
    if levels < 1:
        raise CaseError(f"a study needs at least one level, got {levels!r}")
    even = needs_even_resolution(case, family)
    hs = list(case.target_hs[:levels])
    if not hs:
        raise CaseError(f"case {case.name!r} has no target mesh sizes")
    step = 2 if even else 1
    ns: list[int] = []
    for h in hs:
        n = resolution_for(family, h, amp=amp, even=even)
        if ns and n <= ns[-1]:
            n = ns[-1] + step
        ns.append(n)
    while len(ns) < levels:
        ns.append(2 * ns[-1])
    return ns


def refined_quadrature_case(case: TestCase, extra: int) -> TestCase:
    """Copy of the case with ``extra`` more load-quadrature refinements.

    Used by the command-line driver to honour a quadrature-doubling
    request without mutating the shared case definition.
    """
    if extra < 0:
        raise CaseError(f"quadrature refinement must be non-negative, got {extra!r}")
    if extra == 0:
        return case
    problem = dataclasses.replace(
        case.problem, load_refine=case.problem.load_refine + extra
    )
    return dataclasses.replace(case, problem=problem)


# --------------------------------------------------------------------------
# solving and studies


def make_space(mesh: PolytopalMesh, scheme: str):
    """Instantiate the discretisation named by ``scheme`` on ``mesh``."""
    if scheme == "hmm":
        return HybridSpace(mesh)
    if scheme == "p1":
        return P1Space(mesh)
    raise CaseError(f"unknown scheme {scheme!r} (expected 'hmm' or 'p1')")


def solve_case(case: TestCase, mesh: PolytopalMesh, scheme: str = "hmm", *,
               tol: float = 1e-9, initial_active: str = "none"):
    """Discretise and solve a benchmark on a prepared mesh.

    Returns ``(space, solution)``; ``scheme`` may also be an existing
    space instance built on the same mesh.
    """
    space = make_space(mesh, scheme) if isinstance(scheme, str) else scheme
    solve = solve_obstacle if case.problem.kind == "obstacle" else solve_signorini
    return space, solve(mesh, space, case.problem, tol=tol, initial_active=initial_active)


def study_row(case: TestCase, mesh: PolytopalMesh, scheme: str = "hmm", *,
              indicators: bool = False, tol: float = 1e-9,
              quad_refine: int = 0) -> ErrorRecord:
    """Solve one mesh of a study and package the measurements.

    A solver failure is logged and yields a row with only the mesh size
    filled in, so the surrounding study can continue.  Converged solves
    also record their largest optimality-system residual (``kkt``), which
    reports use for pass/fail gating.  ``quad_refine`` adds refinement
    levels to the error/indicator quadrature.
    """
    h = mesh.h_max
    try:
        space, solution = solve_case(case, mesh, scheme, tol=tol)
    except SolverError as exc:
        log.warning("%s: solve failed on mesh with h=%.4g: %s", case.name, h, exc)
        return ErrorRecord(h=h)
    err_fun = err_grad = wd = cd = None
    if case.exact is not None:
        pair = l2_errors(
            space,
            solution.values,
            case.exact.value,
            case.exact.gradient,
            split_y=case.exact.split_y,
            refine=quad_refine,
        )
        err_fun, err_grad = pair.function, pair.gradient
    if indicators:
        if case.exact is not None and case.exact.flux_field is not None:
            wd = limit_conformity_indicator(
                space,
                case.exact.flux_field,
                case.exact.div_flux,
                split_y=case.exact.split_y,
                refine=quad_refine,
            )
        cd = coercivity_estimate(space)
    return ErrorRecord(
        h=h,
        err_fun=err_fun,
        err_grad=err_grad,
        niter=solution.state.niter,
        wd=wd,
        cd=cd,
        kkt=max(kkt_residuals(mesh, space, case.problem, solution).values()),
    )


def run_convergence_study(case: TestCase, scheme: str = "hmm",
                          resolutions=None, *, family: str | None = None,
                          levels: int | None = None, indicators: bool = False,
                          tol: float = 1e-9, amp: float = 0.6,
                          quad_refine: int = 0) -> ConvergenceReport:
    """Solve a benchmark across a refining mesh family and tabulate rows.

    ``resolutions`` may list family resolution parameters directly;
    otherwise they are derived from the case's target mesh sizes (first
    ``levels`` of them, extended by halving).  The default family is the
    case's own, except that the vertex scheme runs on triangulations.
    Rows are ordered by decreasing mesh size and the report is
    deterministic for fixed inputs.
    """
    if family is None:
        family = "tri" if scheme == "p1" else case.family
    if resolutions is None:
        resolutions = default_resolutions(case, family, levels or len(case.target_hs), amp=amp)
    report = ConvergenceReport()
    for n in resolutions:
        mesh = build_case_mesh(case, family, n, amp=amp)
        report.add(
            study_row(
                case, mesh, scheme,
                indicators=indicators, tol=tol, quad_refine=quad_refine,
            )
        )
    return report
