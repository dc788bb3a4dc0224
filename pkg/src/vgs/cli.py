"""Command-line front end: solve benchmarks, run studies, export meshes.

Subcommands
-----------
``vgs solve --case {test1|test2|test3} --scheme {hmm|p1} --h <target>
[--C <neg>] [--out dir]``
    solve one benchmark at the mesh size closest to ``--h`` and write
    ``report.csv`` (single-row study table), ``solution.svg`` (cellwise
    contour plot) and ``solution.txt`` (one ``entity id value`` line per
    degree of freedom) into the output directory.

``vgs study --case ... --scheme ... --levels n [--indicators] --out dir``
    run an ``n``-level refinement study and write ``report.csv``.

``vgs mesh --family {tri|hex|kershaw} --n <res> [--amp a] --out file``
    build a unit-square mesh and save it in the text format understood
    by :func:`vgs.mesh.load_mesh`.

The environment variable ``VGS_QUAD_REFINE`` (a non-negative integer)
adds that many refinement levels to the load-assembly and error
quadratures of ``solve`` and ``study``.

The exit code is nonzero iff any checked condition of the invoked run
fails: a solve that does not converge, an optimality residual above
1e-9, a failed study level, or invalid inputs.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .analysis import AnalysisError, ConvergenceReport, ErrorRecord, l2_errors
from .cases import (
    MESH_FAMILIES,
    CaseError,
    build_case_mesh,
    build_family_mesh,
    case_by_name,
    case_resolution,
    refined_quadrature_case,
    run_convergence_study,
    solve_case,
)
from .mesh import MeshError, save_mesh
from .render import RenderError, emit_contour_svg
from .solver import SolverError, kkt_residuals

__all__ = ["main", "KKT_BOUND"]

#: every converged solve must satisfy its optimality system to this accuracy
KKT_BOUND = 1e-9

_ERRORS = (CaseError, MeshError, SolverError, AnalysisError, RenderError, OSError)


def _quad_refine_from_env() -> int:
    raw = os.environ.get("VGS_QUAD_REFINE")
    if raw is None or raw == "":
        return 0
    try:
        k = int(raw)
    except ValueError:
        raise CaseError(f"VGS_QUAD_REFINE must be a non-negative integer, got {raw!r}")
    if k < 0:
        raise CaseError(f"VGS_QUAD_REFINE must be a non-negative integer, got {raw!r}")
    return k


def _cell_field(mesh, space, values) -> np.ndarray:
    """One plottable value per cell for either discretisation."""
    if hasattr(space, "cell_dofs"):  # hybrid cell/face space
        return values[space.cell_dofs()]
    # vertex space: average the cell's corner values
    return np.array([values[mesh.cell_loop(c)].mean() for c in range(mesh.n_cells)])


def _write_solution_txt(path, mesh, space, values) -> None:
    """Dump ``entity id value`` lines for every degree of freedom."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        if hasattr(space, "cell_dofs"):
            cdofs = space.cell_dofs()
            for c in range(mesh.n_cells):
                fh.write(f"cell {c} {values[cdofs[c]]:.17g}\n")
            fdofs = space.face_dofs()
            for f in range(mesh.n_faces):
                fh.write(f"face {f} {values[fdofs[f]]:.17g}\n")
        else:
            for v in range(mesh.n_vertices):
                fh.write(f"vertex {v} {values[v]:.17g}\n")


def _interface_overlay(case):
    y = case.problem.split_y
    if y is None:
        return None
    return [(0.0, y), (1.0, y)]


def _cmd_solve(args) -> int:
    quad = _quad_refine_from_env()
    case = refined_quadrature_case(case_by_name(args.case, C=args.C), quad)
    family = "tri" if args.scheme == "p1" else case.family
    n = case_resolution(case, family, args.h)
    mesh = build_case_mesh(case, family, n)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    failed = False
    record_kw = {"h": mesh.h_max}
    try:
        space, solution = solve_case(case, mesh, args.scheme)
    except SolverError as exc:
        print(f"solve failed: {exc}", file=sys.stderr)
        failed = True
    else:
        kkt = max(kkt_residuals(mesh, space, case.problem, solution).values())
        record_kw.update(niter=solution.state.niter, kkt=kkt)
        if case.exact is not None:
            # the error quadrature honours VGS_QUAD_REFINE on its own
            pair = l2_errors(
                space, solution.values, case.exact.value, case.exact.gradient,
                split_y=case.exact.split_y,
            )
            record_kw.update(err_fun=pair.function, err_grad=pair.gradient)
        emit_contour_svg(
            mesh, _cell_field(mesh, space, solution.values),
            out / "solution.svg", overlay=_interface_overlay(case),
        )
        _write_solution_txt(out / "solution.txt", mesh, space, solution.values)
        if kkt > KKT_BOUND:
            print(f"optimality residual {kkt:.3e} exceeds {KKT_BOUND:g}", file=sys.stderr)
            failed = True

    report = ConvergenceReport()
    report.add(ErrorRecord(**record_kw))
    report.to_csv(out / "report.csv")
    print(report.csv_text(), end="")
    return 1 if failed else 0


def _cmd_study(args) -> int:
    quad = _quad_refine_from_env()
    case = refined_quadrature_case(case_by_name(args.case, C=args.C), quad)
    # the error/indicator quadratures honour VGS_QUAD_REFINE on their own
    report = run_convergence_study(
        case, args.scheme, levels=args.levels, indicators=args.indicators,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.to_csv(out / "report.csv")
    print(report.csv_text(), end="")

    failed = False
    for rec in report.records:
        if rec.niter is None:
            print(f"level h={rec.h:.4g} failed to converge", file=sys.stderr)
            failed = True
        elif rec.kkt is not None and rec.kkt > KKT_BOUND:
            print(
                f"level h={rec.h:.4g}: optimality residual {rec.kkt:.3e} "
                f"exceeds {KKT_BOUND:g}",
                file=sys.stderr,
            )
            failed = True
    return 1 if failed else 0


def _cmd_mesh(args) -> int:
    mesh = build_family_mesh(args.family, args.n, amp=args.amp)
    parent = Path(args.out).parent
    if parent and not parent.exists():
        parent.mkdir(parents=True, exist_ok=True)
    save_mesh(mesh, args.out)
    print(f"{args.family} mesh: {mesh.n_cells} cells, {mesh.n_faces} faces, "
          f"h = {mesh.h_max:.6g} -> {args.out}")
    return 0


def _positive_int(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return n


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vgs",
        description="Obstacle and unilateral-contact benchmark solvers "
                    "on polytopal meshes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    cases = ("test1", "test2", "test3")
    schemes = ("hmm", "p1")

    p_solve = sub.add_parser("solve", help="solve one benchmark at a target mesh size")
    p_solve.add_argument("--case", required=True, choices=cases)
    p_solve.add_argument("--scheme", required=True, choices=schemes)
    p_solve.add_argument("--h", required=True, type=float, metavar="TARGET",
                         help="target mesh size (closest family resolution is used)")
    p_solve.add_argument("--C", type=float, default=-20.0, metavar="NEG",
                         help="constant load of the obstacle benchmark (negative)")
    p_solve.add_argument("--out", default=".", metavar="DIR",
                         help="output directory (default: current directory)")
    p_solve.set_defaults(func=_cmd_solve)

    p_study = sub.add_parser("study", help="run a mesh-refinement study")
    p_study.add_argument("--case", required=True, choices=cases)
    p_study.add_argument("--scheme", required=True, choices=schemes)
    p_study.add_argument("--levels", required=True, type=_positive_int, metavar="N")
    p_study.add_argument("--indicators", action="store_true",
                         help="also report the limit-conformity and coercivity columns")
    p_study.add_argument("--C", type=float, default=-20.0, metavar="NEG",
                         help="constant load of the obstacle benchmark (negative)")
    p_study.add_argument("--out", required=True, metavar="DIR")
    p_study.set_defaults(func=_cmd_study)

    p_mesh = sub.add_parser("mesh", help="build and save a unit-square mesh")
    p_mesh.add_argument("--family", required=True, choices=MESH_FAMILIES)
    p_mesh.add_argument("--n", required=True, type=_positive_int, metavar="RES")
    p_mesh.add_argument("--amp", type=float, default=0.6,
                        help="distortion amplitude of the distorted-quad family")
    p_mesh.add_argument("--out", required=True, metavar="FILE")
    p_mesh.set_defaults(func=_cmd_mesh)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
