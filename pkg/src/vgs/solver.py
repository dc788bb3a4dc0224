"""Active-set solvers for obstacle and unilateral-contact problems.

Both problems minimise the quadratic energy ``1/2 u.A.u - b.u`` subject to
one-sided bounds: on every cell value for the obstacle problem, on the
contact-face trace values for the contact (Signorini-type) problem.
Lower-sense problems (``u >= barrier``) are transformed internally to the
upper sense (``u <= barrier``) by negating the source and barrier, so a
single solver path exists; reported solutions are in the original sense.

The solver starts from the unconstrained solve and repeatedly saturates
every bound violator (the monotone strategy, which terminates in at most
one solve per constrained entity when the operator is monotone).  If any
multiplier comes out with the wrong sign, a safeguarded primal-dual
active-set iteration takes over, with cycle detection.

Multipliers are stored in the nonnegative convention of the upper sense:
the value at a constrained entity equals the defect ``b - A u`` of its
equilibrium row, which for cells equals ``|K| f_K - sum |s| F_{K,s}(u)``
and for contact faces equals ``|s| F_{K,s}(u)`` in terms of the numerical
fluxes of the transformed problem.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .assembly import (
    DiffusionField,
    SparseSpdSystem,
    evaluate_pointwise,
    load_vector,
    solve_spd,
)
from .discretization import HybridSpace

KIND_OBSTACLE = "obstacle"
KIND_CONTACT = "signorini"

_TIE_TOL = 1e-12


class SolverError(Exception):
    """Raised when the active-set iteration fails to converge."""


@dataclass
class VIProblem:
    """A constrained diffusion problem.

    Parameters
    ----------
    kind : "obstacle" (bound on the solution in the domain) or
        "signorini" (bound on the trace of the contact boundary part).
    diffusion : DiffusionField
    source : callable (x, y) -> float
    barrier : callable (x, y) -> float
        The bound; its meaning depends on ``sense``.
    sense : "upper" for ``u <= barrier``, "lower" for ``u >= barrier``.
    exact : optional exact-solution object used by error studies.
    load_refine, split_y : quadrature options for the load vector, also
        respected when residuals are recomputed.
    """

    kind: str
    diffusion: DiffusionField
    source: object
    barrier: object
    sense: str = "upper"
    exact: object = None
    load_refine: int = 0
    split_y: float | None = None

    def __post_init__(self):
        if self.kind not in (KIND_OBSTACLE, KIND_CONTACT):
            raise ValueError(f"unknown problem kind {self.kind!r}")
        if self.sense not in ("upper", "lower"):
            raise ValueError(f"unknown barrier sense {self.sense!r}")

    @property
    def sign(self) -> float:
        """+1 for upper sense, -1 for lower (internal transform factor)."""
        return 1.0 if self.sense == "upper" else -1.0


@dataclass
class DiscreteBarrier:
    """Pointwise-sampled bound, already transformed to the upper sense.

    Entities whose bound is ``+inf`` are unconstrained and dropped; a
    ``nan`` or ``-inf`` sample (an unsatisfiable bound) is an error.
    """

    dofs: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if np.any(np.isnan(self.values)) or np.any(self.values == -np.inf):
            raise SolverError("barrier sample is nan or -inf at a constrained entity")
        keep = self.values < np.inf
        if not np.all(keep):
            self.dofs = self.dofs[keep]
            self.values = self.values[keep]


@dataclass
class ActiveSetState:
    """Progress record of the active-set iteration."""

    niter: int = 0
    history: list = field(default_factory=list)
    mode: str = "monotone"
    converged: bool = False


@dataclass
class VISolution:
    """Converged solution in the original sense.

    ``multipliers`` are per constrained entity, nonnegative convention;
    ``residuals`` is the summary produced by :func:`kkt_residuals`.
    """

    values: np.ndarray
    multipliers: np.ndarray
    constrained_dofs: np.ndarray
    state: ActiveSetState
    residuals: dict


def discretise_barrier(problem: VIProblem, mesh, space) -> DiscreteBarrier:
    """Sample the barrier at the constrained entities, in the upper sense.

    Obstacle problems constrain cell values at cell centres (hybrid space)
    or free vertex values (piecewise-linear space); contact problems
    constrain the trace on contact-tagged faces, sampled at face midpoints
    (hybrid) or vertices (piecewise linear).
    """
    if problem.kind == KIND_OBSTACLE:
        if isinstance(space, HybridSpace):
            dofs = space.cell_dofs()
            pts = mesh.cell_centre
        else:
            dofs = np.setdiff1d(np.arange(space.n_dofs), space.dirichlet_dofs())
            pts = mesh.vertices[dofs]
            pinned = space.dirichlet_dofs()
            if len(pinned):
                pv = problem.sign * evaluate_pointwise(problem.barrier, mesh.vertices[pinned])
                if np.any(pv < -_TIE_TOL):
                    raise SolverError(
                        "infeasible problem: pinned boundary value violates the barrier"
                    )
    else:
        if isinstance(space, HybridSpace):
            faces = mesh.faces_with_tag(3)
            dofs = space.face_dofs(faces)
            pts = mesh.face_centroid[faces]
        else:
            dofs = space.contact_dofs()
            pts = mesh.vertices[dofs]
    values = problem.sign * evaluate_pointwise(problem.barrier, pts)
    return DiscreteBarrier(np.asarray(dofs, dtype=np.int64), values)


def _internal_source(problem: VIProblem):
    if problem.sense == "upper":
        return problem.source
    fn = problem.source
    return lambda x, y: -np.asarray(fn(x, y))


def _solve_vi(mesh, space, problem: VIProblem, tol: float, initial_active: str) -> VISolution:
    if problem.kind == KIND_CONTACT and len(mesh.faces_with_tag(1)) == 0:
        raise SolverError("contact problem requires a non-empty Dirichlet boundary part")

    lam = problem.diffusion.cell_tensors(mesh)
    A = space.stiffness_matrix(lam)
    b = load_vector(
        space, _internal_source(problem), refine=problem.load_refine, split_y=problem.split_y
    )
    barrier = discretise_barrier(problem, mesh, space)
    dirichlet = space.dirichlet_dofs()

    cdofs, cvals = barrier.dofs, barrier.values
    nconstr = len(cdofs)
    state = ActiveSetState()
    active = np.zeros(nconstr, dtype=bool)
    if initial_active == "all":
        active[:] = True
        state.mode = "safeguarded"
    elif initial_active != "none":
        raise ValueError(f"unknown initial_active {initial_active!r}")

    def solve_with(active_mask: np.ndarray) -> np.ndarray:
        pinned = np.concatenate([dirichlet, cdofs[active_mask]])
        values = np.concatenate([np.zeros(len(dirichlet)), cvals[active_mask]])
        system = SparseSpdSystem(A, b, pinned, values)
        state.niter += 1
        state.history.append(int(active_mask.sum()))
        return solve_spd(system)

    cap = nconstr + 1
    u = solve_with(active)
    if state.mode == "monotone":
        for _ in range(cap):
            new = ~active & (u[cdofs] > cvals - _TIE_TOL)
            if not np.any(new):
                break
            active |= new
            u = solve_with(active)
        else:
            raise SolverError("active-set iteration cap exceeded in the monotone phase")
        mult = (b - A @ u)[cdofs[active]]
        if np.any(mult < -tol):
            state.mode = "safeguarded"

    if state.mode == "safeguarded":
        seen = {frozenset(np.nonzero(active)[0].tolist())}
        for _ in range(cap):
            residual = (b - A @ u)[cdofs]
            indicator = residual + (u[cdofs] - cvals)
            new_active = indicator > 0.0
            if np.array_equal(new_active, active):
                break
            key = frozenset(np.nonzero(new_active)[0].tolist())
            if key in seen:
                raise SolverError("active-set cycle detected in the safeguarded phase")
            seen.add(key)
            active = new_active
            u = solve_with(active)
        else:
            raise SolverError("active-set iteration cap exceeded in the safeguarded phase")

    multipliers = (b - A @ u)[cdofs]
    residuals = _residual_summary(space, A, b, u, cdofs, cvals, dirichlet)
    worst = max(residuals.values()) if residuals else 0.0
    state.converged = worst <= tol
    if not state.converged:
        raise SolverError(
            f"active-set solve finished with residuals above tolerance: {residuals}"
        )
    return VISolution(
        values=problem.sign * u,
        multipliers=multipliers,
        constrained_dofs=cdofs,
        state=state,
        residuals=residuals,
    )


def solve_obstacle(mesh, space, problem: VIProblem, tol: float = 1e-9,
                   initial_active: str = "none") -> VISolution:
    """Solve a bound-constrained diffusion problem over the domain."""
    if problem.kind != KIND_OBSTACLE:
        raise ValueError("problem kind must be 'obstacle'")
    return _solve_vi(mesh, space, problem, tol, initial_active)


def solve_signorini(mesh, space, problem: VIProblem, tol: float = 1e-9,
                    initial_active: str = "none") -> VISolution:
    """Solve a diffusion problem with a one-sided bound on the contact trace."""
    if problem.kind != KIND_CONTACT:
        raise ValueError("problem kind must be 'signorini'")
    return _solve_vi(mesh, space, problem, tol, initial_active)


def _stationarity_scales(space, dofs: np.ndarray) -> np.ndarray:
    """Per-dof normalisation turning equilibrium defects into flux jumps."""
    if isinstance(space, HybridSpace):
        scale = np.empty(space.n_dofs)
        scale[: space.n_cells] = space.mesh.cell_volume
        scale[space.n_cells :] = space.mesh.face_area
        return scale[dofs]
    return np.ones(len(dofs))


def _residual_summary(space, A, b, u, cdofs, cvals, dirichlet) -> dict:
    """KKT residuals of an upper-sense iterate, all nonnegative."""
    residual = b - A @ u
    mult = residual[cdofs]
    slack = cvals - u[cdofs]
    feasibility = float(max(0.0, np.max(-slack, initial=0.0)))
    multiplier_sign = float(max(0.0, np.max(-mult, initial=0.0)))
    complementarity = float(np.max(np.abs(np.minimum(slack, mult)), initial=0.0))
    others = np.setdiff1d(
        np.setdiff1d(np.arange(space.n_dofs), cdofs), dirichlet
    )
    if len(others):
        jumps = np.abs(residual[others]) / _stationarity_scales(space, others)
        flux_jump = float(np.max(jumps))
    else:
        flux_jump = 0.0
    return {
        "feasibility": feasibility,
        "multiplier_sign": multiplier_sign,
        "complementarity": complementarity,
        "flux_jump": flux_jump,
    }


def kkt_residuals(mesh, space, problem: VIProblem, solution) -> dict:
    """Recompute the KKT residual summary of a solution from scratch.

    ``solution`` may be a :class:`VISolution` or a raw full-length value
    vector in the original sense.  The operator, load and barrier are
    rebuilt from the problem definition, so this is an independent check
    of feasibility, multiplier signs, complementarity and the interior
    equilibrium (flux-jump) defect.
    """
    values = solution.values if isinstance(solution, VISolution) else np.asarray(solution)
    lam = problem.diffusion.cell_tensors(mesh)
    A = space.stiffness_matrix(lam)
    b = load_vector(
        space, _internal_source(problem), refine=problem.load_refine, split_y=problem.split_y
    )
    barrier = discretise_barrier(problem, mesh, space)
    u = problem.sign * values
    return _residual_summary(
        space, A, b, u, barrier.dofs, barrier.values, space.dirichlet_dofs()
    )


def oracle_solve(mesh, space, problem: VIProblem, tol: float = 1e-9) -> VISolution:
    """Reference solver by exhaustive enumeration of active sets.

    Every subset of the constrained entities is tried as the active set;
    the equality-constrained solve is checked for primal feasibility and
    multiplier signs, and the (unique) KKT-consistent solution returned.
    Intended for small instances only (at most 20 constrained entities).
    """
    lam = problem.diffusion.cell_tensors(mesh)
    A = space.stiffness_matrix(lam)
    b = load_vector(
        space, _internal_source(problem), refine=problem.load_refine, split_y=problem.split_y
    )
    barrier = discretise_barrier(problem, mesh, space)
    dirichlet = space.dirichlet_dofs()
    cdofs, cvals = barrier.dofs, barrier.values
    n = len(cdofs)
    if n > 20:
        raise SolverError(f"oracle limited to 20 constrained entities, got {n}")

    mask = np.ones(space.n_dofs, dtype=bool)
    mask[dirichlet] = False
    base_free = np.nonzero(mask)[0]
    pos_in_free = -np.ones(space.n_dofs, dtype=np.int64)
    pos_in_free[base_free] = np.arange(len(base_free))
    Ad = A[base_free][:, base_free].toarray()
    bd = b[base_free]

    tried = 0
    for r in range(n + 1):
        for subset in itertools.combinations(range(n), r):
            tried += 1
            act = np.array(subset, dtype=np.int64)
            act_pos = pos_in_free[cdofs[act]]
            keep = np.setdiff1d(np.arange(len(base_free)), act_pos)
            u_red = np.zeros(len(base_free))
            u_red[act_pos] = cvals[act]
            rhs = bd[keep] - Ad[np.ix_(keep, act_pos)] @ cvals[act]
            try:
                u_red[keep] = np.linalg.solve(Ad[np.ix_(keep, keep)], rhs)
            except np.linalg.LinAlgError:
                continue
            u = np.zeros(space.n_dofs)
            u[base_free] = u_red
            residual = b - A @ u
            mult = residual[cdofs]
            inactive = np.setdiff1d(np.arange(n), act)
            if np.any(u[cdofs[inactive]] > cvals[inactive] + tol):
                continue
            if np.any(mult[act] < -tol):
                continue
            state = ActiveSetState(niter=tried, history=[len(act)], mode="oracle",
                                   converged=True)
            residuals = _residual_summary(space, A, b, u, cdofs, cvals, dirichlet)
            return VISolution(
                values=problem.sign * u,
                multipliers=mult,
                constrained_dofs=cdofs,
                state=state,
                residuals=residuals,
            )
    raise SolverError("oracle found no KKT-consistent active set (this is a bug)")


def energy(space, problem: VIProblem, mesh, values: np.ndarray) -> float:
    """Quadratic energy ``1/2 u.A.u - b.u`` of the transform-side iterate."""
    lam = problem.diffusion.cell_tensors(mesh)
    A = space.stiffness_matrix(lam)
    b = load_vector(
        space, _internal_source(problem), refine=problem.load_refine, split_y=problem.split_y
    )
    u = problem.sign * np.asarray(values)
    return float(0.5 * u @ (A @ u) - b @ u)
