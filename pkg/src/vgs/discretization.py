"""Discrete function spaces with reconstruction operators.

Two families are provided, both exposing the same interface (a function
reconstruction, a gradient reconstruction and a boundary trace, plus the
matrices of the associated norms):

* :class:`HybridSpace` - one unknown per cell and one per face, with a
  piecewise-constant function reconstruction on cells, a stabilised
  piecewise-constant gradient on the face pyramids, and the face values as
  boundary trace.  Works on arbitrary star-shaped polytopal cells.
* :class:`P1Space` - the conforming piecewise-linear space on vertices of
  a triangulation.

Dirichlet faces (tag 1) pin the trace dofs; contact faces (tag 3) carry
the unilateral boundary constraint.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .mesh import TAG_CONTACT, TAG_DIRICHLET, PolytopalMesh


class HybridSpace:
    """Cell + face unknowns with a stabilised two-point gradient.

    Degrees of freedom are numbered cells first, then faces.  The gradient
    reconstruction is constant on each pyramid spanned by a cell centre
    and a face; on pyramid (K, sigma) it equals the cell gradient plus
    ``sqrt(2 beta)/d * R(u) * n`` where ``R`` is the linear consistency
    residual of the face value.

    Parameters
    ----------
    mesh : PolytopalMesh
    stabilization : float
        Positive weight ``beta`` of the consistency-residual term in the
        bilinear form and in the gradient reconstruction.
    """

    name = "hybrid"

    def __init__(self, mesh: PolytopalMesh, stabilization: float = 1.0):
        if stabilization <= 0:
            raise ValueError("stabilization parameter must be positive")
        self.mesh = mesh
        self.stabilization = float(stabilization)
        self.n_cells = mesh.n_cells
        self.n_faces = mesh.n_faces
        self.n_dofs = self.n_cells + self.n_faces

    # -- dof bookkeeping ----------------------------------------------------

    def cell_dofs(self) -> np.ndarray:
        return np.arange(self.n_cells)

    def face_dofs(self, faces: np.ndarray | None = None) -> np.ndarray:
        if faces is None:
            return self.n_cells + np.arange(self.n_faces)
        return self.n_cells + np.asarray(faces, dtype=np.int64)

    def split(self, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return values[: self.n_cells], values[self.n_cells :]

    def join(self, ucell: np.ndarray, uface: np.ndarray) -> np.ndarray:
        return np.concatenate([ucell, uface])

    def dirichlet_dofs(self) -> np.ndarray:
        return self.face_dofs(self.mesh.faces_with_tag(TAG_DIRICHLET))

    def contact_dofs(self) -> np.ndarray:
        return self.face_dofs(self.mesh.faces_with_tag(TAG_CONTACT))

    def dof_positions(self) -> np.ndarray:
        return np.vstack([self.mesh.cell_centre, self.mesh.face_centroid])

    # -- interpolation and reconstructions -----------------------------------

    def interpolate(self, fn) -> np.ndarray:
        pos = self.dof_positions()
        return np.array([fn(x, y) for x, y in pos], dtype=np.float64)

    def cell_gradient(self, values: np.ndarray) -> np.ndarray:
        m = self.mesh
        ucell, uface = self.split(values)
        return _kernels.cell_gradients(
            m.cell_face_offsets, m.cell_face_ids, m.face_area, m.normal, m.cell_volume,
            ucell, uface,
        )

    def stabilization_residual(self, values: np.ndarray) -> np.ndarray:
        m = self.mesh
        ucell, uface = self.split(values)
        return _kernels.stab_residuals(
            m.cell_face_offsets, m.cell_face_ids, m.face_area, m.normal,
            m.face_centroid, m.cell_volume, m.cell_centre, ucell, uface,
        )

    def piecewise_function(self, values: np.ndarray) -> np.ndarray:
        """Constant value of the function reconstruction per cell."""
        return self.split(values)[0]

    def piecewise_gradient(self, values: np.ndarray) -> np.ndarray:
        """Constant value of the gradient reconstruction per pyramid."""
        m = self.mesh
        ucell, uface = self.split(values)
        return _kernels.pyramid_gradients(
            m.cell_face_offsets, m.cell_face_ids, m.face_area, m.dist, m.normal,
            m.face_centroid, m.cell_volume, m.cell_centre, self.stabilization,
            ucell, uface,
        )

    def boundary_trace(self, values: np.ndarray, faces: np.ndarray) -> np.ndarray:
        """Constant trace value per requested boundary face."""
        return self.split(values)[1][faces]

    # -- pyramid geometry (support of the gradient reconstruction) ----------

    def slot_triangles(self) -> np.ndarray:
        """(n_slots, 3, 2) triangles (cell centre, face endpoints)."""
        m = self.mesh
        tris = np.empty((m.n_slots, 3, 2))
        tris[:, 0] = m.cell_centre[m.slot_cell]
        ends = m.vertices[m.face_vertices[m.cell_face_ids]]
        tris[:, 1] = ends[:, 0]
        tris[:, 2] = ends[:, 1]
        return tris

    def pyramid_volumes(self) -> np.ndarray:
        m = self.mesh
        return 0.5 * m.face_area[m.cell_face_ids] * m.dist

    # -- norm matrices -------------------------------------------------------

    def gradient_matrix(self) -> sp.csr_matrix:
        """Sparse matrix G with ``v.G.v = || gradient reconstruction ||^2``."""
        m = self.mesh
        eye = np.broadcast_to(np.eye(2), (m.n_cells, 2, 2))
        rows, cols, vals = _kernels.assemble_coo(
            m.cell_face_offsets, m.cell_face_ids, m.face_area, m.dist, m.normal,
            m.face_centroid, m.cell_volume, m.cell_centre, np.ascontiguousarray(eye),
            self.stabilization,
        )
        return sp.coo_matrix((vals, (rows, cols)), shape=(self.n_dofs, self.n_dofs)).tocsr()

    def stiffness_matrix(self, lam_cells: np.ndarray) -> sp.csr_matrix:
        """Bilinear form of the diffusion operator with cellwise tensor."""
        m = self.mesh
        rows, cols, vals = _kernels.assemble_coo(
            m.cell_face_offsets, m.cell_face_ids, m.face_area, m.dist, m.normal,
            m.face_centroid, m.cell_volume, m.cell_centre,
            np.ascontiguousarray(lam_cells, dtype=np.float64), self.stabilization,
        )
        return sp.coo_matrix((vals, (rows, cols)), shape=(self.n_dofs, self.n_dofs)).tocsr()

    def function_mass_matrix(self) -> sp.csr_matrix:
        d = np.zeros(self.n_dofs)
        d[: self.n_cells] = self.mesh.cell_volume
        return sp.diags(d).tocsr()

    def trace_mass_matrix(self, faces: np.ndarray) -> sp.csr_matrix:
        d = np.zeros(self.n_dofs)
        d[self.face_dofs(faces)] = self.mesh.face_area[faces]
        return sp.diags(d).tocsr()

    def fluxes(self, values: np.ndarray, lam_cells: np.ndarray) -> np.ndarray:
        """Numerical normal flux per (cell, face) incidence slot."""
        m = self.mesh
        ucell, uface = self.split(values)
        return _kernels.fluxes(
            m.cell_face_offsets, m.cell_face_ids, m.face_area, m.dist, m.normal,
            m.face_centroid, m.cell_volume, m.cell_centre,
            np.ascontiguousarray(lam_cells, dtype=np.float64), self.stabilization,
            ucell, uface,
        )


class P1Space:
    """Conforming piecewise-linear space on a triangulation.

    One unknown per vertex; the reconstruction is the function itself,
    its gradient is constant per triangle, and the boundary trace is the
    affine restriction to each boundary face.
    """

    name = "p1"

    def __init__(self, mesh: PolytopalMesh):
        sizes = np.diff(mesh.cell_loop_offsets)
        if np.any(sizes != 3):
            raise ValueError("piecewise-linear space requires a triangulation")
        self.mesh = mesh
        self.n_dofs = mesh.n_vertices
        self.triangles = mesh.cell_loop_ids.reshape(mesh.n_cells, 3)

        pts = mesh.vertices[self.triangles]  # (nc, 3, 2)
        e1 = pts[:, 1] - pts[:, 0]
        e2 = pts[:, 2] - pts[:, 0]
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        self._tri_area = 0.5 * np.abs(det)
        # gradients of the three barycentric basis functions, (nc, 3, 2)
        g = np.empty((mesh.n_cells, 3, 2))
        g[:, 1, 0] = e2[:, 1] / det
        g[:, 1, 1] = -e2[:, 0] / det
        g[:, 2, 0] = -e1[:, 1] / det
        g[:, 2, 1] = e1[:, 0] / det
        g[:, 0] = -g[:, 1] - g[:, 2]
        self._bary_grad = g

    # -- dof bookkeeping ----------------------------------------------------

    def _face_vertex_set(self, tag: int) -> np.ndarray:
        faces = self.mesh.faces_with_tag(tag)
        return np.unique(self.mesh.face_vertices[faces].ravel())

    def dirichlet_dofs(self) -> np.ndarray:
        return self._face_vertex_set(TAG_DIRICHLET)

    def contact_dofs(self) -> np.ndarray:
        """Vertices on contact faces that are not pinned by a Dirichlet face."""
        contact = self._face_vertex_set(TAG_CONTACT)
        return np.setdiff1d(contact, self.dirichlet_dofs())

    def dof_positions(self) -> np.ndarray:
        return self.mesh.vertices

    # -- interpolation and reconstructions -----------------------------------

    def interpolate(self, fn) -> np.ndarray:
        return np.array([fn(x, y) for x, y in self.mesh.vertices], dtype=np.float64)

    def cell_gradient(self, values: np.ndarray) -> np.ndarray:
        return np.einsum("ct,ctd->cd", values[self.triangles], self._bary_grad)

    def basis_values(self, cell: int, points: np.ndarray) -> np.ndarray:
        """Barycentric basis values at physical points, (n_points, 3)."""
        v0 = self.mesh.vertices[self.triangles[cell, 0]]
        rel = np.atleast_2d(points) - v0
        lam = np.empty((len(rel), 3))
        lam[:, 1] = rel @ self._bary_grad[cell, 1]
        lam[:, 2] = rel @ self._bary_grad[cell, 2]
        lam[:, 0] = 1.0 - lam[:, 1] - lam[:, 2]
        return lam

    def evaluate(self, values: np.ndarray, cell: int, points: np.ndarray) -> np.ndarray:
        """Value of the piecewise-linear function at points inside a cell."""
        return self.basis_values(cell, points) @ values[self.triangles[cell]]

    def boundary_trace(self, values: np.ndarray, faces: np.ndarray) -> np.ndarray:
        """Midpoint value of the affine trace per requested face."""
        ends = self.mesh.face_vertices[faces]
        return 0.5 * (values[ends[:, 0]] + values[ends[:, 1]])

    # -- matrices -------------------------------------------------------------

    def stiffness_matrix(self, lam_cells: np.ndarray) -> sp.csr_matrix:
        g = self._bary_grad
        lg = np.einsum("cij,ctj->cti", np.asarray(lam_cells, dtype=np.float64), g)
        local = np.einsum("c,csd,ctd->cst", self._tri_area, g, lg)
        rows = np.repeat(self.triangles, 3, axis=1).ravel()
        cols = np.tile(self.triangles, (1, 3)).ravel()
        return sp.coo_matrix(
            (local.ravel(), (rows, cols)), shape=(self.n_dofs, self.n_dofs)
        ).tocsr()

    def gradient_matrix(self) -> sp.csr_matrix:
        eye = np.broadcast_to(np.eye(2), (self.mesh.n_cells, 2, 2))
        return self.stiffness_matrix(eye)

    def function_mass_matrix(self) -> sp.csr_matrix:
        local = (np.ones((3, 3)) + np.eye(3)) / 12.0
        vals = self._tri_area[:, None, None] * local[None, :, :]
        rows = np.repeat(self.triangles, 3, axis=1).ravel()
        cols = np.tile(self.triangles, (1, 3)).ravel()
        return sp.coo_matrix(
            (vals.ravel(), (rows, cols)), shape=(self.n_dofs, self.n_dofs)
        ).tocsr()

    def trace_mass_matrix(self, faces: np.ndarray) -> sp.csr_matrix:
        ends = self.mesh.face_vertices[faces]
        length = self.mesh.face_area[faces]
        local = np.array([[1.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 1.0 / 3.0]])
        vals = length[:, None, None] * local[None, :, :]
        rows = np.repeat(ends, 2, axis=1).ravel()
        cols = np.tile(ends, (1, 2)).ravel()
        return sp.coo_matrix(
            (vals.ravel(), (rows, cols)), shape=(self.n_dofs, self.n_dofs)
        ).tocsr()
