"""Numpy implementation of the hot per-cell kernels.

All functions take the raw mesh arrays so they can be mirrored one-to-one
by the compiled backend.  Degrees of freedom are numbered cells first then
faces: cell ``c`` is dof ``c`` and face ``f`` is dof ``n_cells + f``.

Conventions (per cell K with faces sigma_i, area a_i, outward normal n_i,
centre distance d_i, face centroid xs_i, cell centre xK, volume vK):

* cell gradient      GK(u) = (1/vK) * sum_i a_i * (u_i - uK) * n_i
* stabilisation      R_i(u) = u_i - uK - GK(u) . (xs_i - xK)
* local bilinear     a_K(u,v) = vK GK(u).Lam.GK(v) + sum_i B_i R_i(u) R_i(v)
                     with B_i = beta * a_i * (n_i . Lam . n_i) / d_i
* flux               F_i(u) = -a_K(u, e_i) / a_i   (e_i = face-i indicator)
* pyramid gradient   GK(u) + (sqrt(2 beta)/d_i) R_i(u) n_i on pyramid i

The pyramid gradient and the weights are consistent: integrating
``Lam grad . grad`` of the pyramid-wise gradient over the cell gives back
``vK GK(u).Lam.GK(v) + sum_i B_i R_i(u) R_i(v)`` exactly, because the
cross terms cancel through the identity ``sum_i a_i R_i(u) n_i = 0``.
In particular the bilinear form IS the integral of the weighted squared
gradient reconstruction, and with ``Lam = I`` the weights reduce to
``beta a_i / d_i`` and the form to the squared-gradient norm.
"""

from __future__ import annotations

import math

import numpy as np

NAME = "numpy"


def _slot_cells(offsets: np.ndarray) -> np.ndarray:
    return np.repeat(np.arange(len(offsets) - 1), np.diff(offsets))


def cell_gradients(offsets, faces, area, normal, vol, ucell, uface) -> np.ndarray:
    """Per-cell gradient (n_cells, 2)."""
    a = area[faces]
    terms = a[:, None] * uface[faces, None] * normal
    grad = np.add.reduceat(terms, offsets[:-1], axis=0)
    closure = np.add.reduceat(a[:, None] * normal, offsets[:-1], axis=0)
    grad -= ucell[:, None] * closure
    return grad / vol[:, None]


def stab_residuals(offsets, faces, area, normal, fcent, vol, centre, ucell, uface) -> np.ndarray:
    """Per-slot stabilisation residual R_i(u) (n_slots,)."""
    sc = _slot_cells(offsets)
    grad = cell_gradients(offsets, faces, area, normal, vol, ucell, uface)
    rel = fcent[faces] - centre[sc]
    return uface[faces] - ucell[sc] - np.einsum("ij,ij->i", rel, grad[sc])


def pyramid_gradients(
    offsets, faces, area, dist, normal, fcent, vol, centre, beta, ucell, uface
) -> np.ndarray:
    """Piecewise-constant reconstructed gradient per pyramid (n_slots, 2)."""
    sc = _slot_cells(offsets)
    grad = cell_gradients(offsets, faces, area, normal, vol, ucell, uface)
    res = stab_residuals(offsets, faces, area, normal, fcent, vol, centre, ucell, uface)
    kappa = math.sqrt(2.0 * beta) / dist
    return grad[sc] + (kappa * res)[:, None] * normal


def fluxes(
    offsets, faces, area, dist, normal, fcent, vol, centre, lam, beta, ucell, uface
) -> np.ndarray:
    """Per-slot numerical flux F_i(u) (n_slots,)."""
    sc = _slot_cells(offsets)
    grad = cell_gradients(offsets, faces, area, normal, vol, ucell, uface)
    res = stab_residuals(offsets, faces, area, normal, fcent, vol, centre, ucell, uface)
    nln = np.einsum("si,sij,sj->s", normal, lam[sc], normal)
    b = beta * area[faces] * nln / dist
    lam_grad = np.einsum("cij,cj->ci", lam, grad)
    # w_K = sum_j B_j R_j(u) (xs_j - xK); see the flux expansion in assemble_coo
    rel = fcent[faces] - centre[sc]
    w = np.add.reduceat((b * res)[:, None] * rel, offsets[:-1], axis=0)
    return (
        -np.einsum("ij,ij->i", normal, lam_grad[sc])
        - b * res / area[faces]
        + np.einsum("ij,ij->i", normal, w[sc]) / vol[sc]
    )


def assemble_coo(offsets, faces, area, dist, normal, fcent, vol, centre, lam, beta):
    """COO triplets of the bilinear form over all cells.

    Cells are processed in batches of equal face count so the local dense
    algebra vectorises.  Returns (rows, cols, vals) with the cells-first
    dof numbering; duplicate entries are left for the sparse constructor
    to sum.
    """
    n_cells = len(offsets) - 1
    sizes = np.diff(offsets)
    rows_out, cols_out, vals_out = [], [], []
    for m in np.unique(sizes):
        cells = np.nonzero(sizes == m)[0]
        b = len(cells)
        idx = offsets[cells][:, None] + np.arange(m)[None, :]  # (b, m) slot ids
        f = faces[idx]  # (b, m)
        a = area[f]  # (b, m)
        n = normal[idx]  # (b, m, 2)
        d = dist[idx]  # (b, m)
        xs = fcent[f]  # (b, m, 2)
        xk = centre[cells]  # (b, 2)
        vk = vol[cells]  # (b,)
        lk = lam[cells]  # (b, 2, 2)

        an = a[:, :, None] * n  # (b, m, 2)
        G = np.empty((b, 2, m + 1))
        G[:, :, 0] = -an.sum(axis=1) / vk[:, None]
        G[:, :, 1:] = np.swapaxes(an, 1, 2) / vk[:, None, None]

        R = np.zeros((b, m, m + 1))
        R[:, :, 0] = -1.0
        R[:, np.arange(m), np.arange(m) + 1] = 1.0
        rel = xs - xk[:, None, :]  # (b, m, 2)
        R -= np.einsum("bip,bpj->bij", rel, G)

        nln = np.einsum("bmi,bij,bmj->bm", n, lk, n)  # (b, m)
        bw = beta * a * nln / d  # (b, m)
        A = vk[:, None, None] * np.einsum("bpi,bpq,bqj->bij", G, lk, G)
        A += np.einsum("bip,bi,bij->bpj", R, bw, R)

        loc2glob = np.empty((b, m + 1), dtype=np.int64)
        loc2glob[:, 0] = cells
        loc2glob[:, 1:] = n_cells + f
        rows = np.repeat(loc2glob, m + 1, axis=1)
        cols = np.tile(loc2glob, (1, m + 1))
        rows_out.append(rows.ravel())
        cols_out.append(cols.ravel())
        vals_out.append(A.reshape(b, -1).ravel())
    return (
        np.concatenate(rows_out),
        np.concatenate(cols_out),
        np.concatenate(vals_out),
    )
