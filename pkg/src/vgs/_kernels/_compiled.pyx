# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled implementation of the hot per-cell kernels.

A one-to-one mirror of the numpy backend; see that module's docstring
for the shared dof numbering and the gradient/stabilisation/flux
formulas.  Both backends are exercised against each other in the test
suite, so they must stay numerically interchangeable.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()

NAME = "compiled"

ctypedef cnp.int64_t i64


cdef void _grads(const i64[::1] off, const i64[::1] fid, const double[::1] a,
                 const double[:, ::1] n, const double[::1] v,
                 const double[::1] uc, const double[::1] uf,
                 double[:, ::1] out) noexcept nogil:
    """Fill ``out`` with the per-cell gradient."""
    cdef Py_ssize_t c, s
    cdef i64 f
    cdef double gx, gy, t
    for c in range(off.shape[0] - 1):
        gx = 0.0
        gy = 0.0
        for s in range(off[c], off[c + 1]):
            f = fid[s]
            t = a[f] * (uf[f] - uc[c])
            gx += t * n[s, 0]
            gy += t * n[s, 1]
        out[c, 0] = gx / v[c]
        out[c, 1] = gy / v[c]


cdef void _residuals(const i64[::1] off, const i64[::1] fid,
                     const double[:, ::1] fc, const double[:, ::1] xc,
                     const double[::1] uc, const double[::1] uf,
                     const double[:, ::1] grad, double[::1] out) noexcept nogil:
    """Fill ``out`` with the per-slot stabilisation residual."""
    cdef Py_ssize_t c, s
    cdef i64 f
    for c in range(off.shape[0] - 1):
        for s in range(off[c], off[c + 1]):
            f = fid[s]
            out[s] = (uf[f] - uc[c]
                      - grad[c, 0] * (fc[f, 0] - xc[c, 0])
                      - grad[c, 1] * (fc[f, 1] - xc[c, 1]))


def cell_gradients(offsets, faces, area, normal, vol, ucell, uface):
    """Per-cell gradient (n_cells, 2)."""
    cdef const i64[::1] off = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef const i64[::1] fid = np.ascontiguousarray(faces, dtype=np.int64)
    cdef const double[::1] a = np.ascontiguousarray(area, dtype=np.float64)
    cdef const double[:, ::1] n = np.ascontiguousarray(normal, dtype=np.float64)
    cdef const double[::1] v = np.ascontiguousarray(vol, dtype=np.float64)
    cdef const double[::1] uc = np.ascontiguousarray(ucell, dtype=np.float64)
    cdef const double[::1] uf = np.ascontiguousarray(uface, dtype=np.float64)
    out_arr = np.empty((off.shape[0] - 1, 2))
    cdef double[:, ::1] out = out_arr
    _grads(off, fid, a, n, v, uc, uf, out)
    return out_arr


def stab_residuals(offsets, faces, area, normal, fcent, vol, centre, ucell, uface):
    """Per-slot stabilisation residual R_i(u) (n_slots,)."""
    cdef const i64[::1] off = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef const i64[::1] fid = np.ascontiguousarray(faces, dtype=np.int64)
    cdef const double[::1] a = np.ascontiguousarray(area, dtype=np.float64)
    cdef const double[:, ::1] n = np.ascontiguousarray(normal, dtype=np.float64)
    cdef const double[:, ::1] fc = np.ascontiguousarray(fcent, dtype=np.float64)
    cdef const double[::1] v = np.ascontiguousarray(vol, dtype=np.float64)
    cdef const double[:, ::1] xc = np.ascontiguousarray(centre, dtype=np.float64)
    cdef const double[::1] uc = np.ascontiguousarray(ucell, dtype=np.float64)
    cdef const double[::1] uf = np.ascontiguousarray(uface, dtype=np.float64)
    grad_arr = np.empty((off.shape[0] - 1, 2))
    out_arr = np.empty(fid.shape[0])
    cdef double[:, ::1] grad = grad_arr
    cdef double[::1] out = out_arr
    _grads(off, fid, a, n, v, uc, uf, grad)
    _residuals(off, fid, fc, xc, uc, uf, grad, out)
    return out_arr


def pyramid_gradients(offsets, faces, area, dist, normal, fcent, vol, centre,
                      beta, ucell, uface):
    """Piecewise-constant reconstructed gradient per pyramid (n_slots, 2)."""
    cdef const i64[::1] off = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef const i64[::1] fid = np.ascontiguousarray(faces, dtype=np.int64)
    cdef const double[::1] a = np.ascontiguousarray(area, dtype=np.float64)
    cdef const double[::1] d = np.ascontiguousarray(dist, dtype=np.float64)
    cdef const double[:, ::1] n = np.ascontiguousarray(normal, dtype=np.float64)
    cdef const double[:, ::1] fc = np.ascontiguousarray(fcent, dtype=np.float64)
    cdef const double[::1] v = np.ascontiguousarray(vol, dtype=np.float64)
    cdef const double[:, ::1] xc = np.ascontiguousarray(centre, dtype=np.float64)
    cdef const double[::1] uc = np.ascontiguousarray(ucell, dtype=np.float64)
    cdef const double[::1] uf = np.ascontiguousarray(uface, dtype=np.float64)
    cdef double root = sqrt(2.0 * float(beta))
    grad_arr = np.empty((off.shape[0] - 1, 2))
    res_arr = np.empty(fid.shape[0])
    out_arr = np.empty((fid.shape[0], 2))
    cdef double[:, ::1] grad = grad_arr
    cdef double[::1] res = res_arr
    cdef double[:, ::1] out = out_arr
    _grads(off, fid, a, n, v, uc, uf, grad)
    _residuals(off, fid, fc, xc, uc, uf, grad, res)
    cdef Py_ssize_t c, s
    cdef double kappa
    for c in range(off.shape[0] - 1):
        for s in range(off[c], off[c + 1]):
            kappa = root / d[s]
            out[s, 0] = grad[c, 0] + kappa * res[s] * n[s, 0]
            out[s, 1] = grad[c, 1] + kappa * res[s] * n[s, 1]
    return out_arr


def fluxes(offsets, faces, area, dist, normal, fcent, vol, centre, lam, beta,
           ucell, uface):
    """Per-slot numerical flux F_i(u) (n_slots,)."""
    cdef const i64[::1] off = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef const i64[::1] fid = np.ascontiguousarray(faces, dtype=np.int64)
    cdef const double[::1] a = np.ascontiguousarray(area, dtype=np.float64)
    cdef const double[::1] d = np.ascontiguousarray(dist, dtype=np.float64)
    cdef const double[:, ::1] n = np.ascontiguousarray(normal, dtype=np.float64)
    cdef const double[:, ::1] fc = np.ascontiguousarray(fcent, dtype=np.float64)
    cdef const double[::1] v = np.ascontiguousarray(vol, dtype=np.float64)
    cdef const double[:, ::1] xc = np.ascontiguousarray(centre, dtype=np.float64)
    cdef const double[:, :, ::1] lk = np.ascontiguousarray(lam, dtype=np.float64)
    cdef double bta = float(beta)
    cdef const double[::1] uc = np.ascontiguousarray(ucell, dtype=np.float64)
    cdef const double[::1] uf = np.ascontiguousarray(uface, dtype=np.float64)
    grad_arr = np.empty((off.shape[0] - 1, 2))
    res_arr = np.empty(fid.shape[0])
    out_arr = np.empty(fid.shape[0])
    cdef double[:, ::1] grad = grad_arr
    cdef double[::1] res = res_arr
    cdef double[::1] out = out_arr
    _grads(off, fid, a, n, v, uc, uf, grad)
    _residuals(off, fid, fc, xc, uc, uf, grad, res)
    cdef Py_ssize_t c, s
    cdef i64 f
    cdef double nln, bw, lgx, lgy, wx, wy
    for c in range(off.shape[0] - 1):
        # w_K = sum_j B_j R_j(u) (xs_j - xK)
        wx = 0.0
        wy = 0.0
        for s in range(off[c], off[c + 1]):
            f = fid[s]
            nln = (n[s, 0] * (lk[c, 0, 0] * n[s, 0] + lk[c, 0, 1] * n[s, 1])
                   + n[s, 1] * (lk[c, 1, 0] * n[s, 0] + lk[c, 1, 1] * n[s, 1]))
            bw = bta * a[f] * nln / d[s]
            wx += bw * res[s] * (fc[f, 0] - xc[c, 0])
            wy += bw * res[s] * (fc[f, 1] - xc[c, 1])
        lgx = lk[c, 0, 0] * grad[c, 0] + lk[c, 0, 1] * grad[c, 1]
        lgy = lk[c, 1, 0] * grad[c, 0] + lk[c, 1, 1] * grad[c, 1]
        for s in range(off[c], off[c + 1]):
            f = fid[s]
            nln = (n[s, 0] * (lk[c, 0, 0] * n[s, 0] + lk[c, 0, 1] * n[s, 1])
                   + n[s, 1] * (lk[c, 1, 0] * n[s, 0] + lk[c, 1, 1] * n[s, 1]))
            bw = bta * a[f] * nln / d[s]
            out[s] = (-(n[s, 0] * lgx + n[s, 1] * lgy)
                      - bw * res[s] / a[f]
                      + (n[s, 0] * wx + n[s, 1] * wy) / v[c])
    return out_arr


def assemble_coo(offsets, faces, area, dist, normal, fcent, vol, centre, lam, beta):
    """COO triplets of the bilinear form over all cells.

    Returns (rows, cols, vals) in the cells-first dof numbering with one
    dense (m+1)x(m+1) block per cell; duplicate entries are left for the
    sparse constructor to sum.
    """
    cdef const i64[::1] off = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef const i64[::1] fid = np.ascontiguousarray(faces, dtype=np.int64)
    cdef const double[::1] a = np.ascontiguousarray(area, dtype=np.float64)
    cdef const double[::1] d = np.ascontiguousarray(dist, dtype=np.float64)
    cdef const double[:, ::1] n = np.ascontiguousarray(normal, dtype=np.float64)
    cdef const double[:, ::1] fc = np.ascontiguousarray(fcent, dtype=np.float64)
    cdef const double[::1] v = np.ascontiguousarray(vol, dtype=np.float64)
    cdef const double[:, ::1] xc = np.ascontiguousarray(centre, dtype=np.float64)
    cdef const double[:, :, ::1] lk = np.ascontiguousarray(lam, dtype=np.float64)
    cdef double bta = float(beta)

    cdef Py_ssize_t n_cells = off.shape[0] - 1
    cdef Py_ssize_t c, s, i, j, p, q, m, mmax = 0, total = 0
    for c in range(n_cells):
        m = off[c + 1] - off[c]
        if m > mmax:
            mmax = m
        total += (m + 1) * (m + 1)

    rows_arr = np.empty(total, dtype=np.int64)
    cols_arr = np.empty(total, dtype=np.int64)
    vals_arr = np.empty(total)
    cdef i64[::1] rows = rows_arr
    cdef i64[::1] cols = cols_arr
    cdef double[::1] vals = vals_arr

    scratch_g = np.empty((2, mmax + 1))
    scratch_r = np.empty((mmax, mmax + 1))
    scratch_b = np.empty(mmax)
    scratch_l = np.empty(mmax + 1, dtype=np.int64)
    cdef double[:, ::1] G = scratch_g
    cdef double[:, ::1] R = scratch_r
    cdef double[::1] bw = scratch_b
    cdef i64[::1] l2g = scratch_l

    cdef i64 f
    cdef Py_ssize_t k = 0
    cdef double relx, rely, nln, acc, lg0, lg1
    for c in range(n_cells):
        m = off[c + 1] - off[c]
        # local gradient operator: column 0 is the cell dof, then faces
        G[0, 0] = 0.0
        G[1, 0] = 0.0
        for i in range(m):
            s = off[c] + i
            f = fid[s]
            G[0, i + 1] = a[f] * n[s, 0] / v[c]
            G[1, i + 1] = a[f] * n[s, 1] / v[c]
            G[0, 0] -= G[0, i + 1]
            G[1, 0] -= G[1, i + 1]
            l2g[i + 1] = n_cells + f
        l2g[0] = c
        # stabilisation residual operator and face weights
        for i in range(m):
            s = off[c] + i
            f = fid[s]
            relx = fc[f, 0] - xc[c, 0]
            rely = fc[f, 1] - xc[c, 1]
            for j in range(m + 1):
                R[i, j] = -relx * G[0, j] - rely * G[1, j]
            R[i, 0] -= 1.0
            R[i, i + 1] += 1.0
            nln = (n[s, 0] * (lk[c, 0, 0] * n[s, 0] + lk[c, 0, 1] * n[s, 1])
                   + n[s, 1] * (lk[c, 1, 0] * n[s, 0] + lk[c, 1, 1] * n[s, 1]))
            bw[i] = bta * a[f] * nln / d[s]
        # dense local block: vK G^T Lam G + R^T diag(bw) R
        for p in range(m + 1):
            lg0 = lk[c, 0, 0] * G[0, p] + lk[c, 0, 1] * G[1, p]
            lg1 = lk[c, 1, 0] * G[0, p] + lk[c, 1, 1] * G[1, p]
            for q in range(m + 1):
                acc = v[c] * (G[0, q] * lg0 + G[1, q] * lg1)
                for i in range(m):
                    acc += bw[i] * R[i, p] * R[i, q]
                rows[k] = l2g[p]
                cols[k] = l2g[q]
                vals[k] = acc
                k += 1
    return rows_arr, cols_arr, vals_arr
