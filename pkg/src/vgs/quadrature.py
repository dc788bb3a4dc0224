"""Numerical quadrature on segments, triangles and star-shaped polygons.

Triangle rules of polynomial degree 1, 2 and 5 are provided, together with
uniform 4-way subdivision for non-polynomial integrands and an optional
horizontal split line so that integrands with a jump across ``y = const``
are integrated exactly on each side.
"""

from __future__ import annotations

import math

import numpy as np

# barycentric triangle rules; weights sum to one
_SQRT15 = math.sqrt(15.0)
_A1 = (6.0 - _SQRT15) / 21.0
_A2 = (6.0 + _SQRT15) / 21.0
_W1 = (155.0 - _SQRT15) / 1200.0
_W2 = (155.0 + _SQRT15) / 1200.0

_TRIANGLE_RULES = {
    1: (
        np.array([[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]]),
        np.array([1.0]),
    ),
    # the interior 3-point rule (not the edge-midpoint one): all rules here
    # keep their points strictly inside the triangle, so integrands split at
    # a line can classify points by simple coordinate comparison
    2: (
        np.array(
            [
                [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
                [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
                [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
            ]
        ),
        np.array([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]),
    ),
    5: (
        np.array(
            [
                [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
                [1.0 - 2.0 * _A1, _A1, _A1],
                [_A1, 1.0 - 2.0 * _A1, _A1],
                [_A1, _A1, 1.0 - 2.0 * _A1],
                [1.0 - 2.0 * _A2, _A2, _A2],
                [_A2, 1.0 - 2.0 * _A2, _A2],
                [_A2, _A2, 1.0 - 2.0 * _A2],
            ]
        ),
        np.array([9.0 / 40.0, _W1, _W1, _W1, _W2, _W2, _W2]),
    ),
}


def triangle_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric points and unit-sum weights exact to the given degree.

    Degrees 1, 2 and 5 are available; any other request is rounded up to
    the next available rule (or degree 5 fails loudly beyond that).
    """
    for d in sorted(_TRIANGLE_RULES):
        if degree <= d:
            return _TRIANGLE_RULES[d]
    raise ValueError(f"no triangle rule of degree {degree} available (max 5)")


def _subdivide(tri: np.ndarray) -> list[np.ndarray]:
    """Split a triangle into four congruent children via edge midpoints."""
    a, b, c = tri
    ab, bc, ca = 0.5 * (a + b), 0.5 * (b + c), 0.5 * (c + a)
    return [
        np.array([a, ab, ca]),
        np.array([ab, b, bc]),
        np.array([ca, bc, c]),
        np.array([ab, bc, ca]),
    ]


def _split_triangle_at_y(tri: np.ndarray, y0: float, tol: float = 1e-14) -> list[np.ndarray]:
    """Split a triangle along the horizontal line ``y = y0``.

    Returns triangles that each lie entirely on one (closed) side of the
    line, preserving total area.
    """
    ys = tri[:, 1]
    if np.all(ys <= y0 + tol) or np.all(ys >= y0 - tol):
        return [tri]

    below: list[np.ndarray] = []
    above: list[np.ndarray] = []
    for i in range(3):
        p, q = tri[i], tri[(i + 1) % 3]
        side_p = p[1] - y0
        side_q = q[1] - y0
        if side_p <= tol:
            below.append(p)
        if side_p >= -tol:
            above.append(p)
        if (side_p < -tol and side_q > tol) or (side_p > tol and side_q < -tol):
            t = (y0 - p[1]) / (q[1] - p[1])
            cut = p + t * (q - p)
            below.append(cut)
            above.append(cut)

    out: list[np.ndarray] = []
    for poly in (below, above):
        pts = np.array(poly)
        if len(pts) < 3:
            continue
        for k in range(1, len(pts) - 1):
            child = np.array([pts[0], pts[k], pts[k + 1]])
            if abs(_signed_area(child)) > tol * tol:
                out.append(child)
    return out


def _signed_area(tri: np.ndarray) -> float:
    (x0, y0), (x1, y1), (x2, y2) = tri
    return 0.5 * ((x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0))


def triangle_quadrature(
    tri: np.ndarray, degree: int = 2, refine: int = 0, split_y: float | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature points and weights for one triangle.

    Parameters
    ----------
    tri : (3, 2) vertex array.
    degree : polynomial degree the rule integrates exactly.
    refine : number of uniform 4-way subdivision passes.
    split_y : optional ordinate of a horizontal line at which the triangle
        is first cut, so a kink or jump along that line is resolved exactly.

    Weights carry the (unsigned) area measure: ``sum(w * f(p))`` is the
    integral of ``f`` over the triangle.
    """
    tri = np.asarray(tri, dtype=np.float64)
    pieces = [tri] if split_y is None else _split_triangle_at_y(tri, split_y)
    for _ in range(refine):
        pieces = [child for t in pieces for child in _subdivide(t)]
    bary, wts = triangle_rule(degree)
    pts = []
    wws = []
    for t in pieces:
        area = abs(_signed_area(t))
        if area == 0.0:
            continue
        pts.append(bary @ t)
        wws.append(wts * area)
    if not pts:
        return np.zeros((0, 2)), np.zeros(0)
    return np.vstack(pts), np.concatenate(wws)


def triangles_quadrature(
    tris: np.ndarray, degree: int = 2, refine: int = 0, split_y: float | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised quadrature over a batch of triangles.

    Parameters
    ----------
    tris : (n, 3, 2) array of triangle vertices.
    degree, refine, split_y : as in :func:`triangle_quadrature`.

    Returns
    -------
    points : (m, 2) all quadrature points.
    weights : (m,) area-carrying weights.
    owner : (m,) index of the input triangle each point belongs to, so
        piecewise-constant data can be gathered per original triangle.
    """
    tris = np.asarray(tris, dtype=np.float64)
    owner = np.arange(len(tris))

    if split_y is not None and len(tris):
        ys = tris[:, :, 1]
        tol = 1e-14
        clear = np.all(ys <= split_y + tol, axis=1) | np.all(ys >= split_y - tol, axis=1)
        if not np.all(clear):
            keep = tris[clear]
            keep_owner = owner[clear]
            cut_tris = []
            cut_owner = []
            for i in np.nonzero(~clear)[0]:
                for child in _split_triangle_at_y(tris[i], split_y):
                    cut_tris.append(child)
                    cut_owner.append(i)
            tris = np.concatenate([keep, np.array(cut_tris)]) if len(cut_tris) else keep
            owner = np.concatenate([keep_owner, np.array(cut_owner, dtype=np.int64)])

    for _ in range(refine):
        a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
        ab, bc, ca = 0.5 * (a + b), 0.5 * (b + c), 0.5 * (c + a)
        tris = np.concatenate(
            [
                np.stack([a, ab, ca], axis=1),
                np.stack([ab, b, bc], axis=1),
                np.stack([ca, bc, c], axis=1),
                np.stack([ab, bc, ca], axis=1),
            ]
        )
        owner = np.tile(owner, 4)

    bary, wts = triangle_rule(degree)
    pts = np.einsum("qb,nbd->nqd", bary, tris).reshape(-1, 2)
    e1 = tris[:, 1] - tris[:, 0]
    e2 = tris[:, 2] - tris[:, 0]
    areas = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    weights = (areas[:, None] * wts[None, :]).reshape(-1)
    owner_out = np.repeat(owner, len(wts))
    return pts, weights, owner_out


def polygon_quadrature(
    polygon: np.ndarray,
    centre: np.ndarray | None = None,
    degree: int = 2,
    refine: int = 0,
    split_y: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature over a polygon star-shaped with respect to ``centre``.

    The polygon is fanned into triangles (centre, v_i, v_{i+1}); each
    triangle is handled by :func:`triangle_quadrature`.  With no centre
    given, the vertex average is used, which is adequate for convex cells.
    """
    polygon = np.asarray(polygon, dtype=np.float64)
    if centre is None:
        centre = polygon.mean(axis=0)
    centre = np.asarray(centre, dtype=np.float64)
    pts = []
    wws = []
    m = len(polygon)
    for i in range(m):
        tri = np.array([centre, polygon[i], polygon[(i + 1) % m]])
        p, w = triangle_quadrature(tri, degree=degree, refine=refine, split_y=split_y)
        if len(p):
            pts.append(p)
            wws.append(w)
    return np.vstack(pts), np.concatenate(wws)


def segment_quadrature(
    p0: np.ndarray, p1: np.ndarray, npoints: int = 3
) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights along the segment from p0 to p1.

    ``npoints`` Gauss points integrate polynomials of degree
    ``2 * npoints - 1`` exactly; weights carry the arc-length measure.
    """
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    xg, wg = np.polynomial.legendre.leggauss(npoints)
    t = 0.5 * (xg + 1.0)
    pts = p0[None, :] + t[:, None] * (p1 - p0)[None, :]
    length = float(np.linalg.norm(p1 - p0))
    return pts, 0.5 * length * wg


def cell_quadrature(
    mesh, cell: int, degree: int = 2, refine: int = 0, split_y: float | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature over one mesh cell, fanned about the cell centre."""
    return polygon_quadrature(
        mesh.cell_polygon(cell),
        centre=mesh.cell_centre[cell],
        degree=degree,
        refine=refine,
        split_y=split_y,
    )
