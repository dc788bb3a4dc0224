"""Polytopal meshes of planar domains.

A mesh is a triple (cells, faces, vertices).  Faces are straight segments;
cells are simple polygons described by the set of their faces.  Every face
carries its measure, centroid and diameter; every cell carries its volume,
centroid, diameter and, per incident face, the outward unit normal and the
orthogonal distance from the cell centre to the face line.  Cells must be
star-shaped with respect to their centre, which the validator enforces
through positivity of those distances.

Boundary faces may be tagged with one of three markers: ``TAG_DIRICHLET``
(pinned value), ``TAG_NEUMANN`` (zero flux) and ``TAG_CONTACT`` (unilateral
constraint).
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

TAG_NONE = 0
TAG_DIRICHLET = 1
TAG_NEUMANN = 2
TAG_CONTACT = 3

_VALID_TAGS = (TAG_DIRICHLET, TAG_NEUMANN, TAG_CONTACT)

#: tolerance for the per-cell closure identity sum(|face| * normal) = 0
NORMAL_SUM_TOL = 1e-12
#: relative tolerance for the volume identities
VOLUME_TOL = 1e-10


class MeshError(Exception):
    """Raised for structurally or geometrically invalid meshes."""


class MeshFormatError(MeshError):
    """Raised when parsing a mesh file fails; message includes the line number."""


@dataclass
class PolytopalMesh:
    """Planar polytopal mesh with precomputed geometric quantities.

    Attributes
    ----------
    vertices : (n_vertices, 2) float array
    face_vertices : (n_faces, 2) int array
        Endpoint indices of every face segment.
    cell_face_offsets : (n_cells + 1,) int array
    cell_face_ids : (n_slots,) int array
        Faces of cell ``c`` are ``cell_face_ids[offsets[c]:offsets[c+1]]``.
    cell_loop_offsets, cell_loop_ids
        Counter-clockwise vertex loop of every cell, same CSR layout.
    face_area, face_centroid, face_diameter
        Measure |sigma|, midpoint and diameter of every face.
    face_cells : (n_faces, 2) int array
        Incident cells; second entry is -1 for boundary faces.
    cell_volume, cell_centre, cell_diameter
        Measure |K|, centroid x_K and diameter h_K of every cell.
    normal : (n_slots, 2) float array
        Outward unit normal of each (cell, face) incidence.
    dist : (n_slots,) float array
        Orthogonal distance from the cell centre to the face line.
    boundary_tags : (n_faces,) int array
        0 on interior/untagged faces, otherwise one of the TAG_* markers.
    """

    vertices: np.ndarray
    face_vertices: np.ndarray
    cell_face_offsets: np.ndarray
    cell_face_ids: np.ndarray
    cell_loop_offsets: np.ndarray
    cell_loop_ids: np.ndarray
    face_area: np.ndarray
    face_centroid: np.ndarray
    face_diameter: np.ndarray
    face_cells: np.ndarray
    cell_volume: np.ndarray
    cell_centre: np.ndarray
    cell_diameter: np.ndarray
    normal: np.ndarray
    dist: np.ndarray
    boundary_tags: np.ndarray = field(default=None)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.face_vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cell_face_offsets) - 1

    @property
    def n_slots(self) -> int:
        """Total number of (cell, face) incidences."""
        return len(self.cell_face_ids)

    @property
    def h_max(self) -> float:
        """Largest cell diameter."""
        return float(self.cell_diameter.max())

    def cell_faces(self, cell: int) -> np.ndarray:
        lo, hi = self.cell_face_offsets[cell], self.cell_face_offsets[cell + 1]
        return self.cell_face_ids[lo:hi]

    def cell_slots(self, cell: int) -> slice:
        return slice(int(self.cell_face_offsets[cell]), int(self.cell_face_offsets[cell + 1]))

    def cell_loop(self, cell: int) -> np.ndarray:
        lo, hi = self.cell_loop_offsets[cell], self.cell_loop_offsets[cell + 1]
        return self.cell_loop_ids[lo:hi]

    def cell_polygon(self, cell: int) -> np.ndarray:
        """Counter-clockwise vertex coordinates of the cell polygon."""
        return self.vertices[self.cell_loop(cell)]

    @property
    def slot_cell(self) -> np.ndarray:
        """Owning cell index of every (cell, face) incidence slot."""
        counts = np.diff(self.cell_face_offsets)
        return np.repeat(np.arange(self.n_cells), counts)

    def boundary_faces(self) -> np.ndarray:
        return np.nonzero(self.face_cells[:, 1] < 0)[0]

    def interior_faces(self) -> np.ndarray:
        return np.nonzero(self.face_cells[:, 1] >= 0)[0]

    def faces_with_tag(self, tag: int) -> np.ndarray:
        return np.nonzero(self.boundary_tags == tag)[0]

    def domain_area(self) -> float:
        """Area enclosed by the boundary, from the divergence theorem."""
        ext = self.boundary_faces()
        slots = _face_owner_slots(self)[ext]
        xn = np.einsum("ij,ij->i", self.face_centroid[ext], self.normal[slots])
        return float(0.5 * np.sum(self.face_area[ext] * xn))


def _face_owner_slots(mesh: PolytopalMesh) -> np.ndarray:
    """For each face, the slot index of its first (owning) incidence."""
    owner = np.full(mesh.n_faces, -1, dtype=np.int64)
    cells = mesh.slot_cell
    for s, f in enumerate(mesh.cell_face_ids):
        if owner[f] < 0 or mesh.face_cells[f, 0] == cells[s]:
            if mesh.face_cells[f, 0] == cells[s]:
                owner[f] = s
    return owner


def _polygon_area_centroid(points: np.ndarray) -> tuple[float, np.ndarray]:
    x, y = points[:, 0], points[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * float(np.sum(cross))
    if area == 0.0:
        raise MeshError("degenerate cell polygon with zero area")
    cx = float(np.sum((x + xn) * cross)) / (6.0 * area)
    cy = float(np.sum((y + yn) * cross)) / (6.0 * area)
    return area, np.array([cx, cy])


def _order_loop(face_pairs: list[tuple[int, int]]) -> list[int]:
    """Chain a set of segments into a single closed vertex loop."""
    adjacency: dict[int, list[int]] = {}
    for a, b in face_pairs:
        adjacency.setdefault(a, []).append(b)
        adjacency.setdefault(b, []).append(a)
    for v, nbrs in adjacency.items():
        if len(nbrs) != 2:
            raise MeshError(
                f"cell boundary is not a closed loop: vertex {v} appears on {len(nbrs)} face(s)"
            )
    start = face_pairs[0][0]
    loop = [start, adjacency[start][0]]
    while len(loop) < len(face_pairs):
        prev, cur = loop[-2], loop[-1]
        a, b = adjacency[cur]
        loop.append(b if a == prev else a)
    prev, cur = loop[-2], loop[-1]
    a, b = adjacency[cur]
    closing = b if a == prev else a
    if closing != start:
        raise MeshError("cell faces do not close into a single loop")
    return loop


def build_mesh(
    vertices: np.ndarray,
    face_vertices: np.ndarray,
    cell_faces: list[list[int]],
    boundary_tags: np.ndarray | None = None,
    check: bool = True,
) -> PolytopalMesh:
    """Assemble a mesh from raw connectivity, recomputing all geometry.

    Parameters
    ----------
    vertices : (n_vertices, 2) array of coordinates.
    face_vertices : (n_faces, 2) array of segment endpoint indices.
    cell_faces : per-cell lists of face indices.
    boundary_tags : optional (n_faces,) marker array.
    check : run :func:`validate` and raise on any diagnostic.
    """
    vertices = np.asarray(vertices, dtype=np.float64)
    face_vertices = np.asarray(face_vertices, dtype=np.int64)
    if vertices.ndim != 2 or vertices.shape[1] != 2:
        raise MeshError("vertices must be an (n, 2) array")
    if face_vertices.ndim != 2 or face_vertices.shape[1] != 2:
        raise MeshError("faces must be an (n, 2) array of vertex indices")
    if face_vertices.size and (face_vertices.min() < 0 or face_vertices.max() >= len(vertices)):
        raise MeshError("face refers to a vertex index out of range")

    n_faces = len(face_vertices)
    n_cells = len(cell_faces)

    offsets = np.zeros(n_cells + 1, dtype=np.int64)
    for c, faces in enumerate(cell_faces):
        if len(faces) < 3:
            raise MeshError(f"cell {c} has fewer than 3 faces")
        offsets[c + 1] = offsets[c] + len(faces)
    flat = np.fromiter(
        (f for faces in cell_faces for f in faces), dtype=np.int64, count=offsets[-1]
    )
    if flat.size and (flat.min() < 0 or flat.max() >= n_faces):
        raise MeshError("cell refers to a face index out of range")

    # face geometry
    p0 = vertices[face_vertices[:, 0]]
    p1 = vertices[face_vertices[:, 1]]
    face_area = np.linalg.norm(p1 - p0, axis=1)
    face_centroid = 0.5 * (p0 + p1)
    face_diameter = face_area.copy()

    # face -> cell incidence
    face_cells = np.full((n_faces, 2), -1, dtype=np.int64)
    for c in range(n_cells):
        for f in flat[offsets[c] : offsets[c + 1]]:
            if face_cells[f, 0] < 0:
                face_cells[f, 0] = c
            elif face_cells[f, 1] < 0:
                if face_cells[f, 0] == c:
                    raise MeshError(f"cell {c} lists face {f} twice")
                face_cells[f, 1] = c
            else:
                raise MeshError(f"face {f} is shared by more than two cells")

    # cell polygons (ordered loops), volumes, centroids, diameters
    loop_offsets = np.zeros(n_cells + 1, dtype=np.int64)
    loop_ids: list[int] = []
    cell_volume = np.zeros(n_cells)
    cell_centre = np.zeros((n_cells, 2))
    cell_diameter = np.zeros(n_cells)
    for c in range(n_cells):
        pairs = [tuple(face_vertices[f]) for f in flat[offsets[c] : offsets[c + 1]]]
        loop = _order_loop(pairs)
        pts = vertices[loop]
        area, centre = _polygon_area_centroid(pts)
        if area < 0:
            loop.reverse()
            pts = vertices[loop]
            area = -area
        diffs = pts[:, None, :] - pts[None, :, :]
        cell_volume[c] = area
        cell_centre[c] = centre
        cell_diameter[c] = float(np.sqrt((diffs**2).sum(-1)).max())
        loop_offsets[c + 1] = loop_offsets[c] + len(loop)
        loop_ids.extend(loop)

    # outward unit normals and centre-to-face distances, per incidence slot
    slot_cells = np.repeat(np.arange(n_cells), np.diff(offsets))
    tangent = p1[flat] - p0[flat]
    lengths = np.linalg.norm(tangent, axis=1)
    if np.any(lengths <= 0):
        bad = int(flat[np.argmin(lengths)])
        raise MeshError(f"face {bad} has zero length")
    tangent /= lengths[:, None]
    normal = np.column_stack([tangent[:, 1], -tangent[:, 0]])
    to_face = face_centroid[flat] - cell_centre[slot_cells]
    sign = np.sign(np.einsum("ij,ij->i", to_face, normal))
    if np.any(sign == 0):
        raise MeshError("cell centre lies on the line of one of its faces")
    normal *= sign[:, None]
    dist = np.einsum("ij,ij->i", to_face, normal)

    if boundary_tags is None:
        boundary_tags = np.zeros(n_faces, dtype=np.int64)
    else:
        boundary_tags = np.asarray(boundary_tags, dtype=np.int64).copy()
        if boundary_tags.shape != (n_faces,):
            raise MeshError("boundary_tags must have one entry per face")

    mesh = PolytopalMesh(
        vertices=vertices,
        face_vertices=face_vertices,
        cell_face_offsets=offsets,
        cell_face_ids=flat,
        cell_loop_offsets=loop_offsets,
        cell_loop_ids=np.asarray(loop_ids, dtype=np.int64),
        face_area=face_area,
        face_centroid=face_centroid,
        face_diameter=face_diameter,
        face_cells=face_cells,
        cell_volume=cell_volume,
        cell_centre=cell_centre,
        cell_diameter=cell_diameter,
        normal=normal,
        dist=dist,
        boundary_tags=boundary_tags,
    )
    if check:
        problems = validate(mesh)
        if problems:
            raise MeshError("invalid mesh: " + "; ".join(problems))
    return mesh


def validate(mesh: PolytopalMesh) -> list[str]:
    """Check structural and geometric invariants; return a list of diagnostics.

    An empty list means the mesh is valid.  Checks: face incidence counts,
    opposite normals across interior faces, the per-cell closure identity
    sum(|face| * normal) = 0, strict positivity of the centre-to-face
    distances, the divergence-theorem volume identity per cell, and
    consistency of the total volume with the area enclosed by the boundary.
    """
    problems: list[str] = []
    counts = np.sum(mesh.face_cells >= 0, axis=1)
    for f in np.nonzero(counts == 0)[0]:
        problems.append(f"face {f} belongs to no cell")

    slot_of = {}
    cells = mesh.slot_cell
    for s, f in enumerate(mesh.cell_face_ids):
        slot_of[(int(cells[s]), int(f))] = s
    for f in np.nonzero(counts == 2)[0]:
        c0, c1 = mesh.face_cells[f]
        n0 = mesh.normal[slot_of[(int(c0), int(f))]]
        n1 = mesh.normal[slot_of[(int(c1), int(f))]]
        if np.linalg.norm(n0 + n1) > 1e-12:
            problems.append(f"interior face {f}: normals of cells {c0} and {c1} are not opposite")

    for c in range(mesh.n_cells):
        sl = mesh.cell_slots(c)
        faces = mesh.cell_face_ids[sl]
        weighted = mesh.face_area[faces, None] * mesh.normal[sl]
        closure = np.linalg.norm(weighted.sum(axis=0))
        perimeter = mesh.face_area[faces].sum()
        if closure > NORMAL_SUM_TOL * max(1.0, perimeter):
            problems.append(f"cell {c}: face normals do not close (|sum| = {closure:.3e})")
        if np.any(mesh.dist[sl] <= 0):
            problems.append(f"cell {c}: centre is not strictly inside (non-positive distance)")
        div_volume = 0.5 * float(
            np.sum(
                mesh.face_area[faces]
                * np.einsum(
                    "ij,ij->i", mesh.face_centroid[faces] - mesh.cell_centre[c], mesh.normal[sl]
                )
            )
        )
        if abs(div_volume - mesh.cell_volume[c]) > VOLUME_TOL * max(1.0, mesh.cell_volume[c]):
            problems.append(
                f"cell {c}: divergence-theorem volume {div_volume:.15e} "
                f"!= polygon volume {mesh.cell_volume[c]:.15e}"
            )

    total = float(mesh.cell_volume.sum())
    enclosed = mesh.domain_area()
    if abs(total - enclosed) > VOLUME_TOL * max(1.0, abs(enclosed)):
        problems.append(
            f"total cell volume {total:.15e} != boundary-enclosed area {enclosed:.15e}"
        )

    interior = set(mesh.interior_faces().tolist())
    for f in range(mesh.n_faces):
        tag = int(mesh.boundary_tags[f])
        if f in interior and tag != TAG_NONE:
            problems.append(f"interior face {f} carries boundary tag {tag}")
        elif tag not in (TAG_NONE, *_VALID_TAGS):
            problems.append(f"face {f} carries unknown tag {tag}")
    return problems


def _mesh_from_loops(
    coords: dict, loops: list[list], tagger=None
) -> PolytopalMesh:
    """Build a mesh from per-cell vertex loops keyed into a coordinate dict."""
    vertex_index: dict = {}
    vertex_list: list[tuple[float, float]] = []
    face_index: dict[tuple[int, int], int] = {}
    face_list: list[tuple[int, int]] = []
    cell_faces: list[list[int]] = []

    def vid(key) -> int:
        if key not in vertex_index:
            vertex_index[key] = len(vertex_list)
            vertex_list.append(coords[key])
        return vertex_index[key]

    for loop in loops:
        ids = [vid(k) for k in loop]
        faces = []
        for a, b in zip(ids, ids[1:] + ids[:1]):
            key = (a, b) if a < b else (b, a)
            if key not in face_index:
                face_index[key] = len(face_list)
                face_list.append(key)
            faces.append(face_index[key])
        cell_faces.append(faces)

    mesh = build_mesh(
        np.asarray(vertex_list, dtype=np.float64),
        np.asarray(face_list, dtype=np.int64),
        cell_faces,
    )
    if tagger is not None:
        tag_boundary(mesh, tagger)
    return mesh


def build_triangular_mesh(n: int) -> PolytopalMesh:
    """Uniform triangulation of the unit square with ``2 n**2`` cells.

    Each of the n-by-n squares is split along its south-west to north-east
    diagonal, so every boundary side carries exactly ``n`` faces and the
    mesh size is ``sqrt(2)/n``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    coords = {(i, j): (i / n, j / n) for i in range(n + 1) for j in range(n + 1)}
    loops = []
    for i in range(n):
        for j in range(n):
            loops.append([(i, j), (i + 1, j), (i + 1, j + 1)])
            loops.append([(i, j), (i + 1, j + 1), (i, j + 1)])
    return _mesh_from_loops(coords, loops)


def build_hexagonal_mesh(n: int) -> PolytopalMesh:
    """Hexagon-dominant mesh of the unit square on an ``n``-row brick layout.

    Rows of staggered bricks are turned into hexagons by moving the
    mid-edge vertices of every interior horizontal line up or down by a
    quarter of the row height.  Interior cells are proper hexagons; cells
    in the first and last rows degenerate to pentagons and the half-bricks
    on the left and right sides to quadrilaterals.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    dy = 1.0 / n
    delta = 0.25 * dy

    def point(k: int, j: int) -> tuple[float, float]:
        x = k / (2.0 * n)
        if j == 0 or j == n:
            return (x, j * dy)
        return (x, j * dy + (delta if k % 2 else -delta))

    coords: dict[tuple[int, int], tuple[float, float]] = {}

    def key(k: int, j: int) -> tuple[int, int]:
        if (k, j) not in coords:
            coords[(k, j)] = point(k, j)
        return (k, j)

    def edge_keys(k_lo: int, k_hi: int, j: int, reverse: bool) -> list[tuple[int, int]]:
        ks = range(k_lo, k_hi + 1)
        interior_line = 0 < j < n
        keys = [key(k, j) for k in ks if interior_line or k in (k_lo, k_hi)]
        return keys[::-1] if reverse else keys

    loops = []
    for j in range(n):
        if j % 2 == 0:
            spans = [(2 * i, 2 * i + 2) for i in range(n)]
        else:
            spans = [(max(0, 2 * i - 1), min(2 * n, 2 * i + 1)) for i in range(n + 1)]
        for k_lo, k_hi in spans:
            bottom = edge_keys(k_lo, k_hi, j, reverse=False)
            top = edge_keys(k_lo, k_hi, j + 1, reverse=True)
            loops.append(bottom + top)
    return _mesh_from_loops(coords, loops)


def build_distorted_quad_mesh(n: int, amp: float = 0.6) -> PolytopalMesh:
    """Logically Cartesian quadrilateral mesh with layered sinusoidal shear.

    Vertex rows are displaced vertically by
    ``0.3 * amp * sin(2 pi x) * sin(4 pi y) / n``, producing four bands of
    alternating shear while keeping the outer boundary and the midline
    y = 1/2 straight (for even ``n``).  ``amp`` in [0, 1) keeps every cell
    star-shaped; ``amp = 0`` gives the uniform Cartesian mesh.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    if not 0.0 <= amp < 1.0:
        raise ValueError("amp must lie in [0, 1)")
    coords = {}
    for i in range(n + 1):
        for j in range(n + 1):
            x = i / n
            y = j / n
            if 0 < j < n:
                y += 0.3 * amp * math.sin(2.0 * math.pi * x) * math.sin(4.0 * math.pi * y) / n
            coords[(i, j)] = (x, y)
    loops = [
        [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)]
        for i in range(n)
        for j in range(n)
    ]
    return _mesh_from_loops(coords, loops)


def _centre_sees_all_faces(points: np.ndarray, rel_tol: float = 1e-7) -> bool:
    """Whether a polygon's centroid has positive distance to every edge line.

    This is the condition the cell-centre gradient construction needs; it
    holds for convex polygons and fails for strongly non-convex ones (for
    example a pentagon with a zigzag chain facing its flat side).
    """
    _, centre = _polygon_area_centroid(points)
    nxt = np.roll(points, -1, axis=0)
    tangent = nxt - points
    lengths = np.linalg.norm(tangent, axis=1)
    outward = np.column_stack([tangent[:, 1], -tangent[:, 0]]) / lengths[:, None]
    mid = 0.5 * (points + nxt)
    dist = np.einsum("ij,ij->i", mid - centre, outward)
    diam = float(np.sqrt(((points[:, None, :] - points[None, :, :]) ** 2).sum(-1).max()))
    return bool(np.all(dist > rel_tol * diam))


def _earclip(keys: list, points: np.ndarray) -> list[list]:
    """Triangulate a simple counter-clockwise polygon by ear clipping.

    Returns triangles as key triples; diagonals stay strictly inside the
    polygon, so the outer edges are exactly the input edges.
    """

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    def inside(p, a, b, c):
        eps = -1e-14
        return cross(a, b, p) >= eps and cross(b, c, p) >= eps and cross(c, a, p) >= eps

    idx = list(range(len(keys)))
    triangles: list[list] = []
    while len(idx) > 3:
        for k in range(len(idx)):
            i, j, l = idx[k - 1], idx[k], idx[(k + 1) % len(idx)]
            if cross(points[i], points[j], points[l]) <= 1e-14:
                continue  # reflex or flat corner: not an ear
            if any(
                m not in (i, j, l) and inside(points[m], points[i], points[j], points[l])
                for m in idx
            ):
                continue
            triangles.append([keys[i], keys[j], keys[l]])
            del idx[k]
            break
        else:
            raise MeshError("cannot triangulate cell piece (polygon is not simple)")
    triangles.append([keys[m] for m in idx])
    return triangles


def split_mesh_at_line(mesh: PolytopalMesh, y0: float, tol: float = 1e-12) -> PolytopalMesh:
    """Cut every cell crossing the horizontal line ``y = y0`` along it.

    Cell boundaries in the result resolve the line exactly, so cellwise
    material data can jump across it without misassigning any area.
    Cells that only touch the line are kept as they are; if nothing
    crosses it, the mesh is returned unchanged (tags included).

    A cell whose boundary crosses the line exactly twice is cut in two.
    A zigzag boundary can cross more often (the line then enters and
    leaves the cell several times); such a cell is first triangulated by
    ear clipping, after which every triangle crosses at most twice.  Cut
    points are keyed by the face (or clipping diagonal) they sit on, so
    the two cells flanking any face agree on them and the result is
    conforming.  Any piece whose centroid does not have positive distance
    to all of its edges (a zigzag chain can face the cut line) is also
    triangulated, which the cell-centre gradient construction requires.
    The rebuilt mesh carries no boundary tags; re-tag it afterwards.
    """

    def side(y: float) -> int:
        if y > y0 + tol:
            return 1
        if y < y0 - tol:
            return -1
        return 0

    pair_face = {}
    for f, (a, b) in enumerate(mesh.face_vertices):
        pair_face[(min(int(a), int(b)), max(int(a), int(b)))] = f

    coords = {("v", i): (float(x), float(y)) for i, (x, y) in enumerate(mesh.vertices)}

    def cut_key(ka, kb):
        """Key for the crossing point of segment ka-kb, shared by both sides."""
        if ka[0] == "v" and kb[0] == "v":
            f = pair_face.get((min(ka[1], kb[1]), max(ka[1], kb[1])))
            if f is not None:
                return ("cut", f)
        return ("cut",) + tuple(sorted((ka, kb)))

    def split_two(keys: list) -> list[list]:
        """Split a loop crossing the line exactly twice into its two pieces."""
        aug: list[tuple] = []  # (vertex key, side)
        sides = [side(coords[k][1]) for k in keys]
        for k in range(len(keys)):
            a, b = keys[k], keys[(k + 1) % len(keys)]
            aug.append((a, sides[k]))
            if sides[k] * sides[(k + 1) % len(keys)] == -1:
                key = cut_key(a, b)
                if key not in coords:
                    (xi, yi), (xj, yj) = coords[a], coords[b]
                    t = (y0 - yi) / (yj - yi)
                    coords[key] = (float(xi + t * (xj - xi)), float(y0))
                aug.append((key, 0))
        return [[k for k, s in aug if s <= 0], [k for k, s in aug if s >= 0]]

    loops: list[list] = []
    changed = False
    for c in range(mesh.n_cells):
        loop = [("v", int(v)) for v in mesh.cell_loop(c)]
        sides = [side(mesh.vertices[v][1]) for _, v in loop]
        if not (1 in sides and -1 in sides):
            loops.append(loop)
            continue
        changed = True
        nz = [s for s in sides if s != 0]
        flips = sum(nz[k] != nz[(k + 1) % len(nz)] for k in range(len(nz)))
        if flips == 2:
            parts = [loop]
        else:
            parts = _earclip(loop, np.asarray([coords[k] for k in loop]))
        pieces: list[list] = []
        for part in parts:
            ss = [side(coords[k][1]) for k in part]
            pieces.extend(split_two(part) if 1 in ss and -1 in ss else [part])
        for piece in pieces:
            pts = np.asarray([coords[k] for k in piece])
            if _centre_sees_all_faces(pts):
                loops.append(piece)
            else:
                loops.extend(_earclip(piece, pts))
    if not changed:
        return mesh
    return _mesh_from_loops(coords, loops)


def triangulate_mesh(mesh: PolytopalMesh) -> PolytopalMesh:
    """Conforming triangulation obtained by ear-clipping non-triangle cells.

    Each cell is tiled with triangles using only its own vertices, so the
    faces between cells are unchanged and the result is conforming.  A
    mesh that is already a triangulation is returned unchanged (tags
    included); otherwise the result carries no boundary tags.
    """
    sizes = np.diff(mesh.cell_loop_offsets)
    if np.all(sizes == 3):
        return mesh
    coords = {("v", i): (float(x), float(y)) for i, (x, y) in enumerate(mesh.vertices)}
    loops: list[list] = []
    for c in range(mesh.n_cells):
        loop = [("v", int(v)) for v in mesh.cell_loop(c)]
        if len(loop) == 3:
            loops.append(loop)
            continue
        pts = mesh.vertices[mesh.cell_loop(c)]
        if _polygon_area_centroid(pts)[0] < 0.0:
            loop, pts = loop[::-1], pts[::-1]
        loops.extend(_earclip(loop, pts))
    return _mesh_from_loops(coords, loops)


def tag_boundary(mesh: PolytopalMesh, classifier) -> PolytopalMesh:
    """Tag every boundary face using ``classifier(x, y) -> tag``.

    The classifier is evaluated at the face midpoint and near both
    endpoints (strictly inside the face, so shared corner vertices never
    cause spurious conflicts).  A face whose sample points classify
    differently straddles a tag boundary, which is an error: the mesh must
    resolve tag transitions at face endpoints.
    """
    for f in mesh.boundary_faces():
        mid = mesh.face_centroid[f]
        ends = mesh.vertices[mesh.face_vertices[f]]
        samples = [mid, mid + 0.98 * (ends[0] - mid), mid + 0.98 * (ends[1] - mid)]
        tags = {int(classifier(p[0], p[1])) for p in samples}
        if len(tags) != 1:
            raise MeshError(
                f"face {f} straddles a tag boundary (classifier returned {sorted(tags)})"
            )
        tag = tags.pop()
        if tag not in _VALID_TAGS:
            raise MeshError(f"classifier returned invalid tag {tag} for face {f}")
        mesh.boundary_tags[f] = tag
    return mesh


def save_mesh(mesh: PolytopalMesh, target) -> None:
    """Write a mesh in the plain-text ``polymesh 2`` format."""
    own = isinstance(target, (str, bytes)) or hasattr(target, "__fspath__")
    stream = open(target, "w", encoding="utf-8") if own else target
    try:
        stream.write("polymesh 2\n")
        stream.write(f"vertices {mesh.n_vertices}\n")
        for x, y in mesh.vertices:
            stream.write(f"{float(x)!r} {float(y)!r}\n")
        stream.write(f"faces {mesh.n_faces}\n")
        for a, b in mesh.face_vertices:
            stream.write(f"{a} {b}\n")
        stream.write(f"cells {mesh.n_cells}\n")
        for c in range(mesh.n_cells):
            stream.write(" ".join(str(int(f)) for f in mesh.cell_faces(c)) + "\n")
        tagged = np.nonzero(mesh.boundary_tags != TAG_NONE)[0]
        if len(tagged):
            stream.write(f"tags {len(tagged)}\n")
            for f in tagged:
                stream.write(f"{f} {int(mesh.boundary_tags[f])}\n")
    finally:
        if own:
            stream.close()


def load_mesh(source) -> PolytopalMesh:
    """Read a mesh from the plain-text ``polymesh 2`` format.

    All geometric quantities are recomputed from the listed coordinates;
    the file only stores connectivity, coordinates and optional tags.
    Raises :class:`MeshFormatError` (with a line number) on malformed
    input and :class:`MeshError` if the mesh fails validation.
    """
    own = isinstance(source, (str, bytes)) or hasattr(source, "__fspath__")
    stream = open(source, "r", encoding="utf-8") if own else source
    try:
        if isinstance(stream, io.TextIOBase) or hasattr(stream, "read"):
            text = stream.read()
        else:  # pragma: no cover - defensive
            text = str(stream)
    finally:
        if own:
            stream.close()

    lines = text.splitlines()
    items: list[tuple[int, list[str]]] = []
    for ln, raw in enumerate(lines, start=1):
        body = raw.split("#", 1)[0].strip()
        if body:
            items.append((ln, body.split()))
    pos = 0

    def take(what: str) -> tuple[int, list[str]]:
        nonlocal pos
        if pos >= len(items):
            raise MeshFormatError(f"unexpected end of file while reading {what}")
        item = items[pos]
        pos += 1
        return item

    ln, tokens = take("header")
    if tokens != ["polymesh", "2"]:
        raise MeshFormatError(f"line {ln}: expected header 'polymesh 2', got {' '.join(tokens)!r}")

    def section(name: str) -> int:
        ln, tokens = take(f"'{name}' section")
        if len(tokens) != 2 or tokens[0] != name:
            raise MeshFormatError(f"line {ln}: expected '{name} <count>', got {' '.join(tokens)!r}")
        try:
            count = int(tokens[1])
        except ValueError:
            raise MeshFormatError(f"line {ln}: invalid count {tokens[1]!r}") from None
        if count < 0:
            raise MeshFormatError(f"line {ln}: negative count in section '{name}'")
        return count

    nv = section("vertices")
    vertices = np.zeros((nv, 2))
    for i in range(nv):
        ln, tokens = take("vertex coordinates")
        if len(tokens) != 2:
            raise MeshFormatError(f"line {ln}: expected two coordinates")
        try:
            vertices[i] = [float(tokens[0]), float(tokens[1])]
        except ValueError:
            raise MeshFormatError(f"line {ln}: invalid coordinate") from None

    nf = section("faces")
    faces = np.zeros((nf, 2), dtype=np.int64)
    for i in range(nf):
        ln, tokens = take("face endpoints")
        if len(tokens) != 2:
            raise MeshFormatError(f"line {ln}: expected two vertex indices")
        try:
            faces[i] = [int(tokens[0]), int(tokens[1])]
        except ValueError:
            raise MeshFormatError(f"line {ln}: invalid vertex index") from None
        if faces[i, 0] == faces[i, 1]:
            raise MeshFormatError(f"line {ln}: face endpoints coincide")
        if faces[i].min() < 0 or faces[i].max() >= nv:
            raise MeshFormatError(f"line {ln}: vertex index out of range")

    nc = section("cells")
    cell_faces: list[list[int]] = []
    for i in range(nc):
        ln, tokens = take("cell face list")
        try:
            ids = [int(t) for t in tokens]
        except ValueError:
            raise MeshFormatError(f"line {ln}: invalid face index") from None
        if any(f < 0 or f >= nf for f in ids):
            raise MeshFormatError(f"line {ln}: face index out of range")
        cell_faces.append(ids)

    tags = np.zeros(nf, dtype=np.int64)
    if pos < len(items):
        nt = section("tags")
        for i in range(nt):
            ln, tokens = take("tag entry")
            if len(tokens) != 2:
                raise MeshFormatError(f"line {ln}: expected 'faceIndex tag'")
            try:
                f, tag = int(tokens[0]), int(tokens[1])
            except ValueError:
                raise MeshFormatError(f"line {ln}: invalid tag entry") from None
            if f < 0 or f >= nf:
                raise MeshFormatError(f"line {ln}: face index out of range")
            if tag not in _VALID_TAGS:
                raise MeshFormatError(f"line {ln}: tag must be one of 1, 2, 3")
            tags[f] = tag
    if pos < len(items):
        ln, tokens = take("trailing content")
        raise MeshFormatError(f"line {ln}: unexpected content {' '.join(tokens)!r}")

    return build_mesh(vertices, faces, cell_faces, boundary_tags=tags)
