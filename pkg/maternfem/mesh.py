"""
Discretisation domains.

1D interval meshes with a boundary extension, 2D Delaunay triangulations
(Bowyer-Watson), hull rings for extending 2D domains, point location and
the plain-text mesh format.
"""
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree
from scipy.spatial.distance import pdist

from .models import ElementLocation

log = logging.getLogger(__name__)

DUPLICATE_TOLERANCE = 1e-12
PREDICATE_TOLERANCE = 1e-12
LOCATE_TOLERANCE = 1e-12
# Barycentric weights below this are rounding; snapping makes node hits exact.
BARYCENTRIC_SNAP = 1e-12
SUPER_TRIANGLE_SCALE = 1e4


class MeshError(ValueError):
    """Raised for degenerate geometry or malformed mesh files."""


# ---------------------------------------------------------------------------
# Mesh types
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Mesh1D:
    """Partition of an interval; interior_range is the data range."""
    knots: np.ndarray
    interior_range: tuple[float, float]
    extension: float = 0.0

    def __post_init__(self) -> None:
        knots = np.asarray(self.knots, dtype=float).ravel()
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "interior_range", (float(self.interior_range[0]), float(self.interior_range[1])))
        if knots.size < 4:
            raise MeshError(f"a 1D mesh needs at least 4 knots, got {knots.size}")
        if not np.all(np.isfinite(knots)) or not np.all(np.diff(knots) > 0):
            raise MeshError("knots must be finite and strictly increasing")
        lo, hi = self.interior_range
        if not (knots[0] <= lo <= hi <= knots[-1]):
            raise MeshError(f"interior range ({lo}, {hi}) is not inside [{knots[0]}, {knots[-1]}]")
        if not self.extension >= 0:
            raise MeshError(f"extension must be non-negative, got {self.extension}")

    dim = 1

    @property
    def nodes(self) -> np.ndarray:
        return self.knots[:, None]

    @property
    def n_nodes(self) -> int:
        return self.knots.size

    @property
    def n_elements(self) -> int:
        return self.knots.size - 1

    @property
    def element_lengths(self) -> np.ndarray:
        return np.diff(self.knots)

    @property
    def domain_measure(self) -> float:
        return float(self.knots[-1] - self.knots[0])

    @property
    def diameter(self) -> float:
        return self.domain_measure


@dataclass(frozen=True, eq=False)
class Mesh2D:
    """Triangulation with counter-clockwise triangles."""
    nodes: np.ndarray
    triangles: np.ndarray

    def __post_init__(self) -> None:
        nodes = np.asarray(self.nodes, dtype=float)
        tris = np.asarray(self.triangles, dtype=np.int64)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "triangles", tris)
        if nodes.ndim != 2 or nodes.shape[1] != 2 or not np.all(np.isfinite(nodes)):
            raise MeshError("nodes must be a finite (N, 2) array")
        if tris.ndim != 2 or tris.shape[1] != 3 or tris.shape[0] == 0:
            raise MeshError("triangles must be a non-empty (M, 3) index array")
        if tris.min() < 0 or tris.max() >= nodes.shape[0]:
            raise MeshError("triangle references a node that does not exist")
        bad = np.flatnonzero(~(self.signed_areas > 0))
        if bad.size:
            raise MeshError(f"triangle {int(bad[0])} has non-positive signed area")
        unused = np.setdiff1d(np.arange(nodes.shape[0]), tris.ravel())
        if unused.size:
            raise MeshError(f"node {int(unused[0])} belongs to no triangle")

    dim = 2

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.triangles.shape[0]

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @property
    def areas(self) -> np.ndarray:
        return self.signed_areas

    @property
    def domain_measure(self) -> float:
        return float(self.signed_areas.sum())

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        """Edges (sorted node pairs) that belong to exactly one triangle."""
        t = self.triangles
        edges = np.sort(np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
        uniq, counts = np.unique(edges, axis=0, return_counts=True)
        return uniq[counts == 1]

    @cached_property
    def diameter(self) -> float:
        return point_diameter(self.nodes)


def point_diameter(points: np.ndarray) -> float:
    points = np.asarray(points, dtype=float)
    if points.shape[1] == 1:
        return float(points.max() - points.min())
    try:
        points = points[ConvexHull(points).vertices]
    except QhullError:
        pass
    return float(pdist(points).max()) if len(points) > 1 else 0.0


# ---------------------------------------------------------------------------
# 1D meshes
# ---------------------------------------------------------------------------

def build_mesh_1d(lo: float, hi: float, n_intervals: int, extension_fraction: float = 0.2) -> Mesh1D:
    """Uniform knots over [lo - e, hi + e] with e = extension_fraction * (hi - lo).

    The spacing never exceeds (hi - lo) / n_intervals.
    """
    if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
        raise MeshError(f"degenerate range [{lo}, {hi}]")
    if n_intervals < 3:
        raise MeshError(f"at least 3 intervals are required, got {n_intervals}")
    if not extension_fraction >= 0:
        raise MeshError(f"extension fraction must be non-negative, got {extension_fraction}")
    ext = extension_fraction * (hi - lo)
    h0 = (hi - lo) / n_intervals
    n_total = max(n_intervals, math.ceil((hi - lo + 2.0 * ext) / h0 - 1e-9))
    knots = np.linspace(lo - ext, hi + ext, n_total + 1)
    log.debug("1D mesh: %d intervals over [%g, %g]", n_total, knots[0], knots[-1])
    return Mesh1D(knots=knots, interior_range=(lo, hi), extension=ext)


# ---------------------------------------------------------------------------
# 2D Delaunay triangulation
# ---------------------------------------------------------------------------

def _check_points_2d(pts: np.ndarray) -> None:
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise MeshError("points must be an (N, 2) array")
    if pts.shape[0] < 3:
        raise MeshError(f"at least 3 points are required, got {pts.shape[0]}")
    if not np.all(np.isfinite(pts)):
        raise MeshError("points must be finite")
    pairs = cKDTree(pts).query_pairs(DUPLICATE_TOLERANCE, output_type="ndarray")
    if len(pairs):
        i, j = sorted(int(k) for k in pairs[0])
        raise MeshError(f"points {i} and {j} are duplicates")
    d = pts - pts[0]
    far = d[np.argmax(np.einsum("ij,ij->i", d, d))]
    cross = d[:, 0] * far[1] - d[:, 1] * far[0]
    if np.abs(cross).max() <= DUPLICATE_TOLERANCE * float(far @ far):
        raise MeshError("points are collinear")


class _BowyerWatson:
    """Incremental triangulation in coordinates scaled to the unit box."""

    def __init__(self, unit: np.ndarray):
        n = unit.shape[0]
        cx, cy = 0.5 * unit.max(axis=0)
        r = SUPER_TRIANGLE_SCALE
        sup = np.array([
            [cx - math.sqrt(3.0) * r, cy - r],
            [cx + math.sqrt(3.0) * r, cy - r],
            [cx, cy + 2.0 * r],
        ])
        self.n = n
        self.coords = np.vstack([unit, sup])
        cap = 2 * n + 8
        self.tris = np.zeros((cap, 3), dtype=np.int64)
        self.alive = np.zeros(cap, dtype=bool)
        self.size = 0
        self.free: list[int] = []
        self.owner: dict[tuple[int, int], int] = {}
        self._add((n, n + 1, n + 2))

    def _add(self, tri: tuple[int, int, int]) -> None:
        if self.free:
            slot = self.free.pop()
        else:
            if self.size == self.tris.shape[0]:
                self.tris = np.vstack([self.tris, np.zeros_like(self.tris)])
                self.alive = np.concatenate([self.alive, np.zeros_like(self.alive)])
            slot = self.size
            self.size += 1
        self.tris[slot] = tri
        self.alive[slot] = True
        a, b, c = tri
        self.owner[(a, b)] = slot
        self.owner[(b, c)] = slot
        self.owner[(c, a)] = slot

    def _remove(self, slot: int) -> None:
        a, b, c = (int(v) for v in self.tris[slot])
        for e in ((a, b), (b, c), (c, a)):
            if self.owner.get(e) == slot:
                del self.owner[e]
        self.alive[slot] = False
        self.free.append(slot)

    def _containing(self, p: np.ndarray) -> list[int]:
        slots = np.flatnonzero(self.alive[:self.size])
        t = self.tris[slots]
        xy = self.coords
        inside = np.ones(slots.size, dtype=bool)
        for i, j in ((0, 1), (1, 2), (2, 0)):
            a, b = xy[t[:, i]], xy[t[:, j]]
            u = (b[:, 0] - a[:, 0]) * (p[1] - a[:, 1])
            v = (b[:, 1] - a[:, 1]) * (p[0] - a[:, 0])
            inside &= (u - v) >= -PREDICATE_TOLERANCE * (np.abs(u) + np.abs(v))
        return slots[inside].tolist()

    def _in_circumcircle(self, slot: int, p: np.ndarray) -> bool:
        a, b, c = (self.coords[v] - p for v in self.tris[slot])
        a2, b2, c2 = a @ a, b @ b, c @ c
        t1 = a2 * (b[0] * c[1] - b[1] * c[0])
        t2 = b2 * (a[0] * c[1] - a[1] * c[0])
        t3 = c2 * (a[0] * b[1] - a[1] * b[0])
        det = t1 - t2 + t3
        return det > PREDICATE_TOLERANCE * (abs(t1) + abs(t2) + abs(t3))

    def insert(self, k: int) -> None:
        p = self.coords[k]
        seeds = self._containing(p)
        if not seeds:
            raise MeshError(f"point {k} could not be located during triangulation")
        cavity = set(seeds)
        stack = list(seeds)
        boundary: list[tuple[int, int]] = []
        while stack:
            t = stack.pop()
            verts = [int(v) for v in self.tris[t]]
            for e in range(3):
                a, b = verts[e], verts[(e + 1) % 3]
                nb = self.owner.get((b, a))
                if nb is not None and nb in cavity:
                    continue
                if nb is not None and self._in_circumcircle(nb, p):
                    cavity.add(nb)
                    stack.append(nb)
                    continue
                boundary.append((a, b))
        for t in sorted(cavity):
            self._remove(t)
        for a, b in boundary:
            self._add((a, b, k))

    def triangles(self) -> np.ndarray:
        t = self.tris[:self.size][self.alive[:self.size]]
        return t[np.all(t < self.n, axis=1)]


def delaunay_triangulate(points) -> "Mesh2D":
    """Delaunay triangulation of a 2D point set (Bowyer-Watson).

    Points are inserted in input order. Coordinates are scaled to the unit
    box for the predicates; the returned mesh uses the input coordinates.
    Triangles are rotated to start at their lowest node index and sorted.

    Raises:
        MeshError: Fewer than 3 points, duplicates within 1e-12, or all
            points collinear.
    """
    pts = np.asarray(points, dtype=float)
    _check_points_2d(pts)
    lo = pts.min(axis=0)
    scale = float((pts.max(axis=0) - lo).max())
    bw = _BowyerWatson((pts - lo) / scale)
    for k in range(pts.shape[0]):
        bw.insert(k)

    tris = bw.triangles()
    first = np.argmin(tris, axis=1)
    rolled = np.stack([tris[np.arange(len(tris)), (first + s) % 3] for s in range(3)], axis=1)
    rolled = rolled[np.lexsort((rolled[:, 2], rolled[:, 1], rolled[:, 0]))]
    log.debug("Delaunay: %d points, %d triangles", pts.shape[0], rolled.shape[0])
    return Mesh2D(nodes=pts, triangles=rolled)


def extend_hull(points, margin: float, spacing: float) -> np.ndarray:
    """Input points plus a ring at distance ``margin`` outside their convex hull.

    The ring is the boundary of the hull grown by a disc of radius margin
    (offset edges joined by circular arcs), sampled uniformly by arc length
    with round(ring length / spacing) points.
    """
    if not (margin > 0 and math.isfinite(margin)):
        raise MeshError(f"margin must be positive, got {margin}")
    if not (spacing > 0 and math.isfinite(spacing)):
        raise MeshError(f"spacing must be positive, got {spacing}")
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    try:
        hull = ConvexHull(pts)
    except QhullError as e:
        raise MeshError(f"cannot build the convex hull: {e}") from e

    verts = pts[hull.vertices]  # counter-clockwise
    edges = np.roll(verts, -1, axis=0) - verts
    lengths = np.hypot(edges[:, 0], edges[:, 1])
    normals = np.column_stack([edges[:, 1], -edges[:, 0]]) / lengths[:, None]
    angles = np.arctan2(normals[:, 1], normals[:, 0])
    turns = np.mod(np.roll(angles, -1) - angles, 2.0 * math.pi)

    # Pieces alternate: offset edge i, then arc around vertex i + 1.
    piece_len = np.column_stack([lengths, margin * turns]).ravel()
    starts = np.concatenate([[0.0], np.cumsum(piece_len)[:-1]])
    total = float(piece_len.sum())
    count = max(3, int(round(total / spacing)))
    s = np.arange(count) * (total / count)
    piece = np.clip(np.searchsorted(starts, s, side="right") - 1, 0, piece_len.size - 1)
    u = s - starts[piece]
    edge = piece // 2
    ring = np.empty((count, 2))

    on_edge = piece % 2 == 0
    e = edge[on_edge]
    ring[on_edge] = (
        verts[e] + margin * normals[e]
        + (u[on_edge] / lengths[e])[:, None] * edges[e]
    )
    on_arc = ~on_edge
    e = edge[on_arc]
    theta = angles[e] + u[on_arc] / margin
    corner = verts[(e + 1) % len(verts)]
    ring[on_arc] = corner + margin * np.column_stack([np.cos(theta), np.sin(theta)])

    log.debug("Hull ring: %d points, margin %g, spacing %g", count, margin, spacing)
    return np.vstack([pts, ring])


# ---------------------------------------------------------------------------
# Point location
# ---------------------------------------------------------------------------

def locate_many(mesh: Mesh1D | Mesh2D, points) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised location.

    Returns:
        (elements, coords): element index per point (-1 outside) and the
        offset within the interval (1D, shape (n,)) or barycentric
        coordinates (2D, shape (n, 3)). Points on shared edges go to the
        lowest-index element.
    """
    if mesh.dim == 1:
        return _locate_1d(mesh, points)
    return _locate_2d(mesh, points)


def locate(mesh: Mesh1D | Mesh2D, point) -> ElementLocation | None:
    """Element containing ``point`` or None when it lies beyond the mesh."""
    elements, coords = locate_many(mesh, np.atleast_1d(np.asarray(point, dtype=float))[None, :])
    if elements[0] < 0:
        return None
    local = np.atleast_1d(coords[0])
    return ElementLocation(element=int(elements[0]), coords=tuple(float(c) for c in local))


def _locate_1d(mesh: Mesh1D, points) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(points, dtype=float).reshape(-1)
    k = mesh.knots
    tol = LOCATE_TOLERANCE * (k[-1] - k[0])
    inside = (x >= k[0] - tol) & (x <= k[-1] + tol)
    elements = np.clip(np.searchsorted(k, x, side="left") - 1, 0, mesh.n_elements - 1)
    t = np.clip((x - k[elements]) / (k[elements + 1] - k[elements]), 0.0, 1.0)
    elements = np.where(inside, elements, -1)
    return elements, np.where(inside, t, 0.0)


def _locate_2d(mesh: Mesh2D, points) -> tuple[np.ndarray, np.ndarray]:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    P, T = mesh.nodes, mesh.triangles
    x1, y1 = P[T[:, 0], 0], P[T[:, 0], 1]
    x2, y2 = P[T[:, 1], 0], P[T[:, 1], 1]
    x3, y3 = P[T[:, 2], 0], P[T[:, 2], 1]
    det = (y2 - y3) * (x1 - x3) + (x3 - x2) * (y1 - y3)

    elements = np.full(pts.shape[0], -1, dtype=np.int64)
    bary = np.zeros((pts.shape[0], 3))
    chunk = max(1, 2_000_000 // T.shape[0])
    for start in range(0, pts.shape[0], chunk):
        px = pts[start:start + chunk, 0][:, None]
        py = pts[start:start + chunk, 1][:, None]
        l1 = ((y2 - y3) * (px - x3) + (x3 - x2) * (py - y3)) / det
        l2 = ((y3 - y1) * (px - x3) + (x1 - x3) * (py - y3)) / det
        l3 = 1.0 - l1 - l2
        hit = (l1 >= -LOCATE_TOLERANCE) & (l2 >= -LOCATE_TOLERANCE) & (l3 >= -LOCATE_TOLERANCE)
        found = hit.any(axis=1)
        first = np.argmax(hit, axis=1)
        rows = np.arange(first.size)
        lam = np.clip(np.column_stack([l1[rows, first], l2[rows, first], l3[rows, first]]), 0.0, 1.0)
        lam[lam <= BARYCENTRIC_SNAP] = 0.0
        lam /= np.where(found, lam.sum(axis=1), 1.0)[:, None]
        sl = slice(start, start + first.size)
        elements[sl] = np.where(found, first, -1)
        bary[sl] = np.where(found[:, None], lam, 0.0)
    return elements, bary


# ---------------------------------------------------------------------------
# Text format
# ---------------------------------------------------------------------------

def write_mesh(mesh: Mesh1D | Mesh2D, path: Path) -> None:
    """Write ``mesh1d``/``mesh2d`` text; floats use repr so reads are bit-exact."""
    if mesh.dim == 1:
        lines = ["mesh1d", f"nodes {mesh.n_nodes}"]
        lines += [repr(float(x)) for x in mesh.knots]
        lo, hi = mesh.interior_range
        lines.append(f"interior {float(lo)!r} {float(hi)!r} {float(mesh.extension)!r}")
    else:
        lines = ["mesh2d", f"nodes {mesh.n_nodes}"]
        lines += [f"{float(x)!r} {float(y)!r}" for x, y in mesh.nodes]
        lines.append(f"triangles {mesh.n_elements}")
        lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _count_line(path: Path, lines: list[tuple[int, str]], pos: int, keyword: str) -> int:
    if pos >= len(lines):
        raise MeshError(f"{path}: missing '{keyword}' line")
    lineno, text = lines[pos]
    parts = text.split()
    if len(parts) != 2 or parts[0] != keyword:
        raise MeshError(f"{path}:{lineno}: expected '{keyword} <count>', got {text!r}")
    try:
        count = int(parts[1])
    except ValueError:
        raise MeshError(f"{path}:{lineno}: invalid count {parts[1]!r}") from None
    if count < 0 or pos + 1 + count > len(lines):
        raise MeshError(f"{path}:{lineno}: {keyword} count {count} exceeds the file")
    return count


def _parse_rows(path: Path, rows: list[tuple[int, str]], width: int, kind: type) -> np.ndarray:
    out = []
    for lineno, text in rows:
        parts = text.split()
        if len(parts) != width:
            raise MeshError(f"{path}:{lineno}: expected {width} values, got {len(parts)}")
        try:
            out.append([kind(p) for p in parts])
        except ValueError:
            raise MeshError(f"{path}:{lineno}: cannot parse {text!r}") from None
    return np.asarray(out, dtype=float if kind is float else np.int64).reshape(-1, width)


def read_mesh(path: Path) -> Mesh1D | Mesh2D:
    """Read a mesh file; clockwise triangles are re-oriented."""
    path = Path(path)
    raw = path.read_text(encoding="utf-8").splitlines()
    lines = [(i + 1, t.strip()) for i, t in enumerate(raw) if t.strip()]
    if not lines:
        raise MeshError(f"{path}: empty mesh file")
    kind = lines[0][1]
    if kind not in ("mesh1d", "mesh2d"):
        raise MeshError(f"{path}:{lines[0][0]}: expected 'mesh1d' or 'mesh2d', got {kind!r}")

    n = _count_line(path, lines, 1, "nodes")
    width = 1 if kind == "mesh1d" else 2
    nodes = _parse_rows(path, lines[2:2 + n], width, float)
    pos = 2 + n

    if kind == "mesh1d":
        knots = nodes[:, 0]
        if n == 0:
            raise MeshError(f"{path}: mesh has no nodes")
        interior = (float(knots[0]), float(knots[-1]))
        ext = 0.0
        if pos < len(lines):
            lineno, text = lines[pos]
            parts = text.split()
            if len(parts) != 4 or parts[0] != "interior":
                raise MeshError(f"{path}:{lineno}: expected 'interior <lo> <hi> <extension>'")
            try:
                interior, ext = (float(parts[1]), float(parts[2])), float(parts[3])
            except ValueError:
                raise MeshError(f"{path}:{lineno}: cannot parse {text!r}") from None
            pos += 1
        if pos != len(lines):
            raise MeshError(f"{path}:{lines[pos][0]}: unexpected content after the mesh")
        return Mesh1D(knots=knots, interior_range=interior, extension=ext)

    m = _count_line(path, lines, pos, "triangles")
    tris = _parse_rows(path, lines[pos + 1:pos + 1 + m], 3, int)
    if pos + 1 + m != len(lines):
        raise MeshError(f"{path}:{lines[pos + 1 + m][0]}: unexpected content after the mesh")
    if tris.size and (tris.min() < 0 or tris.max() >= n):
        raise MeshError(f"{path}: triangle references a node outside 0..{n - 1}")
    p = nodes[tris] if tris.size else np.zeros((0, 3, 2))
    cross = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
    flip = cross < 0
    if flip.any():
        log.info("Re-orienting %d clockwise triangles from %s", int(flip.sum()), path)
        tris[flip] = tris[flip][:, [0, 2, 1]]
    return Mesh2D(nodes=nodes, triangles=tris)


def mesh_summary(mesh: Mesh1D | Mesh2D) -> str:
    if mesh.dim == 1:
        return f"mesh1d: {mesh.n_nodes} nodes, {mesh.n_elements} intervals"
    return f"mesh2d: {mesh.n_nodes} nodes, {mesh.n_elements} triangles"
