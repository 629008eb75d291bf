"""Self-intersection detection: AABB hierarchy over faces, an exact
triangle-triangle overlap predicate, and a 2D polyline crossing counter.

Conventions (deterministic, conservative): coplanar overlapping triangles
intersect; triangles touching at a single geometric point intersect; pairs
sharing any vertex index are adjacent and never counted.
"""

from __future__ import annotations

import numpy as np

from .mesh import Polyline2D, TriangleMesh

__all__ = [
    "triangles_intersect",
    "self_intersecting_faces",
    "self_intersection_ratio",
    "polyline_crossing_count",
]

_LEAF_SIZE = 4


# ---------------------------------------------------------------------------
# Triangle-triangle predicate
# ---------------------------------------------------------------------------


def _plane_segment_params(tri: np.ndarray, dists: np.ndarray, axis: int) -> tuple[float, float]:
    """Parametrize the intersection of a triangle with a plane along the
    common line, using coordinate `axis` as the line parameter.

    `dists` holds the signed distances of the triangle vertices to the other
    triangle's plane; the triangle is known to touch or straddle the plane.
    """
    pts = []
    for i in range(3):
        if dists[i] == 0.0:
            pts.append(tri[i, axis])
        j = (i + 1) % 3
        if dists[i] * dists[j] < 0.0:
            t = dists[i] / (dists[i] - dists[j])
            pts.append(tri[i, axis] + t * (tri[j, axis] - tri[i, axis]))
    lo = min(pts)
    hi = max(pts)
    return lo, hi


def _orient2d(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _on_segment(a, b, c) -> bool:
    """c collinear with a-b: does c lie within the segment's bounding box?"""
    return (
        min(a[0], b[0]) <= c[0] <= max(a[0], b[0])
        and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])
    )


def segments_intersect_2d(p1, p2, q1, q2) -> bool:
    """Closed 2D segment intersection test (touching counts)."""
    d1 = _orient2d(q1, q2, p1)
    d2 = _orient2d(q1, q2, p2)
    d3 = _orient2d(p1, p2, q1)
    d4 = _orient2d(p1, p2, q2)
    if ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and (
        (d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)
    ):
        return True
    if d1 == 0 and _on_segment(q1, q2, p1):
        return True
    if d2 == 0 and _on_segment(q1, q2, p2):
        return True
    if d3 == 0 and _on_segment(p1, p2, q1):
        return True
    if d4 == 0 and _on_segment(p1, p2, q2):
        return True
    return False


def _point_in_triangle_2d(p, tri) -> bool:
    d1 = _orient2d(tri[0], tri[1], p)
    d2 = _orient2d(tri[1], tri[2], p)
    d3 = _orient2d(tri[2], tri[0], p)
    has_neg = (d1 < 0) or (d2 < 0) or (d3 < 0)
    has_pos = (d1 > 0) or (d2 > 0) or (d3 > 0)
    return not (has_neg and has_pos)


def _coplanar_overlap(t1: np.ndarray, t2: np.ndarray, normal: np.ndarray) -> bool:
    axis = int(np.argmax(np.abs(normal)))
    keep = [k for k in range(3) if k != axis]
    a = t1[:, keep]
    b = t2[:, keep]
    for i in range(3):
        for j in range(3):
            if segments_intersect_2d(a[i], a[(i + 1) % 3], b[j], b[(j + 1) % 3]):
                return True
    if _point_in_triangle_2d(a[0], b) or _point_in_triangle_2d(b[0], a):
        return True
    return False


def triangles_intersect(t1: np.ndarray, t2: np.ndarray) -> bool:
    """Exact (up to float arithmetic) triangle-triangle overlap test.

    Plane side classification followed by interval overlap on the common
    line; coplanar pairs fall back to a 2D test. Closed semantics: touching
    configurations count as intersecting.
    """
    t1 = np.asarray(t1, dtype=np.float64)
    t2 = np.asarray(t2, dtype=np.float64)

    n2 = np.cross(t2[1] - t2[0], t2[2] - t2[0])
    d1 = (t1 - t2[0]) @ n2
    if np.all(d1 > 0.0) or np.all(d1 < 0.0):
        return False

    n1 = np.cross(t1[1] - t1[0], t1[2] - t1[0])
    d2 = (t2 - t1[0]) @ n1
    if np.all(d2 > 0.0) or np.all(d2 < 0.0):
        return False

    if np.all(d1 == 0.0):
        return _coplanar_overlap(t1, t2, n2)

    line_dir = np.cross(n1, n2)
    axis = int(np.argmax(np.abs(line_dir)))
    lo1, hi1 = _plane_segment_params(t1, d1, axis)
    lo2, hi2 = _plane_segment_params(t2, d2, axis)
    return max(lo1, lo2) <= min(hi1, hi2)


# ---------------------------------------------------------------------------
# AABB hierarchy (median split over face boxes, leaf size 4)
# ---------------------------------------------------------------------------


class _AABBTree:
    def __init__(self, lo: np.ndarray, hi: np.ndarray):
        self._box_lo = lo
        self._box_hi = hi
        # node arrays filled by _build: a leaf stores a slice of self.order
        self.node_lo: list[np.ndarray] = []
        self.node_hi: list[np.ndarray] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.start: list[int] = []
        self.end: list[int] = []
        self.order = np.arange(len(lo))
        centroids = 0.5 * (lo + hi)
        self._build(0, len(lo), centroids)

    def _push(self, lo, hi) -> int:
        self.node_lo.append(lo)
        self.node_hi.append(hi)
        self.left.append(-1)
        self.right.append(-1)
        self.start.append(-1)
        self.end.append(-1)
        return len(self.node_lo) - 1

    def _build(self, start: int, end: int, centroids: np.ndarray) -> int:
        idx = self.order[start:end]
        lo = self._box_lo[idx].min(axis=0)
        hi = self._box_hi[idx].max(axis=0)
        node = self._push(lo, hi)
        if end - start <= _LEAF_SIZE:
            self.start[node] = start
            self.end[node] = end
            return node
        axis = int(np.argmax(hi - lo))
        local = np.argsort(centroids[idx, axis], kind="stable")
        self.order[start:end] = idx[local]
        mid = start + (end - start) // 2
        self.left[node] = self._build(start, mid, centroids)
        self.right[node] = self._build(mid, end, centroids)
        return node

    def query_box(self, lo: np.ndarray, hi: np.ndarray) -> list[int]:
        """Indices whose boxes overlap [lo, hi] (closed on all sides)."""
        out: list[int] = []
        stack = [0]
        while stack:
            node = stack.pop()
            if np.any(self.node_lo[node] > hi) or np.any(self.node_hi[node] < lo):
                continue
            if self.left[node] < 0:
                for k in self.order[self.start[node] : self.end[node]]:
                    if not (np.any(self._box_lo[k] > hi) or np.any(self._box_hi[k] < lo)):
                        out.append(int(k))
            else:
                stack.append(self.left[node])
                stack.append(self.right[node])
        return out


def self_intersecting_faces(mesh: TriangleMesh) -> np.ndarray:
    """Sorted indices of faces intersecting at least one non-adjacent face.

    Candidate pairs come from an AABB hierarchy; faces sharing any vertex
    index are excluded; degenerate faces never participate.
    """
    tri = mesh.vertices[mesh.faces]
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    alive = np.nonzero(np.linalg.norm(cross, axis=1) > 0.0)[0]
    if len(alive) < 2:
        return np.empty(0, dtype=np.int64)

    boxes_lo = tri[alive].min(axis=1)
    boxes_hi = tri[alive].max(axis=1)
    tree = _AABBTree(boxes_lo, boxes_hi)

    face_sets = [set(map(int, mesh.faces[f])) for f in alive]
    hit: set[int] = set()
    for a in range(len(alive)):
        fa = int(alive[a])
        for b in tree.query_box(boxes_lo[a], boxes_hi[a]):
            if b <= a:
                continue
            if face_sets[a] & face_sets[b]:
                continue
            fb = int(alive[b])
            if fa in hit and fb in hit:
                continue
            if triangles_intersect(tri[fa], tri[fb]):
                hit.add(fa)
                hit.add(fb)
    return np.array(sorted(hit), dtype=np.int64)


def self_intersection_ratio(mesh: TriangleMesh) -> float:
    """Fraction of faces intersecting at least one non-adjacent face."""
    if mesh.num_faces == 0:
        return 0.0
    return len(self_intersecting_faces(mesh)) / mesh.num_faces


# ---------------------------------------------------------------------------
# 2D polyline crossings
# ---------------------------------------------------------------------------


def contour_crossing_count(points: np.ndarray, closed: bool = True) -> int:
    """Number of non-adjacent segment pairs of a vertex chain that intersect.

    Adjacent segments (sharing an endpoint, including the closing wrap) are
    skipped.
    """
    points = np.asarray(points, dtype=np.float64)
    if closed:
        a = points
        b = np.roll(points, -1, axis=0)
    else:
        a = points[:-1]
        b = points[1:]
    n = len(a)
    count = 0
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1:
                continue
            if closed and i == 0 and j == n - 1:
                continue
            if segments_intersect_2d(a[i], b[i], a[j], b[j]):
                count += 1
    return count


def polyline_crossing_count(poly: Polyline2D) -> int:
    """Crossing count of a polyline's segments (see contour_crossing_count)."""
    return contour_crossing_count(poly.vertices, poly.closed)
