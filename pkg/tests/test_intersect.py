import itertools

import numpy as np
import pytest

from otmesh.intersect import (
    _point_in_triangle_2d,
    contour_crossing_count,
    polyline_crossing_count,
    segments_intersect_2d,
    self_intersecting_faces,
    self_intersection_ratio,
    triangles_intersect,
)
from otmesh.mesh import Polyline2D, TriangleMesh
from otmesh.shapes import tetrahedron, uv_sphere


# --- independent brute-force oracle: segment/plane (segment-triangle) tests


def _seg_tri(p0, p1, tri):
    e1 = tri[1] - tri[0]
    e2 = tri[2] - tri[0]
    d = p1 - p0
    n = np.cross(e1, e2)
    denom = np.dot(n, d)
    if denom == 0.0:
        if np.dot(n, p0 - tri[0]) != 0.0:
            return False
        axis = int(np.argmax(np.abs(n)))
        keep = [k for k in range(3) if k != axis]
        a, b = p0[keep], p1[keep]
        t2 = tri[:, keep]
        for i in range(3):
            if segments_intersect_2d(a, b, t2[i], t2[(i + 1) % 3]):
                return True
        return _point_in_triangle_2d(a, t2)
    t = np.dot(n, tri[0] - p0) / denom
    if t < 0.0 or t > 1.0:
        return False
    x = p0 + t * d

    def same_side(a, b, c, p):
        return np.dot(np.cross(b - a, p - a), np.cross(b - a, c - a)) >= 0.0

    return (
        same_side(tri[0], tri[1], tri[2], x)
        and same_side(tri[1], tri[2], tri[0], x)
        and same_side(tri[2], tri[0], tri[1], x)
    )


def oracle_triangles_intersect(t1, t2):
    for i in range(3):
        if _seg_tri(t1[i], t1[(i + 1) % 3], t2) or _seg_tri(t2[i], t2[(i + 1) % 3], t1):
            return True
    n1 = np.cross(t1[1] - t1[0], t1[2] - t1[0])
    if all(np.dot(n1, q - t1[0]) == 0.0 for q in t2):
        axis = int(np.argmax(np.abs(n1)))
        keep = [k for k in range(3) if k != axis]
        return _point_in_triangle_2d(t2[0][keep], t1[:, keep]) or _point_in_triangle_2d(
            t1[0][keep], t2[:, keep]
        )
    return False


def test_predicate_matches_brute_oracle(rng):
    mismatches = 0
    for _ in range(500):
        t1 = rng.normal(size=(3, 3))
        t2 = rng.normal(size=(3, 3)) * 0.8 + 0.3 * rng.normal(size=3)
        if triangles_intersect(t1, t2) != oracle_triangles_intersect(t1, t2):
            mismatches += 1
    assert mismatches == 0


def test_tetrahedron_si_zero():
    assert self_intersection_ratio(tetrahedron()) == 0.0


def test_disjoint_parallel_triangles():
    verts = np.array(
        [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [0, 1, 1]], float
    )
    mesh = TriangleMesh(verts, [[0, 1, 2], [3, 4, 5]])
    assert self_intersection_ratio(mesh) == 0.0


def test_piercing_pair_ratio_one():
    verts = np.array(
        [[0, 0, 0], [2, 0, 0], [0, 2, 0], [0.5, 0.5, -1], [1.5, 0.5, 1], [0.5, 1.5, 1]],
        float,
    )
    mesh = TriangleMesh(verts, [[0, 1, 2], [3, 4, 5]])
    assert self_intersection_ratio(mesh) == 1.0
    # verified against the independent oracle
    tri = mesh.vertices[mesh.faces]
    assert oracle_triangles_intersect(tri[0], tri[1])


def test_coplanar_overlap_counts():
    verts = np.array(
        [[0, 0, 0], [2, 0, 0], [0, 2, 0], [0.5, 0.5, 0], [2.5, 0.5, 0], [0.5, 2.5, 0]],
        float,
    )
    mesh = TriangleMesh(verts, [[0, 1, 2], [3, 4, 5]])
    assert self_intersection_ratio(mesh) == 1.0


def test_coplanar_containment_counts():
    verts = np.array(
        [[0, 0, 0], [4, 0, 0], [0, 4, 0], [1, 1, 0], [2, 1, 0], [1, 2, 0]], float
    )
    mesh = TriangleMesh(verts, [[0, 1, 2], [3, 4, 5]])
    assert self_intersection_ratio(mesh) == 1.0


def test_single_point_touch_counts():
    verts = np.array(
        [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 0], [-1, 0, 1], [0, -1, 1]], float
    )
    mesh = TriangleMesh(verts, [[0, 1, 2], [3, 4, 5]])
    assert self_intersection_ratio(mesh) == 1.0


def test_adjacent_faces_never_counted():
    # two faces sharing an edge meet geometrically but are excluded
    verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, -1, 0.2]], float)
    mesh = TriangleMesh(verts, [[0, 1, 2], [1, 0, 3]])
    assert self_intersection_ratio(mesh) == 0.0


def test_degenerate_faces_ignored():
    verts = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [0, 1, 0]], float)
    mesh = TriangleMesh(verts, [[0, 1, 2], [0, 1, 3]])  # first face is collinear
    assert self_intersection_ratio(mesh) == 0.0


def test_bvh_equals_brute_on_crumpled_sphere(rng):
    mesh = uv_sphere(10, 10)  # 180 faces, within the exhaustive budget
    mesh = mesh.with_vertices(mesh.vertices + 0.35 * rng.normal(size=mesh.vertices.shape))
    got = set(self_intersecting_faces(mesh).tolist())

    tri = mesh.vertices[mesh.faces]
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    alive = np.linalg.norm(cross, axis=1) > 0.0
    face_sets = [set(map(int, f)) for f in mesh.faces]
    want = set()
    for i, j in itertools.combinations(range(mesh.num_faces), 2):
        if not (alive[i] and alive[j]) or (face_sets[i] & face_sets[j]):
            continue
        if triangles_intersect(tri[i], tri[j]):
            want.add(i)
            want.add(j)
    assert got == want
    assert len(got) > 0  # the crumpling actually produced intersections


def test_crossing_counts():
    square = Polyline2D(np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float))
    assert polyline_crossing_count(square) == 0
    bowtie = np.array([[0, 0], [1, 1], [1, 0], [0, 1]], float)
    assert contour_crossing_count(bowtie, closed=True) == 1


def test_open_chain_crossings():
    zigzag = np.array([[0, 0], [2, 0], [1, 1], [1, -1]], float)
    assert contour_crossing_count(zigzag, closed=False) == 1
