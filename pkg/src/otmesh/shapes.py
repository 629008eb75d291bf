"""Synthetic shapes for experiments and tests: contours for the 2D toy
problem and parametric meshes for rate/timing studies."""

from __future__ import annotations

import numpy as np

from .mesh import Polyline2D, TriangleMesh

__all__ = [
    "circle_polyline",
    "star_polyline",
    "tetrahedron",
    "cube_mesh",
    "uv_sphere",
    "sphere_with_face_count",
]


def circle_polyline(n: int, radius: float = 1.0, center=(0.0, 0.0)) -> Polyline2D:
    angles = 2.0 * np.pi * np.arange(n) / n
    pts = np.column_stack([np.cos(angles), np.sin(angles)]) * radius + np.asarray(center)
    return Polyline2D(pts, closed=True)


def star_polyline(
    points: int = 5,
    r_outer: float = 1.3,
    r_inner: float = 0.45,
    center=(0.0, 0.0),
    phase: float = 0.5 * np.pi,
) -> Polyline2D:
    """Star-shaped polygon with sharp tips and deep concavities; the target
    contour of the 2D deformation toy problem."""
    angles = 2.0 * np.pi * np.arange(2 * points) / (2 * points) + phase
    radii = np.where(np.arange(2 * points) % 2 == 0, r_outer, r_inner)
    pts = np.column_stack([radii * np.cos(angles), radii * np.sin(angles)]) + np.asarray(center)
    return Polyline2D(pts, closed=True)


def tetrahedron(scale: float = 1.0) -> TriangleMesh:
    v = scale * np.array(
        [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]]
    )
    f = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
    return TriangleMesh(v, f)


def cube_mesh(side: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    h = side / 2.0
    v = np.array(
        [
            [-h, -h, -h],
            [h, -h, -h],
            [h, h, -h],
            [-h, h, -h],
            [-h, -h, h],
            [h, -h, h],
            [h, h, h],
            [-h, h, h],
        ]
    ) + np.asarray(center)
    f = np.array(
        [
            [0, 2, 1],
            [0, 3, 2],
            [4, 5, 6],
            [4, 6, 7],
            [0, 1, 5],
            [0, 5, 4],
            [1, 2, 6],
            [1, 6, 5],
            [2, 3, 7],
            [2, 7, 6],
            [3, 0, 4],
            [3, 4, 7],
        ]
    )
    return TriangleMesh(v, f)


def uv_sphere(rings: int, segments: int, radius: float = 1.0) -> TriangleMesh:
    """Latitude/longitude sphere with 2 * segments * (rings - 1) faces."""
    if rings < 2 or segments < 3:
        raise ValueError("need rings >= 2 and segments >= 3")
    verts = [np.array([0.0, 0.0, radius])]
    for i in range(1, rings):
        theta = np.pi * i / rings
        for j in range(segments):
            phi = 2.0 * np.pi * j / segments
            verts.append(
                radius
                * np.array(
                    [np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)]
                )
            )
    verts.append(np.array([0.0, 0.0, -radius]))
    vertices = np.array(verts)
    south = len(vertices) - 1

    def ring_vertex(i: int, j: int) -> int:
        return 1 + (i - 1) * segments + (j % segments)

    faces = []
    for j in range(segments):
        faces.append([0, ring_vertex(1, j), ring_vertex(1, j + 1)])
    for i in range(1, rings - 1):
        for j in range(segments):
            a = ring_vertex(i, j)
            b = ring_vertex(i, j + 1)
            c = ring_vertex(i + 1, j)
            d = ring_vertex(i + 1, j + 1)
            faces.append([a, c, d])
            faces.append([a, d, b])
    for j in range(segments):
        faces.append([south, ring_vertex(rings - 1, j + 1), ring_vertex(rings - 1, j)])
    return TriangleMesh(vertices, np.array(faces))


def sphere_with_face_count(target_faces: int, radius: float = 1.0) -> TriangleMesh:
    """UV sphere whose face count approximates the target (faces come in
    multiples of 2 * segments)."""
    segments = max(3, int(round(np.sqrt(target_faces / 2.0))))
    rings = max(2, int(round(target_faces / (2.0 * segments))) + 1)
    return uv_sphere(rings, segments, radius)
