"""Triangle meshes and 2D polylines: data structures, OBJ/OFF I/O, per-face
geometry and structural validation."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MeshError",
    "MeshParseError",
    "TriangleMesh",
    "Polyline2D",
    "FaceGeometry",
    "ValidationReport",
    "face_geometry",
    "face_geometry_arrays",
    "load_mesh",
    "save_mesh",
    "validate",
]

# Coordinates are written with 17 significant digits, enough for a float64
# round trip.
_COORD_FMT = "{:.17g}"


class MeshError(Exception):
    """Invalid mesh data or I/O failure."""


class MeshParseError(MeshError):
    """Syntax error in a mesh file; carries the offending line number."""

    def __init__(self, path, line_no: int, message: str):
        self.path = path
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TriangleMesh:
    """Indexed triangle surface.

    Counter-clockwise face orientation defines the outward normal. Instances
    are immutable after construction and safe to share across threads.
    """

    vertices: np.ndarray  # (V, 3) float64
    faces: np.ndarray  # (F, 3) int64

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=np.float64)
        faces = np.asarray(self.faces, dtype=np.int64)
        if verts.ndim != 2 or verts.shape[1] != 3:
            raise MeshError(f"vertices must have shape (V, 3), got {verts.shape}")
        if faces.size == 0:
            faces = faces.reshape(0, 3)
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise MeshError(f"faces must have shape (F, 3), got {faces.shape}")
        if faces.size:
            if faces.min() < 0 or faces.max() >= len(verts):
                raise MeshError("face index out of range")
            repeated = (
                (faces[:, 0] == faces[:, 1])
                | (faces[:, 1] == faces[:, 2])
                | (faces[:, 0] == faces[:, 2])
            )
            if repeated.any():
                bad = int(np.nonzero(repeated)[0][0])
                raise MeshError(f"face {bad} repeats a vertex index")
        object.__setattr__(self, "vertices", _freeze(verts))
        object.__setattr__(self, "faces", _freeze(faces))

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    def with_vertices(self, vertices: np.ndarray) -> "TriangleMesh":
        """Same connectivity, new vertex positions."""
        return TriangleMesh(vertices, self.faces)

    def edges(self) -> np.ndarray:
        """Unique undirected edges, each row (a, b) with a < b."""
        e = np.concatenate(
            [self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]]
        )
        e = np.sort(e, axis=1)
        return np.unique(e, axis=0)

    def bounding_box_diagonal(self) -> float:
        if not len(self.vertices):
            return 0.0
        span = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        return float(np.linalg.norm(span))


@dataclass(frozen=True)
class Polyline2D:
    """Ordered 2D polyline, optionally closed into a contour."""

    vertices: np.ndarray  # (N, 2) float64
    closed: bool = True

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=np.float64)
        if verts.ndim != 2 or verts.shape[1] != 2:
            raise MeshError(f"polyline vertices must have shape (N, 2), got {verts.shape}")
        if self.closed and len(verts) < 3:
            raise MeshError("closed polyline needs at least 3 vertices")
        if len(verts) >= 2:
            nxt = np.roll(verts, -1, axis=0) if self.closed else verts[1:]
            cur = verts if self.closed else verts[:-1]
            if np.any(np.all(cur == nxt, axis=1)):
                raise MeshError("consecutive polyline vertices must be distinct")
        object.__setattr__(self, "vertices", _freeze(verts))

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    def segments(self) -> tuple[np.ndarray, np.ndarray]:
        """Segment start and end points; closed polylines wrap around."""
        v = self.vertices
        if self.closed:
            return v, np.roll(v, -1, axis=0)
        return v[:-1], v[1:]

    def segment_lengths(self) -> np.ndarray:
        a, b = self.segments()
        return np.linalg.norm(b - a, axis=1)

    def perimeter(self) -> float:
        return float(self.segment_lengths().sum())

    def with_vertices(self, vertices: np.ndarray) -> "Polyline2D":
        return Polyline2D(vertices, self.closed)


@dataclass(frozen=True)
class FaceGeometry:
    """Barycenter, unit normal and area of one triangle face."""

    barycenter: np.ndarray
    unit_normal: np.ndarray
    area: float
    degenerate: bool = False


def face_geometry_arrays(
    mesh: TriangleMesh,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized per-face geometry.

    Returns
    -------
    barycenters : (F, 3)
    unit_normals : (F, 3), zero rows for degenerate faces
    areas : (F,)
    degenerate : (F,) bool, True where the face has zero area
    """
    tri = mesh.vertices[mesh.faces]  # (F, 3, 3)
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    norm = np.linalg.norm(cross, axis=1)
    areas = 0.5 * norm
    degenerate = norm == 0.0
    normals = np.zeros_like(cross)
    ok = ~degenerate
    normals[ok] = cross[ok] / norm[ok, None]
    barycenters = tri.mean(axis=1)
    return barycenters, normals, areas, degenerate


def face_geometry(mesh: TriangleMesh, face_index: int) -> FaceGeometry:
    """Geometry of a single face; degenerate faces report zero area and a
    zero normal with the flag set."""
    if not 0 <= face_index < mesh.num_faces:
        raise IndexError(f"face index {face_index} out of range")
    tri = mesh.vertices[mesh.faces[face_index]]
    cross = np.cross(tri[1] - tri[0], tri[2] - tri[0])
    norm = float(np.linalg.norm(cross))
    if norm == 0.0:
        return FaceGeometry(tri.mean(axis=0), np.zeros(3), 0.0, degenerate=True)
    return FaceGeometry(tri.mean(axis=0), cross / norm, 0.5 * norm, degenerate=False)


# ---------------------------------------------------------------------------
# File I/O (ASCII OBJ and OFF)
# ---------------------------------------------------------------------------


def _fan_triangulate(indices: list[int]) -> list[tuple[int, int, int]]:
    return [(indices[0], indices[k], indices[k + 1]) for k in range(1, len(indices) - 1)]


def _load_obj(path) -> TriangleMesh:
    vertices: list[list[float]] = []
    faces: list[tuple[int, int, int]] = []
    with open(path, "r") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise MeshParseError(path, line_no, "vertex line needs 3 coordinates")
                try:
                    vertices.append([float(p) for p in parts[1:4]])
                except ValueError as exc:
                    raise MeshParseError(path, line_no, f"bad coordinate: {exc}") from None
            elif tag == "f":
                if len(parts) < 4:
                    raise MeshParseError(path, line_no, "face line needs at least 3 indices")
                idx = []
                for p in parts[1:]:
                    token = p.split("/")[0]  # drop texcoord/normal refs
                    try:
                        i = int(token)
                    except ValueError:
                        raise MeshParseError(path, line_no, f"bad face index {token!r}") from None
                    if i < 1:
                        raise MeshParseError(path, line_no, "OBJ face indices are 1-based")
                    idx.append(i - 1)
                faces.extend(_fan_triangulate(idx))
            # other tags (vn, vt, usemtl, ...) are ignored
    try:
        return TriangleMesh(np.array(vertices, dtype=np.float64).reshape(-1, 3), faces)
    except MeshError as exc:
        raise MeshParseError(path, 0, str(exc)) from None


def _load_off(path) -> TriangleMesh:
    with open(path, "r") as fh:
        lines = fh.readlines()

    tokens: list[tuple[int, str]] = []
    for line_no, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            tokens.append((line_no, line))
    if not tokens:
        raise MeshParseError(path, 1, "empty OFF file")

    pos = 0
    line_no, header = tokens[pos]
    if header.split()[0] != "OFF":
        raise MeshParseError(path, line_no, "missing OFF header")
    # counts may share the header line ("OFF 8 6 0") or follow it
    rest = header.split()[1:]
    if rest:
        counts = rest
    else:
        pos += 1
        if pos >= len(tokens):
            raise MeshParseError(path, line_no, "missing counts line")
        line_no, counts_line = tokens[pos]
        counts = counts_line.split()
    if len(counts) < 2:
        raise MeshParseError(path, line_no, "counts line needs vertex and face counts")
    try:
        nv, nf = int(counts[0]), int(counts[1])
    except ValueError:
        raise MeshParseError(path, line_no, "bad counts line") from None

    vertices = np.empty((nv, 3), dtype=np.float64)
    for i in range(nv):
        pos += 1
        if pos >= len(tokens):
            raise MeshParseError(path, len(lines), "unexpected end of file in vertex block")
        line_no, line = tokens[pos]
        parts = line.split()
        if len(parts) < 3:
            raise MeshParseError(path, line_no, "vertex line needs 3 coordinates")
        try:
            vertices[i] = [float(p) for p in parts[:3]]
        except ValueError as exc:
            raise MeshParseError(path, line_no, f"bad coordinate: {exc}") from None

    faces: list[tuple[int, int, int]] = []
    for _ in range(nf):
        pos += 1
        if pos >= len(tokens):
            raise MeshParseError(path, len(lines), "unexpected end of file in face block")
        line_no, line = tokens[pos]
        parts = line.split()
        try:
            k = int(parts[0])
            idx = [int(p) for p in parts[1 : 1 + k]]
        except (ValueError, IndexError):
            raise MeshParseError(path, line_no, "bad face line") from None
        if len(idx) != k or k < 3:
            raise MeshParseError(path, line_no, "face line count mismatch")
        if min(idx) < 0 or max(idx) >= nv:
            raise MeshParseError(path, line_no, "face index out of range")
        faces.extend(_fan_triangulate(idx))
    try:
        return TriangleMesh(vertices, faces)
    except MeshError as exc:
        raise MeshParseError(path, 0, str(exc)) from None


def _infer_format(path, fmt: str | None) -> str:
    if fmt is not None:
        fmt = fmt.lower()
        if fmt not in ("obj", "off"):
            raise MeshError(f"unsupported mesh format {fmt!r}")
        return fmt
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".obj":
        return "obj"
    if ext == ".off":
        return "off"
    raise MeshError(f"cannot infer mesh format from {path!r}; pass format='obj' or 'off'")


def load_mesh(path, format: str | None = None) -> TriangleMesh:
    """Load an ASCII OBJ or OFF mesh. Polygonal faces are fan-triangulated;
    vertex order is preserved from the file."""
    fmt = _infer_format(path, format)
    if not os.path.exists(path):
        raise MeshError(f"no such file: {path}")
    return _load_obj(path) if fmt == "obj" else _load_off(path)


def save_mesh(mesh: TriangleMesh, path, format: str | None = None) -> None:
    """Write a mesh as ASCII OBJ or OFF with full-precision coordinates so
    that load(save(m)) reproduces the vertices bit-for-bit."""
    fmt = _infer_format(path, format)
    try:
        with open(path, "w") as fh:
            if fmt == "obj":
                for v in mesh.vertices:
                    fh.write(
                        f"v {_COORD_FMT.format(v[0])} {_COORD_FMT.format(v[1])} "
                        f"{_COORD_FMT.format(v[2])}\n"
                    )
                for f in mesh.faces:
                    fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")
            else:
                fh.write("OFF\n")
                fh.write(f"{mesh.num_vertices} {mesh.num_faces} 0\n")
                for v in mesh.vertices:
                    fh.write(
                        f"{_COORD_FMT.format(v[0])} {_COORD_FMT.format(v[1])} "
                        f"{_COORD_FMT.format(v[2])}\n"
                    )
                for f in mesh.faces:
                    fh.write(f"3 {f[0]} {f[1]} {f[2]}\n")
    except OSError as exc:
        raise MeshError(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Structural validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ValidationReport:
    """Report-only structural diagnostics; never raises."""

    boundary_edges: list = field(default_factory=list)
    non_manifold_edges: list = field(default_factory=list)
    degenerate_faces: list = field(default_factory=list)
    inconsistent_edges: list = field(default_factory=list)

    @property
    def is_manifold(self) -> bool:
        return not self.non_manifold_edges

    @property
    def is_closed(self) -> bool:
        return not self.boundary_edges

    @property
    def is_consistently_oriented(self) -> bool:
        return not self.inconsistent_edges


def validate(mesh: TriangleMesh) -> ValidationReport:
    """Report boundary edges, non-manifold edges (>2 incident faces),
    degenerate faces, and orientation conflicts (an interior edge traversed
    in the same direction by both of its faces)."""
    directed: dict[tuple[int, int], int] = {}
    for f in mesh.faces:
        for a, b in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0])):
            key = (int(a), int(b))
            directed[key] = directed.get(key, 0) + 1

    undirected: dict[tuple[int, int], int] = {}
    for (a, b), cnt in directed.items():
        key = (a, b) if a < b else (b, a)
        undirected[key] = undirected.get(key, 0) + cnt

    boundary, non_manifold, inconsistent = [], [], []
    for (a, b), total in sorted(undirected.items()):
        if total == 1:
            boundary.append((a, b))
        elif total > 2:
            non_manifold.append((a, b))
        else:
            # exactly two incident faces: consistent orientation means the
            # edge appears once per direction
            if directed.get((a, b), 0) == 2 or directed.get((b, a), 0) == 2:
                inconsistent.append((a, b))

    _, _, _, degenerate = face_geometry_arrays(mesh)
    return ValidationReport(
        boundary_edges=boundary,
        non_manifold_edges=non_manifold,
        degenerate_faces=[int(i) for i in np.nonzero(degenerate)[0]],
        inconsistent_edges=inconsistent,
    )
