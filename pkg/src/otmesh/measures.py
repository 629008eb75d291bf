"""Shapes as probability measures: i.i.d. surface samples and oriented
varifolds, plus the reverse-mode map from varifold supports back to mesh
vertices."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .mesh import MeshError, Polyline2D, TriangleMesh, face_geometry_arrays

__all__ = [
    "SamplerState",
    "derive_seed",
    "DiscreteMeasure",
    "SurfaceSamples",
    "PolylineSamples",
    "sample_mesh",
    "draw_surface_samples",
    "mesh_to_varifold",
    "varifold_vertex_grad",
    "sample_polyline",
    "draw_polyline_samples",
    "save_measure_csv",
    "load_measure_csv",
]

_WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class SamplerState:
    """Reproducible RNG handle: identical (seed, stream) gives an identical
    sample sequence. Parallel consumers must take distinct streams."""

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence((self.seed, self.stream))))

    def substream(self, offset: int) -> "SamplerState":
        return SamplerState(self.seed, self.stream + offset)


def derive_seed(seed: int, *tags: int) -> int:
    """Stable 64-bit sub-seed from a master seed and integer tags."""
    state = np.random.SeedSequence((seed, *tags)).generate_state(2, dtype=np.uint32)
    return int(state[0]) << 32 | int(state[1])


@dataclass(frozen=True)
class DiscreteMeasure:
    """Weighted support points in R^d. Weights are strictly positive and sum
    to one; zero-weight supports are pruned at construction."""

    supports: np.ndarray  # (n, d) float64
    weights: np.ndarray  # (n,) float64

    def __post_init__(self):
        supports = np.ascontiguousarray(np.asarray(self.supports, dtype=np.float64))
        weights = np.ascontiguousarray(np.asarray(self.weights, dtype=np.float64))
        if supports.ndim != 2:
            raise ValueError(f"supports must be 2D, got shape {supports.shape}")
        if weights.shape != (len(supports),):
            raise ValueError("weights must be one scalar per support")
        if not np.all(np.isfinite(supports)) or not np.all(np.isfinite(weights)):
            raise ValueError("supports and weights must be finite")
        if np.any(weights < 0.0):
            raise ValueError("weights must be nonnegative")
        keep = weights > 0.0
        if not keep.all():
            supports = supports[keep]
            weights = weights[keep]
        if len(weights) == 0:
            raise ValueError("measure needs at least one positive-weight support")
        if abs(weights.sum() - 1.0) > _WEIGHT_TOL:
            raise ValueError(f"weights must sum to 1 within {_WEIGHT_TOL}, got {weights.sum()!r}")
        supports.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "supports", supports)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_points(cls, points: np.ndarray) -> "DiscreteMeasure":
        """Uniform-weight measure on the given points."""
        points = np.asarray(points, dtype=np.float64)
        n = len(points)
        return cls(points, np.full(n, 1.0 / n))

    @property
    def dim(self) -> int:
        return self.supports.shape[1]

    def __len__(self) -> int:
        return len(self.supports)

    def translated(self, offset: np.ndarray) -> "DiscreteMeasure":
        return DiscreteMeasure(self.supports + np.asarray(offset, dtype=np.float64), self.weights)


def save_measure_csv(measure: DiscreteMeasure, path) -> None:
    """Write `w,x0,...,x{d-1}` rows at full precision."""
    d = measure.dim
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["w"] + [f"x{k}" for k in range(d)])
        for w, x in zip(measure.weights, measure.supports):
            writer.writerow([f"{w:.17g}"] + [f"{v:.17g}" for v in x])


def load_measure_csv(path) -> DiscreteMeasure:
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "w":
            raise ValueError(f"{path}: expected measure CSV header starting with 'w'")
        rows = [[float(v) for v in row] for row in reader if row]
    data = np.asarray(rows, dtype=np.float64)
    return DiscreteMeasure(data[:, 1:], data[:, 0])


# ---------------------------------------------------------------------------
# Surface sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SurfaceSamples:
    """Provenance of mesh surface samples: points with their generating face
    and barycentric coordinates, for differentiable re-evaluation."""

    points: np.ndarray  # (m, 3)
    face_indices: np.ndarray  # (m,)
    barycentric: np.ndarray  # (m, 3)

    def reapply(self, mesh: TriangleMesh) -> np.ndarray:
        """Re-evaluate the fixed barycentric map on (possibly moved) vertices."""
        tri = mesh.vertices[mesh.faces[self.face_indices]]
        return np.einsum("mk,mkd->md", self.barycentric, tri)

    def scatter_point_grad(self, mesh: TriangleMesh, point_grad: np.ndarray) -> np.ndarray:
        """Push per-point gradients back to mesh vertices through the fixed
        barycentric map."""
        grad = np.zeros_like(mesh.vertices)
        contrib = self.barycentric[:, :, None] * point_grad[:, None, :]
        np.add.at(grad, mesh.faces[self.face_indices], contrib)
        return grad


def _uniform_barycentric(rng: np.random.Generator, m: int) -> np.ndarray:
    # reflection method: exactly uniform on the simplex
    u = rng.random(m)
    v = rng.random(m)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    return np.column_stack([u, v, 1.0 - u - v])


def draw_surface_samples(mesh: TriangleMesh, m: int, state: SamplerState) -> SurfaceSamples:
    """Area-weighted face selection (inverse CDF over the area prefix sum),
    then uniform barycentric placement within each face."""
    if m < 1:
        raise ValueError("sample count must be positive")
    _, _, areas, degenerate = face_geometry_arrays(mesh)
    ok = np.nonzero(~degenerate)[0]
    if len(ok) == 0:
        raise MeshError("mesh has no non-degenerate face to sample")
    cum = np.cumsum(areas[ok])
    total = cum[-1]
    rng = state.generator()
    picks = np.searchsorted(cum, rng.random(m) * total, side="right")
    picks = np.minimum(picks, len(ok) - 1)
    faces = ok[picks]
    bary = _uniform_barycentric(rng, m)
    tri = mesh.vertices[mesh.faces[faces]]
    points = np.einsum("mk,mkd->md", bary, tri)
    return SurfaceSamples(points, faces, bary)


def sample_mesh(mesh: TriangleMesh, m: int, state: SamplerState) -> DiscreteMeasure:
    """Empirical measure of m i.i.d. area-uniform surface points (d=3,
    uniform weights 1/m)."""
    return DiscreteMeasure.from_points(draw_surface_samples(mesh, m, state).points)


# ---------------------------------------------------------------------------
# Oriented varifold
# ---------------------------------------------------------------------------


def mesh_to_varifold(mesh: TriangleMesh, normal_weight: float = 1.0) -> DiscreteMeasure:
    """One support per non-degenerate face: (barycenter, normal_weight * unit
    normal) in R^6, weighted by relative face area."""
    if normal_weight < 0.0:
        raise ValueError("normal_weight must be nonnegative")
    barycenters, normals, areas, degenerate = face_geometry_arrays(mesh)
    ok = ~degenerate
    if not ok.any():
        raise MeshError("mesh has no non-degenerate face")
    supports = np.concatenate([barycenters[ok], normal_weight * normals[ok]], axis=1)
    weights = areas[ok] / areas[ok].sum()
    return DiscreteMeasure(supports, weights)


def varifold_vertex_grad(
    mesh: TriangleMesh,
    support_grad: np.ndarray,
    weight_grad: np.ndarray | None = None,
    normal_weight: float = 1.0,
) -> np.ndarray:
    """Reverse-mode map from varifold gradients to vertex gradients.

    `support_grad` has one row per *kept* (non-degenerate) face, matching the
    support order of :func:`mesh_to_varifold`; `weight_grad` likewise. All
    three dependency paths are included: barycenter, unit normal (via the
    cross-product normalization Jacobian), and area through the weight
    normalization.
    """
    tri = mesh.vertices[mesh.faces]
    e1 = tri[:, 1] - tri[:, 0]
    e2 = tri[:, 2] - tri[:, 0]
    cross = np.cross(e1, e2)
    norm = np.linalg.norm(cross, axis=1)
    ok = np.nonzero(norm > 0.0)[0]

    support_grad = np.asarray(support_grad, dtype=np.float64)
    if support_grad.shape != (len(ok), 6):
        raise ValueError(f"support_grad must have shape ({len(ok)}, 6), got {support_grad.shape}")

    g_bary = support_grad[:, :3]
    g_normal = normal_weight * support_grad[:, 3:]

    cross_k = cross[ok]
    norm_k = norm[ok]
    n_hat = cross_k / norm_k[:, None]

    # unit-normal pullback: dn/dc = (I - n n^T) / |c|
    g_cross = (g_normal - n_hat * np.einsum("fd,fd->f", g_normal, n_hat)[:, None]) / norm_k[:, None]

    if weight_grad is not None:
        weight_grad = np.asarray(weight_grad, dtype=np.float64)
        if weight_grad.shape != (len(ok),):
            raise ValueError(f"weight_grad must have shape ({len(ok)},)")
        areas = 0.5 * norm_k
        total = areas.sum()
        w = areas / total
        # w_f = A_f / sum(A): dL/dA_g = (g_g - sum_f g_f w_f) / total
        g_area = (weight_grad - np.dot(weight_grad, w)) / total
        # dA/dc = c / (2|c|) = n_hat / 2
        g_cross = g_cross + 0.5 * g_area[:, None] * n_hat

    # cross-product pullbacks: dc = (x3-x2) x dx1 = -e2 x dx2 ... as skew maps;
    # the adjoint of v -> a x v is v -> -a x v = v x a
    e1k = e1[ok]
    e2k = e2[ok]
    g_x1 = np.cross(g_cross, e2k - e1k)
    g_x2 = np.cross(e2k, g_cross)
    g_x3 = np.cross(g_cross, e1k)

    grad = np.zeros_like(mesh.vertices)
    faces_k = mesh.faces[ok]
    per_vertex = np.stack([g_x1, g_x2, g_x3], axis=1) + g_bary[:, None, :] / 3.0
    np.add.at(grad, faces_k, per_vertex)
    return grad


# ---------------------------------------------------------------------------
# Polyline sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PolylineSamples:
    """Provenance of polyline samples: segment index and within-segment
    offset t in [0, 1)."""

    points: np.ndarray  # (m, 2)
    segment_indices: np.ndarray  # (m,)
    offsets: np.ndarray  # (m,)

    def reapply(self, poly: Polyline2D) -> np.ndarray:
        a, b = poly.segments()
        t = self.offsets[:, None]
        return (1.0 - t) * a[self.segment_indices] + t * b[self.segment_indices]

    def scatter_point_grad(self, poly: Polyline2D, point_grad: np.ndarray) -> np.ndarray:
        grad = np.zeros_like(poly.vertices)
        n = len(poly.vertices)
        start = self.segment_indices
        end = (start + 1) % n if poly.closed else start + 1
        np.add.at(grad, start, (1.0 - self.offsets)[:, None] * point_grad)
        np.add.at(grad, end, self.offsets[:, None] * point_grad)
        return grad


def draw_polyline_samples(
    poly: Polyline2D,
    m: int,
    state: SamplerState | None = None,
    stratified: bool = False,
) -> PolylineSamples:
    """Arc-length-uniform samples on a closed polyline.

    With `stratified=True` the arc positions are m equal offsets (plus a
    common random phase when a state is given, none otherwise), so sampling a
    regular m-gon with m points and zero phase returns exactly its vertices.
    """
    if not poly.closed:
        raise MeshError("polyline sampling requires a closed polyline")
    if m < 1:
        raise ValueError("sample count must be positive")
    lengths = poly.segment_lengths()
    total = lengths.sum()
    if total <= 0.0:
        raise MeshError("polyline has zero total length")
    cum = np.cumsum(lengths)
    if stratified:
        phase = 0.0 if state is None else float(state.generator().random())
        arcs = (np.arange(m) + phase) / m * total
    else:
        if state is None:
            raise ValueError("i.i.d. polyline sampling needs a SamplerState")
        arcs = state.generator().random(m) * total
    seg = np.minimum(np.searchsorted(cum, arcs, side="right"), len(lengths) - 1)
    prev = np.concatenate([[0.0], cum[:-1]])
    t = (arcs - prev[seg]) / lengths[seg]
    a, b = poly.segments()
    points = (1.0 - t)[:, None] * a[seg] + t[:, None] * b[seg]
    return PolylineSamples(points, seg, t)


def sample_polyline(
    poly: Polyline2D,
    m: int,
    state: SamplerState | None = None,
    stratified: bool = False,
) -> DiscreteMeasure:
    """Uniform-weight measure of m arc-length-uniform polyline points (d=2)."""
    return DiscreteMeasure.from_points(draw_polyline_samples(poly, m, state, stratified).points)
