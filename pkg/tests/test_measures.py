import numpy as np
import pytest

from otmesh.measures import (
    DiscreteMeasure,
    SamplerState,
    derive_seed,
    draw_polyline_samples,
    draw_surface_samples,
    load_measure_csv,
    mesh_to_varifold,
    sample_mesh,
    sample_polyline,
    save_measure_csv,
    varifold_vertex_grad,
)
from otmesh.mesh import MeshError, Polyline2D, TriangleMesh, face_geometry_arrays
from otmesh.shapes import circle_polyline, uv_sphere
from otmesh.transport import sample_directions, sliced_wasserstein

from conftest import rel_err


def unit_right_triangle():
    return TriangleMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], float), [[0, 1, 2]])


# ---------------------------------------------------------------------------
# DiscreteMeasure
# ---------------------------------------------------------------------------


def test_weights_must_sum_to_one():
    with pytest.raises(ValueError):
        DiscreteMeasure(np.zeros((2, 3)), np.array([0.5, 0.6]))


def test_zero_weights_pruned():
    m = DiscreteMeasure(np.arange(9, dtype=float).reshape(3, 3), np.array([0.5, 0.0, 0.5]))
    assert len(m) == 2
    assert np.all(m.weights > 0)


def test_negative_weight_rejected():
    with pytest.raises(ValueError):
        DiscreteMeasure(np.zeros((2, 2)), np.array([1.5, -0.5]))


def test_csv_roundtrip(tmp_path, rng):
    pts = rng.normal(size=(17, 6))
    w = rng.random(17)
    w /= w.sum()
    m = DiscreteMeasure(pts, w)
    path = tmp_path / "measure.csv"
    save_measure_csv(m, path)
    back = load_measure_csv(path)
    np.testing.assert_array_equal(back.supports, m.supports)
    np.testing.assert_array_equal(back.weights, m.weights)
    header = path.read_text().splitlines()[0]
    assert header == "w,x0,x1,x2,x3,x4,x5"


def test_sampler_state_deterministic():
    a = SamplerState(42).generator().random(8)
    b = SamplerState(42).generator().random(8)
    np.testing.assert_array_equal(a, b)
    c = SamplerState(42, stream=1).generator().random(8)
    assert not np.array_equal(a, c)


def test_derive_seed_stable():
    assert derive_seed(7, 1, 2) == derive_seed(7, 1, 2)
    assert derive_seed(7, 1, 2) != derive_seed(7, 2, 1)


# ---------------------------------------------------------------------------
# mesh sampling
# ---------------------------------------------------------------------------


def test_single_triangle_centroid():
    mesh = unit_right_triangle()
    mu = sample_mesh(mesh, 10000, SamplerState(0))
    centroid = mu.supports.mean(axis=0)
    assert np.linalg.norm(centroid - np.array([1 / 3, 1 / 3, 0.0])) < 0.02


def test_area_proportional_face_selection():
    verts = np.array(
        [[0, 0, 0], [1, 0, 0], [0, 2, 0], [5, 0, 0], [5 + np.sqrt(6), 0, 0], [5, np.sqrt(6), 0]]
    )
    mesh = TriangleMesh(verts, [[0, 1, 2], [3, 4, 5]])  # areas 1 and 3
    samples = draw_surface_samples(mesh, 40000, SamplerState(3))
    frac = np.mean(samples.face_indices == 1)
    assert abs(frac - 0.75) < 0.01


def test_single_sample_in_face_hull():
    mesh = unit_right_triangle()
    mu = sample_mesh(mesh, 1, SamplerState(9))
    p = mu.supports[0]
    assert p[2] == pytest.approx(0.0, abs=1e-15)
    assert p[0] >= 0 and p[1] >= 0 and p[0] + p[1] <= 1 + 1e-12


def test_samples_lie_on_surface(rng):
    mesh = uv_sphere(6, 8)
    mesh = mesh.with_vertices(mesh.vertices + 0.05 * rng.normal(size=mesh.vertices.shape))
    samples = draw_surface_samples(mesh, 5000, SamplerState(4))
    _, normals, _, _ = face_geometry_arrays(mesh)
    tri0 = mesh.vertices[mesh.faces[samples.face_indices, 0]]
    plane_dist = np.abs(
        np.einsum("md,md->m", samples.points - tri0, normals[samples.face_indices])
    )
    assert plane_dist.max() < 1e-12
    assert samples.barycentric.min() >= 0.0 and samples.barycentric.max() <= 1.0


def test_uniform_simplex_mean():
    mesh = unit_right_triangle()
    samples = draw_surface_samples(mesh, 100000, SamplerState(5))
    np.testing.assert_allclose(samples.barycentric.mean(axis=0), [1 / 3, 1 / 3, 1 / 3], atol=0.005)


def test_all_degenerate_faces_error():
    verts = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], float)
    mesh = TriangleMesh(verts, [[0, 1, 2]])
    with pytest.raises(MeshError):
        sample_mesh(mesh, 10, SamplerState(0))
    with pytest.raises(MeshError):
        mesh_to_varifold(mesh)


# ---------------------------------------------------------------------------
# varifold
# ---------------------------------------------------------------------------


def test_varifold_single_triangle():
    lam = 0.7
    var = mesh_to_varifold(unit_right_triangle(), lam)
    assert len(var) == 1
    np.testing.assert_allclose(var.supports[0], [1 / 3, 1 / 3, 0, 0, 0, lam])
    assert var.weights[0] == 1.0


def test_varifold_area_weights():
    verts = np.array(
        [[0, 0, 0], [1, 0, 0], [0, 2, 0], [5, 0, 0], [5 + np.sqrt(6), 0, 0], [5, np.sqrt(6), 0]]
    )
    mesh = TriangleMesh(verts, [[0, 1, 2], [3, 4, 5]])
    var = mesh_to_varifold(mesh)
    np.testing.assert_allclose(var.weights, [0.25, 0.75])


def test_varifold_prunes_degenerate_and_renormalizes():
    verts = np.array(
        [[0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 0, 0], [3, 0, 0], [4, 0, 0], [0, 0, 1], [1, 0, 1], [0, 1, 1]],
        float,
    )
    mesh = TriangleMesh(verts, [[0, 1, 2], [3, 4, 5], [6, 7, 8]])  # middle face collinear
    var = mesh_to_varifold(mesh)
    assert len(var) == 2
    assert var.weights.sum() == pytest.approx(1.0, abs=1e-12)


def test_varifold_position_block_is_barycenter():
    mesh = uv_sphere(5, 6)
    var = mesh_to_varifold(mesh)
    bary, _, _, deg = face_geometry_arrays(mesh)
    np.testing.assert_array_equal(var.supports[:, :3], bary[~deg])


def test_varifold_translation_equivariance(rng):
    mesh = uv_sphere(5, 7)
    t = rng.normal(size=3)
    var0 = mesh_to_varifold(mesh)
    var1 = mesh_to_varifold(mesh.with_vertices(mesh.vertices + t))
    np.testing.assert_allclose(var1.supports[:, :3], var0.supports[:, :3] + t, rtol=0, atol=1e-12)
    np.testing.assert_allclose(var1.supports[:, 3:], var0.supports[:, 3:], rtol=0, atol=1e-12)
    np.testing.assert_allclose(var1.weights, var0.weights, rtol=1e-12)


def test_varifold_vertex_grad_matches_finite_differences(rng):
    mesh = uv_sphere(5, 7)
    mesh = mesh.with_vertices(mesh.vertices + 0.05 * rng.normal(size=mesh.vertices.shape))
    target = mesh_to_varifold(uv_sphere(6, 8).with_vertices(uv_sphere(6, 8).vertices * 1.2))
    proj = sample_directions(24, 6, 11)
    lam = 0.8

    def loss_of(verts):
        return sliced_wasserstein(
            mesh_to_varifold(mesh.with_vertices(verts), lam), target, 2.0, proj, need_grad=False
        ).value

    lv = sliced_wasserstein(mesh_to_varifold(mesh, lam), target, 2.0, proj, need_weight_grad=True)
    grad = varifold_vertex_grad(mesh, lv.grad, lv.weight_grad, lam)
    eps = 1e-6
    for _ in range(10):
        i, k = rng.integers(mesh.num_vertices), rng.integers(3)
        vp = np.array(mesh.vertices)
        vp[i, k] += eps
        vm = np.array(mesh.vertices)
        vm[i, k] -= eps
        fd = (loss_of(vp) - loss_of(vm)) / (2 * eps)
        assert rel_err(fd, grad[i, k]) < 1e-5


# ---------------------------------------------------------------------------
# polyline sampling
# ---------------------------------------------------------------------------


def test_square_side_fractions():
    square = Polyline2D(np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float))
    samples = draw_polyline_samples(square, 40000, SamplerState(6))
    for side in range(4):
        frac = np.mean(samples.segment_indices == side)
        assert abs(frac - 0.25) < 0.01


def test_stratified_regular_polygon_returns_vertices():
    poly = circle_polyline(12)
    mu = sample_polyline(poly, 12, stratified=True)
    np.testing.assert_allclose(mu.supports, poly.vertices, atol=1e-9)


def test_circle_678_points():
    mu = sample_polyline(circle_polyline(678), 678, stratified=True)
    assert len(mu) == 678
    np.testing.assert_allclose(mu.weights, 1 / 678)


def test_open_polyline_rejected():
    open_poly = Polyline2D(np.array([[0, 0], [1, 0], [1, 1]], float), closed=False)
    with pytest.raises(MeshError):
        sample_polyline(open_poly, 10, SamplerState(0))
