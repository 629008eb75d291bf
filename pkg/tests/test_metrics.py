import numpy as np
import pytest

from otmesh.metrics import MetricReport, evaluate
from otmesh.shapes import cube_mesh, uv_sphere


def test_identical_meshes_same_seed():
    mesh = uv_sphere(8, 10)
    rep = evaluate(mesh, mesh, m=4000, seed=3, emd_max_points=1000)
    assert rep.emd == pytest.approx(0.0, abs=1e-6)
    assert rep.swd == pytest.approx(0.0, abs=1e-9)
    assert rep.assd == pytest.approx(0.0, abs=1e-12)
    assert rep.chamfer_normals == pytest.approx(1.0, abs=1e-12)
    assert rep.si_percent == 0.0


def test_far_translated_copy_oracle():
    mesh = uv_sphere(8, 10)
    diam = mesh.bounding_box_diagonal()
    delta = 10.0 * diam
    moved = mesh.with_vertices(mesh.vertices + np.array([delta, 0.0, 0.0]))
    rep = evaluate(mesh, moved, m=4000, seed=1, emd_max_points=1000)
    assert abs(rep.assd - delta) / delta < 0.02
    assert abs(rep.emd - delta) / delta < 0.02


def test_flipped_orientation_signed_cn():
    # antipodal normals everywhere; nearest neighbors sit on the same or an
    # adjacent face, so the signed cosine is close to -1
    mesh = uv_sphere(16, 24)
    flipped = type(mesh)(mesh.vertices, mesh.faces[:, [0, 2, 1]])
    rep = evaluate(mesh, flipped, m=20000, seed=2, signed_normals=True, emd_max_points=500, include_si=False)
    assert rep.chamfer_normals < -0.95
    rep_abs = evaluate(mesh, flipped, m=20000, seed=2, emd_max_points=500, include_si=False)
    assert rep_abs.chamfer_normals > 0.95


def test_distance_metrics_symmetric_within_noise():
    a = uv_sphere(8, 10)
    b = cube_mesh(1.6)
    r_ab = evaluate(a, b, m=6000, seed=7, emd_max_points=1500, include_si=False)
    r_ba = evaluate(b, a, m=6000, seed=7, emd_max_points=1500, include_si=False)
    assert abs(r_ab.assd - r_ba.assd) / r_ab.assd < 0.05
    assert abs(r_ab.swd - r_ba.swd) / r_ab.swd < 0.05
    assert abs(r_ab.emd - r_ba.emd) / r_ab.emd < 0.05
    assert abs(r_ab.chamfer_normals - r_ba.chamfer_normals) < 0.02


def test_assd_squared_below_mean_squared_nn(rng):
    # Jensen: mean(d)^2 <= mean(d^2) per direction
    from scipy.spatial import cKDTree

    from otmesh.measures import SamplerState, draw_surface_samples

    a = uv_sphere(6, 8)
    b = cube_mesh(1.5)
    xa = draw_surface_samples(a, 3000, SamplerState(1)).points
    xb = draw_surface_samples(b, 3000, SamplerState(2)).points
    d_ab, _ = cKDTree(xb).query(xa)
    d_ba, _ = cKDTree(xa).query(xb)
    assd = 0.5 * (d_ab.mean() + d_ba.mean())
    msq = 0.5 * ((d_ab**2).mean() + (d_ba**2).mean())
    assert assd**2 <= msq + 1e-15


def test_sampling_stability_doubling_m():
    a = uv_sphere(10, 14)
    b = uv_sphere(10, 14)
    b = b.with_vertices(b.vertices * 1.15)
    r1 = evaluate(a, b, m=50_000, seed=5, emd_max_points=1024, include_si=False)
    r2 = evaluate(a, b, m=100_000, seed=5, emd_max_points=1024, include_si=False)
    assert abs(r1.swd - r2.swd) / r1.swd < 0.01
    assert abs(r1.assd - r2.assd) / r1.assd < 0.01
    assert abs(r1.emd - r2.emd) / max(r1.emd, 1e-12) < 0.01


def test_report_serialization():
    rep = MetricReport(0.1, 0.2, 0.3, 0.9, 0.0, 1000, 7)
    d = rep.to_dict()
    assert set(d) == {"emd", "swd", "assd", "chamfer_normals", "si_percent", "sample_count", "seed"}
    csv = rep.to_csv_row()
    assert csv.splitlines()[0].startswith("emd,swd,assd")
    assert len(csv.splitlines()) == 2
