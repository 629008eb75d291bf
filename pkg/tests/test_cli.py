import json
import os
from importlib import resources

import jsonschema
import numpy as np
import pytest

from otmesh.cli import main
from otmesh.measures import DiscreteMeasure, save_measure_csv
from otmesh.mesh import save_mesh
from otmesh.shapes import cube_mesh, tetrahedron, uv_sphere


def load_schema():
    with resources.files("otmesh").joinpath("schema/report.schema.json").open() as fh:
        return json.load(fh)


def run_cli(capsys, argv):
    code = main(argv)
    out = capsys.readouterr().out
    return code, out


def validate_report(out: str) -> dict:
    report = json.loads(out)
    jsonschema.validate(report, load_schema())
    return report


@pytest.fixture
def two_meshes(tmp_path):
    a = tmp_path / "a.obj"
    b = tmp_path / "b.obj"
    save_mesh(uv_sphere(8, 10), a)
    sphere = uv_sphere(8, 10)
    save_mesh(sphere.with_vertices(sphere.vertices * 1.1), b)
    return str(a), str(b)


def test_compare_swd_self_is_zero(capsys, tmp_path):
    path = tmp_path / "m.off"
    save_mesh(uv_sphere(6, 9), path, "off")
    code, out = run_cli(capsys, ["compare", str(path), str(path), "--encoding", "varifold", "--seed", "3"])
    assert code == 0
    report = validate_report(out)
    assert report["results"]["swd_pow_p"] == 0.0


def test_compare_all_keys(capsys, two_meshes):
    a, b = two_meshes
    code, out = run_cli(
        capsys, ["compare", a, b, "--loss", "all", "--m", "1500", "--seed", "1"]
    )
    assert code == 0
    report = validate_report(out)
    for key in ("emd", "swd", "assd", "cn", "si"):
        assert key in report["results"]


def test_compare_missing_file_exit_2(capsys):
    assert main(["compare", "/no/such.obj", "/no/such2.obj"]) == 2


def test_compare_dimension_mismatch_exit_3(capsys, tmp_path):
    csv2 = tmp_path / "m2.csv"
    save_measure_csv(DiscreteMeasure.from_points(np.random.default_rng(0).normal(size=(10, 2))), csv2)
    mesh = tmp_path / "m.obj"
    save_mesh(tetrahedron(), mesh)
    assert main(["compare", str(csv2), str(mesh), "--m", "50"]) == 3


def test_compare_measure_csv_inputs(capsys, tmp_path):
    rng = np.random.default_rng(5)
    pa = tmp_path / "a.csv"
    pb = tmp_path / "b.csv"
    save_measure_csv(DiscreteMeasure.from_points(rng.normal(size=(40, 3))), pa)
    save_measure_csv(DiscreteMeasure.from_points(rng.normal(size=(30, 3)) + 1.0), pb)
    code, out = run_cli(capsys, ["compare", str(pa), str(pb), "--loss", "chamfer"])
    assert code == 0
    assert validate_report(out)["results"]["chamfer"] > 0


def test_toy_single_iteration_artifacts(capsys, tmp_path):
    out_dir = tmp_path / "toy"
    code, out = run_cli(
        capsys,
        ["toy", "--iterations", "1", "--points", "64", "--L", "8", "--out", str(out_dir), "--svg"],
    )
    assert code == 0
    validate_report(out)
    loss_csv = (out_dir / "loss_swd.csv").read_text().splitlines()
    assert loss_csv[0] == "iter,loss,wall_ns"
    assert len(loss_csv) == 2  # header + exactly one row
    assert (out_dir / "points_swd.csv").exists()
    assert (out_dir / "points_chamfer.csv").exists()
    assert (out_dir / "summary.json").exists()
    assert (out_dir / "toy.svg").read_text().startswith("<svg")


def test_rates_row_count_matches_grids(capsys, tmp_path):
    out_dir = tmp_path / "rates"
    code, out = run_cli(
        capsys,
        [
            "rates",
            "--l-grid", "4", "8",
            "--m-grid", "32", "64",
            "--trials", "1",
            "--out", str(out_dir),
        ],
    )
    assert code == 0
    report = validate_report(out)
    rows = (out_dir / "rates.csv").read_text().splitlines()
    assert len(rows) == 1 + 4  # header + one row per grid point
    assert set(report["results"]["slopes"]) == {"L", "m"}


def test_rates_grid_too_small_exit_3(capsys):
    assert main(["rates", "--l-grid", "4", "--m-grid", "16", "32", "--trials", "1"]) == 3


def test_bench_small_grid(capsys, tmp_path):
    out_dir = tmp_path / "bench"
    code, out = run_cli(
        capsys,
        [
            "bench",
            "--m-grid", "64", "128",
            "--losses", "swd", "cd_brute",
            "--repeats", "1",
            "--L", "16",
            "--out", str(out_dir),
        ],
    )
    assert code == 0
    report = validate_report(out)
    assert "cd_brute_d3" in report["results"]["exponents"]
    assert (out_dir / "bench.csv").exists()


def test_check_si_tetrahedron(capsys, tmp_path):
    path = tmp_path / "tet.off"
    save_mesh(tetrahedron(), path, "off")
    code, out = run_cli(capsys, ["check-si", str(path)])
    assert code == 0
    assert float(out.strip()) == 0.0


def test_check_si_piercing_pair(capsys, tmp_path):
    from otmesh.mesh import TriangleMesh

    verts = np.array(
        [[0, 0, 0], [2, 0, 0], [0, 2, 0], [0.5, 0.5, -1], [1.5, 0.5, 1], [0.5, 1.5, 1]], float
    )
    mesh = TriangleMesh(verts, [[0, 1, 2], [3, 4, 5]])
    path = tmp_path / "pierce.obj"
    save_mesh(mesh, path)
    code, out = run_cli(capsys, ["check-si", str(path)])
    assert code == 0
    assert float(out.strip()) == 100.0


def test_check_si_missing_file_exit_2(capsys):
    assert main(["check-si", "/no/such.obj"]) == 2


def test_deform_with_config_file(capsys, tmp_path):
    src = tmp_path / "src.obj"
    tgt = tmp_path / "tgt.obj"
    save_mesh(uv_sphere(6, 8), src)
    sphere = uv_sphere(6, 8)
    save_mesh(sphere.with_vertices(sphere.vertices * 1.2), tgt)
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "\n".join(
            [
                f"source={src}",
                f"target={tgt}",
                "model=rbf_flow",
                "loss=swd",
                "encoding=varifold",
                "iterations=5  # quick run",
                "lr=0.2",
                "L=16",
                "seed=9",
            ]
        )
    )
    out_dir = tmp_path / "run"
    code, out = run_cli(capsys, ["deform", "--config", str(cfg), "--out", str(out_dir)])
    assert code == 0
    report = validate_report(out)
    assert report["config"]["model"] == "rbf_flow"
    assert (out_dir / "deformed.obj").exists()
    assert (out_dir / "loss.csv").exists()
    assert (out_dir / "run.json").exists()
    assert "max_lipschitz_bound" in report["results"]


def test_deform_missing_inputs_exit_3(capsys):
    assert main(["deform", "--model", "displacement"]) == 3
