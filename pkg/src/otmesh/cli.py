"""Command-line entry point.

Subcommands: compare, toy, rates, bench, check-si, deform. Reports go to
stdout as JSON (validating against schema/report.schema.json); artifacts go
to --out. Exit codes: 0 ok, 2 input error, 3 config error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict

import numpy as np

from . import experiments as exp
from .deform import DivergenceError, FlowConfig, LossSpec, OptimizerConfig, optimize
from .intersect import polyline_crossing_count, self_intersection_ratio
from .measures import (
    DiscreteMeasure,
    SamplerState,
    derive_seed,
    load_measure_csv,
    mesh_to_varifold,
    sample_mesh,
    save_measure_csv,
)
from .mesh import MeshError, load_mesh, save_mesh
from .metrics import evaluate
from .transport import chamfer, sample_directions, sinkhorn_divergence, sliced_wasserstein

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CONFIG = 3
EXIT_NUMERIC = 4


class _InputError(Exception):
    pass


class _ConfigError(Exception):
    pass


def _emit(report: dict) -> None:
    json.dump(report, sys.stdout, indent=2, default=_jsonable)
    sys.stdout.write("\n")


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _load_shape_measure(path, encoding: str, m: int, L_unused, seed: int, stream: int):
    """A mesh file becomes a sampled or varifold measure; a CSV is loaded
    verbatim as a measure."""
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".csv":
        return load_measure_csv(path), None
    mesh = load_mesh(path)
    if encoding == "varifold":
        return mesh_to_varifold(mesh), mesh
    return sample_mesh(mesh, m, SamplerState(derive_seed(seed, 0xC0, stream))), mesh


def _out_dir(args) -> str | None:
    out = getattr(args, "out", None)
    if out:
        os.makedirs(out, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# compare
# ---------------------------------------------------------------------------


def cmd_compare(args) -> int:
    try:
        mu, mesh_a = _load_shape_measure(args.mesh_a, args.encoding, args.m, args.L, args.seed, 0)
        nu, mesh_b = _load_shape_measure(args.mesh_b, args.encoding, args.m, args.L, args.seed, 1)
    except (MeshError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    results: dict = {}
    try:
        wanted = args.loss
        if wanted in ("swd", "all"):
            proj = sample_directions(args.L, mu.dim, derive_seed(args.seed, 0xC1))
            results["swd_pow_p"] = sliced_wasserstein(
                mu, nu, args.p, proj, need_grad=False
            ).value
            results["swd"] = results["swd_pow_p"] ** (1.0 / args.p)
        if wanted in ("chamfer", "all"):
            results["chamfer"] = chamfer(mu, nu).value
        if wanted in ("sinkhorn", "all"):
            results["sinkhorn"] = sinkhorn_divergence(
                mu, nu, args.p, args.epsilon, need_grad=False
            ).value
        if wanted == "all":
            if mesh_a is None or mesh_b is None:
                raise _ConfigError("--loss all needs two mesh inputs for the metric suite")
            report = evaluate(mesh_a, mesh_b, m=args.m, seed=args.seed, num_projections=args.L, p=args.p)
            results.update(
                {
                    "emd": report.emd,
                    "swd": report.swd,
                    "assd": report.assd,
                    "cn": report.chamfer_normals,
                    "si": report.si_percent,
                }
            )
    except _ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        # dimension mismatches and other incompatible-configuration errors
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    config = {
        "seed": args.seed,
        "mesh_a": str(args.mesh_a),
        "mesh_b": str(args.mesh_b),
        "loss": args.loss,
        "m": args.m,
        "L": args.L,
        "p": args.p,
        "epsilon": args.epsilon,
        "encoding": args.encoding,
    }
    _emit(exp.experiment_report("compare", config, results))
    return EXIT_OK


# ---------------------------------------------------------------------------
# toy
# ---------------------------------------------------------------------------


def cmd_toy(args) -> int:
    losses = {"both": ("swd", "chamfer"), "swd": ("swd",), "cd": ("chamfer",)}[args.loss]
    cfg = exp.ToyConfig(
        points=args.points,
        num_projections=args.L,
        p=args.p,
        learning_rate=args.lr,
        rbf_learning_rate=args.rbf_lr,
        momentum=args.momentum,
        iterations=args.iterations,
        seed=args.seed,
        model=args.model,
        losses=losses,
    )
    try:
        result = exp.run_toy(cfg)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    out = _out_dir(args)
    if out:
        for name, run in result.runs.items():
            exp.write_points_csv(os.path.join(out, f"points_{name}.csv"), run.points)
            exp.write_loss_curve_csv(os.path.join(out, f"loss_{name}.csv"), run.loss_curve, run.wall_ns)
        if args.svg:
            exp.write_toy_svg(os.path.join(out, "toy.svg"), result)

    summary = result.summary()
    if {"swd", "chamfer"} <= set(summary):
        summary["swd_beats_cd_coverage"] = bool(
            summary["swd"]["coverage_gap"] < summary["chamfer"]["coverage_gap"]
        )
        summary["emd_improvement"] = 1.0 - summary["swd"]["emd"] / summary["chamfer"]["emd"]
    report = exp.experiment_report("toy", asdict(cfg), summary)
    if out:
        with open(os.path.join(out, "summary.json"), "w") as fh:
            json.dump(report, fh, indent=2, default=_jsonable)
    _emit(report)
    return EXIT_OK


# ---------------------------------------------------------------------------
# rates
# ---------------------------------------------------------------------------


def cmd_rates(args) -> int:
    if len(args.l_grid) < 2 or len(args.m_grid) < 2:
        print("error: rate grids need at least 2 points for a slope fit", file=sys.stderr)
        return EXIT_CONFIG
    cfg = exp.RateConfig(
        l_grid=tuple(args.l_grid),
        m_grid=tuple(args.m_grid),
        trials=args.trials,
        seed=args.seed,
        p=args.p,
    )
    result = exp.run_rates(cfg)
    out = _out_dir(args)
    if out:
        exp.write_rate_csv(os.path.join(out, "rates.csv"), result)
    results = {
        "slopes": result.slopes,
        "rows": [
            {"sweep": s, "grid_value": g, "trials": t, "mean_abs_err": e}
            for s, g, t, e in result.rows
        ],
    }
    report = exp.experiment_report("rates", asdict(cfg), results)
    if out:
        with open(os.path.join(out, "slopes.json"), "w") as fh:
            json.dump(report, fh, indent=2, default=_jsonable)
    _emit(report)
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------


def cmd_bench(args) -> int:
    cfg = exp.BenchConfig(
        m_grid=tuple(args.m_grid),
        losses=tuple(args.losses),
        dims=tuple(args.dims),
        repeats=args.repeats,
        num_projections=args.L,
        p=args.p,
        seed=args.seed,
        sinkhorn_max_m=args.sinkhorn_max_m,
    )
    result = exp.run_bench(cfg)
    out = _out_dir(args)
    if out:
        exp.write_bench_csv(os.path.join(out, "bench.csv"), result)
    results = {"exponents": result.exponents, "records": result.records}
    report = exp.experiment_report("bench", asdict(cfg), results)
    if out:
        with open(os.path.join(out, "exponents.json"), "w") as fh:
            json.dump(report, fh, indent=2, default=_jsonable)
    _emit(report)
    return EXIT_OK


# ---------------------------------------------------------------------------
# check-si
# ---------------------------------------------------------------------------


def cmd_check_si(args) -> int:
    try:
        mesh = load_mesh(args.mesh)
    except (MeshError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    print(f"{100.0 * self_intersection_ratio(mesh):.6g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# deform
# ---------------------------------------------------------------------------


def _read_run_config(path) -> dict:
    """Flat key=value lines; '#' starts a comment."""
    values: dict = {}
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise _ConfigError(f"bad config line (expected key=value): {line!r}")
            key, val = line.split("=", 1)
            values[key.strip()] = val.strip()
    return values


def cmd_deform(args) -> int:
    settings = {}
    if args.config:
        try:
            settings = _read_run_config(args.config)
        except (_ConfigError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG

    def pick(name, cast, default):
        cli_val = getattr(args, name, None)
        if cli_val is not None:
            return cli_val
        if name in settings:
            return cast(settings[name])
        return default

    source_path = args.source or settings.get("source")
    target_path = args.target or settings.get("target")
    if not source_path or not target_path:
        print("error: source and target are required (flags or config file)", file=sys.stderr)
        return EXIT_CONFIG

    try:
        source = load_mesh(source_path)
        target = load_mesh(target_path)
    except (MeshError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    model = pick("model", str, "rbf_flow")
    seed = pick("seed", int, 0)
    loss = LossSpec(
        name=pick("loss", str, "swd"),
        p=pick("p", float, 2.0),
        num_projections=pick("L", int, 100),
        epsilon=pick("epsilon", float, 1e-2),
        encoding=pick("encoding", str, "varifold"),
        sample_count=pick("m", int, 2000),
    )
    opt = OptimizerConfig(
        method=pick("optimizer", str, "sgd_momentum"),
        learning_rate=pick("lr", float, 1.0),
        momentum=pick("momentum", float, 0.9),
        iterations=pick("iterations", int, 200),
    )
    flow = FlowConfig(
        integrator=pick("integrator", str, "rk4"),
        steps=pick("steps", int, 10),
    )
    try:
        result = optimize(
            source,
            target,
            model=model,
            loss=loss,
            opt=opt,
            seed=seed,
            flow=flow,
            rbf_centers=pick("rbf_centers", int, 64),
        )
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = _out_dir(args)
    results = {
        "final_loss": float(result.loss_curve[-1]),
        "initial_loss": float(result.loss_curve[0]),
        "iterations": len(result.loss_curve),
        "si_percent": 100.0 * self_intersection_ratio(result.shape),
    }
    if result.lipschitz_bounds is not None:
        results["max_lipschitz_bound"] = float(result.lipschitz_bounds.max())
    if out:
        fmt = pick("format", str, "obj")
        save_mesh(result.shape, os.path.join(out, f"deformed.{fmt}"), fmt)
        exp.write_loss_curve_csv(os.path.join(out, "loss.csv"), result.loss_curve, result.wall_ns)
    config = {
        "seed": seed,
        "source": str(source_path),
        "target": str(target_path),
        "model": model,
        "loss": asdict(loss),
        "optimizer": asdict(opt),
        "flow": asdict(flow),
    }
    report = exp.experiment_report("deform", config, results)
    if out:
        with open(os.path.join(out, "run.json"), "w") as fh:
            json.dump(report, fh, indent=2, default=_jsonable)
    _emit(report)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="otmesh", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compare", help="losses/metrics between two shapes")
    c.add_argument("mesh_a")
    c.add_argument("mesh_b")
    c.add_argument("--loss", default="swd", choices=["swd", "chamfer", "sinkhorn", "all"])
    c.add_argument("--m", type=int, default=10000)
    c.add_argument("--L", type=int, default=100)
    c.add_argument("--p", type=float, default=2.0)
    c.add_argument("--epsilon", type=float, default=1e-2)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--encoding", default="sample", choices=["sample", "varifold"])
    c.set_defaults(fn=cmd_compare)

    t = sub.add_parser("toy", help="deform a circle onto a polygon (SWD vs Chamfer)")
    t.add_argument("--points", type=int, default=678)
    t.add_argument("--L", type=int, default=100)
    t.add_argument("--p", type=float, default=2.0)
    t.add_argument("--lr", type=float, default=1.0)
    t.add_argument("--rbf-lr", dest="rbf_lr", type=float, default=0.2)
    t.add_argument("--momentum", type=float, default=0.9)
    t.add_argument("--iterations", type=int, default=1000)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--model", default="displacement", choices=["displacement", "rbf_flow"])
    t.add_argument("--loss", default="both", choices=["both", "swd", "cd"])
    t.add_argument("--out")
    t.add_argument("--svg", action="store_true")
    t.set_defaults(fn=cmd_toy)

    r = sub.add_parser("rates", help="estimator error rates vs L and m")
    r.add_argument("--l-grid", type=int, nargs="+", default=[10, 40, 160, 640])
    r.add_argument("--m-grid", type=int, nargs="+", default=[100, 400, 1600, 6400])
    r.add_argument("--trials", type=int, default=100)
    r.add_argument("--p", type=float, default=2.0)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out")
    r.set_defaults(fn=cmd_rates)

    b = sub.add_parser("bench", help="loss wall-time scaling study")
    b.add_argument("--m-grid", type=int, nargs="+", default=[2048, 4096, 8192, 16384])
    b.add_argument("--losses", nargs="+", default=["swd", "cd_brute", "cd_reg", "sinkhorn"])
    b.add_argument("--dims", type=int, nargs="+", default=[3, 6])
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--L", type=int, default=100)
    b.add_argument("--p", type=float, default=2.0)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--sinkhorn-max-m", type=int, default=2048)
    b.add_argument("--out")
    b.set_defaults(fn=cmd_bench)

    s = sub.add_parser("check-si", help="self-intersection percentage of a mesh")
    s.add_argument("mesh")
    s.set_defaults(fn=cmd_check_si)

    d = sub.add_parser("deform", help="optimize a source mesh onto a target")
    d.add_argument("--config", help="flat key=value run configuration file")
    d.add_argument("--source")
    d.add_argument("--target")
    d.add_argument("--model", choices=["displacement", "rbf_flow"])
    d.add_argument("--loss", choices=["swd", "chamfer", "sinkhorn"])
    d.add_argument("--encoding", choices=["sample", "varifold"])
    d.add_argument("--m", type=int)
    d.add_argument("--L", type=int)
    d.add_argument("--p", type=float)
    d.add_argument("--epsilon", type=float)
    d.add_argument("--iterations", type=int)
    d.add_argument("--lr", type=float)
    d.add_argument("--momentum", type=float)
    d.add_argument("--optimizer", choices=["sgd_momentum", "adam"])
    d.add_argument("--integrator", choices=["euler", "rk4"])
    d.add_argument("--steps", type=int)
    d.add_argument("--rbf-centers", dest="rbf_centers", type=int)
    d.add_argument("--seed", type=int)
    d.add_argument("--format", choices=["obj", "off"])
    d.add_argument("--out")
    d.set_defaults(fn=cmd_deform)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
