"""Reproducible experiment drivers behind the CLI: the 2D circle-to-polygon
deformation study, the estimator convergence-rate study, and the loss timing
benchmark. Every driver funnels all randomness through one master seed."""

from __future__ import annotations

import os
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .deform import FlowConfig, LossSpec, OptimizeResult, OptimizerConfig, optimize
from .intersect import contour_crossing_count
from .measures import (
    DiscreteMeasure,
    SamplerState,
    derive_seed,
    mesh_to_varifold,
    sample_mesh,
    sample_polyline,
    save_measure_csv,
)
from .mesh import Polyline2D
from .shapes import circle_polyline, sphere_with_face_count, star_polyline
from .transport import (
    chamfer,
    regularizer_suite,
    sample_directions,
    sinkhorn_divergence,
    sliced_wasserstein,
)

__all__ = [
    "ToyConfig",
    "ToyRun",
    "ToyResult",
    "run_toy",
    "coverage_gap",
    "RateConfig",
    "RateResult",
    "run_rates",
    "write_rate_csv",
    "BenchConfig",
    "BenchResult",
    "run_bench",
    "write_bench_csv",
    "fit_loglog_slope",
    "experiment_report",
    "write_loss_curve_csv",
    "write_points_csv",
    "write_toy_svg",
    "thread_count",
]

_TAG_L = 0x4C
_TAG_M = 0x6D
_TAG_BENCH = 0xBE


def fit_loglog_slope(x, y) -> float:
    """Least-squares slope of log(y) against log(x)."""
    lx = np.log(np.asarray(x, dtype=np.float64))
    ly = np.log(np.asarray(y, dtype=np.float64))
    lx = lx - lx.mean()
    return float((lx @ (ly - ly.mean())) / (lx @ lx))


def thread_count() -> int:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        val = os.environ.get(var)
        if val:
            try:
                return int(val)
            except ValueError:
                pass
    return os.cpu_count() or 1


def experiment_report(experiment: str, config: dict, results: dict) -> dict:
    """Self-contained report envelope shared by all commands."""
    return {
        "experiment": experiment,
        "config": config,
        "results": results,
        "environment": {"thread_count": thread_count()},
    }


# ---------------------------------------------------------------------------
# Toy experiment: deform a circle onto a polygon
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ToyConfig:
    points: int = 678
    num_projections: int = 100
    p: float = 2.0
    learning_rate: float = 1.0
    momentum: float = 0.9
    iterations: int = 1000
    seed: int = 0
    model: str = "displacement"
    losses: tuple = ("swd", "chamfer")
    flow_steps: int = 10
    # flow parameterization: coefficient gradients aggregate over every point
    # under a kernel, so the flow model runs at a smaller step size and with
    # a sharper, denser field than the per-vertex displacement default
    rbf_centers: int = 128
    rbf_sigma_scale: float = 0.1
    rbf_learning_rate: float = 0.2
    circle_radius: float = 1.0
    star_points: int = 5
    star_outer: float = 1.3
    star_inner: float = 0.45
    emd_epsilon_scale: float = 0.005
    coverage_grid: int = 4096


@dataclass
class ToyRun:
    loss_name: str
    points: np.ndarray
    loss_curve: np.ndarray
    wall_ns: np.ndarray
    coverage_gap: float
    emd: float
    crossings: int


@dataclass
class ToyResult:
    config: ToyConfig
    target: Polyline2D
    target_points: np.ndarray
    runs: dict = field(default_factory=dict)

    def summary(self) -> dict:
        out = {}
        for name, run in self.runs.items():
            out[name] = {
                "coverage_gap": run.coverage_gap,
                "emd": run.emd,
                "edge_crossings": run.crossings,
                "final_loss": float(run.loss_curve[-1]),
                "initial_loss": float(run.loss_curve[0]),
                "total_wall_ns": int(run.wall_ns.sum()),
            }
        return out


def coverage_gap(points: np.ndarray, target: Polyline2D, grid: int = 4096) -> float:
    """One-sided Hausdorff gap: max over a dense boundary grid of the
    distance to the nearest point, normalized by the contour perimeter."""
    boundary = sample_polyline(target, grid, stratified=True).supports
    dists, _ = cKDTree(points).query(boundary, k=1)
    return float(dists.max() / target.perimeter())


def _toy_emd(points: np.ndarray, target_points: np.ndarray, cfg: ToyConfig) -> float:
    both = np.vstack([points, target_points])
    diag = float(np.linalg.norm(both.max(axis=0) - both.min(axis=0)))
    epsilon = max(cfg.emd_epsilon_scale * diag, 1e-12) ** cfg.p
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # bounded budget; estimator use
        val = sinkhorn_divergence(
            DiscreteMeasure.from_points(points),
            DiscreteMeasure.from_points(target_points),
            cfg.p,
            epsilon,
            max_iter=60,
            tol=1e-4,
            need_grad=False,
        ).value
    return max(val, 0.0) ** (1.0 / cfg.p)


def run_toy(cfg: ToyConfig) -> ToyResult:
    """Deform a uniformly discretized circle onto a star polygon with the
    requested losses and report coverage/EMD/crossing statistics per run."""
    source = circle_polyline(cfg.points, cfg.circle_radius)
    target = star_polyline(cfg.star_points, cfg.star_outer, cfg.star_inner)
    target_points = sample_polyline(target, cfg.points, stratified=True).supports

    result = ToyResult(config=cfg, target=target, target_points=target_points)
    span = source.vertices.max(axis=0) - source.vertices.min(axis=0)
    rbf_sigma = cfg.rbf_sigma_scale * float(np.linalg.norm(span))
    for loss_name in cfg.losses:
        spec = LossSpec(
            name="chamfer" if loss_name in ("cd", "chamfer") else loss_name,
            p=cfg.p,
            num_projections=cfg.num_projections,
            sample_count=cfg.points,
            stratified=True,
        )
        opt = OptimizerConfig(
            method="sgd_momentum",
            learning_rate=cfg.learning_rate if cfg.model == "displacement" else cfg.rbf_learning_rate,
            momentum=cfg.momentum,
            iterations=cfg.iterations,
        )
        res: OptimizeResult = optimize(
            source,
            target,
            model=cfg.model,
            loss=spec,
            opt=opt,
            seed=cfg.seed,
            flow=FlowConfig(steps=cfg.flow_steps),
            rbf_centers=cfg.rbf_centers,
            rbf_sigma=rbf_sigma,
        )
        pts = res.vertices
        result.runs[loss_name] = ToyRun(
            loss_name=loss_name,
            points=pts,
            loss_curve=res.loss_curve,
            wall_ns=res.wall_ns,
            coverage_gap=coverage_gap(pts, target, cfg.coverage_grid),
            emd=_toy_emd(pts, target_points, cfg),
            crossings=contour_crossing_count(pts, closed=True),
        )
    return result


def write_loss_curve_csv(path, loss_curve: np.ndarray, wall_ns: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write("iter,loss,wall_ns\n")
        for i, (v, w) in enumerate(zip(loss_curve, wall_ns)):
            fh.write(f"{i},{v:.17g},{int(w)}\n")


def write_toy_svg(path, result: ToyResult, size: int = 480) -> None:
    """Minimal SVG: target contour plus the final point sets, drawn directly
    as path/circle elements (the CSV artifacts stay the source of truth)."""
    all_pts = [result.target.vertices] + [run.points for run in result.runs.values()]
    stack = np.vstack(all_pts)
    lo = stack.min(axis=0)
    hi = stack.max(axis=0)
    span = max(float((hi - lo).max()), 1e-9)
    pad = 0.05 * span

    def tx(p):
        x = (p[0] - lo[0] + pad) / (span + 2 * pad) * size
        y = size - (p[1] - lo[1] + pad) / (span + 2 * pad) * size
        return x, y

    colors = ["#2b8cbe", "#e34a33", "#31a354", "#756bb1"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">'
    ]
    contour = " ".join(f"{tx(p)[0]:.2f},{tx(p)[1]:.2f}" for p in result.target.vertices)
    parts.append(f'<polygon points="{contour}" fill="none" stroke="#444" stroke-width="1.5"/>')
    for k, (name, run) in enumerate(result.runs.items()):
        color = colors[k % len(colors)]
        for p in run.points:
            x, y = tx(p)
            parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="1.6" fill="{color}" opacity="0.8"/>')
        parts.append(
            f'<text x="8" y="{16 * (k + 1)}" fill="{color}" font-size="12">{name}</text>'
        )
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))


# ---------------------------------------------------------------------------
# Convergence-rate study
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RateConfig:
    l_grid: tuple = (10, 40, 160, 640)
    m_grid: tuple = (100, 400, 1600, 6400)
    trials: int = 100
    seed: int = 0
    p: float = 2.0
    l_ref: int = 16384
    m_fixed: int = 2048
    l_common: int = 256
    m_ref_factor: int = 16


@dataclass
class RateResult:
    config: RateConfig
    rows: list  # (sweep, grid value, trials, mean_abs_err)
    slopes: dict


def _rate_shapes():
    from .shapes import cube_mesh

    return cube_mesh(1.0), cube_mesh(1.0, center=(0.6, 0.25, 0.1))


def run_rates(cfg: RateConfig) -> RateResult:
    """Empirical check of the estimator error rates: Monte Carlo error decays
    as 1/sqrt(L) at fixed supports, and plug-in error decays near
    sqrt(log m / m) at fixed (shared) projections."""
    mesh_a, mesh_b = _rate_shapes()
    rows = []

    # L sweep: fixed empirical measures, reference with a huge projection set
    mu = sample_mesh(mesh_a, cfg.m_fixed, SamplerState(derive_seed(cfg.seed, _TAG_L, 0)))
    nu = sample_mesh(mesh_b, cfg.m_fixed, SamplerState(derive_seed(cfg.seed, _TAG_L, 1)))
    proj_ref = sample_directions(cfg.l_ref, 3, derive_seed(cfg.seed, _TAG_L, 2))
    ref_l = sliced_wasserstein(mu, nu, cfg.p, proj_ref, need_grad=False).value
    l_errors = []
    for L in cfg.l_grid:
        errs = np.empty(cfg.trials)
        for t in range(cfg.trials):
            proj = sample_directions(L, 3, derive_seed(cfg.seed, _TAG_L, L, t))
            errs[t] = abs(sliced_wasserstein(mu, nu, cfg.p, proj, need_grad=False).value - ref_l)
        l_errors.append(errs.mean())
        rows.append(("L", int(L), cfg.trials, float(errs.mean())))

    # m sweep: shared projections (common random numbers), reference measures
    # far larger than the grid
    proj = sample_directions(cfg.l_common, 3, derive_seed(cfg.seed, _TAG_M, 0))
    m_ref = cfg.m_ref_factor * max(cfg.m_grid)
    mu_ref = sample_mesh(mesh_a, m_ref, SamplerState(derive_seed(cfg.seed, _TAG_M, 1)))
    nu_ref = sample_mesh(mesh_b, m_ref, SamplerState(derive_seed(cfg.seed, _TAG_M, 2)))
    ref_m = sliced_wasserstein(mu_ref, nu_ref, cfg.p, proj, need_grad=False).value
    m_errors = []
    for m in cfg.m_grid:
        errs = np.empty(cfg.trials)
        for t in range(cfg.trials):
            mu_t = sample_mesh(mesh_a, m, SamplerState(derive_seed(cfg.seed, _TAG_M, m, t, 0)))
            nu_t = sample_mesh(mesh_b, m, SamplerState(derive_seed(cfg.seed, _TAG_M, m, t, 1)))
            errs[t] = abs(sliced_wasserstein(mu_t, nu_t, cfg.p, proj, need_grad=False).value - ref_m)
        m_errors.append(errs.mean())
        rows.append(("m", int(m), cfg.trials, float(errs.mean())))

    slopes = {
        "L": fit_loglog_slope(cfg.l_grid, l_errors),
        "m": fit_loglog_slope(cfg.m_grid, m_errors),
    }
    return RateResult(config=cfg, rows=rows, slopes=slopes)


def write_rate_csv(path, result: RateResult) -> None:
    with open(path, "w") as fh:
        fh.write("sweep,grid_value,trials,mean_abs_err\n")
        for sweep, gv, trials, err in result.rows:
            fh.write(f"{sweep},{gv},{trials},{err:.17g}\n")


# ---------------------------------------------------------------------------
# Timing benchmark
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BenchConfig:
    m_grid: tuple = (2048, 4096, 8192, 16384)
    losses: tuple = ("swd", "cd_brute", "cd_reg", "sinkhorn")
    dims: tuple = (3, 6)
    repeats: int = 3
    num_projections: int = 100
    p: float = 2.0
    seed: int = 0
    sinkhorn_max_m: int = 2048
    sinkhorn_epsilon: float = 1e-2
    sinkhorn_max_iter: int = 100


@dataclass
class BenchResult:
    config: BenchConfig
    records: list  # dicts: loss, d, m_target, m_actual, median_ns, times_ns
    exponents: dict

    def median(self, loss: str, d: int, m_actual: int) -> float | None:
        for r in self.records:
            if r["loss"] == loss and r["d"] == d and r["m_actual"] == m_actual:
                return r["median_ns"]
        return None


def _bench_inputs(m_target: int, cfg: BenchConfig):
    mesh_a = sphere_with_face_count(m_target, radius=1.0)
    mesh_b = sphere_with_face_count(m_target, radius=1.05)
    shift = np.zeros(3)
    shift[0] = 0.1
    mesh_b = mesh_b.with_vertices(mesh_b.vertices + shift)
    m_actual = mesh_a.num_faces
    pts_a = sample_mesh(mesh_a, m_actual, SamplerState(derive_seed(cfg.seed, _TAG_BENCH, m_target, 0)))
    pts_b = sample_mesh(mesh_b, m_actual, SamplerState(derive_seed(cfg.seed, _TAG_BENCH, m_target, 1)))
    var_a = mesh_to_varifold(mesh_a)
    var_b = mesh_to_varifold(mesh_b)
    # weighted position marginal of the varifold: same weight structure as
    # d=6 so the d=3 vs d=6 comparison isolates the dimension dependence
    w3_a = DiscreteMeasure(var_a.supports[:, :3], var_a.weights)
    w3_b = DiscreteMeasure(var_b.supports[:, :3], var_b.weights)
    return mesh_a, m_actual, {3: (pts_a, pts_b), 6: (var_a, var_b)}, (w3_a, w3_b)


def _time_call(fn, repeats: int) -> list:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        fn()
        times.append(time.perf_counter_ns() - t0)
    return times


def run_bench(cfg: BenchConfig) -> BenchResult:
    """Median wall time of each loss evaluation (value plus gradient) across
    the support grid, with fitted time ~ m^alpha exponents."""
    records = []
    for m_target in cfg.m_grid:
        mesh_a, m_actual, measures, weighted3 = _bench_inputs(m_target, cfg)
        if "swd" in cfg.losses:
            # dimension-isolating row: weighted 3D positions (same weight
            # structure and code path as the d=6 varifold)
            proj3 = sample_directions(cfg.num_projections, 3, derive_seed(cfg.seed, _TAG_BENCH, 3))
            w3a, w3b = weighted3
            times = _time_call(lambda: sliced_wasserstein(w3a, w3b, cfg.p, proj3), cfg.repeats)
            records.append(
                {
                    "loss": "swd_weighted",
                    "d": 3,
                    "m_target": int(m_target),
                    "m_actual": int(m_actual),
                    "median_ns": float(np.median(times)),
                    "times_ns": [int(t) for t in times],
                }
            )
        for d in cfg.dims:
            mu, nu = measures[d]
            proj = sample_directions(cfg.num_projections, d, derive_seed(cfg.seed, _TAG_BENCH, d))
            for loss in cfg.losses:
                if loss == "swd":
                    fn = lambda: sliced_wasserstein(mu, nu, cfg.p, proj)
                elif loss == "cd_brute":
                    fn = lambda: chamfer(mu, nu, accel="brute")
                elif loss == "cd_kdtree":
                    fn = lambda: chamfer(mu, nu, accel="kdtree")
                elif loss == "cd_reg":
                    if d != 3:
                        continue  # regularizers act on the mesh itself
                    fn = lambda: (chamfer(mu, nu, accel="brute"), regularizer_suite(mesh_a))
                elif loss == "sinkhorn":
                    if m_actual > cfg.sinkhorn_max_m:
                        continue
                    fn = lambda: sinkhorn_divergence(
                        mu,
                        nu,
                        cfg.p,
                        cfg.sinkhorn_epsilon,
                        max_iter=cfg.sinkhorn_max_iter,
                        tol=1e-6,
                    )
                else:
                    raise ValueError(f"unknown bench loss {loss!r}")
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    times = _time_call(fn, cfg.repeats)
                records.append(
                    {
                        "loss": loss,
                        "d": int(d),
                        "m_target": int(m_target),
                        "m_actual": int(m_actual),
                        "median_ns": float(np.median(times)),
                        "times_ns": [int(t) for t in times],
                    }
                )

    exponents = {}
    for loss in cfg.losses:
        for d in cfg.dims:
            pts = [(r["m_actual"], r["median_ns"]) for r in records if r["loss"] == loss and r["d"] == d]
            if len(pts) >= 2:
                ms, ts = zip(*pts)
                exponents[f"{loss}_d{d}"] = fit_loglog_slope(ms, ts)
    return BenchResult(config=cfg, records=records, exponents=exponents)


def write_bench_csv(path, result: BenchResult) -> None:
    with open(path, "w") as fh:
        fh.write("loss,d,m_target,m_actual,median_ns\n")
        for r in result.records:
            fh.write(f"{r['loss']},{r['d']},{r['m_target']},{r['m_actual']},{r['median_ns']:.0f}\n")


def write_points_csv(path, points: np.ndarray) -> None:
    save_measure_csv(DiscreteMeasure.from_points(points), path)
