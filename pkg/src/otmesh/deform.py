"""Deformation models and the gradient-descent loop that moves a source
shape onto a target under a transport loss.

Two parameterizations: per-vertex displacements, and a stationary RBF
velocity field integrated over t in [0, 1] (deformation as the time-1 map of
an ODE with a Lipschitz field, so trajectories cannot cross). Flow gradients
use reverse accumulation through the stored integration steps
(discretize-then-differentiate).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .measures import (
    DiscreteMeasure,
    SamplerState,
    derive_seed,
    draw_polyline_samples,
    draw_surface_samples,
    mesh_to_varifold,
    sample_polyline,
    sample_mesh,
    varifold_vertex_grad,
)
from .mesh import MeshError, Polyline2D, TriangleMesh
from .transport import (
    LossValueGrad,
    chamfer,
    sample_directions,
    sinkhorn_divergence,
    sliced_wasserstein,
)

__all__ = [
    "DivergenceError",
    "MissingTapeError",
    "DisplacementModel",
    "RBFVelocityField",
    "FlowTape",
    "FlowConfig",
    "FlowGradients",
    "OptimizerConfig",
    "LossSpec",
    "OptimizeResult",
    "integrate_flow",
    "integrate_flow_with_tape",
    "flow_gradient",
    "farthest_point_subset",
    "optimize",
    "projection_seed_for_iteration",
]

_PROJ_TAG = 0x70726F6A  # namespace tag for per-iteration projection seeds
_SAMPLE_TAG = 0x73616D70


class DivergenceError(RuntimeError):
    """Loss became non-finite; carries the iteration index."""

    def __init__(self, iteration: int):
        self.iteration = iteration
        super().__init__(f"optimization diverged at iteration {iteration}")


class MissingTapeError(RuntimeError):
    """flow_gradient called without (or with a mismatched) forward tape."""


@dataclass
class DisplacementModel:
    """One free offset per movable vertex, initialized to zero."""

    offsets: np.ndarray

    @classmethod
    def zeros(cls, num_vertices: int, dim: int) -> "DisplacementModel":
        return cls(np.zeros((num_vertices, dim)))

    def apply(self, vertices: np.ndarray) -> np.ndarray:
        if self.offsets.shape != vertices.shape:
            raise ValueError("offset shape must match the vertex list")
        return vertices + self.offsets


@dataclass
class RBFVelocityField:
    """Stationary velocity field v(x) = sum_k c_k exp(-|x - z_k|^2 / (2 s^2)).

    The field is globally Lipschitz with constant at most
    sum_k |c_k| / (s e^{1/2}), which `lipschitz_bound` reports so runs can log
    the guarantee behind trajectory non-crossing.
    """

    centers: np.ndarray  # (K, d)
    coefficients: np.ndarray  # (K, d)
    bandwidth: float

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64)
        self.coefficients = np.asarray(self.coefficients, dtype=np.float64)
        if self.centers.shape != self.coefficients.shape:
            raise ValueError("centers and coefficients must have matching shapes")
        if self.bandwidth <= 0.0:
            raise ValueError("bandwidth must be positive")

    def kernel(self, points: np.ndarray) -> np.ndarray:
        d2 = (
            np.einsum("nd,nd->n", points, points)[:, None]
            - 2.0 * points @ self.centers.T
            + np.einsum("kd,kd->k", self.centers, self.centers)[None, :]
        )
        return np.exp(-np.maximum(d2, 0.0) / (2.0 * self.bandwidth**2))

    def velocity(self, points: np.ndarray) -> np.ndarray:
        return self.kernel(points) @ self.coefficients

    def lipschitz_bound(self) -> float:
        norms = np.linalg.norm(self.coefficients, axis=1).sum()
        return float(norms / (self.bandwidth * np.exp(0.5)))


@dataclass(frozen=True)
class FlowConfig:
    """Fixed-step explicit integration on the uniform grid over [0, 1]."""

    integrator: str = "rk4"
    steps: int = 10

    def __post_init__(self):
        if self.integrator not in ("euler", "rk4"):
            raise ValueError("integrator must be 'euler' or 'rk4'")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")


@dataclass
class FlowTape:
    """States at the start of every integration step, for the reverse pass."""

    cfg: FlowConfig
    states: list[np.ndarray]


@dataclass
class FlowGradients:
    coefficients: np.ndarray  # (K, d)
    points: np.ndarray  # (n, d) gradient w.r.t. the initial points
    bandwidth: float | None = None


def _check_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite {what} during flow integration")


def _step(field: RBFVelocityField, x: np.ndarray, h: float, integrator: str) -> np.ndarray:
    if integrator == "euler":
        return x + h * field.velocity(x)
    k1 = field.velocity(x)
    k2 = field.velocity(x + 0.5 * h * k1)
    k3 = field.velocity(x + 0.5 * h * k2)
    k4 = field.velocity(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_flow(field: RBFVelocityField, points: np.ndarray, cfg: FlowConfig) -> np.ndarray:
    """Endpoints Phi(p, 1) of the flow; deterministic fixed-step scheme."""
    return integrate_flow_with_tape(field, points, cfg)[0]


def integrate_flow_with_tape(
    field: RBFVelocityField, points: np.ndarray, cfg: FlowConfig
) -> tuple[np.ndarray, FlowTape]:
    x = np.asarray(points, dtype=np.float64)
    _check_finite(x, "input points")
    h = 1.0 / cfg.steps
    states = []
    for _ in range(cfg.steps):
        states.append(x)
        x = _step(field, x, h, cfg.integrator)
        _check_finite(x, "state")
    return x, FlowTape(cfg=cfg, states=states)


def _field_vjps(field: RBFVelocityField, x: np.ndarray, cotangent: np.ndarray, want_sigma: bool):
    """VJPs of v(x) = K(x) @ C: returns (x_bar, coeff_bar, sigma_bar)."""
    K = field.kernel(x)  # (n, K)
    uc = cotangent @ field.coefficients.T  # (n, K): u . c_k per point/kernel
    s2 = field.bandwidth**2
    # grad_x phi_k = -phi_k (x - z_k) / s^2
    w = K * uc / s2
    x_bar = -(w.sum(axis=1)[:, None] * x - w @ field.centers)
    coeff_bar = K.T @ cotangent
    sigma_bar = None
    if want_sigma:
        d2 = (
            np.einsum("nd,nd->n", x, x)[:, None]
            - 2.0 * x @ field.centers.T
            + np.einsum("kd,kd->k", field.centers, field.centers)[None, :]
        )
        sigma_bar = float((K * uc * np.maximum(d2, 0.0)).sum() / field.bandwidth**3)
    return x_bar, coeff_bar, sigma_bar


def flow_gradient(
    field: RBFVelocityField,
    tape: FlowTape | None,
    upstream: np.ndarray,
    *,
    with_bandwidth: bool = False,
) -> FlowGradients:
    """Reverse accumulation of endpoint cotangents through the stored
    integration steps; stage states are recomputed from the taped step
    starts, so gradients are exact for the computed trajectory."""
    if tape is None or not tape.states:
        raise MissingTapeError("run integrate_flow_with_tape first")
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != tape.states[0].shape:
        raise MissingTapeError(
            f"upstream shape {upstream.shape} does not match taped points {tape.states[0].shape}"
        )
    h = 1.0 / tape.cfg.steps
    coeff_bar = np.zeros_like(field.coefficients)
    sigma_bar = 0.0
    x_bar = upstream
    for x in reversed(tape.states):
        if tape.cfg.integrator == "euler":
            xb, cb, sb = _field_vjps(field, x, h * x_bar, with_bandwidth)
            coeff_bar += cb
            if with_bandwidth:
                sigma_bar += sb
            x_bar = x_bar + xb
        else:
            k1 = field.velocity(x)
            a2 = x + 0.5 * h * k1
            k2 = field.velocity(a2)
            a3 = x + 0.5 * h * k2
            k3 = field.velocity(a3)
            a4 = x + h * k3

            k1_bar = (h / 6.0) * x_bar
            k2_bar = (h / 3.0) * x_bar
            k3_bar = (h / 3.0) * x_bar
            k4_bar = (h / 6.0) * x_bar

            new_x_bar = x_bar.copy()

            a4_bar, cb, sb = _field_vjps(field, a4, k4_bar, with_bandwidth)
            coeff_bar += cb
            if with_bandwidth:
                sigma_bar += sb
            new_x_bar += a4_bar
            k3_bar = k3_bar + h * a4_bar

            a3_bar, cb, sb = _field_vjps(field, a3, k3_bar, with_bandwidth)
            coeff_bar += cb
            if with_bandwidth:
                sigma_bar += sb
            new_x_bar += a3_bar
            k2_bar = k2_bar + 0.5 * h * a3_bar

            a2_bar, cb, sb = _field_vjps(field, a2, k2_bar, with_bandwidth)
            coeff_bar += cb
            if with_bandwidth:
                sigma_bar += sb
            new_x_bar += a2_bar
            k1_bar = k1_bar + 0.5 * h * a2_bar

            x1_bar, cb, sb = _field_vjps(field, x, k1_bar, with_bandwidth)
            coeff_bar += cb
            if with_bandwidth:
                sigma_bar += sb
            new_x_bar += x1_bar
            x_bar = new_x_bar
    return FlowGradients(
        coefficients=coeff_bar,
        points=x_bar,
        bandwidth=sigma_bar if with_bandwidth else None,
    )


def farthest_point_subset(points: np.ndarray, k: int) -> np.ndarray:
    """Indices of a farthest-point subsample, deterministic (starts at 0)."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if k >= n:
        return np.arange(n)
    chosen = [0]
    dist = np.linalg.norm(points - points[0], axis=1)
    for _ in range(k - 1):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(points - points[nxt], axis=1))
    return np.array(chosen, dtype=np.int64)


# ---------------------------------------------------------------------------
# Optimization loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OptimizerConfig:
    method: str = "sgd_momentum"
    learning_rate: float = 1.0
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    iterations: int = 1000

    def __post_init__(self):
        if self.method not in ("sgd_momentum", "adam"):
            raise ValueError("method must be 'sgd_momentum' or 'adam'")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")


@dataclass(frozen=True)
class LossSpec:
    """Which discrepancy drives the optimization and how shapes become
    measures.

    `reseed_projections` draws a fresh projection set every iteration
    (stochastic estimator); turning it off fixes the iteration-0 set, which
    gradient tests rely on. `resample_points` redraws sample-encoded points
    every iteration instead of fixing them once.
    """

    name: str = "swd"
    p: float = 2.0
    num_projections: int = 100
    epsilon: float = 1e-2
    encoding: str = "sample"
    sample_count: int = 678
    normal_weight: float = 1.0
    chamfer_accel: str = "kdtree"
    reseed_projections: bool = True
    resample_points: bool = False
    stratified: bool = True

    def __post_init__(self):
        if self.name not in ("swd", "chamfer", "sinkhorn"):
            raise ValueError("loss name must be 'swd', 'chamfer' or 'sinkhorn'")
        if self.encoding not in ("sample", "varifold"):
            raise ValueError("encoding must be 'sample' or 'varifold'")


@dataclass
class OptimizeResult:
    """`vertices` always holds the deformed positions; `shape` is None when
    the result violates the shape type's invariants (a Chamfer run can
    collapse consecutive contour points exactly onto each other)."""

    vertices: np.ndarray
    shape: TriangleMesh | Polyline2D | None
    loss_curve: np.ndarray
    wall_ns: np.ndarray
    model: DisplacementModel | RBFVelocityField
    lipschitz_bounds: np.ndarray | None = None


def projection_seed_for_iteration(seed: int, iteration: int) -> int:
    """Seed of the projection set used at a given iteration of optimize()."""
    return derive_seed(seed, _PROJ_TAG, iteration)


class _Encoder:
    """Differentiable (vertices -> measure) map for the movable side.

    Connectivity is captured from the source shape once; iterations work on
    raw vertex arrays so that transient states (for example Chamfer runs
    collapsing consecutive contour points onto each other) never have to
    re-enter the shape types.
    """

    def __init__(self, shape, spec: LossSpec, seed: int):
        self.spec = spec
        self.seed = seed
        self.is_mesh = isinstance(shape, TriangleMesh)
        if spec.encoding == "varifold":
            if not self.is_mesh:
                raise ValueError("varifold encoding requires a triangle mesh")
            self.faces = shape.faces
            return
        samples = self._draw(shape, 0)
        self._capture(shape, samples)

    def _draw(self, shape, iteration: int):
        state = SamplerState(derive_seed(self.seed, _SAMPLE_TAG, iteration))
        if self.is_mesh:
            return draw_surface_samples(shape, self.spec.sample_count, state)
        phase_state = None if self.spec.stratified else state
        return draw_polyline_samples(
            shape, self.spec.sample_count, phase_state, stratified=self.spec.stratified
        )

    def _capture(self, shape, samples) -> None:
        if self.is_mesh:
            self.vid = shape.faces[samples.face_indices]  # (m, 3) vertex ids
            self.coords = samples.barycentric
        else:
            n = shape.num_vertices
            start = samples.segment_indices
            self.vid = np.column_stack([start, (start + 1) % n if shape.closed else start + 1])
            self.coords = np.column_stack([1.0 - samples.offsets, samples.offsets])

    def _mesh(self, vertices: np.ndarray) -> TriangleMesh:
        return TriangleMesh(vertices, self.faces)

    def forward(self, source, vertices: np.ndarray, iteration: int) -> DiscreteMeasure:
        if self.spec.encoding == "varifold":
            return mesh_to_varifold(self._mesh(vertices), self.spec.normal_weight)
        if self.spec.resample_points and iteration > 0:
            # redrawing needs the deformed shape itself (areas change)
            self._capture(source, self._draw(source.with_vertices(vertices), iteration))
        points = np.einsum("mk,mkd->md", self.coords, vertices[self.vid])
        return DiscreteMeasure.from_points(points)

    def backward(self, vertices: np.ndarray, loss: LossValueGrad) -> np.ndarray:
        if self.spec.encoding == "varifold":
            return varifold_vertex_grad(
                self._mesh(vertices), loss.grad, loss.weight_grad, self.spec.normal_weight
            )
        grad = np.zeros_like(vertices)
        np.add.at(grad, self.vid, self.coords[:, :, None] * loss.grad[:, None, :])
        return grad


def _encode_target(shape, spec: LossSpec, seed: int) -> DiscreteMeasure:
    if spec.encoding == "varifold":
        if not isinstance(shape, TriangleMesh):
            raise ValueError("varifold encoding requires a triangle mesh")
        return mesh_to_varifold(shape, spec.normal_weight)
    state = SamplerState(derive_seed(seed, _SAMPLE_TAG, 0xFFFF))
    if isinstance(shape, Polyline2D):
        phase_state = None if spec.stratified else state
        return sample_polyline(shape, spec.sample_count, phase_state, stratified=spec.stratified)
    return sample_mesh(shape, spec.sample_count, state)


def _evaluate_loss(
    mu: DiscreteMeasure, nu: DiscreteMeasure, spec: LossSpec, seed: int, iteration: int
) -> LossValueGrad:
    need_wgrad = spec.encoding == "varifold"
    if spec.name == "swd":
        it = iteration if spec.reseed_projections else 0
        proj = sample_directions(
            spec.num_projections, mu.dim, projection_seed_for_iteration(seed, it)
        )
        return sliced_wasserstein(mu, nu, spec.p, proj, need_weight_grad=need_wgrad)
    if spec.name == "chamfer":
        return chamfer(mu, nu, accel=spec.chamfer_accel)
    return sinkhorn_divergence(
        mu, nu, spec.p, spec.epsilon, need_weight_grad=need_wgrad
    )


class _SGDMomentum:
    def __init__(self, shape, cfg: OptimizerConfig):
        self.cfg = cfg
        self.velocity = np.zeros(shape)

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.velocity = self.cfg.momentum * self.velocity + grad
        return params - self.cfg.learning_rate * self.velocity


class _Adam:
    def __init__(self, shape, cfg: OptimizerConfig):
        self.cfg = cfg
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        c = self.cfg
        self.t += 1
        self.m = c.beta1 * self.m + (1.0 - c.beta1) * grad
        self.v = c.beta2 * self.v + (1.0 - c.beta2) * grad * grad
        m_hat = self.m / (1.0 - c.beta1**self.t)
        v_hat = self.v / (1.0 - c.beta2**self.t)
        return params - c.learning_rate * m_hat / (np.sqrt(v_hat) + c.eps_adam)


def optimize(
    source: TriangleMesh | Polyline2D,
    target: TriangleMesh | Polyline2D,
    model: str = "displacement",
    loss: LossSpec | None = None,
    opt: OptimizerConfig | None = None,
    seed: int = 0,
    flow: FlowConfig | None = None,
    rbf_centers: int = 64,
    rbf_sigma: float | None = None,
) -> OptimizeResult:
    """Deform the source shape onto the target by gradient descent.

    Every iteration applies the model to the source vertices, rebuilds the
    movable measure (fixed-sample reapplication or full varifold
    recomputation with gradients through barycenters, normals and area
    weights), evaluates the loss, and takes an optimizer step. Runs are
    bit-reproducible for a given seed.
    """
    loss = loss or LossSpec()
    opt = opt or OptimizerConfig()
    flow = flow or FlowConfig()
    if model not in ("displacement", "rbf_flow"):
        raise ValueError("model must be 'displacement' or 'rbf_flow'")

    verts0 = source.vertices
    dim = verts0.shape[1]
    encoder = _Encoder(source, loss, seed)
    nu = _encode_target(target, loss, seed)

    if model == "displacement":
        disp = DisplacementModel.zeros(len(verts0), dim)
        params = disp.offsets
    else:
        centers = verts0[farthest_point_subset(verts0, rbf_centers)]
        if rbf_sigma is None:
            span = verts0.max(axis=0) - verts0.min(axis=0)
            rbf_sigma = 0.25 * float(np.linalg.norm(span))
        if rbf_sigma <= 0.0:
            raise ValueError("rbf_sigma must be positive for a degenerate bounding box")
        field = RBFVelocityField(centers, np.zeros_like(centers), rbf_sigma)
        params = field.coefficients

    stepper = (
        _SGDMomentum(params.shape, opt) if opt.method == "sgd_momentum" else _Adam(params.shape, opt)
    )

    curve = np.empty(opt.iterations)
    wall = np.empty(opt.iterations, dtype=np.int64)
    lips = np.empty(opt.iterations) if model == "rbf_flow" else None

    for it in range(opt.iterations):
        t0 = time.perf_counter_ns()
        if model == "displacement":
            disp.offsets = params
            moved = disp.apply(verts0)
            tape = None
        else:
            field.coefficients = params
            try:
                moved, tape = integrate_flow_with_tape(field, verts0, flow)
            except FloatingPointError as exc:
                raise DivergenceError(it) from exc
            lips[it] = field.lipschitz_bound()
        try:
            mu = encoder.forward(source, moved, it)
            lv = _evaluate_loss(mu, nu, loss, seed, it)
        except (ValueError, FloatingPointError) as exc:
            raise DivergenceError(it) from exc
        vertex_grad = encoder.backward(moved, lv)
        if model == "displacement":
            grad = vertex_grad
        else:
            grad = flow_gradient(field, tape, vertex_grad).coefficients
        params = stepper.step(params, grad)
        if not np.all(np.isfinite(params)):
            raise DivergenceError(it)
        curve[it] = lv.value
        wall[it] = time.perf_counter_ns() - t0

    if model == "displacement":
        disp.offsets = params
        final_vertices = disp.apply(verts0)
        final_model = disp
    else:
        field.coefficients = params
        final_vertices = integrate_flow(field, verts0, flow)
        final_model = field

    try:
        final_shape = source.with_vertices(final_vertices)
    except MeshError:
        final_shape = None
    return OptimizeResult(
        vertices=final_vertices,
        shape=final_shape,
        loss_curve=curve,
        wall_ns=wall,
        model=final_model,
        lipschitz_bounds=lips,
    )
