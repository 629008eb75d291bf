"""Discrepancies between discrete measures, each returning a value together
with analytic gradients for the first (movable) measure:

- exact 1D Wasserstein for arbitrary weighted supports (merged-CDF quantile
  integration),
- sliced Wasserstein via Monte Carlo projections,
- Chamfer distance (brute-force and kd-tree backends),
- debiased Sinkhorn divergence in the log domain,
- the three standard mesh regularizers used as a timing baseline.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .measures import DiscreteMeasure
from .mesh import TriangleMesh, face_geometry_arrays

__all__ = [
    "ProjectionSet",
    "LossValueGrad",
    "SinkhornWarning",
    "sample_directions",
    "wasserstein_1d",
    "sliced_wasserstein",
    "chamfer",
    "sinkhorn_divergence",
    "RegularizerLosses",
    "regularizer_suite",
    "loss_record",
]

_WSUM_TOL = 1e-9


class SinkhornWarning(UserWarning):
    """Sinkhorn iterations stopped before reaching the marginal tolerance."""


@dataclass(frozen=True)
class ProjectionSet:
    """Unit projection directions; regenerable exactly from (seed, L, d)."""

    directions: np.ndarray  # (L, d)
    seed: int | None = None

    def __post_init__(self):
        dirs = np.ascontiguousarray(np.asarray(self.directions, dtype=np.float64))
        if dirs.ndim != 2:
            raise ValueError("directions must have shape (L, d)")
        norms = np.linalg.norm(dirs, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-12):
            raise ValueError("every direction must have unit norm within 1e-12")
        dirs.setflags(write=False)
        object.__setattr__(self, "directions", dirs)

    @property
    def count(self) -> int:
        return len(self.directions)

    @property
    def dim(self) -> int:
        return self.directions.shape[1]


def sample_directions(L: int, d: int, seed: int) -> ProjectionSet:
    """L i.i.d. uniform directions on the (d-1)-sphere (normalized Gaussian
    vectors); deterministic per seed."""
    if L < 1 or d < 2:
        raise ValueError("need L >= 1 and d >= 2")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    vec = rng.standard_normal((L, d))
    norms = np.linalg.norm(vec, axis=1)
    while np.any(norms == 0.0):  # essentially impossible, kept for exactness
        bad = norms == 0.0
        vec[bad] = rng.standard_normal((int(bad.sum()), d))
        norms = np.linalg.norm(vec, axis=1)
    return ProjectionSet(vec / norms[:, None], seed=seed)


@dataclass(frozen=True)
class LossValueGrad:
    """Scalar loss with gradients for the movable measure's supports and,
    optionally, its weights. `grad` is None when gradient evaluation was
    skipped."""

    value: float
    grad: np.ndarray | None = None
    weight_grad: np.ndarray | None = None

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError(f"loss value must be finite, got {self.value!r}")


# ---------------------------------------------------------------------------
# 1D Wasserstein on weighted supports
# ---------------------------------------------------------------------------


def _uniform_weights(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def _check_weights(w: np.ndarray | None, n: int, name: str) -> np.ndarray:
    if w is None:
        return _uniform_weights(n)
    w = np.asarray(w, dtype=np.float64).ravel()
    if w.shape != (n,):
        raise ValueError(f"{name} weights must have one entry per value")
    if np.any(w < 0.0):
        raise ValueError(f"{name} weights must be nonnegative")
    if abs(w.sum() - 1.0) > _WSUM_TOL:
        raise ValueError(f"{name} weights must sum to 1, got {w.sum()!r}")
    return w


def _cost_pow(diff: np.ndarray, p: float) -> np.ndarray:
    if p == 2.0:
        return diff * diff
    if p == 1.0:
        return np.abs(diff)
    return np.abs(diff) ** p


def _dcost_pow(diff: np.ndarray, p: float) -> np.ndarray:
    if p == 2.0:
        return 2.0 * diff
    if p == 1.0:
        return np.sign(diff)
    return p * np.abs(diff) ** (p - 1.0) * np.sign(diff)


def _is_uniform(w: np.ndarray) -> bool:
    return bool(np.all(w == w[0]))


def _wasserstein_1d_batch(
    u: np.ndarray,
    v: np.ndarray,
    u_weights: np.ndarray,
    v_weights: np.ndarray,
    p: float,
    need_grad: bool = False,
    need_weight_grad: bool = False,
):
    """Exact W_p^p between 1D discrete measures, batched over columns.

    `u` is (n, L) and `v` is (m, L); weights apply to every column. The
    quantile functions are integrated over the merged CDF breakpoints, which
    handles unequal support counts and non-uniform weights exactly; the
    equal-count uniform case reduces to sorted pairwise matching and takes a
    fast path. Returns (values (L,), grad_u (n, L) or None,
    weight_grad_u (n, L) or None).

    Gradients follow the stable-sort coupling; the weight gradient is the 1D
    dual potential obtained from suffix sums of quantile cost differences
    (right-continuous at cumulative-weight ties).
    """
    n, L = u.shape
    m = v.shape[0]
    su = np.argsort(u, axis=0, kind="stable")
    sv = np.argsort(v, axis=0, kind="stable")
    us = np.take_along_axis(u, su, axis=0)
    vs = np.take_along_axis(v, sv, axis=0)

    uniform = _is_uniform(u_weights) and _is_uniform(v_weights)
    if uniform and n == m and not need_weight_grad:
        # uniform equal-count case: quantile matching is sorted-to-sorted
        diff = us - vs
        values = _cost_pow(diff, p).sum(axis=0) / n
        grad_u = None
        if need_grad:
            g_sorted = _dcost_pow(diff, p) / n
            grad_u = np.empty_like(u)
            np.put_along_axis(grad_u, su, g_sorted, axis=0)
        return values, grad_u, None

    cols = np.arange(L)
    if uniform:
        # breakpoints are column-independent; one merged CDF serves all
        cu = np.cumsum(np.full(n, u_weights[0]))
        cv = np.cumsum(np.full(m, v_weights[0]))
        cu[-1] = 1.0
        cv[-1] = 1.0
        qs = np.sort(np.concatenate([cu, cv]))
        iu = np.minimum(np.searchsorted(cu, qs, side="left"), n - 1)
        iv = np.minimum(np.searchsorted(cv, qs, side="left"), m - 1)
        masses = np.diff(qs, prepend=0.0)[:, None]
        diff = us[iu, :] - vs[iv, :]
        j_for_wgrad = np.minimum(np.searchsorted(cv, cu[:-1], side="right"), m - 1)
        u_ends = np.searchsorted(iu, np.arange(n), side="right")
        u_starts = np.searchsorted(iu, np.arange(n), side="left")
    else:
        # the sorted weight sequences differ per column, so every column gets
        # its own merged CDF; quantile indices are label counts in the stable
        # merged order of the breakpoints
        uws = np.take_along_axis(np.broadcast_to(u_weights[:, None], (n, L)), su, axis=0)
        vws = np.take_along_axis(np.broadcast_to(v_weights[:, None], (m, L)), sv, axis=0)
        cu = np.cumsum(uws, axis=0)
        cv = np.cumsum(vws, axis=0)
        cu[-1, :] = 1.0
        cv[-1, :] = 1.0
        merged = np.concatenate([cu, cv], axis=0)
        # stable timsort detects the two presorted runs, so this is a merge
        order = np.argsort(merged, axis=0, kind="stable")
        qs = np.take_along_axis(merged, order, axis=0)
        is_u = order < n
        before_u = np.cumsum(is_u, axis=0, dtype=np.int32)
        before_u -= is_u  # u-breakpoints strictly before each slot
        iu = np.minimum(before_u, n - 1)
        slots = np.arange(n + m, dtype=np.int32)[:, None]
        iv = np.minimum(slots - before_u, m - 1)
        masses = np.diff(qs, axis=0, prepend=0.0)
        diff = np.take_along_axis(us, iu, axis=0) - np.take_along_axis(vs, iv, axis=0)
        # positions of the u-breakpoints in the merged order, per column
        _, pu_flat = np.nonzero(is_u.T)
        pu = pu_flat.reshape(L, n).T.astype(np.int32)
        j_for_wgrad = np.clip(pu[:-1, :] - np.arange(n - 1, dtype=np.int32)[:, None], 0, m - 1)
        u_ends = pu + 1

    values = np.einsum("kl,kl->l", np.broadcast_to(masses, diff.shape), _cost_pow(diff, p))

    grad_u = None
    if need_grad:
        contrib = masses * _dcost_pow(diff, p)
        csum = np.vstack([np.zeros((1, L)), np.cumsum(contrib, axis=0)])
        if uniform:
            g_sorted = csum[u_ends, :] - csum[u_starts, :]
        else:
            # groups of equal iu are contiguous runs ending after each
            # u-breakpoint, so one gather plus a prefix difference suffices
            gathered = np.take_along_axis(csum, u_ends, axis=0)
            g_sorted = np.diff(gathered, axis=0, prepend=0.0)
        grad_u = np.empty_like(u)
        np.put_along_axis(grad_u, su, g_sorted, axis=0)

    weight_grad_u = None
    if need_weight_grad:
        # dual potential via suffix sums over breakpoint cost differences
        if n == 1:
            wg_sorted = np.zeros((1, L))
        else:
            if uniform:
                vj = vs[j_for_wgrad, :]
            else:
                vj = np.take_along_axis(vs, j_for_wgrad, axis=0)
            steps = _cost_pow(us[:-1, :] - vj, p) - _cost_pow(us[1:, :] - vj, p)
            wg_sorted = np.zeros((n, L))
            wg_sorted[:-1, :] = np.cumsum(steps[::-1, :], axis=0)[::-1, :]
        weight_grad_u = np.empty_like(u)
        np.put_along_axis(weight_grad_u, su, wg_sorted, axis=0)

    return values, grad_u, weight_grad_u


def wasserstein_1d(
    u_values: np.ndarray,
    u_weights: np.ndarray | None,
    v_values: np.ndarray,
    v_weights: np.ndarray | None,
    p: float = 2.0,
) -> float:
    """Exact W_p^p between two 1D discrete measures (None weights mean
    uniform). Equal-count uniform inputs reduce to sorted pairwise
    matching."""
    if p < 1.0:
        raise ValueError("p must be at least 1")
    u = np.asarray(u_values, dtype=np.float64).ravel()
    v = np.asarray(v_values, dtype=np.float64).ravel()
    if len(u) == 0 or len(v) == 0:
        raise ValueError("both measures need at least one support")
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        raise ValueError("support values must be finite")
    uw = _check_weights(u_weights, len(u), "u")
    vw = _check_weights(v_weights, len(v), "v")
    values, _, _ = _wasserstein_1d_batch(u[:, None], v[:, None], uw, vw, p)
    return float(values[0])


# ---------------------------------------------------------------------------
# Sliced Wasserstein
# ---------------------------------------------------------------------------


def sliced_wasserstein(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    p: float = 2.0,
    projections: ProjectionSet | None = None,
    *,
    need_grad: bool = True,
    need_weight_grad: bool = False,
) -> LossValueGrad:
    """Monte Carlo sliced Wasserstein: the average over the projection set of
    the exact 1D W_p^p between the pushed-forward measures.

    The support gradient applies the per-projection quantile coupling
    analytically; ties in projected values are resolved by stable sort order.
    """
    if p < 1.0:
        raise ValueError("p must be at least 1")
    if mu.dim != nu.dim:
        raise ValueError(f"dimension mismatch: {mu.dim} vs {nu.dim}")
    if projections is None:
        raise ValueError("a ProjectionSet is required")
    if projections.dim != mu.dim:
        raise ValueError(f"projection dimension {projections.dim} != measure dimension {mu.dim}")

    dirs = projections.directions
    L = len(dirs)
    U = mu.supports @ dirs.T
    V = nu.supports @ dirs.T
    values, grad_u, wgrad_u = _wasserstein_1d_batch(
        U, V, mu.weights, nu.weights, p, need_grad=need_grad, need_weight_grad=need_weight_grad
    )
    value = float(values.mean())
    grad = grad_u @ dirs / L if need_grad else None
    weight_grad = wgrad_u.mean(axis=1) if need_weight_grad else None
    return LossValueGrad(value, grad, weight_grad)


# ---------------------------------------------------------------------------
# Chamfer distance
# ---------------------------------------------------------------------------


def _as_points(obj) -> np.ndarray:
    if isinstance(obj, DiscreteMeasure):
        return obj.supports
    pts = np.asarray(obj, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError("point set must be 2D")
    return pts


def _nearest_brute(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Index of the nearest row of b for each row of a; O(|a||b|) reference."""
    b_sq = np.einsum("jd,jd->j", b, b)
    idx = np.empty(len(a), dtype=np.int64)
    chunk = max(1, 8_000_000 // max(len(b), 1))
    for s in range(0, len(a), chunk):
        block = a[s : s + chunk]
        d = np.einsum("id,id->i", block, block)[:, None] - 2.0 * block @ b.T + b_sq[None, :]
        idx[s : s + chunk] = np.argmin(d, axis=1)
    return idx


def chamfer(X, Y, accel: str = "kdtree") -> LossValueGrad:
    """Chamfer distance between point sets (measure weights are ignored):
    mean squared nearest-neighbor distance in both directions.

    The gradient for X includes both terms: each x's own nearest-neighbor
    pull and the pull from every y whose nearest neighbor is x. `accel`
    selects the brute-force O(nm) backend or the kd-tree backend; both
    compute the value from the matched indices with identical arithmetic.
    """
    x = _as_points(X)
    y = _as_points(Y)
    if len(x) == 0 or len(y) == 0:
        raise ValueError("Chamfer distance needs non-empty point sets")
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    if accel == "brute":
        idx_xy = _nearest_brute(x, y)
        idx_yx = _nearest_brute(y, x)
    elif accel == "kdtree":
        _, idx_xy = cKDTree(y).query(x, k=1)
        _, idx_yx = cKDTree(x).query(y, k=1)
    else:
        raise ValueError(f"unknown accel {accel!r}; use 'brute' or 'kdtree'")

    dxy = x - y[idx_xy]
    dyx = x[idx_yx] - y
    value = float(
        np.einsum("id,id->i", dxy, dxy).sum() / len(x)
        + np.einsum("jd,jd->j", dyx, dyx).sum() / len(y)
    )
    grad = 2.0 / len(x) * dxy
    np.add.at(grad, idx_yx, 2.0 / len(y) * dyx)
    return LossValueGrad(value, grad)


# ---------------------------------------------------------------------------
# Sinkhorn divergence (log domain, debiased)
# ---------------------------------------------------------------------------


def _sq_dists(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    sq = (
        np.einsum("id,id->i", x, x)[:, None]
        - 2.0 * x @ y.T
        + np.einsum("jd,jd->j", y, y)[None, :]
    )
    return np.maximum(sq, 0.0)


def _cost_matrix(sq: np.ndarray, p: float) -> np.ndarray:
    if p == 2.0:
        return sq
    return sq ** (p / 2.0)


_STAGE_ITERS = 8


def _lse_update(neg_Ce, offsets, axis, buf):
    """-LSE along `axis` of (offsets broadcast + neg_Ce), in units of 1/eps."""
    if axis == 0:
        np.add(neg_Ce, offsets[:, None], out=buf)
    else:
        np.add(neg_Ce, offsets[None, :], out=buf)
    mx = buf.max(axis=axis)
    np.subtract(buf, mx[:, None] if axis == 1 else mx[None, :], out=buf)
    np.exp(buf, out=buf)
    s = buf.sum(axis=axis)
    return -(np.log(s) + mx)


def _ot_asym(C, loga, logb, a, b, eps_list, max_iter, tol):
    """Log-domain Sinkhorn with an epsilon-scaling schedule; returns
    (f, g, converged).

    The column-marginal violation of the plan before a g-update is
    sum_j b_j |exp((g_j - g'_j)/eps) - 1| with g' the updated potential, so
    the stopping test is free given successive iterates.
    """
    n, m = C.shape
    f = np.zeros(n)
    g = np.zeros(m)
    buf = np.empty_like(C)
    neg_Ce = np.empty_like(C)
    viol = np.inf
    for stage, eps in enumerate(eps_list):
        last = stage == len(eps_list) - 1
        budget = max_iter if last else _STAGE_ITERS
        np.multiply(C, -1.0 / eps, out=neg_Ce)
        for _ in range(budget):
            g_new = eps * _lse_update(neg_Ce, loga + f / eps, 0, buf)
            if last:
                viol = float(np.abs(b * np.expm1((g - g_new) / eps)).sum())
            g = g_new
            f = eps * _lse_update(neg_Ce, logb + g / eps, 1, buf)
            if last and viol < tol:
                return f, g, True
    return f, g, False


def _ot_sym(C, loga, a, eps_list, max_iter, tol):
    """Symmetric potential for OT_eps(mu, mu) via the averaged fixed-point
    iteration."""
    f = np.zeros(C.shape[0])
    buf = np.empty_like(C)
    neg_Ce = np.empty_like(C)
    for stage, eps in enumerate(eps_list):
        last = stage == len(eps_list) - 1
        budget = max_iter if last else _STAGE_ITERS
        np.multiply(C, -1.0 / eps, out=neg_Ce)
        for _ in range(budget):
            t = eps * _lse_update(neg_Ce, loga + f / eps, 1, buf)
            delta = np.abs(t - f).max()
            f = 0.5 * (f + t)
            if last and delta < tol * eps:
                return f, True
    return f, False


def _eps_schedule(eps: float, cost_scale: float) -> list[float]:
    # anneal from the cost scale (but never below 10 * eps) halving down to
    # the target; warm-started continuation keeps iteration counts small even
    # when eps is far below the cost scale
    out = []
    e = max(10.0 * eps, cost_scale)
    while e > eps:
        out.append(e)
        e *= 0.5
    out.append(eps)
    return out


def sinkhorn_divergence(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    p: float = 2.0,
    epsilon: float = 1e-2,
    max_iter: int = 1000,
    tol: float = 1e-9,
    *,
    need_grad: bool = True,
    need_weight_grad: bool = False,
) -> LossValueGrad:
    """Debiased entropic OT: S_eps(mu, nu) = OT_eps(mu, nu)
    - OT_eps(mu, mu)/2 - OT_eps(nu, nu)/2 with cost |x - y|^p.

    Runs log-domain iterations under an epsilon-scaling schedule until the
    unfixed marginal violates by less than `tol` (L1); on non-convergence the
    value is still returned with a SinkhornWarning. Gradients come from the
    converged plans (envelope theorem) and the debiased dual potentials.
    """
    if mu.dim != nu.dim:
        raise ValueError(f"dimension mismatch: {mu.dim} vs {nu.dim}")
    if epsilon <= 0.0:
        raise ValueError("epsilon must be positive")
    x, y = mu.supports, nu.supports
    a, b = mu.weights, nu.weights
    if x.shape == y.shape and np.array_equal(x, y) and np.array_equal(a, b):
        # identical measures: debiasing makes the divergence exactly zero
        return LossValueGrad(
            0.0,
            np.zeros_like(x) if need_grad else None,
            np.zeros(len(a)) if need_weight_grad else None,
        )
    loga, logb = np.log(a), np.log(b)

    sq_xy = _sq_dists(x, y)
    sq_xx = _sq_dists(x, x)
    sq_yy = _sq_dists(y, y)
    C_xy = _cost_matrix(sq_xy, p)
    C_xx = _cost_matrix(sq_xx, p)
    C_yy = _cost_matrix(sq_yy, p)
    eps_list = _eps_schedule(epsilon, float(C_xy.max()))

    f_xy, g_xy, ok1 = _ot_asym(C_xy, loga, logb, a, b, eps_list, max_iter, tol)
    p_x, ok2 = _ot_sym(C_xx, loga, a, eps_list, max_iter, tol)
    p_y, ok3 = _ot_sym(C_yy, logb, b, eps_list, max_iter, tol)
    if not (ok1 and ok2 and ok3):
        warnings.warn(
            f"Sinkhorn did not reach tol={tol} within {max_iter} iterations",
            SinkhornWarning,
            stacklevel=2,
        )

    value = float(a @ (f_xy - p_x) + b @ (g_xy - p_y))

    grad = None
    weight_grad = None
    if need_grad:
        eps = epsilon
        pi_xy = np.exp(loga[:, None] + logb[None, :] + (f_xy[:, None] + g_xy[None, :] - C_xy) / eps)
        pi_xx = np.exp(loga[:, None] + loga[None, :] + (p_x[:, None] + p_x[None, :] - C_xx) / eps)
        if p == 2.0:
            h_xy = np.full_like(sq_xy, 2.0)
            h_xx = np.full_like(sq_xx, 2.0)
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                h_xy = p * sq_xy ** ((p - 2.0) / 2.0)
                h_xx = p * sq_xx ** ((p - 2.0) / 2.0)
            h_xy[sq_xy == 0.0] = 0.0
            h_xx[sq_xx == 0.0] = 0.0
        m_xy = pi_xy * h_xy
        m_xx = pi_xx * h_xx
        grad = (m_xy.sum(axis=1)[:, None] * x - m_xy @ y) - (
            m_xx.sum(axis=1)[:, None] * x - m_xx @ x
        )
        if need_weight_grad:
            weight_grad = f_xy - p_x
    return LossValueGrad(value, grad, weight_grad)


# ---------------------------------------------------------------------------
# Mesh regularizers (timing baseline)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegularizerLosses:
    edge_length: LossValueGrad
    normal_consistency: LossValueGrad
    laplacian_smoothing: LossValueGrad


def _edge_length_loss(mesh: TriangleMesh) -> LossValueGrad:
    edges = mesh.edges()
    d = mesh.vertices[edges[:, 0]] - mesh.vertices[edges[:, 1]]
    value = float(np.einsum("ed,ed->e", d, d).mean())
    grad = np.zeros_like(mesh.vertices)
    scale = 2.0 / len(edges)
    np.add.at(grad, edges[:, 0], scale * d)
    np.add.at(grad, edges[:, 1], -scale * d)
    return LossValueGrad(value, grad)


def _normal_consistency_loss(mesh: TriangleMesh) -> LossValueGrad:
    _, normals, _, degenerate = face_geometry_arrays(mesh)
    # adjacent pairs: interior manifold edges shared by exactly two faces
    pair_map: dict[tuple[int, int], list[int]] = {}
    for fi, f in enumerate(mesh.faces):
        for a, b in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0])):
            key = (int(min(a, b)), int(max(a, b)))
            pair_map.setdefault(key, []).append(fi)
    pairs = [
        (fs[0], fs[1])
        for fs in pair_map.values()
        if len(fs) == 2 and not (degenerate[fs[0]] or degenerate[fs[1]])
    ]
    grad = np.zeros_like(mesh.vertices)
    if not pairs:
        return LossValueGrad(0.0, grad)
    pa = np.array([p[0] for p in pairs])
    pb = np.array([p[1] for p in pairs])
    cos = np.einsum("kd,kd->k", normals[pa], normals[pb])
    value = float((1.0 - cos).mean())

    # d(1 - n_f . n_g)/dn_f = -n_g, pulled back through the unit-normal map
    g_normal = np.zeros_like(normals)
    scale = 1.0 / len(pairs)
    np.add.at(g_normal, pa, -scale * normals[pb])
    np.add.at(g_normal, pb, -scale * normals[pa])

    tri = mesh.vertices[mesh.faces]
    e1 = tri[:, 1] - tri[:, 0]
    e2 = tri[:, 2] - tri[:, 0]
    cross = np.cross(e1, e2)
    norm = np.linalg.norm(cross, axis=1)
    ok = np.nonzero(norm > 0.0)[0]
    n_hat = cross[ok] / norm[ok, None]
    gn = g_normal[ok]
    g_cross = (gn - n_hat * np.einsum("fd,fd->f", gn, n_hat)[:, None]) / norm[ok, None]
    g_x1 = np.cross(g_cross, e2[ok] - e1[ok])
    g_x2 = np.cross(e2[ok], g_cross)
    g_x3 = np.cross(g_cross, e1[ok])
    np.add.at(grad, mesh.faces[ok], np.stack([g_x1, g_x2, g_x3], axis=1))
    return LossValueGrad(value, grad)


def _laplacian_loss(mesh: TriangleMesh) -> LossValueGrad:
    nv = mesh.num_vertices
    edges = mesh.edges()
    deg = np.zeros(nv)
    np.add.at(deg, edges[:, 0], 1.0)
    np.add.at(deg, edges[:, 1], 1.0)
    nb_sum = np.zeros_like(mesh.vertices)
    np.add.at(nb_sum, edges[:, 0], mesh.vertices[edges[:, 1]])
    np.add.at(nb_sum, edges[:, 1], mesh.vertices[edges[:, 0]])
    has = deg > 0
    delta = np.zeros_like(mesh.vertices)
    delta[has] = mesh.vertices[has] - nb_sum[has] / deg[has, None]
    value = float(np.einsum("vd,vd->v", delta, delta).mean())

    # d/dv_w [sum_v |delta_v|^2 / V]: own term plus -delta_u / deg_u for each
    # neighbor u of w
    grad = 2.0 / nv * delta.copy()
    weighted = np.zeros_like(delta)
    weighted[has] = delta[has] / deg[has, None]
    np.add.at(grad, edges[:, 0], -2.0 / nv * weighted[edges[:, 1]])
    np.add.at(grad, edges[:, 1], -2.0 / nv * weighted[edges[:, 0]])
    return LossValueGrad(value, grad)


def regularizer_suite(mesh: TriangleMesh) -> RegularizerLosses:
    """Mesh edge loss (mean squared edge length), normal consistency
    (mean 1 - cos over adjacent face normals), and uniform Laplacian
    smoothing (mean squared displacement from the neighbor centroid), each
    with vertex gradients."""
    return RegularizerLosses(
        edge_length=_edge_length_loss(mesh),
        normal_consistency=_normal_consistency_loss(mesh),
        laplacian_smoothing=_laplacian_loss(mesh),
    )


def loss_record(
    loss_name: str,
    value: float,
    *,
    L: int | None = None,
    p: float | None = None,
    epsilon: float | None = None,
    seed: int | None = None,
    wall_time_ns: int | None = None,
) -> dict:
    """JSON-ready evaluation record for the benchmark harness."""
    record: dict = {"loss_name": loss_name, "value": float(value)}
    if L is not None:
        record["L"] = int(L)
    if p is not None:
        record["p"] = float(p)
    if epsilon is not None:
        record["epsilon"] = float(epsilon)
    if seed is not None:
        record["seed"] = int(seed)
    if wall_time_ns is not None:
        record["wall_time_ns"] = int(wall_time_ns)
    return record
