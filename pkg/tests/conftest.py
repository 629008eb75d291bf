"""Shared oracles and helpers: LP optimal transport references and finite
differences, kept independent of the implementation paths they check."""

import numpy as np
import pytest
from scipy.optimize import linprog


def lp_transport_cost(u, u_weights, v, v_weights, p=2.0):
    """Exact 1D OT cost by linear programming over the full coupling."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    cost = np.abs(u[:, None] - v[None, :]) ** p
    return _solve_lp(cost, u_weights, v_weights)


def lp_transport_cost_nd(x, a, y, b, p=2.0):
    """Exact OT cost in R^d by linear programming."""
    sq = ((x[:, None, :] - y[None, :, :]) ** 2).sum(-1)
    cost = sq ** (p / 2.0)
    return _solve_lp(cost, a, b)


def _solve_lp(cost, a, b):
    n, m = cost.shape
    rows = []
    rhs = []
    for i in range(n):
        r = np.zeros((n, m))
        r[i, :] = 1.0
        rows.append(r.ravel())
        rhs.append(a[i])
    for j in range(m):
        r = np.zeros((n, m))
        r[:, j] = 1.0
        rows.append(r.ravel())
        rhs.append(b[j])
    res = linprog(
        cost.ravel(), A_eq=np.array(rows), b_eq=np.array(rhs), bounds=(0, None), method="highs"
    )
    assert res.status == 0, f"LP failed: {res.message}"
    return res.fun


def central_difference(fn, x, i, eps=1e-6):
    """Central finite difference of a scalar function along coordinate i of a
    flat parameter array."""
    xp = x.copy()
    xp.flat[i] += eps
    xm = x.copy()
    xm.flat[i] -= eps
    return (fn(xp) - fn(xm)) / (2.0 * eps)


def rel_err(a, b, floor=1e-12):
    return abs(a - b) / max(floor, abs(a) + abs(b))


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
