"""Exact Wasserstein-1 (Kantorovich-Rubinstein) distances between discrete measures.

Three independent routes:

* ``w1_1d``: integral of |F_mu - F_nu| for measures on the line;
* ``min_cost_flow``: successive shortest paths on the bipartite atom graph
  with integer-scaled supplies and costs;
* ``transport_lp`` / ``transport_enumerate``: the dense transportation LP
  solved by HiGHS, and exhaustive enumeration of basic solutions.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .errors import MassMismatch, SupportTooLarge
from .geometry import cluster_labels
from .measures import DiscreteMeasure

MASS_TOL = 1e-12
WEIGHT_SCALE = 10**12
COST_SCALE = 10**12
FLOW_CAP = 256


@dataclass
class TransportPlan:
    """Optimal coupling between ``sources`` and ``targets``.

    For plane measures the coupling is between the positive and negative
    parts of ``mu - nu`` (shared mass stays in place at zero cost).
    """

    flow: np.ndarray
    cost: float
    sources: np.ndarray
    targets: np.ndarray
    error_bound: float = 0.0


def _check_mass(a: float, b: float) -> None:
    if abs(a - b) > MASS_TOL * max(1.0, abs(a), abs(b)):
        raise MassMismatch(f"total masses differ: {a!r} vs {b!r}")


def cost_matrix(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    return np.linalg.norm(X[:, None, :] - Y[None, :, :], axis=2)


def w1_1d(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    """Exact W1 on the line: integral of the absolute CDF difference."""
    _check_mass(mu.total_mass, nu.total_mass)
    x = np.concatenate([mu.points[:, 0], nu.points[:, 0]])
    w = np.concatenate([mu.weights, -nu.weights])
    if len(x) == 0:
        return 0.0
    order = np.argsort(x, kind="stable")
    x, w = x[order], w[order]
    cdf = np.cumsum(w)[:-1]
    return float(np.sum(np.abs(cdf) * np.diff(x)))


def monotone_plan_1d(xs, ws, ys, vs) -> np.ndarray:
    """North-west-corner coupling of two sorted 1D atom lists (optimal on the line)."""
    n, m = len(ws), len(vs)
    flow = np.zeros((n, m))
    a, b = np.array(ws, dtype=float), np.array(vs, dtype=float)
    i = j = 0
    while i < n and j < m:
        t = min(a[i], b[j])
        flow[i, j] += t
        a[i] -= t
        b[j] -= t
        if a[i] <= b[j]:
            i += 1
        else:
            j += 1
    return flow


def _integerize(p: np.ndarray, scale: int) -> np.ndarray:
    """Round a probability vector to integers summing exactly to ``scale``."""
    raw = p * scale
    base = np.floor(raw).astype(np.int64)
    short = int(scale - base.sum())
    if short > 0:
        frac = raw - base
        base[np.argsort(-frac, kind="stable")[:short]] += 1
    elif short < 0:
        frac = raw - base
        base[np.argsort(frac, kind="stable")[: -short]] -= 1
    return base


def min_cost_flow(supply, demand, cost, weight_scale: int = WEIGHT_SCALE,
                  cost_scale: int = COST_SCALE) -> tuple[np.ndarray, float, float]:
    """Transportation problem by successive shortest augmenting paths.

    Supplies and costs are scaled to integers; returns ``(flow, cost, bound)``
    where ``bound`` covers the effect of that rounding on the optimal value.
    """
    supply = np.asarray(supply, dtype=float)
    demand = np.asarray(demand, dtype=float)
    cost = np.asarray(cost, dtype=float)
    n, m = cost.shape
    total = supply.sum()
    _check_mass(total, demand.sum())
    if total == 0 or n == 0 or m == 0:
        return np.zeros((n, m)), 0.0, 0.0
    cmax = float(cost.max()) or 1.0
    C = np.rint(cost / cmax * cost_scale)  # exact integers held in float64
    rem_s = _integerize(supply / total, weight_scale)
    rem_d = _integerize(demand / total, weight_scale)
    flow = np.zeros((n, m), dtype=np.int64)
    pot_s = np.zeros(n)
    pot_d = np.zeros(m)
    pot_t = 0.0
    inf = np.inf

    while rem_s.sum() > 0:
        dist_s = np.where(rem_s > 0, -pot_s, inf)
        dist_d = np.full(m, inf)
        dist_t = inf
        pred_s = np.full(n, -1)  # sink index feeding a source through a reverse arc
        pred_d = np.full(m, -1)  # source index feeding a sink
        pred_t = -1
        done_s = np.zeros(n, dtype=bool)
        done_d = np.zeros(m, dtype=bool)
        while True:
            cs = np.where(done_s, inf, dist_s)
            cd = np.where(done_d, inf, dist_d)
            i = int(np.argmin(cs))
            j = int(np.argmin(cd))
            best = min(cs[i], cd[j], dist_t)
            if best == inf:
                raise RuntimeError("no augmenting path; supplies and demands inconsistent")
            if dist_t == best:
                break
            if cs[i] == best:
                done_s[i] = True
                nd = best + C[i] + pot_s[i] - pot_d
                better = (~done_d) & (nd < dist_d)
                dist_d[better] = nd[better]
                pred_d[better] = i
            else:
                done_d[j] = True
                back = flow[:, j] > 0
                nd = best - C[:, j] + pot_d[j] - pot_s
                better = back & (~done_s) & (nd < dist_s)
                dist_s[better] = nd[better]
                pred_s[better] = j
                if rem_d[j] > 0:
                    ndt = best + pot_d[j] - pot_t
                    if ndt < dist_t:
                        dist_t, pred_t = ndt, j
        pot_s += np.minimum(dist_s, dist_t)
        pot_d += np.minimum(dist_d, dist_t)
        pot_t += dist_t

        # walk back from the sink side
        path = []
        j = pred_t
        while True:
            i = pred_d[j]
            path.append((i, j))
            if pred_s[i] < 0:
                break
            j = pred_s[i]
        i0 = path[-1][0]
        delta = min(int(rem_s[i0]), int(rem_d[pred_t]))
        for k in range(len(path) - 1):
            ii, _ = path[k]
            jj = pred_s[ii]
            delta = min(delta, int(flow[ii, jj]))
        for k, (ii, jj) in enumerate(path):
            flow[ii, jj] += delta
            if k < len(path) - 1:
                flow[ii, pred_s[ii]] -= delta
        rem_s[i0] -= delta
        rem_d[pred_t] -= delta

    plan = flow.astype(float) / weight_scale * total
    value = float((plan * cost).sum())
    bound = total * cmax * ((n + m) / weight_scale + 1.0 / cost_scale)
    return plan, value, bound


def transport_lp(supply, demand, cost) -> tuple[np.ndarray, float]:
    """Dense transportation LP over all n*m couplings (HiGHS)."""
    supply = np.asarray(supply, dtype=float)
    demand = np.asarray(demand, dtype=float)
    cost = np.asarray(cost, dtype=float)
    n, m = cost.shape
    A = np.zeros((n + m, n * m))
    for i in range(n):
        A[i, i * m:(i + 1) * m] = 1.0
    for j in range(m):
        A[n + j, j::m] = 1.0
    res = linprog(cost.ravel(), A_eq=A, b_eq=np.concatenate([supply, demand]),
                  bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(res.message)
    return res.x.reshape(n, m), float(res.fun)


def transport_enumerate(supply, demand, cost) -> tuple[np.ndarray, float]:
    """Minimum over all basic feasible couplings; exhaustive, for tiny supports only."""
    supply = np.asarray(supply, dtype=float)
    demand = np.asarray(demand, dtype=float)
    cost = np.asarray(cost, dtype=float)
    n, m = cost.shape
    if n * m > 16:
        raise SupportTooLarge("enumeration is limited to n*m <= 16")
    A = np.zeros((n + m, n * m))
    for i in range(n):
        A[i, i * m:(i + 1) * m] = 1.0
    for j in range(m):
        A[n + j, j::m] = 1.0
    rhs = np.concatenate([supply, demand])
    best, best_x = np.inf, None
    k = n + m - 1
    for cols in itertools.combinations(range(n * m), k):
        sub = A[:, cols]
        if np.linalg.matrix_rank(sub) < k:
            continue
        x, *_ = np.linalg.lstsq(sub, rhs, rcond=None)
        if np.abs(sub @ x - rhs).max() > 1e-12 or (x < -1e-12).any():
            continue
        val = float(cost.ravel()[list(cols)] @ x)
        if val < best:
            full = np.zeros(n * m)
            full[list(cols)] = np.clip(x, 0, None)
            best, best_x = val, full
    return best_x.reshape(n, m), best


def _net_parts(mu: DiscreteMeasure, nu: DiscreteMeasure):
    """Positive and negative parts of mu - nu on the union of supports."""
    X = np.vstack([mu.points, nu.points])
    w = np.concatenate([mu.weights, -nu.weights])
    labels, k = cluster_labels(X, max(mu.eps, nu.eps))
    net = np.bincount(labels, weights=w, minlength=k)
    first = np.full(k, len(X))
    np.minimum.at(first, labels, np.arange(len(X)))
    pts = X[first]
    scale = max(mu.total_mass, nu.total_mass, 1e-300)
    tiny = np.abs(net) <= 1e-15 * scale
    net[tiny] = 0.0
    pos, neg = net > 0, net < 0
    return pts[pos], net[pos], pts[neg], -net[neg]


def optimal_transport(mu: DiscreteMeasure, nu: DiscreteMeasure, method: str = "auto",
                      cap: int = FLOW_CAP) -> TransportPlan:
    """Optimal plan and exact W1 cost between equal-mass measures."""
    _check_mass(mu.total_mass, nu.total_mass)
    if method == "auto":
        method = "1d" if mu.dim == 1 else "flow"
    if method == "1d":
        ia = np.argsort(mu.points[:, 0], kind="stable")
        ib = np.argsort(nu.points[:, 0], kind="stable")
        flow = np.zeros((len(mu), len(nu)))
        flow[np.ix_(ia, ib)] = monotone_plan_1d(mu.points[ia, 0], mu.weights[ia],
                                                nu.points[ib, 0], nu.weights[ib])
        return TransportPlan(flow, w1_1d(mu, nu), mu.points, nu.points)
    if method == "full-flow":
        src, sw, dst, dw = mu.points, mu.weights, nu.points, nu.weights
    else:
        src, sw, dst, dw = _net_parts(mu, nu)
        # rebalance the tiny discrepancy left by rounding of the net weights
        if len(sw) and len(dw):
            dw = dw * (sw.sum() / dw.sum())
    if len(sw) == 0 or len(dw) == 0:
        return TransportPlan(np.zeros((len(sw), len(dw))), 0.0, src, dst)
    if max(len(sw), len(dw)) > cap:
        raise SupportTooLarge(f"{len(sw)}x{len(dw)} atoms exceeds the flow cap {cap}")
    C = cost_matrix(src, dst)
    if method in ("flow", "full-flow"):
        flow, value, bound = min_cost_flow(sw, dw, C)
        return TransportPlan(flow, value, src, dst, bound)
    if method == "lp":
        flow, value = transport_lp(sw, dw, C)
        return TransportPlan(flow, value, src, dst)
    if method == "enumerate":
        flow, value = transport_enumerate(sw, dw, C)
        return TransportPlan(flow, value, src, dst)
    raise ValueError(f"unknown method {method!r}")


def hutchinson_metric(mu: DiscreteMeasure, nu: DiscreteMeasure, method: str = "auto") -> float:
    """``sup_{Lip(a) <= 1} |mu(a) - nu(a)|`` computed as the W1 transport cost."""
    if method in ("auto", "1d") and mu.dim == 1:
        _check_mass(mu.total_mass, nu.total_mass)
        return w1_1d(mu, nu)
    return optimal_transport(mu, nu, method).cost


def quadtree_bound(mu: DiscreteMeasure, nu: DiscreteMeasure, levels: int = 30) -> float:
    """Cost of a feasible multiscale plan, hence an upper bound on W1.

    The signed measure mu - nu is matched inside dyadic cells of a square
    box, finest cells first; mass first matched inside a level-l cell pays
    that cell's diameter.
    """
    _check_mass(mu.total_mass, nu.total_mass)
    pp, pw, qp, qw = _net_parts(mu, nu)
    if len(pw) == 0:
        return 0.0
    X = np.vstack([pp, qp])
    sigma = np.concatenate([pw, -qw])
    lo = X.min(axis=0)
    side = float((X.max(axis=0) - lo).max())
    if side == 0.0:
        return 0.0
    d = X.shape[1]
    unmatched = np.abs(sigma).sum()
    cost = 0.0
    for level in range(levels, -1, -1):
        cells = np.minimum(np.floor((X - lo) / side * 2 ** level), 2 ** level - 1).astype(np.int64)
        _, inv = np.unique(cells, axis=0, return_inverse=True)
        remaining = np.abs(np.bincount(inv.ravel(), weights=sigma)).sum()
        cost += 0.5 * (unmatched - remaining) * side * 2.0 ** -level * np.sqrt(d)
        unmatched = remaining
    return float(cost)


def hutchinson_metric_bound(mu: DiscreteMeasure, nu: DiscreteMeasure, cap: int = FLOW_CAP) -> tuple[float, bool]:
    """Exact distance when feasible, else an upper bound.

    Returns ``(value, exact)``. Above the flow cap the bound is the smaller
    of the multiscale plan cost and ``extent * TV / 2`` with ``extent`` the
    diagonal of the joint bounding box.
    """
    try:
        return hutchinson_metric(mu, nu), True
    except SupportTooLarge:
        _, sw, _, dw = _net_parts(mu, nu)
        X = np.vstack([mu.points, nu.points])
        extent = float(np.linalg.norm(X.max(axis=0) - X.min(axis=0)))
        return min(quadtree_bound(mu, nu), extent * 0.5 * (sw.sum() + dw.sum())), False
