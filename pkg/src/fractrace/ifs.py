"""Self-similar systems of affine contractions, their expansive section h,
branch data and backward orbits.

Letters of words are 1-based (``j in 1..N``), matching the usual
alphabet ``{1, ..., N}``; internally maps are stored 0-based.
"""
from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BranchSetInfinite,
    CellAmbiguity,
    FractraceError,
    InputError,
    OrbitMeetsBranchSet,
    PostcriticalNotFinite,
)
from .geometry import PointIndex, as_points, cluster_labels, has_close_pair

EPS_REL = 1e-9
DEPTH_CAP = 64

Word = tuple[int, ...]


@dataclass(eq=False)
class ContractionMap:
    """Affine map ``x -> linear @ x + offset`` with two-sided Lipschitz bounds."""

    linear: np.ndarray
    offset: np.ndarray
    lower: float = 0.0
    upper: float = 0.0

    def __post_init__(self):
        self.linear = np.atleast_2d(np.asarray(self.linear, dtype=float))
        self.offset = np.atleast_1d(np.asarray(self.offset, dtype=float))
        sv = np.linalg.svd(self.linear, compute_uv=False)
        # for affine maps the distance ratio ranges exactly over [s_min, s_max]
        if not self.lower:
            self.lower = float(sv.min())
        if not self.upper:
            self.upper = float(sv.max())
        if not (0 < self.lower <= self.upper < 1):
            raise InputError(f"not a proper contraction: bounds ({self.lower}, {self.upper})")
        self._inv = np.linalg.inv(self.linear)

    @property
    def dim(self) -> int:
        return len(self.offset)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return x @ self.linear.T + self.offset

    def inverse(self, x: np.ndarray) -> np.ndarray:
        return (x - self.offset) @ self._inv.T


@dataclass(eq=False)
class Cell:
    """A region of K on which h acts as the inverse of map ``branch`` (1-based).

    1D cells are intervals given by two endpoints, 2D cells are triangles.
    """

    branch: int
    vertices: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        if self.vertices.ndim == 1:
            self.vertices = self.vertices.reshape(-1, 1)
        if self.vertices.shape[1] == 2:
            v0, v1, v2 = self.vertices
            self._T = np.linalg.inv(np.column_stack([v1 - v0, v2 - v0]))
            area2 = abs(np.linalg.det(np.column_stack([v1 - v0, v2 - v0])))
            longest = max(np.linalg.norm(v1 - v0), np.linalg.norm(v2 - v1), np.linalg.norm(v0 - v2))
            self._min_height = area2 / longest

    def contains(self, X: np.ndarray, tol: float) -> np.ndarray:
        if X.shape[1] == 1:
            lo, hi = sorted(self.vertices[:, 0])
            return (X[:, 0] >= lo - tol) & (X[:, 0] <= hi + tol)
        lam12 = (X - self.vertices[0]) @ self._T.T
        lam = np.column_stack([1 - lam12.sum(axis=1), lam12])
        return lam.min(axis=1) >= -tol / self._min_height


@dataclass(frozen=True)
class Point:
    """A point of K, optionally carrying the word that produced it.

    ``coords == apply_word(address, anchor)`` when an address is present.
    Branch points may carry a second expression in ``alt_address``.
    """

    coords: tuple[float, ...]
    address: Word | None = None
    anchor: tuple[float, ...] | None = None
    alt_address: Word | None = None

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.coords, dtype=float)


@dataclass(eq=False)
class SelfSimilarSystem:
    name: str
    maps: list[ContractionMap]
    cells: list[Cell]
    base_point: np.ndarray
    diam: float = 1.0
    declared_branch: list[dict] | None = None
    generic_point: np.ndarray | None = None
    definition: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if len(self.maps) < 2:
            raise InputError("a self-similar system needs at least two maps")
        self.base_point = np.atleast_1d(np.asarray(self.base_point, dtype=float))
        dims = {m.dim for m in self.maps}
        if len(dims) != 1 or self.dim not in dims:
            raise InputError("maps and base point disagree on dimension")
        if self.generic_point is None:
            self.generic_point = _fixed_point(self, (1, 2))
        self.generic_point = np.atleast_1d(np.asarray(self.generic_point, dtype=float))

    @property
    def N(self) -> int:
        return len(self.maps)

    @property
    def dim(self) -> int:
        return len(self.base_point)

    @property
    def eps(self) -> float:
        return EPS_REL * self.diam

    @property
    def c(self) -> float:
        """Upper contraction bound shared by all maps."""
        return max(m.upper for m in self.maps)

    @property
    def c_lower(self) -> float:
        return min(m.lower for m in self.maps)

    def gamma(self, j: int, X: np.ndarray) -> np.ndarray:
        return self.maps[j - 1](X)

    def apply_word_array(self, word: Word, X: np.ndarray) -> np.ndarray:
        X = as_points(X, self.dim)
        for j in reversed(word):
            X = self.maps[j - 1](X)
        return X

    def word_images(self, n: int, Y: np.ndarray) -> np.ndarray:
        """Array (N**n, P, d) of gamma_w(y) for all words w of length n.

        Word index is lexicographic with the first (outermost) letter most
        significant, i.e. the order of ``itertools.product(1..N, repeat=n)``.
        """
        Y = as_points(Y, self.dim)
        out = Y[None]
        for _ in range(n):
            out = np.stack([m(out.reshape(-1, self.dim)).reshape(out.shape) for m in self.maps])
            out = out.reshape(-1, *Y.shape)
        return out

    def in_region(self, X: np.ndarray, tol: float | None = None) -> np.ndarray:
        X = as_points(X, self.dim)
        tol = self.eps if tol is None else tol
        mask = np.zeros(len(X), dtype=bool)
        for cell in self.cells:
            mask |= cell.contains(X, tol)
        return mask

    def h(self, X: np.ndarray) -> np.ndarray:
        """Apply the expansive section once via the cell partition."""
        X = as_points(X, self.dim)
        out = np.full_like(X, np.nan)
        found = np.zeros(len(X), dtype=bool)
        spread = np.zeros(len(X))
        for cell in self.cells:
            mask = cell.contains(X, self.eps)
            if not mask.any():
                continue
            cand = self.maps[cell.branch - 1].inverse(X[mask])
            prev = out[mask]
            both = found[mask]
            gap = np.where(both, np.linalg.norm(np.nan_to_num(prev) - cand, axis=1), 0.0)
            spread[mask] = np.maximum(spread[mask], gap)
            out[mask] = np.where(both[:, None], prev, cand)
            found |= mask
        if not found.all():
            bad = X[~found][0]
            raise InputError(f"point {bad.tolist()} lies outside every cell")
        if (spread > self.eps).any():
            bad = X[spread > self.eps][0]
            raise CellAmbiguity(f"cells disagree at {bad.tolist()} (spread {spread.max():.3g})")
        return out

    def h_power(self, X: np.ndarray, k: int) -> np.ndarray:
        X = as_points(X, self.dim)
        for _ in range(k):
            X = self.h(X)
        return X

    def sample(self, m: int, depth: int = 24, rng=None) -> np.ndarray:
        """Points of K obtained from random words applied to the base point."""
        rng = np.random.default_rng(rng)
        X = np.repeat(self.base_point[None], m, axis=0)
        letters = rng.integers(0, self.N, size=(depth, m))
        for step in range(depth):
            new = np.empty_like(X)
            for j, f in enumerate(self.maps):
                sel = letters[step] == j
                new[sel] = f(X[sel])
            X = new
        return X

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "dim": self.dim,
            "diam": self.diam,
            "base_point": self.base_point.tolist(),
            "maps": [{"linear": m.linear.tolist(), "offset": m.offset.tolist()} for m in self.maps],
            "cells": [{"branch": c.branch, "vertices": c.vertices.tolist()} for c in self.cells],
        }
        if self.declared_branch:
            d["branch"] = [
                {k: (np.asarray(v).tolist() if k != "pair" else list(v)) for k, v in e.items()}
                for e in self.declared_branch
            ]
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _fixed_point(system: SelfSimilarSystem, word: Word) -> np.ndarray:
    x = system.base_point.copy()
    for _ in range(200):
        x = system.apply_word_array(word, x)[0]
    return x


def _coords(x, dim: int) -> np.ndarray:
    if isinstance(x, Point):
        return x.array
    return as_points(x, dim)[0]


def _point(coords: np.ndarray, address: Word | None = None, anchor=None, alt: Word | None = None) -> Point:
    anchor_t = None if anchor is None else tuple(float(v) for v in np.atleast_1d(anchor))
    return Point(tuple(float(v) for v in coords), address, anchor_t, alt)


def words(N: int, n: int):
    return itertools.product(range(1, N + 1), repeat=n)


def word_index(word: Word, N: int) -> int:
    idx = 0
    for j in word:
        idx = idx * N + (j - 1)
    return idx


def same_point(system: SelfSimilarSystem, p, q) -> bool:
    """Equality of points: addresses decide when both carry one, else geometry."""
    if isinstance(p, Point) and isinstance(q, Point):
        if p.address is not None and q.address is not None and p.anchor == q.anchor:
            ep = {p.address, p.alt_address} - {None}
            eq = {q.address, q.alt_address} - {None}
            if ep & eq:
                return True
            if len(p.address) == len(q.address):
                return False
    return bool(np.linalg.norm(_coords(p, system.dim) - _coords(q, system.dim)) <= system.eps)


def check_in_region(system: SelfSimilarSystem, X: np.ndarray) -> None:
    X = as_points(X, system.dim)
    bad = ~system.in_region(X)
    if bad.any():
        raise InputError(f"point {X[bad][0].tolist()} is outside the region of {system.name}")


def apply_word(system: SelfSimilarSystem, w: Word, x):
    """Evaluate ``gamma_{w_1} o ... o gamma_{w_k}(x)``.

    Returns a :class:`Point` when given one (address prepended), else an array.
    """
    x0 = _coords(x, system.dim)
    check_in_region(system, x0)
    y = system.apply_word_array(tuple(w), x0)[0]
    if isinstance(x, Point):
        if x.address is not None:
            return _point(y, tuple(w) + x.address, x.anchor)
        return _point(y, tuple(w), x.coords)
    return y


def apply_h(system: SelfSimilarSystem, x, k: int = 1):
    """Return ``h^k(x)``; exact address shift when the point carries a long enough address."""
    if k < 0:
        raise InputError("k must be non-negative")
    if isinstance(x, Point):
        if x.address is not None and len(x.address) >= k:
            rest = x.address[k:]
            coords = system.apply_word_array(rest, np.asarray(x.anchor))[0]
            return _point(coords, rest, x.anchor)
        y = system.h_power(x.array, k)[0]
        return _point(y)
    return system.h_power(_coords(x, system.dim), k)[0]


def preimages(system: SelfSimilarSystem, y) -> list[Point]:
    """``h^{-1}(y) = {gamma_j(y)}`` without multiplicity, lowest letter kept."""
    y0 = _coords(y, system.dim)
    imgs = np.array([m(y0[None])[0] for m in system.maps])
    labels, k = cluster_labels(imgs, system.eps)
    out = []
    base_addr = y.address if isinstance(y, Point) else None
    anchor = y.anchor if isinstance(y, Point) and y.address is not None else (
        y.coords if isinstance(y, Point) else y0)
    for lab in range(k):
        js = [j + 1 for j in np.flatnonzero(labels == lab)]
        addr = (js[0],) + (base_addr or ())
        alt = (js[1],) + (base_addr or ()) if len(js) > 1 else None
        out.append(_point(imgs[js[0] - 1], addr, anchor, alt))
    return out


def branch_index(system: SelfSimilarSystem, y, j: int) -> int:
    """``e(gamma_j(y), y) = #{i : gamma_i(y) = gamma_j(y)}``."""
    y0 = _coords(y, system.dim)
    imgs = np.array([m(y0[None])[0] for m in system.maps])
    d = np.linalg.norm(imgs - imgs[j - 1], axis=1)
    return int((d <= system.eps).sum())


@dataclass
class BranchData:
    branch_points: np.ndarray
    branch_preimages: np.ndarray
    pairs: list[tuple[int, int]]
    branch_values: np.ndarray
    postcritical: np.ndarray
    index_table: dict[tuple[int, int], int]
    declared: bool = False
    verification_residual: float = 0.0

    def as_points(self) -> list[Point]:
        return [
            _point(b, (i,), a, (j,))
            for b, a, (i, j) in zip(self.branch_points, self.branch_preimages, self.pairs)
        ]

    def to_dict(self) -> dict:
        return {
            "branch_set": self.branch_points.tolist(),
            "branch_values": self.branch_values.tolist(),
            "postcritical": self.postcritical.tolist(),
            "pairs": [list(p) for p in self.pairs],
            "declared": self.declared,
            "verification_residual": self.verification_residual,
        }


def _coincidence_points(system: SelfSimilarSystem) -> list[tuple[np.ndarray, int, int]]:
    """Solve gamma_i(y) = gamma_j(y) in closed form for every pair i < j."""
    found = []
    for i, j in itertools.combinations(range(system.N), 2):
        mi, mj = system.maps[i], system.maps[j]
        A = mi.linear - mj.linear
        rhs = mj.offset - mi.offset
        if np.abs(A).max() <= 1e-12:
            if np.linalg.norm(rhs) <= system.eps:
                raise BranchSetInfinite(f"maps {i + 1} and {j + 1} coincide")
            continue
        if np.linalg.matrix_rank(A, tol=1e-12) < system.dim:
            sol, *_ = np.linalg.lstsq(A, rhs, rcond=1e-12)
            if np.linalg.norm(A @ sol - rhs) > system.eps:
                continue
            direction = np.linalg.svd(A)[2][-1]
            for y in _line_meets_cells(system, sol, direction, i, j):
                found.append((y, i + 1, j + 1))
            continue
        y = np.linalg.solve(A, rhs)
        if system.in_region(as_points(y, system.dim))[0]:
            found.append((y, i + 1, j + 1))
    return found


def _line_meets_cells(system: SelfSimilarSystem, p0: np.ndarray, v: np.ndarray, i: int, j: int) -> list[np.ndarray]:
    """Points where the line p0 + t v meets the cells; a segment means a continuum."""
    hits = []
    for cell in system.cells:
        V = cell.vertices
        lo, hi = -np.inf, np.inf
        # barycentric coordinates are affine in t: lam(t) = lam0 + t dlam
        T = np.linalg.inv(np.column_stack([V[1] - V[0], V[2] - V[0]]))
        l12_0 = T @ (p0 - V[0])
        l12_d = T @ v
        lam0 = np.array([1 - l12_0.sum(), *l12_0])
        dlam = np.array([-l12_d.sum(), *l12_d])
        tol = system.eps / cell._min_height
        for a, b in zip(lam0, dlam):
            if abs(b) < 1e-15:
                if a < -tol:
                    lo, hi = np.inf, -np.inf
                continue
            t = (-tol - a) / b
            if b > 0:
                lo = max(lo, t)
            else:
                hi = min(hi, t)
        if lo > hi:
            continue
        if hi - lo > 1e3 * system.eps:
            raise BranchSetInfinite(f"maps {i + 1} and {j + 1} agree along a segment of K")
        hits.append(p0 + 0.5 * (lo + hi) * v)
    if not hits:
        return []
    labels, k = cluster_labels(np.array(hits), system.eps * 10)
    return [hits[np.flatnonzero(labels == lab)[0]] for lab in range(k)]


def _dedup_rows(X: np.ndarray, eps: float) -> np.ndarray:
    if len(X) == 0:
        return X
    labels, k = cluster_labels(X, eps)
    first = [np.flatnonzero(labels == lab)[0] for lab in range(k)]
    return _lex_sorted(X[first])


def _lex_sorted(X: np.ndarray) -> np.ndarray:
    if len(X) == 0:
        return X
    order = np.lexsort(X.T[::-1])
    return X[order]


def compute_branch_data(system: SelfSimilarSystem, depth_cap: int = DEPTH_CAP) -> BranchData:
    """Branch set, branch values, postcritical set and branch indices."""
    solved = _coincidence_points(system)
    residual = 0.0
    if system.declared_branch:
        entries = []
        for e in system.declared_branch:
            a = np.atleast_1d(np.asarray(e["preimage"], dtype=float))
            b = np.atleast_1d(np.asarray(e["point"], dtype=float))
            i, j = e["pair"]
            gi, gj = system.gamma(i, a[None])[0], system.gamma(j, a[None])[0]
            residual = max(residual, np.linalg.norm(gi - b), np.linalg.norm(gj - b))
            entries.append((b, a, (i, j)))
        disc = {tuple(np.round(y / system.eps).astype(int)) for y, _, _ in solved}
        decl = {tuple(np.round(a / system.eps).astype(int)) for _, a, _ in entries}
        if residual > system.eps or not decl <= disc:
            raise FractraceError(
                f"declared branch data of {system.name} does not verify (residual {residual:.3g})")
        declared = True
    else:
        entries = [(system.gamma(i, y[None])[0], y, (i, j)) for y, i, j in solved]
        declared = False

    # merge pairs that land on the same branch point
    if entries:
        pts = np.array([b for b, _, _ in entries])
        labels, k = cluster_labels(pts, system.eps)
        merged = [entries[np.flatnonzero(labels == lab)[0]] for lab in range(k)]
    else:
        merged = []
    merged.sort(key=lambda e: tuple(e[0]))
    B = np.array([e[0] for e in merged]).reshape(-1, system.dim)
    Bpre = np.array([e[1] for e in merged]).reshape(-1, system.dim)
    pairs = [e[2] for e in merged]
    C = _dedup_rows(system.h(B), system.eps) if len(B) else B

    P = np.zeros((0, system.dim))
    frontier = C
    for _ in range(depth_cap):
        fresh = frontier[~PointIndex(P, system.eps).contains(frontier)] if len(P) else frontier
        if len(fresh) == 0:
            break
        P = _dedup_rows(np.vstack([P, fresh]), system.eps)
        frontier = _dedup_rows(system.h(fresh), system.eps)
    else:
        raise PostcriticalNotFinite(f"forward orbit of the branch set not closed after {depth_cap} steps")

    table = {}
    for vi, c in enumerate(C):
        for j in range(1, system.N + 1):
            table[(vi, j)] = branch_index(system, c, j)
    return BranchData(B, Bpre, pairs, C, P, table, declared, float(residual))


def orbit_array(system: SelfSimilarSystem, b, r: int, check: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Coordinates (N**r, d) and 1-based addresses (N**r, r) of ``O_{b,r}``.

    Rows are in address-lexicographic order.
    """
    b0 = _coords(b, system.dim)
    pts = system.word_images(r, b0[None])[:, 0, :]
    addr = np.array(list(words(system.N, r)), dtype=int).reshape(len(pts), r)
    if check and r >= 1 and has_close_pair(pts, system.eps):
        raise OrbitMeetsBranchSet(f"O_(b,{r}) has fewer than N^{r} distinct points for b={b0.tolist()}")
    return pts, addr


def orbit(system: SelfSimilarSystem, b, r: int) -> list[Point]:
    """The r-th backward orbit ``h^{-r}(b)``, each point addressed from b."""
    if r < 0:
        raise InputError("r must be non-negative")
    b0 = _coords(b, system.dim)
    pts, addr = orbit_array(system, b0, r)
    return [_point(p, tuple(int(v) for v in a), b0) for p, a in zip(pts, addr)]


@dataclass
class CheckResult:
    passed: bool
    detail: str = ""
    value: float | None = None


@dataclass
class AssumptionReport:
    system: str
    depth: int
    checks: dict[str, CheckResult]
    branch: BranchData | None = None

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def failing(self) -> list[str]:
        return [k for k, c in self.checks.items() if not c.passed]

    def to_dict(self) -> dict:
        return {
            "system": self.system,
            "depth": self.depth,
            "passed": self.passed,
            "checks": {k: {"passed": c.passed, "detail": c.detail, "value": c.value}
                       for k, c in self.checks.items()},
        }


def check_standing_assumptions(system: SelfSimilarSystem, depth: int = 6, samples: int = 256, seed: int = 0) -> AssumptionReport:
    """Bounded-depth verification of the standing hypotheses on a system."""
    if depth < 1:
        raise InputError("depth must be >= 1")
    rng = np.random.default_rng(seed)
    checks: dict[str, CheckResult] = {}
    X = system.sample(samples, rng=rng)

    try:
        res = max(float(np.abs(system.h(m(X)) - X).max()) for m in system.maps)
        checks["section_identity"] = CheckResult(res <= system.eps, f"max |h(gamma_j(x)) - x| = {res:.3g}", res)
    except FractraceError as exc:
        checks["section_identity"] = CheckResult(False, str(exc))

    branch = None
    try:
        branch = compute_branch_data(system)
        checks["branch_set_finite"] = CheckResult(True, f"|B| = {len(branch.branch_points)}")
        checks["postcritical_finite"] = CheckResult(True, f"|P| = {len(branch.postcritical)}")
    except BranchSetInfinite as exc:
        checks["branch_set_finite"] = CheckResult(False, str(exc))
        checks["postcritical_finite"] = CheckResult(False, "branch set not finite")
    except PostcriticalNotFinite as exc:
        checks["branch_set_finite"] = CheckResult(True, "")
        checks["postcritical_finite"] = CheckResult(False, str(exc))
    except FractraceError as exc:
        checks["branch_set_finite"] = CheckResult(False, str(exc))
        checks["postcritical_finite"] = CheckResult(False, "branch data unavailable")

    if branch is not None:
        ok, detail = True, ""
        B = branch.branch_points
        idx = PointIndex(B, system.eps)
        if len(branch.postcritical) and idx.contains(branch.postcritical).any():
            ok, detail = False, "branch set meets postcritical set"
        for b in B:
            if not ok:
                break
            for r in range(1, depth + 1):
                try:
                    pts, _ = orbit_array(system, b, r)
                except OrbitMeetsBranchSet as exc:
                    ok, detail = False, str(exc)
                    break
                if idx.contains(pts).any():
                    ok, detail = False, f"h^-{r}({b.tolist()}) meets the branch set"
                    break
        checks["orbits_avoid_branch_set"] = CheckResult(ok, detail or f"verified to depth {depth}")

        P = branch.postcritical
        if len(P):
            far = np.min(np.linalg.norm(X[:, None, :] - P[None], axis=2), axis=1) > 1e-6 * system.diam
            V = X[far]
        else:
            V = X
        imgs = np.stack([m(V) for m in system.maps])
        worst = np.inf
        for j, k in itertools.combinations(range(system.N), 2):
            if len(V):
                worst = min(worst, float(np.linalg.norm(imgs[j] - imgs[k], axis=1).min()))
        in_p = bool(len(P) and PointIndex(P, system.eps).contains(imgs.reshape(-1, system.dim)).any())
        osc = worst > system.eps and not in_p
        checks["open_set_condition"] = CheckResult(
            osc, f"min separation of images on V = {worst:.3g}; images hit P: {in_p}", worst)
    else:
        checks["orbits_avoid_branch_set"] = CheckResult(False, "branch data unavailable")
        checks["open_set_condition"] = CheckResult(False, "branch data unavailable")

    return AssumptionReport(system.name, depth, checks, branch)
