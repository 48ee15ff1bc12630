"""The C(K)-correspondence of continuous functions on the graph of the maps,
its tensor powers, rank-one operators and truncated frames.

A section of level n is stored through its N**n component functions
``xi_w(y) = xi(gamma_w(y), ..., y)`` evaluated on arrays of base points.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import null_space, orth

from .errors import AtomInExclusionWindow, InsufficientMembers, LevelMismatch
from .geometry import as_points, cluster_labels
from .ifs import EPS_REL, BranchData, SelfSimilarSystem, compute_branch_data
from .measures import DiscreteMeasure, TestFunction, transfer_f

DEFAULT_LEVELS = 16


class Section:
    """Element of the n-th tensor power, evaluated componentwise.

    ``fn(Y)`` maps base points of shape (P, d) to an array (N**n, P); the
    word order is that of :meth:`SelfSimilarSystem.word_images`.
    """

    def __init__(self, system: SelfSimilarSystem, level: int, fn: Callable[[np.ndarray], np.ndarray],
                 name: str = ""):
        self.system = system
        self.level = level
        self.fn = fn
        self.name = name

    def __call__(self, Y) -> np.ndarray:
        Y = as_points(Y, self.system.dim)
        out = np.asarray(self.fn(Y))
        return np.broadcast_to(out, (self.system.N ** self.level, len(Y)))

    def __repr__(self) -> str:
        return f"Section(level={self.level}, name={self.name!r})"

    @classmethod
    def from_graph_function(cls, system: SelfSimilarSystem, level: int, F, name: str = "") -> "Section":
        """Section from a function F(x, y) on pairs (gamma_w(y), y); always compatible."""

        def fn(Y):
            imgs = system.word_images(level, Y)  # (W, P, d)
            W, P, d = imgs.shape
            Yrep = np.broadcast_to(Y[None], imgs.shape)
            return F(imgs.reshape(-1, d), Yrep.reshape(-1, d)).reshape(W, P)

        return cls(system, level, fn, name)

    @classmethod
    def constant(cls, system: SelfSimilarSystem, level: int, vector) -> "Section":
        vec = np.asarray(vector, dtype=complex).reshape(-1, 1)
        return cls(system, level, lambda Y: np.repeat(vec, len(Y), axis=1), "const")

    @classmethod
    def from_function(cls, system: SelfSimilarSystem, a) -> "Section":
        """Level-0 section: an element of the coefficient algebra C(K)."""
        return cls(system, 0, lambda Y: np.asarray(a(Y))[None], getattr(a, "name", ""))

    def __add__(self, other: "Section") -> "Section":
        _same_level(self, other)
        return Section(self.system, self.level, lambda Y: self(Y) + other(Y))

    def __mul__(self, s: complex) -> "Section":
        return Section(self.system, self.level, lambda Y: s * self(Y))

    __rmul__ = __mul__

    def compatibility_defect(self, Y) -> float:
        """Largest |xi_w(y) - xi_w'(y)| over words with gamma_w(y) = gamma_w'(y)."""
        Y = as_points(Y, self.system.dim)
        vals = self(Y)
        imgs = self.system.word_images(self.level, Y)
        worst = 0.0
        for p in range(len(Y)):
            labels, k = cluster_labels(imgs[:, p, :], self.system.eps)
            if k == len(labels):
                continue
            for lab in range(k):
                v = vals[labels == lab, p]
                worst = max(worst, float(np.abs(v - v[0]).max()))
        return worst


def _same_level(xi: Section, eta: Section) -> None:
    if xi.level != eta.level:
        raise LevelMismatch(f"levels differ: {xi.level} vs {eta.level}")


def unit_section(system: SelfSimilarSystem, n: int) -> Section:
    """The constant section with every component N**(-n/2); its self inner product is 1."""
    return Section.constant(system, n, np.full(system.N ** n, system.N ** (-n / 2)))


def random_section(system: SelfSimilarSystem, n: int, rng, terms: int = 4, scale: float = 3.0) -> Section:
    """A random smooth complex function of (x, y) on the graph, hence compatible."""
    rng = np.random.default_rng(rng)
    d = system.dim
    coef = (rng.normal(size=terms) + 1j * rng.normal(size=terms)) / np.sqrt(terms)
    fx = rng.normal(scale=scale, size=(terms, d))
    fy = rng.normal(scale=scale, size=(terms, d))

    def F(X, Y):
        phase = X @ fx.T + Y @ fy.T
        return np.exp(1j * phase) @ coef

    return Section.from_graph_function(system, n, F, "random")


def inner_product(xi: Section, eta: Section) -> TestFunction:
    """``(xi|eta)(y) = sum_w conj(xi_w(y)) eta_w(y)`` with multiplicity."""
    _same_level(xi, eta)
    return TestFunction(lambda Y: np.sum(np.conj(xi(Y)) * eta(Y), axis=0), name="inner")


def left_action(a, xi: Section) -> Section:
    """``(phi(a) xi)_w(y) = a(gamma_w(y)) xi_w(y)``."""
    system = xi.system

    def fn(Y):
        imgs = system.word_images(xi.level, Y)
        W, P, d = imgs.shape
        return np.asarray(a(imgs.reshape(-1, d))).reshape(W, P) * xi(Y)

    return Section(system, xi.level, fn)


def right_action(xi: Section, a) -> Section:
    """``(xi a)_w(y) = xi_w(y) a(y)``."""
    return Section(xi.system, xi.level, lambda Y: xi(Y) * np.asarray(a(Y))[None])


def tensor(xi: Section, eta: Section) -> Section:
    """``(xi (x) eta)_{vw}(y) = xi_v(gamma_w(y)) eta_w(y)``."""
    system = xi.system
    m, n = xi.level, eta.level

    def fn(Y):
        imgs = system.word_images(n, Y)
        W, P, d = imgs.shape
        outer = xi(imgs.reshape(-1, d)).reshape(system.N ** m, W, P)
        return (outer * eta(Y)[None]).reshape(system.N ** (m + n), P)

    return Section(system, m + n, fn)


@dataclass
class RankOne:
    """The operator ``zeta -> left (right|zeta)``."""

    left: Section
    right: Section

    def __post_init__(self):
        _same_level(self.left, self.right)

    @property
    def level(self) -> int:
        return self.left.level


def rank_one_apply(theta: RankOne, zeta: Section) -> Section:
    _same_level(theta.right, zeta)
    return right_action(theta.left, inner_product(theta.right, zeta))


def compose(first: RankOne, second: RankOne) -> RankOne:
    """``theta_{xi,eta} theta_{zeta,omega} = theta_{xi (eta|zeta), omega}``."""
    return RankOne(right_action(first.left, inner_product(first.right, second.left)), second.right)


def in_jx(a, branch: BranchData, tol: float = EPS_REL) -> bool:
    """Whether ``a`` vanishes on the branch set (membership in the ideal J_X)."""
    if len(branch.branch_points) == 0:
        return True
    return bool(np.all(np.abs(a(branch.branch_points)) <= tol))


def alpha_endo(system: SelfSimilarSystem, a, n: int) -> TestFunction:
    """``x -> a(h^n(x))``."""
    return TestFunction(lambda X: a(system.h_power(X, n)), name=f"alpha^{n}({getattr(a, 'name', '')})")


def tilde(system: SelfSimilarSystem, a, n: int = 1) -> TestFunction:
    """``y -> sum of a over h^{-n}(y)``, each preimage counted once."""

    def fn(Y):
        imgs = system.word_images(n, Y)
        W, P, d = imgs.shape
        gaps = np.linalg.norm(imgs[:, None] - imgs[None], axis=3)  # (W, W, P)
        mult = (gaps <= system.eps).sum(axis=1)
        vals = np.asarray(a(imgs.reshape(-1, d))).reshape(W, P)
        return (vals / mult).sum(axis=0)

    return TestFunction(fn, name=f"tilde({getattr(a, 'name', '')})")


# truncated frames ----------------------------------------------------------

def _q(u):
    return np.sin(0.5 * np.pi * np.clip(u, 0.0, 1.0)) ** 2


def _orthonormal_complement(inner: np.ndarray, outer: np.ndarray) -> np.ndarray:
    """Orthonormal basis (columns) of span(outer) minus span(inner)."""
    if inner.shape[1] == 0:
        return outer
    proj = outer - inner @ (inner.conj().T @ outer)
    if proj.size == 0 or np.abs(proj).max() < 1e-12:
        return np.zeros((outer.shape[0], 0))
    return orth(proj, rcond=1e-10)


def _class_basis(labels: np.ndarray, k: int) -> np.ndarray:
    W = len(labels)
    basis = np.zeros((W, k))
    for lab in range(k):
        idx = labels == lab
        basis[idx, lab] = 1.0 / np.sqrt(idx.sum())
    return basis


@dataclass
class Frame:
    """Finite truncation of a countable tight frame of the n-th tensor power.

    Members are products of constant vectors with scalar profiles; the
    frame operator equals the projection onto admissible vectors exactly
    outside the ``exclusion_radius`` windows around degenerate fibres.
    """

    system: SelfSimilarSystem
    level: int
    vectors: list[np.ndarray]
    profiles: list[Callable[[np.ndarray], np.ndarray]]
    exclusion_radius: float
    degenerate_points: np.ndarray
    annulus_levels: int
    members_per_level: int
    reconstruction_error: float = field(default=np.nan)
    class_labels: list[np.ndarray] = field(default_factory=list)
    anchors: np.ndarray | None = None

    def default_grid(self) -> np.ndarray:
        return verification_grid(self.system, degenerate=self.degenerate_points, anchors=self.anchors)

    @property
    def size(self) -> int:
        return len(self.vectors)

    @property
    def members(self) -> list[Section]:
        return [Section(self.system, self.level, _member_fn(v, prof), "frame")
                for v, prof in zip(self.vectors, self.profiles)]

    def stacked(self, Y) -> np.ndarray:
        """All member values at once, shape (M, N**n, P)."""
        Y = as_points(Y, self.system.dim)
        return np.stack([v[:, None] * prof(Y)[None] for v, prof in zip(self.vectors, self.profiles)])

    def operator(self, Y) -> np.ndarray:
        """Frame operator ``sum_i u_i(y) u_i(y)^*`` as (P, N**n, N**n)."""
        U = self.stacked(Y)
        return np.einsum("mwp,mvp->pwv", U, U.conj())

    def distance(self, Y) -> np.ndarray:
        Y = as_points(Y, self.system.dim)
        if len(self.degenerate_points) == 0:
            return np.full(len(Y), np.inf)
        return np.min(np.linalg.norm(Y[:, None, :] - self.degenerate_points[None], axis=2), axis=1)

    def outside_windows(self, Y) -> np.ndarray:
        d = self.distance(Y)
        return (d >= self.exclusion_radius) | (d <= self.system.eps)

    def admissible_projection(self, Y) -> np.ndarray:
        """Projection onto V_y = {v : v_w = v_w' when gamma_w(y) = gamma_w'(y)}."""
        Y = as_points(Y, self.system.dim)
        W = self.system.N ** self.level
        imgs = self.system.word_images(self.level, Y)
        out = np.empty((len(Y), W, W))
        for p in range(len(Y)):
            labels, k = cluster_labels(imgs[:, p, :], self.system.eps)
            B = _class_basis(labels, k)
            out[p] = B @ B.T
        return out

    def frame_sum(self, a) -> TestFunction:
        """``y -> sum_i (u_i | phi(a) u_i)(y)``."""
        system = self.system

        def fn(Y):
            U = self.stacked(Y)
            diag = np.sum(np.abs(U) ** 2, axis=0)  # (W, P)
            imgs = system.word_images(self.level, Y)
            W, P, d = imgs.shape
            vals = np.asarray(a(imgs.reshape(-1, d))).reshape(W, P)
            return np.sum(vals * diag, axis=0)

        return TestFunction(fn, name="frame_sum")


def _member_fn(v, prof):
    return lambda Y: v[:, None] * prof(Y)[None]


def _annulus(p, r0, k):
    # Q_k = q(2(k+1) d / r0 - 1) increases with k; squares of the profiles telescope
    def prof(Y):
        d = np.linalg.norm(Y - p, axis=1)
        hi = _q(2 * (k + 1) * d / r0 - 1)
        lo = _q(2 * k * d / r0 - 1) if k > 0 else 0.0
        return np.sqrt(np.clip(hi - lo, 0.0, None))

    return prof


def _localizer(p, r0):
    def prof(Y):
        d = np.linalg.norm(Y - p, axis=1)
        return np.sqrt(1.0 - _q(d / r0 - 1.0))

    return prof


def _far_profile(points, r0):
    def prof(Y):
        total = np.zeros(len(Y))
        for p in points:
            d = np.linalg.norm(Y - p, axis=1)
            total += 1.0 - _q(d / r0 - 1.0)
        return np.sqrt(np.clip(1.0 - total, 0.0, None))

    return prof


def _ones(Y):
    return np.ones(len(Y))


def _product(f, g):
    return lambda Y: f(Y) * g(Y)


def degenerate_fibres(system: SelfSimilarSystem, n: int, branch: BranchData | None = None):
    """Points y where two words of length n give the same image, with the word classes."""
    branch = compute_branch_data(system) if branch is None else branch
    cands = [c for c in branch.branch_values] + [p for p in branch.postcritical]
    if not cands:
        return np.zeros((0, system.dim)), [], np.zeros((0, system.dim))
    cands = np.array(cands)
    labels, k = cluster_labels(cands, system.eps)
    cands = cands[[np.flatnonzero(labels == lab)[0] for lab in range(k)]]
    pts, classes = [], []
    for p in cands:
        imgs = system.word_images(n, p[None])[:, 0, :]
        lab, kk = cluster_labels(imgs, system.eps)
        if kk < len(lab):
            pts.append(p)
            classes.append(lab)
    if not pts:
        return np.zeros((0, system.dim)), [], cands
    order = np.lexsort(np.array(pts).T[::-1])
    return np.array(pts)[order], [classes[i] for i in order], cands


def build_truncated_frame(system: SelfSimilarSystem, n: int = 1, M: int | None = None,
                          branch: BranchData | None = None, grid=None) -> Frame:
    """Truncated tight frame of the n-th tensor power with M (or fewer) members.

    Constant members span the vectors admissible at every fibre; members
    missing at a degenerate fibre p are modulated by annulus profiles
    around p. With L blocks of annuli the frame identity is exact at
    distance >= r0 / L from the degenerate set.
    """
    W = system.N ** n
    if M is not None and M < W:
        raise InsufficientMembers(f"need at least N^n = {W} members, got {M}")
    D, classes, anchors = degenerate_fibres(system, n, branch)
    vectors: list[np.ndarray] = []
    profiles: list[Callable] = []

    if len(D) == 0:
        for w in range(W):
            e = np.zeros(W)
            e[w] = 1.0
            vectors.append(e)
            profiles.append(_ones)
        frame = Frame(system, n, vectors, profiles, 0.0, D, 0, 0, anchors=anchors)
        frame.reconstruction_error = measure_reconstruction(frame, grid)
        return frame

    # join of all coincidence partitions: vectors admissible at every fibre
    parent = list(range(W))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for lab in classes:
        for c in np.unique(lab):
            idx = np.flatnonzero(lab == c)
            for w in idx[1:]:
                parent[find(w)] = find(idx[0])
    roots = np.array([find(w) for w in range(W)])
    _, joint = np.unique(roots, return_inverse=True)
    B_W = _class_basis(joint, joint.max() + 1)
    V = [_class_basis(lab, lab.max() + 1) for lab in classes]
    perp = [null_space(B.T) for B in V]
    per_level = sum(P.shape[1] for P in perp)

    single = len(D) == 1
    if single:
        base = B_W.shape[1]
        r0 = 0.25 * system.diam
    else:
        extra = [_orthonormal_complement(B_W, B) for B in V]
        base = W + sum(E.shape[1] for E in extra)
        sep = min(np.linalg.norm(p - q) for i, p in enumerate(D) for q in D[i + 1:])
        r0 = min(0.25 * system.diam, 0.25 * sep)

    if M is None:
        M = base + DEFAULT_LEVELS * per_level
    levels = (M - base) // per_level
    if levels < 1:
        raise InsufficientMembers(
            f"this level needs at least {base + per_level} members (got {M})")

    for col in B_W.T:
        vectors.append(col)
        profiles.append(_ones)
    if not single:
        far = _far_profile(D, r0)
        for col in null_space(B_W.T).T:
            vectors.append(col)
            profiles.append(far)
    for idx, p in enumerate(D):
        loc = _ones if single else _localizer(p, r0)
        if not single:
            for col in extra[idx].T:
                vectors.append(col)
                profiles.append(loc)
        for k in range(levels):
            ann = _annulus(p, r0, k)
            prof = ann if single else _product(loc, ann)
            for col in perp[idx].T:
                vectors.append(col)
                profiles.append(prof)

    radius = r0 / levels
    frame = Frame(system, n, vectors, profiles, radius, D, levels, per_level, class_labels=classes,
                  anchors=anchors)
    frame.reconstruction_error = measure_reconstruction(frame, grid)
    return frame


def fibre_approach_points(system: SelfSimilarSystem, p: np.ndarray, depth: int = 48,
                          per_depth: int = 4, rng=0, anchors=None) -> np.ndarray:
    """Points of K accumulating at p, taken from the cylinders of p's itinerary.

    ``anchors`` (the finite h-invariant set p belongs to) stops round-off
    from growing along the itinerary.
    """
    rng = np.random.default_rng(rng)
    seeds = np.vstack([system.sample(per_depth, depth=12, rng=rng), system.base_point[None]])
    word: list[int] = []
    x = p.copy()
    out = []
    for _ in range(depth):
        cell = next(c for c in system.cells if c.contains(x[None], system.eps)[0])
        word.append(cell.branch)
        x = system.maps[cell.branch - 1].inverse(x[None])[0]
        if anchors is not None and len(anchors):
            gaps = np.linalg.norm(anchors - x, axis=1)
            if gaps.min() <= 1e3 * system.eps:
                x = anchors[np.argmin(gaps)].copy()
        out.append(system.apply_word_array(tuple(word), seeds))
    return np.vstack(out)


def verification_grid(system: SelfSimilarSystem, points_per_cell: int = 512,
                      degenerate=None, rng=0, anchors=None) -> np.ndarray:
    """Uniform grid per 1D cell (random K-sample in 2D) plus points approaching each fibre.

    In one dimension the cells tile an interval, so approach points are a
    geometric radial grid; in the plane they come from fibre itineraries.
    """
    parts = []
    if system.dim == 1:
        for cell in system.cells:
            lo, hi = sorted(cell.vertices[:, 0])
            parts.append(np.linspace(lo, hi, points_per_cell)[:, None])
    else:
        parts.append(system.sample(points_per_cell * len(system.cells), depth=16, rng=rng))
    if degenerate is not None:
        for p in degenerate:
            parts.append(p[None])
            if system.dim == 1:
                radii = np.geomspace(1e3 * system.eps, system.diam, 16000)[:, None]
                near = np.vstack([p - radii, p + radii])
                parts.append(near[system.in_region(near, 0.0)])
            else:
                parts.append(fibre_approach_points(system, p, depth=24, per_depth=128, rng=rng, anchors=anchors))
    return np.vstack(parts)


def measure_reconstruction(frame: Frame, grid=None) -> float:
    """Sup over grid points outside the windows of |frame operator - projection|."""
    if grid is None:
        grid = frame.default_grid()
    Y = grid[frame.outside_windows(grid)]
    if len(Y) == 0:
        return 0.0
    err = 0.0
    for chunk in np.array_split(Y, max(1, len(Y) // 256)):
        diff = frame.operator(chunk) - frame.admissible_projection(chunk)
        err = max(err, float(np.abs(diff).max()))
    return err


def frame_residuals(frame: Frame, a, grid) -> tuple[np.ndarray, np.ndarray]:
    """Distance to the degenerate set and |frame_sum(a) - tilde(a)| at each grid point."""
    grid = as_points(grid, frame.system.dim)
    lhs = frame.frame_sum(a)(grid)
    rhs = tilde(frame.system, a, frame.level)(grid)
    return frame.distance(grid), np.abs(lhs - rhs)


def verify_frame_sum(frame: Frame, a, grid=None) -> float:
    """Max over the grid, outside the windows, of |sum_i (u_i|phi(a)u_i) - tilde(a)|."""
    if grid is None:
        grid = frame.default_grid()
    grid = as_points(grid, frame.system.dim)
    keep = frame.outside_windows(grid)
    if not keep.any():
        return 0.0
    _, res = frame_residuals(frame, a, grid[keep])
    return float(res.max())


def measured_window(frame: Frame, a, tol: float = 1e-3, grid=None) -> float:
    """Smallest radius beyond which the frame-sum residual stays within ``tol``."""
    if grid is None:
        grid = frame.default_grid()
    d, res = frame_residuals(frame, a, grid)
    bad = (res > tol) & (d > frame.system.eps)
    return float(d[bad].max()) if bad.any() else 0.0


@dataclass
class TransferCheck:
    lhs: complex
    rhs: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return abs(self.lhs - self.rhs) <= self.tolerance


def frame_transfer_check(frame: Frame, mu: DiscreteMeasure, a, a_sup: float | None = None) -> TransferCheck:
    """Compare ``sum_i mu((u_i|phi(a)u_i))`` with ``F^n(mu)(a)``."""
    if len(mu) == 0:
        return TransferCheck(0.0, 0.0, 0.0)
    d = frame.distance(mu.points)
    inside = (d < frame.exclusion_radius) & (d > frame.system.eps)
    if inside.any():
        raise AtomInExclusionWindow(
            f"atom {mu.points[inside][0].tolist()} lies within {frame.exclusion_radius:.3g} of a degenerate fibre")
    lhs = mu.integrate(frame.frame_sum(a))
    rhs = transfer_f(frame.system, mu, frame.level).integrate(a)
    if a_sup is None:
        imgs = frame.system.word_images(frame.level, mu.points)
        a_sup = float(np.abs(a(imgs.reshape(-1, frame.system.dim))).max())
    W = frame.system.N ** frame.level
    tol = mu.total_mass * W * a_sup * frame.reconstruction_error + 1e-12 * max(1.0, abs(rhs))
    return TransferCheck(lhs, float(rhs), tol)
