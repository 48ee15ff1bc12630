"""Finite traces on the core, encoded by their level measures.

A trace is ingested as the sequence mu_0, ..., mu_R of measures on K that
describe its restrictions to the compacts of each tensor power. The model
traces are the discrete ones attached to backward orbits of branch points
and the Hutchinson trace; every trace is a combination of these.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .correspondence import (RankOne, compose, inner_product, random_section, right_action,
                             unit_section)
from .errors import InputError, LevelMismatch, NegativeResidual, NotTracial, UnequalOrbitMasses
from .geometry import PointIndex, as_points
from .ifs import DEPTH_CAP, BranchData, SelfSimilarSystem, compute_branch_data, orbit_array
from .measures import (DiscreteMeasure, TestFunction, bump, constant, coordinate, distance_to, dual_g,
                       hutchinson_error_bound, hutchinson_estimate, model_level_measure, transfer_f)
from .transport import hutchinson_metric_bound, w1_1d

COMPAT_TOL = 1e-10
ORBIT_MASS_TOL = 1e-9
NEGATIVE_TOL = 1e-9
ESTIMATE_ATOMS = 20_000
FLOW_ATOMS = 256


# level measures and coefficients ------------------------------------------

@dataclass
class LevelMeasures:
    """Measures mu_0, ..., mu_R of a trace, one per tensor level.

    ``certified_error`` is the Hutchinson-metric error carried by any
    estimated continuous part; ``atom_tolerance`` bounds the atoms that
    estimate is allowed to have.
    """

    levels: list[DiscreteMeasure]
    certified_error: float = 0.0
    atom_tolerance: float = 0.0

    @property
    def R(self) -> int:
        return len(self.levels) - 1

    def __getitem__(self, n: int) -> DiscreteMeasure:
        return self.levels[n]

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        entries = []
        for n, mu in enumerate(self.levels):
            name = f"level_{n:03d}.csv"
            mu.to_csv(directory / name)
            entries.append({"level": n, "file": name, "atoms": len(mu), "mass": mu.total_mass})
        manifest = {
            "dim": self.levels[0].dim if self.levels else 1,
            "levels": entries,
            "certified_error": self.certified_error,
            "atom_tolerance": self.atom_tolerance,
        }
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))

    @classmethod
    def load(cls, directory) -> "LevelMeasures":
        directory = Path(directory)
        try:
            manifest = json.loads((directory / "manifest.json").read_text())
            entries = sorted(manifest["levels"], key=lambda e: e["level"])
        except (KeyError, json.JSONDecodeError) as exc:
            raise InputError(f"malformed manifest in {directory}: {exc}") from exc
        if [e["level"] for e in entries] != list(range(len(entries))):
            raise InputError("manifest levels must be 0, 1, ..., R")
        dim = int(manifest.get("dim", 1))
        levels = [DiscreteMeasure.from_csv(directory / e["file"], dim=dim) for e in entries]
        return cls(levels, float(manifest.get("certified_error", 0.0)),
                   float(manifest.get("atom_tolerance", 0.0)))


def _key(b) -> tuple[float, ...]:
    return tuple(float(v) for v in np.atleast_1d(np.asarray(b, dtype=float)))


@dataclass
class TraceCoefficients:
    """Coefficients c_{b,r} of the discrete model traces and c_inf of the Hutchinson one."""

    discrete: dict[tuple[tuple[float, ...], int], float] = field(default_factory=dict)
    c_inf: float = 0.0
    unit_value: float | None = None

    def unit(self, N: int) -> float:
        return sum(N ** r * c for (_, r), c in self.discrete.items()) + self.c_inf

    def get(self, b, r: int) -> float:
        return self.discrete.get((_key(b), r), 0.0)

    def to_dict(self) -> dict:
        items = sorted(self.discrete.items())
        return {
            "discrete": [{"b": list(b), "r": r, "c": c} for (b, r), c in items],
            "c_inf": self.c_inf,
            "unit_value": self.unit_value,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "TraceCoefficients":
        try:
            disc = {}
            for e in d.get("discrete", []):
                c = float(e["c"])
                if c < 0:
                    raise InputError("coefficients must be nonnegative")
                disc[(_key(e["b"]), int(e["r"]))] = c
            c_inf = float(d.get("c_inf", 0.0))
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed coefficients: {exc}") from exc
        if c_inf < 0:
            raise InputError("c_inf must be nonnegative")
        unit = d.get("unit_value")
        return cls(disc, c_inf, None if unit is None else float(unit))

    @classmethod
    def from_json(cls, text: str) -> "TraceCoefficients":
        return cls.from_dict(json.loads(text))


# Rieffel correspondence ------------------------------------------------------

def rieffel_pi(n: int, mu: DiscreteMeasure, theta: RankOne) -> complex:
    """Trace of a rank-one operator at level n: ``N^{-n} mu((right|left))``."""
    if theta.level != n:
        raise LevelMismatch(f"operator has level {theta.level}, expected {n}")
    N = theta.left.system.N
    return mu.integrate(inner_product(theta.right, theta.left)) / N ** n


def _traciality_defect(system, n, trace_on_compacts, rng, samples) -> float:
    rng = np.random.default_rng(rng)
    worst = 0.0
    for _ in range(samples):
        xi, eta, zeta, omega = (random_section(system, n, rng) for _ in range(4))
        s, t = RankOne(xi, eta), RankOne(zeta, omega)
        worst = max(worst, abs(trace_on_compacts(compose(s, t)) - trace_on_compacts(compose(t, s))))
    return worst


def rieffel_psi(system: SelfSimilarSystem, n: int, trace_on_compacts: Callable[[RankOne], complex],
                rng=0, samples: int = 3, tol: float = 1e-8) -> Callable:
    """The functional ``a -> N^n tau(theta_{y0^n a, y0^n})`` on C(K).

    ``trace_on_compacts`` is first tested for traciality on random rank-one
    pairs.
    """
    defect = _traciality_defect(system, n, trace_on_compacts, rng, samples)
    if defect > tol:
        raise NotTracial(f"tau(ST) - tau(TS) reaches {defect:.3g} at level {n}")
    y0 = unit_section(system, n)

    def functional(a):
        return system.N ** n * trace_on_compacts(RankOne(right_action(y0, a), y0))

    functional.traciality_defect = defect
    return functional


# model traces ----------------------------------------------------------------

def default_estimate_depth(system: SelfSimilarSystem, atoms: int = ESTIMATE_ATOMS) -> int:
    return max(1, int(np.floor(np.log(atoms) / np.log(system.N))))


def default_hutchinson(system: SelfSimilarSystem, n_iter: int | None = None) -> tuple[DiscreteMeasure, float]:
    """Deterministic estimate started at the generic point, with its certified error.

    Starting off every backward orbit keeps the estimate free of atoms on
    Orb and on the postcritical set.
    """
    n_iter = default_estimate_depth(system) if n_iter is None else n_iter
    mu = hutchinson_estimate(system, n_iter, start=system.generic_point)
    return mu, hutchinson_error_bound(system, n_iter)


def _check_branch_point(system: SelfSimilarSystem, b, branch: BranchData) -> np.ndarray:
    b = as_points(b, system.dim)[0]
    if len(branch.branch_points) == 0 or not PointIndex(branch.branch_points, system.eps).contains(b[None])[0]:
        raise InputError(f"{b.tolist()} is not a branch point")
    return b


@dataclass
class ModelTrace:
    """A discrete model trace tau^(b,r) or the Hutchinson trace."""

    system: SelfSimilarSystem
    kind: str
    b: np.ndarray | None = None
    r: int | None = None
    estimate: DiscreteMeasure | None = None
    certified_error: float = 0.0
    _cache: dict = field(default_factory=dict, repr=False)

    def level_measure(self, i: int) -> DiscreteMeasure:
        if i not in self._cache:
            if self.kind == "hutchinson":
                self._cache[i] = self.estimate
            else:
                self._cache[i] = model_level_measure(self.system, self.b, self.r, i)
        return self._cache[i]

    def evaluate(self, i: int, theta: RankOne) -> complex:
        return rieffel_pi(i, self.level_measure(i), theta)

    def restriction(self, a) -> float:
        return self.level_measure(0).integrate(a)

    def level_measures(self, R: int) -> LevelMeasures:
        levels = [self.level_measure(i) for i in range(R + 1)]
        if self.kind == "hutchinson":
            return LevelMeasures(levels, self.certified_error, self.system.N * self.estimate.max_atom())
        return LevelMeasures(levels)

    @property
    def label(self) -> str:
        if self.kind == "hutchinson":
            return "hutchinson"
        return f"discrete:{','.join(f'{v:.12g}' for v in self.b)}:{self.r}"


def model_trace(system: SelfSimilarSystem, kind: str = "hutchinson", b=None, r: int | None = None,
                branch: BranchData | None = None, estimate: DiscreteMeasure | None = None,
                certified_error: float | None = None) -> ModelTrace:
    if kind == "hutchinson":
        if estimate is None:
            estimate, err = default_hutchinson(system)
            certified_error = err if certified_error is None else certified_error
        return ModelTrace(system, kind, estimate=estimate, certified_error=certified_error or 0.0)
    if kind != "discrete":
        raise InputError(f"unknown trace kind {kind!r}")
    if r is None or r < 0:
        raise InputError("discrete model traces need r >= 0")
    branch = compute_branch_data(system) if branch is None else branch
    b = _check_branch_point(system, b, branch)
    orbit_array(system, b, r)
    return ModelTrace(system, kind, b=b, r=r)


# test-function family -------------------------------------------------------

@dataclass
class FamilyMember:
    fn: TestFunction
    nonnegative: bool
    in_jx: bool


def test_family(system: SelfSimilarSystem, branch: BranchData | None = None) -> list[FamilyMember]:
    """Monomials, coordinates, bumps at the postcritical and branch points, and J_X members."""
    branch = compute_branch_data(system) if branch is None else branch
    lows = np.min([c.vertices.min(axis=0) for c in system.cells], axis=0)
    fam = [FamilyMember(constant(1.0), True, len(branch.branch_points) == 0)]
    for i in range(system.dim):
        fam.append(FamilyMember(coordinate(i, 1), bool(lows[i] >= 0), False))
        fam.append(FamilyMember(coordinate(i, 2), True, False))
    radius = system.diam / 8
    for p in list(branch.postcritical) + list(branch.branch_points):
        fam.append(FamilyMember(bump(p, radius), True, False))
    if len(branch.branch_points):
        fam.append(FamilyMember(distance_to(branch.branch_points), True, True))
        k = len(branch.branch_points)
        for i, b in enumerate(branch.branch_points):
            others = np.delete(branch.branch_points, i, axis=0)

            def signed(X, b=b, others=others):
                out = X[:, 0] - b[0]
                for q in others:
                    out = out * np.linalg.norm(X - q, axis=1)
                return out

            fam.append(FamilyMember(TestFunction(signed, k * system.diam ** (k - 1), f"signed_jx({i})",
                                                 system.diam ** k), False, True))
    for m in fam:
        m.fn.__test__ = False
    return fam


test_family.__test__ = False


def _sup(f: TestFunction, system: SelfSimilarSystem) -> float:
    if f.sup is not None:
        return f.sup
    return float(np.abs(f(system.sample(512, rng=0))).max())


# level compatibility --------------------------------------------------------

@dataclass
class CompatibilityReport:
    levels: list[dict]
    violations: list[str]

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {"passed": self.passed, "levels": self.levels, "violations": self.violations}


def check_level_compatibility(system: SelfSimilarSystem, lm: LevelMeasures, family=None,
                              branch: BranchData | None = None, tol: float = COMPAT_TOL) -> CompatibilityReport:
    """Inequality and J_X-equality residuals between consecutive levels, plus point-mass relations.

    Residuals are signed so that a positive inequality residual is a
    violation. Tolerances widen by the Lipschitz constant times the
    certified error of an estimated continuous part.
    """
    branch = compute_branch_data(system) if branch is None else branch
    family = test_family(system, branch) if family is None else family
    N = system.N
    B = PointIndex(branch.branch_points, system.eps) if len(branch.branch_points) else None
    spread = (1 + system.c) * lm.certified_error
    atom_tol = tol + lm.atom_tolerance
    reports, violations = [], []
    for n in range(lm.R):
        mu, nu = lm[n], lm[n + 1]
        pushed = transfer_f(system, nu)
        ineq, eq = 0.0, 0.0
        for m in family:
            lip = m.fn.lipschitz if m.fn.lipschitz is not None else 0.0
            allow = tol + lip * spread
            diff = float(np.real(pushed.integrate(m.fn) / N - mu.integrate(m.fn)))
            if m.nonnegative:
                ineq = max(ineq, diff - allow + tol)
                if diff > allow:
                    violations.append(f"compatibility: level {n}, {m.fn.name} exceeds by {diff:.3g}")
            if m.in_jx:
                eq = max(eq, abs(diff) - allow + tol)
                if abs(diff) > allow:
                    violations.append(f"compatibility-equality: level {n}, {m.fn.name} differs by {abs(diff):.3g}")
        point = 0.0
        if len(mu):
            images = system.h(mu.points)
            up = nu.masses_at(images)
            on_branch = B.contains(mu.points) if B is not None else np.zeros(len(mu), dtype=bool)
            gap = up - N * mu.weights
            res = np.where(on_branch, np.maximum(gap, 0.0), np.abs(gap))
            point = float(res.max())
            if point > atom_tol:
                k = int(np.argmax(res))
                violations.append(f"point-mass: level {n}, atom {mu.points[k].tolist()} off by {res[k]:.3g}")
        reports.append({"level": n, "inequality": ineq, "equality": eq, "point_mass": point,
                        "tolerance": tol, "lipschitz_spread": spread, "atom_tolerance": atom_tol})
    return CompatibilityReport(reports, violations)


# synthesis and decomposition ------------------------------------------------

def synthesize_trace(system: SelfSimilarSystem, tc: TraceCoefficients, levels: int,
                     estimate: DiscreteMeasure | None = None, certified_error: float | None = None) -> LevelMeasures:
    """``mu_n = sum_{r >= n} N^r c_{b,r} mu_n^{(b,r)} + c_inf mu_H``."""
    if tc.c_inf > 0 and estimate is None:
        estimate, err = default_hutchinson(system)
        certified_error = err if certified_error is None else certified_error
    N = system.N
    out = []
    for n in range(levels + 1):
        mu = DiscreteMeasure.zero(system.dim, eps=system.eps)
        for (b, r), c in sorted(tc.discrete.items()):
            if r >= n and c > 0:
                mu = mu + model_level_measure(system, np.array(b), r, n).scaled(N ** r * c)
        if tc.c_inf > 0:
            mu = mu + estimate.scaled(tc.c_inf)
        out.append(mu)
    if tc.c_inf > 0:
        return LevelMeasures(out, tc.c_inf * (certified_error or 0.0), N * tc.c_inf * estimate.max_atom())
    return LevelMeasures(out)


@dataclass
class DecompositionReport:
    coefficients: TraceCoefficients
    residual_metric: float
    residual_exact: bool
    c_inf_tolerance: float
    unresolved: list[dict]
    stray_atoms: list[dict]
    r_max: int

    def to_dict(self) -> dict:
        return {
            "coefficients": self.coefficients.to_dict(),
            "residual_metric": self.residual_metric,
            "residual_exact": self.residual_exact,
            "c_inf_tolerance": self.c_inf_tolerance,
            "unresolved": self.unresolved,
            "stray_atoms": self.stray_atoms,
            "r_max": self.r_max,
        }


ORBIT_SEARCH_DEPTH = 40


def _orbit_depths(system: SelfSimilarSystem, X: np.ndarray, B: PointIndex, start: int = 0,
                  depth: int = ORBIT_SEARCH_DEPTH) -> tuple[np.ndarray, np.ndarray]:
    """Smallest k >= start with h^k(x) a branch point (-1 if none up to ``depth``), and that point."""
    X = as_points(X, system.dim)
    hits = np.full(len(X), -1)
    where = np.full(X.shape, np.nan)
    Y = X.copy()
    for k in range(min(depth, DEPTH_CAP) + 1):
        if k >= start:
            new = (hits < 0) & B.contains(Y)
            hits[new] = k
            where[new] = Y[new]
        live = hits < 0
        # expansion amplifies round-off; points pushed off the cells are not followed further
        live &= system.in_region(Y) if live.any() else live
        if not live.any() or k == depth:
            break
        Y[live] = system.h(Y[live])
    return hits, where


def decompose_trace(system: SelfSimilarSystem, lm: LevelMeasures, r_max: int | None = None,
                    branch: BranchData | None = None, estimate: DiscreteMeasure | None = None,
                    certified_error: float | None = None) -> DecompositionReport:
    """Recover c_{b,r} from point masses on backward orbits and c_inf from the remaining mass."""
    branch = compute_branch_data(system) if branch is None else branch
    r_max = lm.R if r_max is None else r_max
    N = system.N
    mu0 = lm[0]
    mass = mu0.total_mass
    weights = mu0.weights.copy()
    index = PointIndex(mu0.points, system.eps) if len(mu0) else None
    disc: dict = {}
    for b in branch.branch_points:
        for r in range(r_max + 1):
            pts, _ = orbit_array(system, b, r)
            if index is None:
                continue
            idx = index.match(pts)
            masses = np.where(idx >= 0, mu0.weights[np.maximum(idx, 0)], 0.0)
            if masses.max() - masses.min() > ORBIT_MASS_TOL * max(mass, 1.0):
                raise UnequalOrbitMasses(
                    f"orbit of {b.tolist()} at depth {r}: masses range over [{masses.min():.3g}, {masses.max():.3g}]")
            c = float(masses[0])
            if c > 0:
                disc[(_key(b), r)] = c
                weights[idx[idx >= 0]] -= c
    c_inf = mass - sum(N ** r * c for (_, r), c in disc.items())
    if c_inf < -NEGATIVE_TOL:
        raise NegativeResidual(f"continuous part would be {c_inf:.3g}")
    c_inf = max(c_inf, 0.0)
    coeffs = TraceCoefficients(disc, c_inf, mass)

    keep = weights > 1e-15 * max(mass, 1.0)
    leftover = DiscreteMeasure(mu0.points[keep], weights[keep], dim=system.dim, eps=system.eps)
    if estimate is None and c_inf > 0:
        estimate, err = default_hutchinson(system)
        certified_error = err if certified_error is None else certified_error
    if c_inf > 0:
        residual, exact = hutchinson_metric_bound(leftover, estimate.scaled(c_inf))
    else:
        residual, exact = (leftover.total_mass * system.diam, True) if len(leftover) else (0.0, True)
    c_tol = NEGATIVE_TOL + lm.certified_error + c_inf * (certified_error or 0.0)

    unresolved, stray = [], []
    threshold = max(lm.atom_tolerance, COMPAT_TOL)
    B = PointIndex(branch.branch_points, system.eps) if len(branch.branch_points) else None
    heavy = leftover.weights > threshold
    if B is not None and heavy.any():
        depths, roots = _orbit_depths(system, leftover.points[heavy], B, r_max + 1)
    else:
        depths, roots = np.full(heavy.sum(), -1), None
    for x, w, k, root in zip(leftover.points[heavy], leftover.weights[heavy], depths,
                             roots if roots is not None else [None] * len(depths)):
        entry = {"point": x.tolist(), "mass": float(w)}
        if k >= 0:
            entry.update({"b": root.tolist(), "r": int(k)})
            unresolved.append(entry)
        else:
            stray.append(entry)
    return DecompositionReport(coeffs, float(residual), bool(exact), float(c_tol), unresolved, stray, r_max)


# no point mass implies Hutchinson --------------------------------------------

def random_probability(system: SelfSimilarSystem, atoms: int, rng, depth: int = 12) -> DiscreteMeasure:
    """Random probability measure on K with atoms off every backward orbit of a branch point.

    Atoms are images of the generic point under random words.
    """
    rng = np.random.default_rng(rng)
    X = np.repeat(system.generic_point[None], atoms, axis=0)
    letters = rng.integers(0, system.N, size=(depth, atoms))
    for step in range(depth):
        for j, m in enumerate(system.maps):
            sel = letters[step] == j
            X[sel] = m(X[sel])
    return DiscreteMeasure(X, rng.uniform(0.1, 1.0, size=atoms), dim=system.dim, eps=system.eps,
                           probability=True)


def g_star_levels(system: SelfSimilarSystem, nu: DiscreteMeasure, R: int) -> LevelMeasures:
    """Levels mu_R = nu and mu_n = G*(mu_{n+1}): a compatible sequence without point masses on C."""
    levels = [nu]
    for _ in range(R):
        levels.append(dual_g(system, levels[-1]))
    return LevelMeasures(levels[::-1])


def _lipschitz_mean(system: SelfSimilarSystem) -> float:
    return float(np.mean([m.upper for m in system.maps]))


def _metric_upper(system: SelfSimilarSystem, mu: DiscreteMeasure, nu: DiscreteMeasure) -> tuple[float, bool]:
    if system.dim == 1:
        return w1_1d(mu, nu), True
    return hutchinson_metric_bound(mu, nu)


def distance_to_hutchinson(system: SelfSimilarSystem, lm: LevelMeasures, R: int | None = None) -> tuple[float, str]:
    """Certified upper bound on the Hutchinson-metric distance from mu_0 to mu_H.

    Uses mu_0 = G*^R(mu_R): the distance is at most lambda^R L(mu_R, mu_H),
    with lambda the mean Lipschitz constant of the maps, and L(mu_R, mu_H)
    is bounded through an exact transport to the level-k cylinder measure
    G*^k(delta_z), which is itself within c^k diam of mu_H.
    """
    R = lm.R if R is None else R
    top = lm[R]
    k = max(1, int(np.floor(np.log(FLOW_ATOMS) / np.log(system.N))))
    cyl = hutchinson_estimate(system, k, start=system.generic_point)
    to_cyl, _ = _metric_upper(system, top.scaled(1.0 / top.total_mass), cyl)
    bound = _lipschitz_mean(system) ** R * (to_cyl + hutchinson_error_bound(system, k))
    return float(bound), f"contraction from level {R} via cylinder depth {k}"


def lebesgue_w1(mu: DiscreteMeasure) -> float:
    """Exact W1 from a probability measure on [0, 1] to Lebesgue measure: the integral of |F - x|."""
    order = np.argsort(mu.points[:, 0])
    x = mu.points[order, 0]
    w = mu.weights[order] / mu.total_mass
    knots = np.concatenate([[0.0], x, [1.0]])
    levels = np.concatenate([[0.0], np.cumsum(w)])
    total = 0.0
    for lo, hi, F in zip(knots[:-1], knots[1:], levels):
        if hi <= lo:
            continue
        # integral over [lo, hi] of |F - t|
        a, b = lo - F, hi - F
        if a >= 0 or b <= 0:
            total += abs(b * abs(b) - a * abs(a)) / 2
        else:
            total += (a * a + b * b) / 2
    return float(total)


@dataclass
class HutchinsonLimitReport:
    passed: bool
    precondition: bool
    max_atom: float
    level_residuals: list[float]
    distance_bound: float
    target: float
    method: str
    exact_lebesgue: float | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def verify_hutchinson_limit(system: SelfSimilarSystem, lm: LevelMeasures, n_iter: int | None = None,
                            atom_tol: float | None = None, branch: BranchData | None = None,
                            exact_lebesgue: bool = False) -> HutchinsonLimitReport:
    """Check that a level sequence without point masses on Orb is the Hutchinson trace.

    Level residuals L(mu_n, G* mu_{n+1}) and the distance bound from mu_0
    to mu_H must both stay within ``c**n_iter * diam`` (n_iter defaults
    to R). Above the flow cap the residuals are upper bounds. The
    precondition fails when some atom of mu_0 on a backward orbit of a
    branch point carries mass above ``atom_tol``.
    """
    branch = compute_branch_data(system) if branch is None else branch
    R = lm.R
    n_iter = R if n_iter is None else n_iter
    mu0 = lm[0]
    atom_tol = max(lm.atom_tolerance, COMPAT_TOL) if atom_tol is None else atom_tol
    on_orbits = 0.0
    if len(branch.branch_points) and len(mu0):
        B = PointIndex(branch.branch_points, system.eps)
        heavy = mu0.weights > atom_tol
        if heavy.any():
            depths, _ = _orbit_depths(system, mu0.points[heavy], B)
            if (depths >= 0).any():
                on_orbits = float(mu0.weights[heavy][depths >= 0].max())
    precondition = on_orbits <= atom_tol
    target = hutchinson_error_bound(system, n_iter)
    if not precondition:
        return HutchinsonLimitReport(False, False, on_orbits, [], float("nan"), float(target),
                                     "precondition failed: point mass on a backward orbit")
    residuals = []
    for n in range(R):
        val, _ = _metric_upper(system, lm[n], dual_g(system, lm[n + 1]))
        residuals.append(float(val))
    bound, method = distance_to_hutchinson(system, lm, R)
    exact = None
    if exact_lebesgue:
        exact = lebesgue_w1(mu0)
        bound = min(bound, exact)
    passed = max(residuals, default=0.0) <= target + COMPAT_TOL and bound <= target
    return HutchinsonLimitReport(bool(passed), bool(precondition), on_orbits, residuals, float(bound),
                                 float(target), method, exact)
