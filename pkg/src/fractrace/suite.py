"""Property suite shared by ``fractrace verify`` and the acceptance tests.

Each check returns a :class:`CheckOutcome` with the measured quantities,
the tolerance it was held to, and the wall time.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .correspondence import (RankOne, build_truncated_frame, compose, frame_transfer_check,
                             inner_product, left_action, measured_window, random_section,
                             rank_one_apply, right_action, tensor, verify_frame_sum)
from .errors import FractraceError
from .geometry import has_close_pair
from .ifs import SelfSimilarSystem, check_standing_assumptions, compute_branch_data, orbit_array
from .kms import KmsSpec, eval_kms_on_function, kms_weights
from .measures import (DiscreteMeasure, TestFunction, constant, coordinate, dual_g,
                       hutchinson_error_bound, hutchinson_estimate)
from .traces import (TraceCoefficients, check_level_compatibility, decompose_trace, default_hutchinson, rieffel_pi,
                     g_star_levels, model_trace, random_probability, synthesize_trace, test_family,
                     verify_hutchinson_limit)
from .transport import hutchinson_metric, optimal_transport


@dataclass
class Tolerances:
    mean: float = 2.0 ** -12
    second_moment: float = 2.0 ** -10
    contraction: float = 1e-9
    transport: float = 1e-9
    coefficient: float = 1e-12
    orbit_mass: float = 1e-9
    compatibility: float = 1e-10
    frame: float = 1e-3
    algebra: float = 1e-8
    kms: float = 1e-12

    @classmethod
    def uniform(cls, value: float) -> "Tolerances":
        return cls(**{f.name: value for f in fields(cls)})

    def with_overrides(self, overrides: dict[str, float]) -> "Tolerances":
        names = {f.name for f in fields(self)}
        unknown = set(overrides) - names
        if unknown:
            raise KeyError(f"unknown tolerance(s): {sorted(unknown)}")
        return replace(self, **overrides)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CheckOutcome:
    number: int
    title: str
    passed: bool
    metrics: dict = field(default_factory=dict)
    seconds: float = 0.0
    time_limit: float | None = None
    failures: list[str] = field(default_factory=list)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = "; ".join(self.failures[:3])
        limit = f" (limit {self.time_limit:g}s)" if self.time_limit else ""
        return f"[{status}] {self.number:2d} {self.title}: {self.seconds:.2f}s{limit}" + (f" -- {extra}" if extra else "")

    def to_dict(self) -> dict:
        return {"number": self.number, "title": self.title, "passed": self.passed, "metrics": self.metrics,
                "seconds": self.seconds, "time_limit": self.time_limit, "failures": self.failures}


class _Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.start


def _finish(number, title, failures, metrics, timer, limit=None) -> CheckOutcome:
    if limit is not None and timer.seconds > limit:
        failures.append(f"runtime {timer.seconds:.2f}s exceeds {limit:g}s")
    return CheckOutcome(number, title, not failures, metrics, timer.seconds, limit, failures)


def _default_depth(system: SelfSimilarSystem, budget: int) -> int:
    return int(np.floor(np.log(budget) / np.log(system.N) + 1e-12))


# 1 ---------------------------------------------------------------------------

def known_moments(system: SelfSimilarSystem) -> dict[str, float] | None:
    """Moments of the Hutchinson measure known in closed form."""
    if system.name == "tent":
        return {"x": 0.5, "x^2": 1.0 / 3.0}
    if system.name == "sierpinski":
        return {"x0": 0.5, "x1": np.sqrt(3.0) / 6.0}
    return None


def check_hutchinson_moments(system: SelfSimilarSystem, n_iter: int | None = None,
                             tol: Tolerances = Tolerances(), time_limit: float | None = 5.0) -> CheckOutcome:
    """Moments of the deterministic estimate started at the base point.

    With closed-form moments available they are compared at the shipped
    tolerances; otherwise two estimates from different starts must agree
    within their certified errors.
    """
    n_iter = _default_depth(system, 20_000) if n_iter is None else n_iter
    failures, metrics = [], {"n_iter": n_iter}
    with _Timer() as t:
        mu = hutchinson_estimate(system, n_iter)
        ref = known_moments(system)
        if ref is not None:
            allow = [tol.mean, tol.second_moment] if system.name == "tent" else [tol.mean, tol.mean]
            fns = ([coordinate(0, 1), coordinate(0, 2)] if system.dim == 1
                   else [coordinate(0, 1), coordinate(1, 1)])
            for f, (name, target), eps in zip(fns, ref.items(), allow):
                err = abs(float(mu.integrate(f)) - target)
                metrics[name] = {"error": err, "tolerance": eps}
                if err > eps:
                    failures.append(f"{name} off by {err:.3g} > {eps:.3g}")
        else:
            other = hutchinson_estimate(system, n_iter, start=system.generic_point)
            allow = 2 * hutchinson_error_bound(system, n_iter) + tol.mean
            for i in range(system.dim):
                for p in (1, 2):
                    f = coordinate(i, p)
                    err = abs(float(mu.integrate(f) - other.integrate(f)))
                    metrics[f.name] = {"disagreement": err, "tolerance": p * allow}
                    if err > p * allow:
                        failures.append(f"{f.name} estimates disagree by {err:.3g}")
        metrics["atoms"] = len(mu)
    return _finish(1, f"{system.name} Hutchinson moments", failures, metrics, t, time_limit)


# 2 ---------------------------------------------------------------------------

def _random_pair(system, rng, atoms):
    def one():
        k = int(rng.integers(1, atoms + 1))
        if system.dim == 1:
            X = rng.uniform(0, 1, size=(k, 1))
        else:
            X = system.sample(k, depth=16, rng=rng)
        return DiscreteMeasure(X, rng.uniform(0.05, 1.0, size=k), dim=system.dim, probability=True)

    return one(), one()


def check_contraction(system: SelfSimilarSystem, pairs: int = 20, atoms: int = 32, seed: int = 0,
                      tol: Tolerances = Tolerances(), time_limit: float | None = 1.0) -> CheckOutcome:
    rng = np.random.default_rng(seed)
    failures, ratios = [], []
    with _Timer() as t:
        for _ in range(pairs):
            mu, nu = _random_pair(system, rng, atoms)
            base = hutchinson_metric(mu, nu)
            if base < 1e-12:
                continue
            ratios.append(hutchinson_metric(dual_g(system, mu), dual_g(system, nu)) / base)
        worst = max(ratios, default=0.0)
        if worst > system.c + tol.contraction:
            failures.append(f"ratio {worst:.12g} exceeds {system.c} + {tol.contraction:g}")
    return _finish(2, f"{system.name} contraction of G*", failures,
                   {"max_ratio": worst, "pairs": len(ratios), "bound": system.c}, t, time_limit)


# 3 ---------------------------------------------------------------------------

def check_orbits(system: SelfSimilarSystem, depth: int | None = None,
                 time_limit: float | None = 10.0) -> CheckOutcome:
    depth = _default_depth(system, 5000) if depth is None else depth
    branch = compute_branch_data(system)
    failures, counts = [], {}
    with _Timer() as t:
        everything = []
        for b in branch.branch_points:
            key = ",".join(f"{v:.6g}" for v in b)
            counts[key] = []
            for r in range(depth + 1):
                try:
                    pts, _ = orbit_array(system, b, r)
                except FractraceError as exc:
                    failures.append(f"orbit of {key} at depth {r}: {exc}")
                    break
                counts[key].append(len(pts))
                if len(pts) != system.N ** r:
                    failures.append(f"orbit of {key} at depth {r} has {len(pts)} points")
                everything.append(pts)
        if everything and has_close_pair(np.vstack(everything), system.eps):
            failures.append("two backward orbits intersect")
    return _finish(3, f"{system.name} orbit counts and disjointness (r <= {depth})", failures,
                   {"counts": counts}, t, time_limit)


# 4 ---------------------------------------------------------------------------

def random_coefficients(system: SelfSimilarSystem, rng, r_max: int = 6, terms: int = 3) -> TraceCoefficients:
    branch = compute_branch_data(system)
    disc = {}
    for _ in range(int(rng.integers(1, terms + 1))):
        b = branch.branch_points[int(rng.integers(len(branch.branch_points)))]
        r = int(rng.integers(0, r_max + 1))
        disc[(tuple(float(v) for v in b), r)] = float(rng.uniform(0.01, 1.0)) / system.N ** r
    return TraceCoefficients(disc, float(rng.uniform(0.0, 1.0)))


def check_classification(system: SelfSimilarSystem, trials: int = 10, r_max: int = 6, seed: int = 0,
                         tol: Tolerances = Tolerances(), time_limit: float | None = 30.0) -> CheckOutcome:
    rng = np.random.default_rng(seed)
    failures, worst_c, worst_inf = [], 0.0, 0.0
    with _Timer() as t:
        estimate, err = default_hutchinson(system)
        for trial in range(trials):
            tc = random_coefficients(system, rng, r_max)
            lm = synthesize_trace(system, tc, r_max, estimate, err)
            try:
                rep = decompose_trace(system, lm, r_max, estimate=estimate, certified_error=err)
            except FractraceError as exc:
                failures.append(f"trial {trial}: {exc}")
                continue
            got = rep.coefficients
            for key in set(tc.discrete) | set(got.discrete):
                d = abs(tc.discrete.get(key, 0.0) - got.discrete.get(key, 0.0))
                worst_c = max(worst_c, d)
                if d > tol.coefficient:
                    failures.append(f"trial {trial}: c{key} off by {d:.3g}")
            d = abs(tc.c_inf - got.c_inf)
            worst_inf = max(worst_inf, d)
            if d > rep.c_inf_tolerance:
                failures.append(f"trial {trial}: c_inf off by {d:.3g} > {rep.c_inf_tolerance:.3g}")
    return _finish(4, f"{system.name} classification roundtrip", failures,
                   {"max_discrete_error": worst_c, "max_c_inf_error": worst_inf, "trials": trials}, t, time_limit)


# 5 ---------------------------------------------------------------------------

def check_compatibility(system: SelfSimilarSystem, r_max: int = 3, tol: Tolerances = Tolerances(),
                        time_limit: float | None = None) -> CheckOutcome:
    branch = compute_branch_data(system)
    family = test_family(system, branch)
    failures, worst = [], 0.0
    with _Timer() as t:
        for b in branch.branch_points:
            for r in range(r_max + 1):
                lm = model_trace(system, "discrete", b=b, r=r, branch=branch).level_measures(r + 1)
                rep = check_level_compatibility(system, lm, family, branch, tol.compatibility)
                for lvl in rep.levels:
                    worst = max(worst, lvl["inequality"], lvl["equality"], lvl["point_mass"])
                failures += [f"tau({b.round(6).tolist()},{r}) {v}" for v in rep.violations]
        hut = model_trace(system)
        rep = check_level_compatibility(system, hut.level_measures(r_max), family, branch, tol.compatibility)
        failures += [f"hutchinson {v}" for v in rep.violations]
        tampered = model_trace(system, "discrete", b=branch.branch_points[0], r=max(1, r_max),
                               branch=branch).level_measures(max(1, r_max))
        tampered.levels[1] = tampered.levels[1].scaled(2.0)
        flagged = not check_level_compatibility(system, tampered, family, branch, tol.compatibility).passed
        if not flagged:
            failures.append("scaled level-1 measure was not flagged")
    return _finish(5, f"{system.name} level compatibility", failures,
                   {"max_discrete_residual": worst, "scaled_flagged": flagged}, t, time_limit)


# 6 ---------------------------------------------------------------------------

def check_transport(seed: int = 0, instances: int = 30, atoms: int = 6, one_d: int = 50,
                    tol: Tolerances = Tolerances(), time_limit: float | None = None) -> CheckOutcome:
    rng = np.random.default_rng(seed)
    failures, worst_lp, worst_enum, worst_1d = [], 0.0, 0.0, 0.0
    with _Timer() as t:
        for i in range(instances):
            n, m = rng.integers(1, atoms + 1, size=2)
            mu = DiscreteMeasure(rng.uniform(size=(n, 2)), rng.uniform(0.05, 1, n), dim=2, probability=True)
            nu = DiscreteMeasure(rng.uniform(size=(m, 2)), rng.uniform(0.05, 1, m), dim=2, probability=True)
            flow = optimal_transport(mu, nu, "full-flow").cost
            lp = optimal_transport(mu, nu, "lp").cost
            worst_lp = max(worst_lp, abs(flow - lp))
            if len(mu) * len(nu) <= 16:
                worst_enum = max(worst_enum, abs(flow - optimal_transport(mu, nu, "enumerate").cost))
        for i in range(one_d):
            n, m = rng.integers(1, 33, size=2)
            mu = DiscreteMeasure(rng.uniform(size=(n, 1)), rng.uniform(0.05, 1, n), dim=1, probability=True)
            nu = DiscreteMeasure(rng.uniform(size=(m, 1)), rng.uniform(0.05, 1, m), dim=1, probability=True)
            worst_1d = max(worst_1d, abs(optimal_transport(mu, nu, "1d").cost
                                         - optimal_transport(mu, nu, "full-flow").cost))
        for name, v in (("flow vs LP", worst_lp), ("flow vs enumeration", worst_enum), ("1D vs flow", worst_1d)):
            if v > tol.transport:
                failures.append(f"{name} differ by {v:.3g}")
    return _finish(6, "transport solver oracle", failures,
                   {"flow_vs_lp": worst_lp, "flow_vs_enumeration": worst_enum, "one_d_vs_flow": worst_1d},
                   t, time_limit)


# 7 ---------------------------------------------------------------------------

def frame_test_function(system: SelfSimilarSystem) -> TestFunction:
    def fn(X):
        return 1.0 + 0.5 * np.cos(3.0 * X[:, 0]) + X[:, -1] ** 2

    return TestFunction(fn, lipschitz=1.5 + 2.0, name="1+cos(3x)/2+x^2", sup=2.5)


def check_frames(system: SelfSimilarSystem, n: int = 1, doublings: int = 3, r_max: int = 3,
                 tol: Tolerances = Tolerances(), time_limit: float | None = None) -> CheckOutcome:
    a = frame_test_function(system)
    branch = compute_branch_data(system)
    failures, metrics = [], {}
    with _Timer() as t:
        frame = build_truncated_frame(system, n, branch=branch)
        grid = frame.default_grid()
        residual = verify_frame_sum(frame, a, grid)
        metrics.update({"members": frame.size, "exclusion_radius": frame.exclusion_radius,
                        "residual": residual, "reconstruction_error": frame.reconstruction_error})
        if residual > tol.frame:
            failures.append(f"frame-sum residual {residual:.3g} > {tol.frame:g}")
        sizes, windows = [frame.size], [measured_window(frame, a, tol.frame, grid)]
        for _ in range(doublings):
            bigger = build_truncated_frame(system, n, 2 * sizes[-1], branch=branch, grid=grid)
            sizes.append(2 * sizes[-1])
            windows.append(measured_window(bigger, a, tol.frame, grid))
        metrics.update({"sizes": sizes, "windows": windows})
        for k in range(doublings):
            if windows[k + 1] > windows[k] / 2:
                failures.append(f"window {windows[k]:.3g} -> {windows[k + 1]:.3g} at M = {sizes[k + 1]}")
        worst = 0.0
        atoms = np.vstack([orbit_array(system, b, r)[0] for b in branch.branch_points for r in range(r_max + 1)])
        gaps = frame.distance(atoms)
        gaps = gaps[gaps > system.eps]
        transfer_frame = frame
        while len(gaps) and transfer_frame.exclusion_radius > gaps.min():
            transfer_frame = build_truncated_frame(system, n, 2 * transfer_frame.size, branch=branch, grid=grid)
        metrics["transfer_members"] = transfer_frame.size
        for b in branch.branch_points:
            for r in range(r_max + 1):
                pts, _ = orbit_array(system, b, r)
                for p in pts:
                    tc = frame_transfer_check(transfer_frame, DiscreteMeasure.dirac(p, dim=system.dim), a, a.sup)
                    worst = max(worst, abs(tc.lhs - tc.rhs))
                    if not tc.passed:
                        failures.append(f"transfer check at {p.round(6).tolist()}: {abs(tc.lhs - tc.rhs):.3g}")
        metrics["transfer_max_gap"] = worst
    return _finish(7, f"{system.name} frame identities (n = {n})", failures, metrics, t, time_limit)


# 8 ---------------------------------------------------------------------------

def check_module_algebra(system: SelfSimilarSystem, sections: int = 100, seed: int = 0,
                         tol: Tolerances = Tolerances(), time_limit: float | None = None) -> CheckOutcome:
    rng = np.random.default_rng(seed)
    Y = system.sample(48, rng=rng)
    mu = random_probability(system, 8, rng)
    phase = rng.normal(size=system.dim)
    a = TestFunction(lambda X: np.exp(1j * X @ phase) + X[:, 0], name="a")
    abar = TestFunction(lambda X: np.conj(a(X)), name="conj(a)")
    worst = {"adjoint": 0.0, "right_module": 0.0, "hermitian": 0.0, "tensor": 0.0,
             "rank_one": 0.0, "traciality": 0.0}
    with _Timer() as t:
        for q in range(sections // 4):
            n = 1 + q % 2
            xi, eta, zeta, omega = (random_section(system, n, rng) for _ in range(4))
            ip = inner_product(xi, eta)(Y)
            worst["adjoint"] = max(worst["adjoint"], np.abs(
                inner_product(left_action(a, xi), eta)(Y) - inner_product(xi, left_action(abar, eta))(Y)).max())
            worst["right_module"] = max(worst["right_module"], np.abs(
                inner_product(xi, right_action(eta, a))(Y) - ip * a(Y)).max())
            worst["hermitian"] = max(worst["hermitian"], np.abs(np.conj(ip) - inner_product(eta, xi)(Y)).max())
            # level-1 prefix so the tensor stays small
            lead = random_section(system, 1, rng) if n == 2 else zeta
            lead2 = random_section(system, 1, rng) if n == 2 else omega
            lhs = inner_product(tensor(lead, xi), tensor(lead2, eta))(Y)
            rhs = inner_product(xi, left_action(inner_product(lead, lead2), eta))(Y)
            worst["tensor"] = max(worst["tensor"], np.abs(lhs - rhs).max())
            s, tt = RankOne(xi, eta), RankOne(zeta, omega)
            direct = rank_one_apply(compose(s, tt), xi)(Y)
            nested = rank_one_apply(s, rank_one_apply(tt, xi))(Y)
            worst["rank_one"] = max(worst["rank_one"], np.abs(direct - nested).max())
            worst["traciality"] = max(worst["traciality"], abs(rieffel_pi(n, mu, compose(s, tt))
                                                              - rieffel_pi(n, mu, compose(tt, s))))
    worst = {k: float(v) for k, v in worst.items()}
    failures = [f"{k} defect {v:.3g} > {tol.algebra:g}" for k, v in worst.items() if v > tol.algebra]
    return _finish(8, f"{system.name} module algebra", failures, worst, t, time_limit)


# 9 ---------------------------------------------------------------------------

def check_kms(system: SelfSimilarSystem, beta: float | None = None, depth: int = 8,
              tol: Tolerances = Tolerances(), time_limit: float | None = None) -> CheckOutcome:
    branch = compute_branch_data(system)
    beta = np.log(2 * system.N) if beta is None else beta
    failures, metrics = [], {"beta": beta, "depth": depth}
    with _Timer() as t:
        family = [m.fn for m in test_family(system, branch)]
        for b in branch.branch_points:
            spec = KmsSpec.for_system(system, b, beta, depth)
            w, tail = kms_weights(spec)
            one, _ = eval_kms_on_function(system, spec, constant(1.0))
            err = abs(one - (1 - tail))
            metrics.setdefault("unit_error", 0.0)
            metrics["unit_error"] = max(metrics["unit_error"], err)
            if err > tol.kms:
                failures.append(f"rho(1) off by {err:.3g}")
            q = system.N * np.exp(-beta)
            expect = (1 - q) * q ** np.arange(depth + 1)
            if system.N == 2 and abs(beta - np.log(4)) < 1e-15:
                expect = 0.5 ** (np.arange(depth + 1) + 1)
                if not np.array_equal(w, expect):
                    failures.append("weights differ from (1/2)^(j+1)")
            elif np.abs(w - expect).max() > tol.kms:
                failures.append("weights differ from the closed form")
            deeper = KmsSpec.for_system(system, b, beta, depth + 1)
            for f in family:
                v0, bound0 = eval_kms_on_function(system, spec, f)
                v1, _ = eval_kms_on_function(system, deeper, f)
                if abs(v1 - v0) >= bound0 and bound0 > 0:
                    failures.append(f"{f.name}: refinement moved by {abs(v1 - v0):.3g} >= {bound0:.3g}")
    return _finish(9, f"{system.name} KMS mixtures", failures, metrics, t, time_limit)


# 10 --------------------------------------------------------------------------

def check_no_point_mass(system: SelfSimilarSystem, R: int = 10, atoms: int | None = None, seed: int = 0,
                        time_limit: float | None = None) -> CheckOutcome:
    rng = np.random.default_rng(seed)
    atoms = (4 if system.dim == 1 else 2) if atoms is None else atoms
    with _Timer() as t:
        nu = random_probability(system, atoms, rng)
        lm = g_star_levels(system, nu, R)
        rep = verify_hutchinson_limit(system, lm, R, exact_lebesgue=system.name == "tent")
    failures = []
    if not rep.precondition:
        failures.append(f"point mass {rep.max_atom:.3g} on a backward orbit")
    if max(rep.level_residuals, default=0.0) > 1e-10:
        failures.append(f"levels not linked by G*: {max(rep.level_residuals):.3g}")
    if rep.distance_bound > rep.target:
        failures.append(f"distance bound {rep.distance_bound:.3g} > c^R diam = {rep.target:.3g}")
    return _finish(10, f"{system.name} no point mass implies Hutchinson (R = {R})", failures,
                   rep.to_dict(), t, time_limit)


# suite -----------------------------------------------------------------------

def run_suite(system: SelfSimilarSystem, seed: int = 0, tol: Tolerances = Tolerances(),
              depth: int | None = None, n_iter: int | None = None) -> list[CheckOutcome]:
    """All checks for one system; time limits apply only to the reference parameter sets."""
    assumption = check_standing_assumptions(system)
    outcomes = [CheckOutcome(0, f"{system.name} standing assumptions", assumption.passed,
                             {k: v.passed for k, v in assumption.checks.items()},
                             failures=[f"{k}: {assumption.checks[k].detail}" for k in assumption.failing()])]
    if not assumption.passed:
        return outcomes
    runners = [
        lambda: check_hutchinson_moments(system, n_iter, tol, time_limit=None),
        lambda: check_contraction(system, seed=seed, tol=tol, time_limit=None),
        lambda: check_orbits(system, depth, time_limit=None),
        lambda: check_classification(system, seed=seed, tol=tol, time_limit=None),
        lambda: check_compatibility(system, tol=tol),
        lambda: check_transport(seed=seed, tol=tol),
        lambda: check_frames(system, tol=tol),
        lambda: check_module_algebra(system, seed=seed, tol=tol),
        lambda: check_kms(system, tol=tol),
        lambda: check_no_point_mass(system, seed=seed),
    ]
    for number, run in enumerate(runners, start=1):
        try:
            outcomes.append(run())
        except FractraceError as exc:
            outcomes.append(CheckOutcome(number, f"check {number}", False,
                                         failures=[f"{type(exc).__name__}: {exc}"]))
    return outcomes
