"""Command-line entry point.

Exit codes: 0 ok, 1 input/output problem, 2 a mathematical check failed,
3 a resource cap was hit.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FractraceError, InputError, SupportExplosion, SupportTooLarge
from .ifs import EPS_REL, check_standing_assumptions, compute_branch_data, orbit_array
from .kms import KmsSpec, kms_report
from .measures import SUPPORT_CAP, hutchinson_error_bound, hutchinson_estimate, save_measure
from .suite import Tolerances, run_suite
from .systems import load_system
from .traces import (COMPAT_TOL, LevelMeasures, TraceCoefficients, check_level_compatibility,
                     decompose_trace, model_trace, rieffel_psi, synthesize_trace, test_family)

EXIT_OK, EXIT_IO, EXIT_CHECK, EXIT_CAP = 0, 1, 2, 3
SNAP = 1e-6


class CheckFailed(Exception):
    """A mathematical check failed; the report is still written."""


@dataclass
class RunConfig:
    command: str
    system: str
    depth: int | None = None
    iters: int | None = None
    seed: int = 0
    out: str | None = None
    options: dict = field(default_factory=dict)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def _envelope(config: RunConfig, system, tolerances: dict, result: dict, timing: dict | None = None) -> dict:
    return {
        "command": config.command,
        "config": {"depth": config.depth, "iters": config.iters, "seed": config.seed, **config.options},
        "system": {"name": system.name, "hash": system.digest(), "definition": system.to_dict()},
        "tolerances": tolerances,
        "result": result,
        "timestamp": {"utc": _dt.datetime.now(_dt.timezone.utc).isoformat(), **(timing or {})},
    }


def _emit(report: dict, config: RunConfig, filename: str) -> None:
    text = json.dumps(_jsonable(report), sort_keys=True, indent=2)
    if config.out:
        out = Path(config.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / filename).write_text(text + "\n")
    print(text)


def _snap_branch_point(system, coords, branch) -> np.ndarray:
    b = np.atleast_1d(np.asarray(coords, dtype=float))
    if len(branch.branch_points):
        gaps = np.linalg.norm(branch.branch_points - b, axis=1)
        if gaps.min() <= SNAP * system.diam:
            return branch.branch_points[int(np.argmin(gaps))]
    raise InputError(f"{b.tolist()} is not a branch point; branch points are {branch.branch_points.tolist()}")


def _parse_kind(text: str, system, branch):
    if text == "hutchinson":
        return {"kind": "hutchinson"}
    parts = text.split(":")
    if len(parts) != 3 or parts[0] != "discrete":
        raise InputError("kind must be 'hutchinson' or 'discrete:<b>:<r>' with b comma-separated")
    b = _snap_branch_point(system, [float(v) for v in parts[1].split(",")], branch)
    return {"kind": "discrete", "b": b, "r": int(parts[2])}


# commands --------------------------------------------------------------------

def cmd_analyze(cfg: RunConfig) -> dict:
    system = load_system(cfg.system)
    depth = 6 if cfg.depth is None else cfg.depth
    report = check_standing_assumptions(system)
    result = {"assumption": report.to_dict(), "passed": report.passed}
    if report.branch is not None:
        result["branch"] = report.branch.to_dict()
        table = {}
        for b in report.branch.branch_points:
            counts = []
            for r in range(depth + 1):
                try:
                    counts.append(len(orbit_array(system, b, r)[0]))
                except FractraceError as exc:
                    counts.append(f"{type(exc).__name__}: {exc}")
                    break
            table[",".join(repr(float(v)) for v in b)] = counts
        result["orbit_counts"] = table
    _emit(_envelope(cfg, system, {"eps_rel": EPS_REL}, result), cfg, "analyze.json")
    if not report.passed:
        raise CheckFailed(f"standing assumptions fail: {', '.join(report.failing())}")
    return result


def _moments(mu, dim):
    X, w = mu.points, mu.weights / mu.total_mass
    mean = (w[:, None] * X).sum(axis=0)
    second = np.einsum("p,pi,pj->ij", w, X, X)
    return mean, second


def cmd_hutchinson(cfg: RunConfig) -> dict:
    system = load_system(cfg.system)
    n_iter = 14 if cfg.iters is None else cfg.iters
    strategy = cfg.options.get("strategy", "deterministic")
    try:
        mu = hutchinson_estimate(system, n_iter, strategy, samples=cfg.options.get("samples", 100_000),
                                 seed=cfg.seed)
    except SupportExplosion as exc:
        feasible = int(np.log(SUPPORT_CAP) / np.log(system.N))
        raise SupportExplosion(f"{exc}. Try --iters {feasible} or --strategy sampled") from exc
    mean, second = _moments(mu, system.dim)
    err = hutchinson_error_bound(system, n_iter)
    result = {"n_iter": n_iter, "strategy": strategy, "atoms": len(mu), "mean": mean, "second_moments": second,
              "certified_error": err if strategy == "deterministic" else None}
    fmt = cfg.options.get("format", "csv")
    if cfg.out:
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
        name = f"hutchinson_measure.{fmt}"
        save_measure(mu, Path(cfg.out) / name)
        result["measure_file"] = name
    _emit(_envelope(cfg, system, {"eps_rel": EPS_REL, "certified_error": err}, result), cfg, "hutchinson.json")
    return result


def cmd_trace_eval(cfg: RunConfig) -> dict:
    system = load_system(cfg.system)
    branch = compute_branch_data(system)
    kind = _parse_kind(cfg.options.get("kind", "hutchinson"), system, branch)
    levels = 3 if cfg.depth is None else cfg.depth
    tr = model_trace(system, kind["kind"], b=kind.get("b"), r=kind.get("r"), branch=branch)
    family = {m.fn.name: m.fn for m in test_family(system, branch)}
    names = cfg.options.get("functions") or sorted(family)
    unknown = [n for n in names if n not in family]
    if unknown:
        raise InputError(f"unknown function(s) {unknown}; available: {sorted(family)}")
    values = {}
    for i in range(levels + 1):
        psi = rieffel_psi(system, i, lambda th, i=i: tr.evaluate(i, th), rng=cfg.seed, samples=1)
        values[str(i)] = {n: float(np.real(psi(family[n]))) for n in names}
    result = {"kind": tr.label, "levels": levels, "values": values,
              "certified_error": tr.certified_error}
    _emit(_envelope(cfg, system, {"traciality": 1e-8, "certified_error": tr.certified_error}, result),
          cfg, "trace_eval.json")
    return result


def _load_coefficients(path, system, branch) -> TraceCoefficients:
    tc = TraceCoefficients.from_json(Path(path).read_text())
    snapped = {}
    for (b, r), c in tc.discrete.items():
        key = (tuple(float(v) for v in _snap_branch_point(system, b, branch)), r)
        snapped[key] = snapped.get(key, 0.0) + c
    return TraceCoefficients(snapped, tc.c_inf, tc.unit_value)


def cmd_trace_synthesize(cfg: RunConfig) -> dict:
    system = load_system(cfg.system)
    branch = compute_branch_data(system)
    if not cfg.options.get("coefficients"):
        raise InputError("synthesize needs --coefficients <file.json>")
    if not cfg.out:
        raise InputError("synthesize needs --out <dir> for the level measures")
    tc = _load_coefficients(cfg.options["coefficients"], system, branch)
    R = cfg.depth if cfg.depth is not None else max([r for (_, r) in tc.discrete] + [0])
    lm = synthesize_trace(system, tc, R)
    lm.save(Path(cfg.out) / "levels")
    tc.unit_value = tc.unit(system.N)
    result = {"levels": R, "directory": "levels", "coefficients": tc.to_dict(),
              "atoms": [len(mu) for mu in lm.levels]}
    _emit(_envelope(cfg, system, {"certified_error": lm.certified_error, "atom_tolerance": lm.atom_tolerance},
                    result), cfg, "synthesize.json")
    return result


def cmd_trace_decompose(cfg: RunConfig) -> dict:
    system = load_system(cfg.system)
    branch = compute_branch_data(system)
    src = cfg.options.get("levels") or (Path(cfg.out) / "levels" if cfg.out else None)
    if src is None:
        raise InputError("decompose needs --levels <dir>")
    lm = LevelMeasures.load(src)
    compat = check_level_compatibility(system, lm, branch=branch)
    tolerances = {"compatibility": COMPAT_TOL, "certified_error": lm.certified_error,
                  "atom_tolerance": lm.atom_tolerance}
    if not compat.passed:
        relations = sorted({v.split(":")[0] for v in compat.violations})
        result = {"compatibility": compat.to_dict(), "violated_relations": relations}
        _emit(_envelope(cfg, system, tolerances, result), cfg, "decompose.json")
        raise CheckFailed(f"level measures violate {', '.join(relations)}")
    rep = decompose_trace(system, lm, cfg.options.get("rmax"), branch=branch)
    result = {"compatibility": compat.to_dict(), **rep.to_dict()}
    tolerances["c_inf"] = rep.c_inf_tolerance
    _emit(_envelope(cfg, system, tolerances, result), cfg, "decompose.json")
    if cfg.options.get("coefficients_out"):
        Path(cfg.options["coefficients_out"]).write_text(rep.coefficients.to_json() + "\n")
    return result


def cmd_kms(cfg: RunConfig) -> dict:
    system = load_system(cfg.system)
    branch = compute_branch_data(system)
    if len(branch.branch_points) == 0:
        raise CheckFailed("the system has no branch points")
    b = branch.branch_points[0] if cfg.options.get("b") is None else _snap_branch_point(
        system, [float(v) for v in cfg.options["b"].split(",")], branch)
    beta = cfg.options.get("beta")
    beta = np.log(2 * system.N) if beta is None else float(beta)
    depth = 8 if cfg.depth is None else cfg.depth
    spec = KmsSpec.for_system(system, b, beta, depth)
    report = kms_report(system, spec, [m.fn for m in test_family(system, branch)])
    _emit(_envelope(cfg, system, {"beta_margin": 1e-6, "tail": report["tail"]}, report), cfg, "kms.json")
    return report


def cmd_verify(cfg: RunConfig) -> dict:
    system = load_system(cfg.system)
    tol = Tolerances()
    if cfg.options.get("tolerance") is not None:
        tol = Tolerances.uniform(float(cfg.options["tolerance"]))
    try:
        tol = tol.with_overrides(cfg.options.get("tol_overrides", {}))
    except KeyError as exc:
        raise InputError(str(exc)) from exc
    outcomes = run_suite(system, seed=cfg.seed, tol=tol, depth=cfg.depth, n_iter=cfg.iters)
    rows = []
    for o in outcomes:
        d = o.to_dict()
        d.pop("seconds")
        rows.append(d)
    failing = [o.line() for o in outcomes if not o.passed]
    result = {"checks": rows, "passed": not failing, "failures": failing}
    timing = {"seconds": {str(o.number): o.seconds for o in outcomes}}
    for o in outcomes:
        print(o.line(), file=sys.stderr)
    _emit(_envelope(cfg, system, tol.to_dict(), result, timing), cfg, "verify.json")
    if failing:
        raise CheckFailed(f"{len(failing)} check(s) failed")
    return result


# argument parsing -------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--system", required=True, help="built-in name (tent, koch, sierpinski, plin:t1,...) or TOML path")
    p.add_argument("--depth", type=int, help="orbit depth / number of levels / KMS truncation")
    p.add_argument("--iters", type=int, help="averaging steps for Hutchinson estimates")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output directory")


def _tol_pair(text: str):
    name, _, value = text.partition("=")
    if not value:
        raise argparse.ArgumentTypeError("expected NAME=VALUE")
    return name, float(value)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fractrace", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    _common(sub.add_parser("analyze", help="branch data, standing assumptions and orbit counts"))

    p = sub.add_parser("hutchinson", help="estimate the Hutchinson measure")
    _common(p)
    p.add_argument("--strategy", choices=["deterministic", "sampled"], default="deterministic")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--format", choices=["csv", "json"], default="csv")

    p = sub.add_parser("trace", help="evaluate, synthesize or decompose traces")
    tsub = p.add_subparsers(dest="action", required=True)
    q = tsub.add_parser("eval")
    _common(q)
    q.add_argument("--kind", default="hutchinson", help="hutchinson or discrete:<b>:<r>")
    q.add_argument("--fn", action="append", dest="functions", help="test-function name (repeatable)")
    q = tsub.add_parser("synthesize")
    _common(q)
    q.add_argument("--coefficients", help="TraceCoefficients JSON file")
    q = tsub.add_parser("decompose")
    _common(q)
    q.add_argument("--levels", help="LevelMeasures directory")
    q.add_argument("--rmax", type=int)
    q.add_argument("--coefficients-out", dest="coefficients_out", help="also write the recovered coefficients here")

    p = sub.add_parser("kms", help="beta-KMS mixture weights and values")
    _common(p)
    p.add_argument("--beta", type=float)
    p.add_argument("--b", help="branch point, comma-separated coordinates")

    p = sub.add_parser("verify", help="run the property suite")
    _common(p)
    p.add_argument("--tolerance", type=float, help="replace every tolerance by this value")
    p.add_argument("--tol", type=_tol_pair, action="append", default=[], dest="tol_overrides",
                   help="override one tolerance, NAME=VALUE")
    return parser


COMMANDS = {
    "analyze": cmd_analyze,
    "hutchinson": cmd_hutchinson,
    "kms": cmd_kms,
    "verify": cmd_verify,
    ("trace", "eval"): cmd_trace_eval,
    ("trace", "synthesize"): cmd_trace_synthesize,
    ("trace", "decompose"): cmd_trace_decompose,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    base = {"command", "action", "system", "depth", "iters", "seed", "out"}
    options = {k: v for k, v in vars(args).items() if k not in base}
    if "tol_overrides" in options:
        options["tol_overrides"] = dict(options["tol_overrides"])
    command = args.command if args.command != "trace" else f"trace {args.action}"
    cfg = RunConfig(command, args.system, args.depth, args.iters, args.seed, args.out, options)
    handler = COMMANDS[(args.command, args.action) if args.command == "trace" else args.command]
    try:
        handler(cfg)
    except CheckFailed as exc:
        print(f"fractrace: check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except (SupportExplosion, SupportTooLarge) as exc:
        print(f"fractrace: resource cap: {exc}", file=sys.stderr)
        return EXIT_CAP
    except (InputError, OSError) as exc:
        print(f"fractrace: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_IO
    except FractraceError as exc:
        print(f"fractrace: check failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
