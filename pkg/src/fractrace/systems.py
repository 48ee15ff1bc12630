"""Built-in self-similar systems and the TOML system-definition loader.

Built-in names: ``tent``, ``plin:<t_1,...,t_{n-1}>``, ``koch``, ``sierpinski``.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
import tomli

from .errors import InputError
from .ifs import Cell, ContractionMap, SelfSimilarSystem

SQRT3 = np.sqrt(3.0)

# Sierpinski gasket vertices
SP_P = np.array([0.5, SQRT3 / 2])
SP_Q = np.array([0.0, 0.0])
SP_R = np.array([1.0, 0.0])
SP_S = np.array([0.25, SQRT3 / 4])
SP_T = np.array([0.5, 0.0])
SP_U = np.array([0.75, SQRT3 / 4])

KOCH_OMEGA = np.array([0.5, SQRT3 / 6])


def tent() -> SelfSimilarSystem:
    maps = [ContractionMap([[0.5]], [0.0]), ContractionMap([[-0.5]], [1.0])]
    cells = [Cell(1, [0.0, 0.5]), Cell(2, [0.5, 1.0])]
    return SelfSimilarSystem("tent", maps, cells, base_point=[0.0], diam=1.0)


def piecewise_linear(ts) -> SelfSimilarSystem:
    """Inverse branches of the zig-zag map through 0 = t_0 < ... < t_n = 1.

    h rises on odd pieces and falls on even ones, starting at h(0) = 0.
    """
    inner = [float(t) for t in ts]
    knots = [0.0] + inner + [1.0]
    if any(b <= a for a, b in zip(knots, knots[1:])):
        raise InputError("breakpoints must be strictly increasing inside (0, 1)")
    maps, cells = [], []
    for i in range(1, len(knots)):
        lo, hi = knots[i - 1], knots[i]
        if i % 2 == 1:
            maps.append(ContractionMap([[hi - lo]], [lo]))
        else:
            maps.append(ContractionMap([[-(hi - lo)]], [hi]))
        cells.append(Cell(i, [lo, hi]))
    name = "plin:" + ",".join(repr(t) for t in inner)
    return SelfSimilarSystem(name, maps, cells, base_point=[0.0], diam=1.0)


def _complex_linear(w: complex, conjugate: bool) -> np.ndarray:
    rot = np.array([[w.real, -w.imag], [w.imag, w.real]])
    if conjugate:
        return rot @ np.diag([1.0, -1.0])
    return rot


def koch() -> SelfSimilarSystem:
    # gamma_1(z) = w conj(z); gamma_2(z) = 1 - (1 - w) z  (the tilde map composed with
    # the reflection in x = 1/2 simplifies to this holomorphic form)
    w = complex(*KOCH_OMEGA)
    maps = [
        ContractionMap(_complex_linear(w, True), [0.0, 0.0]),
        ContractionMap(-_complex_linear(1 - w, False), [1.0, 0.0]),
    ]
    cells = [
        Cell(1, [[0.0, 0.0], [1 / 3, 0.0], KOCH_OMEGA]),
        Cell(2, [KOCH_OMEGA, [2 / 3, 0.0], [1.0, 0.0]]),
    ]
    branch = [{"point": KOCH_OMEGA, "preimage": [1.0, 0.0], "pair": (1, 2)}]
    return SelfSimilarSystem("koch", maps, cells, base_point=[0.0, 0.0], diam=1.0,
                             declared_branch=branch)


def affine_from_vertices(src, dst) -> ContractionMap:
    """The affine map of the plane sending three source vertices to three targets."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    S = np.column_stack([src[1] - src[0], src[2] - src[0]])
    D = np.column_stack([dst[1] - dst[0], dst[2] - dst[0]])
    A = D @ np.linalg.inv(S)
    return ContractionMap(A, dst[0] - A @ src[0])


def sierpinski() -> SelfSimilarSystem:
    # images of (P, Q, R): PSU, then TSQ and TRU after the rotations about the
    # centres of the small triangles
    tri = [SP_P, SP_Q, SP_R]
    maps = [
        affine_from_vertices(tri, [SP_P, SP_S, SP_U]),
        affine_from_vertices(tri, [SP_T, SP_S, SP_Q]),
        affine_from_vertices(tri, [SP_T, SP_R, SP_U]),
    ]
    cells = [Cell(1, [SP_P, SP_S, SP_U]), Cell(2, [SP_T, SP_S, SP_Q]), Cell(3, [SP_T, SP_R, SP_U])]
    branch = [
        {"point": SP_S, "preimage": SP_Q, "pair": (1, 2)},
        {"point": SP_T, "preimage": SP_P, "pair": (2, 3)},
        {"point": SP_U, "preimage": SP_R, "pair": (1, 3)},
    ]
    return SelfSimilarSystem("sierpinski", maps, cells, base_point=SP_P, diam=1.0,
                             declared_branch=branch)


BUILTINS = {"tent": tent, "koch": koch, "sierpinski": sierpinski}


def from_dict(d: dict) -> SelfSimilarSystem:
    try:
        maps = [ContractionMap(m["linear"], m["offset"]) for m in d["maps"]]
        cells = [Cell(int(c["branch"]), c["vertices"]) for c in d["cells"]]
        branch = d.get("branch")
        if branch:
            branch = [{"point": e["point"], "preimage": e["preimage"], "pair": tuple(e["pair"])}
                      for e in branch]
        return SelfSimilarSystem(
            d.get("name", "custom"), maps, cells,
            base_point=d["base_point"],
            diam=float(d.get("diam", 1.0)),
            declared_branch=branch,
            generic_point=d.get("generic_point"),
            definition=d,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed system definition: {exc}") from exc


def load_system(spec: str) -> SelfSimilarSystem:
    """Resolve a built-in name, a ``plin:`` spec or a path to a TOML file."""
    if spec in BUILTINS:
        return BUILTINS[spec]()
    if spec.startswith("plin:"):
        return piecewise_linear(float(t) for t in spec[5:].split(","))
    path = Path(spec)
    if not path.exists():
        raise FileNotFoundError(spec)
    with open(path, "rb") as fh:
        return from_dict(tomli.load(fh))
