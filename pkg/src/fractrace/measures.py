"""Finitely supported measures on K and the operators acting on them.

``transfer_f`` pushes mass to preimages under h without multiplicity,
``dual_g`` is the uniform average of the push-forwards along the maps, and
iterating ``dual_g`` converges to the Hutchinson measure.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import DegenerateInput, InputError, SupportExplosion
from .geometry import PointIndex, as_points, cluster_labels
from .ifs import EPS_REL, Point, SelfSimilarSystem, orbit_array

PRUNE_REL = 1e-15
SUPPORT_CAP = 1_000_000


@dataclass
class TestFunction:
    """A function on K evaluated on arrays of shape (k, d)."""

    fn: Callable[[np.ndarray], np.ndarray]
    lipschitz: float | None = None
    name: str = ""
    sup: float | None = None

    __test__ = False  # not a pytest class

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        return np.asarray(self.fn(X))


def coordinate(i: int = 0, power: int = 1) -> TestFunction:
    """``x_i ** power`` on the unit box."""
    name = f"x{i}" if power == 1 else f"x{i}^{power}"
    if i == 0 and power == 1:
        name = "x"
    elif i == 0:
        name = f"x^{power}"
    return TestFunction(lambda X: X[:, i] ** power, lipschitz=float(power), name=name, sup=1.0)


def constant(c: float = 1.0) -> TestFunction:
    return TestFunction(lambda X: np.full(len(X), c, dtype=float), lipschitz=0.0, name=f"const({c:g})", sup=abs(c))


def bump(center, radius: float) -> TestFunction:
    """Tent-shaped bump of height 1 and given radius around ``center``."""
    center = np.atleast_1d(np.asarray(center, dtype=float))

    def fn(X):
        return np.clip(1.0 - np.linalg.norm(X - center, axis=1) / radius, 0.0, None)

    return TestFunction(fn, lipschitz=1.0 / radius, name=f"bump({center.round(6).tolist()},{radius:g})", sup=1.0)


def distance_to(points) -> TestFunction:
    """Distance to a finite set; vanishes exactly on that set."""
    P = np.asarray(points, dtype=float)

    def fn(X):
        return np.min(np.linalg.norm(X[:, None, :] - P[None], axis=2), axis=1)

    return TestFunction(fn, lipschitz=1.0, name="dist_to_branch_set", sup=None)


class DiscreteMeasure:
    """Nonnegative measure with finitely many atoms.

    Atoms closer than ``eps`` are merged on construction. With
    ``probability=True`` negligible atoms are pruned and the mass is
    renormalized to one.
    """

    def __init__(self, points, weights, addresses=None, *, dim: int | None = None,
                 eps: float = EPS_REL, probability: bool = False):
        w = np.atleast_1d(np.asarray(weights, dtype=float))
        if dim is None:
            dim = 1 if np.ndim(points) <= 1 else np.shape(points)[-1]
        X = np.asarray(points, dtype=float).reshape(len(w), dim) if len(w) else np.zeros((0, dim))
        if (w < 0).any():
            raise InputError("measure weights must be nonnegative")
        if addresses is not None:
            addresses = [None if a is None else tuple(a) for a in addresses]
        self.eps = eps
        self.probability = probability
        self.dim = dim
        X, w, addresses = self._merge(X, w, addresses)
        keep = w > 0
        if probability and w.sum() > 0:
            keep &= w >= PRUNE_REL * w.sum()
        X, w = X[keep], w[keep]
        if addresses is not None:
            addresses = [a for a, k in zip(addresses, keep) if k]
        if probability and w.sum() > 0:
            w = w / w.sum()
        order = self._order(X, addresses)
        self.points = X[order]
        self.weights = w[order]
        self.addresses = None if addresses is None else [addresses[i] for i in order]

    def _merge(self, X, w, addresses):
        labels, k = cluster_labels(X, self.eps)
        if k == len(X):
            return X, w, addresses
        first = np.full(k, len(X))
        np.minimum.at(first, labels, np.arange(len(X)))
        merged_w = np.bincount(labels, weights=w, minlength=k)
        merged_a = None
        if addresses is not None:
            merged_a = [None] * k
            for lab, a in zip(labels, addresses):
                cur = merged_a[lab]
                if a is not None and (cur is None or (len(a), a) < (len(cur), cur)):
                    merged_a[lab] = a
        return X[first], merged_w, merged_a

    @staticmethod
    def _order(X, addresses):
        if len(X) == 0:
            return np.zeros(0, dtype=int)
        if addresses is not None and all(a is not None for a in addresses):
            return np.array(sorted(range(len(X)), key=lambda i: (len(addresses[i]), addresses[i])), dtype=int)
        return np.lexsort(X.T[::-1])

    @classmethod
    def dirac(cls, x, weight: float = 1.0, dim: int | None = None, **kw) -> "DiscreteMeasure":
        if isinstance(x, Point):
            return cls([x.coords], [weight], [x.address], dim=len(x.coords), **kw)
        X = as_points(x, dim)
        return cls(X, [weight], dim=X.shape[1], **kw)

    @classmethod
    def zero(cls, dim: int, **kw) -> "DiscreteMeasure":
        return cls(np.zeros((0, dim)), [], dim=dim, **kw)

    def __len__(self) -> int:
        return len(self.weights)

    def __repr__(self) -> str:
        return f"DiscreteMeasure({len(self)} atoms, mass={self.total_mass:.6g})"

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def _with(self, points, weights, addresses, probability=None) -> "DiscreteMeasure":
        return DiscreteMeasure(points, weights, addresses, dim=self.dim, eps=self.eps,
                               probability=self.probability if probability is None else probability)

    def scaled(self, s: float) -> "DiscreteMeasure":
        if s < 0:
            raise InputError("scale must be nonnegative")
        return self._with(self.points, self.weights * s, self.addresses, probability=False)

    def __mul__(self, s: float) -> "DiscreteMeasure":
        return self.scaled(s)

    __rmul__ = __mul__

    def __add__(self, other: "DiscreteMeasure") -> "DiscreteMeasure":
        if other.dim != self.dim:
            raise InputError("dimension mismatch")
        addr = None
        if self.addresses is not None or other.addresses is not None:
            addr = (self.addresses or [None] * len(self)) + (other.addresses or [None] * len(other))
        return DiscreteMeasure(np.vstack([self.points, other.points]),
                               np.concatenate([self.weights, other.weights]), addr,
                               dim=self.dim, eps=self.eps)

    def integrate(self, f) -> complex | float:
        """``sum_i w_i f(x_i)``."""
        if len(self) == 0:
            return 0.0
        vals = f(self.points)
        return (self.weights * vals).sum()

    def masses_at(self, X) -> np.ndarray:
        X = as_points(X, self.dim)
        if len(self) == 0:
            return np.zeros(len(X))
        idx = PointIndex(self.points, self.eps).match(X)
        return np.where(idx >= 0, self.weights[np.maximum(idx, 0)], 0.0)

    def point_mass(self, x) -> float:
        if isinstance(x, Point):
            x = x.coords
        return float(self.masses_at(as_points(x, self.dim))[0])

    def max_atom(self) -> float:
        return float(self.weights.max()) if len(self) else 0.0

    # serialization -----------------------------------------------------
    def rows(self) -> list[dict]:
        out = []
        for i, (p, w) in enumerate(zip(self.points, self.weights)):
            a = self.addresses[i] if self.addresses else None
            row = {f"x{k}": float(v) for k, v in enumerate(p)}
            row["weight"] = float(w)
            row["address"] = "" if a is None else ".".join(map(str, a))
            out.append(row)
        return out

    def to_csv(self, path) -> None:
        fields = [f"x{k}" for k in range(self.dim)] + ["weight", "address"]
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            for row in self.rows():
                writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})

    @classmethod
    def from_csv(cls, path, **kw) -> "DiscreteMeasure":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls._from_rows(rows, **kw)

    def to_json(self) -> str:
        return json.dumps({"dim": self.dim, "atoms": self.rows()}, indent=1)

    @classmethod
    def from_json(cls, text: str, **kw) -> "DiscreteMeasure":
        d = json.loads(text)
        return cls._from_rows(d["atoms"], dim=d["dim"], **kw)

    @classmethod
    def _from_rows(cls, rows, dim=None, **kw):
        if dim is None:
            dim = sum(1 for k in (rows[0] if rows else {"x0": 0}) if k.startswith("x"))
        pts = [[float(r[f"x{k}"]) for k in range(dim)] for r in rows]
        w = [float(r["weight"]) for r in rows]
        addr = [tuple(int(t) for t in r["address"].split(".")) if r.get("address") else None for r in rows]
        if all(a is None for a in addr):
            addr = None
        return cls(np.array(pts).reshape(-1, dim), w, addr, dim=dim, **kw)


def _check_dim(system: SelfSimilarSystem, mu: DiscreteMeasure):
    if mu.dim != system.dim:
        raise InputError(f"measure dimension {mu.dim} does not match system dimension {system.dim}")


def _prefixed(addresses, N: int):
    if addresses is None:
        return None
    return [None if a is None else (j,) + a for j in range(1, N + 1) for a in addresses]


def transfer_f(system: SelfSimilarSystem, mu: DiscreteMeasure, n: int = 1) -> DiscreteMeasure:
    """Replace every atom (y, w) by atoms (x, w) for x in h^{-1}(y), without multiplicity."""
    _check_dim(system, mu)
    for _ in range(n):
        if len(mu) == 0:
            return mu
        imgs = np.stack([m(mu.points) for m in system.maps])  # (N, k, d)
        gaps = np.linalg.norm(imgs[:, None] - imgs[None], axis=3)  # (N, N, k)
        mult = (gaps <= system.eps).sum(axis=1)  # (N, k)
        w = (mu.weights[None] / mult).reshape(-1)
        mu = DiscreteMeasure(imgs.reshape(-1, system.dim), w, _prefixed(mu.addresses, system.N),
                             dim=system.dim, eps=system.eps)
    return mu


def dual_g(system: SelfSimilarSystem, mu: DiscreteMeasure, n: int = 1) -> DiscreteMeasure:
    """``(1/N) sum_j (gamma_j)_# mu``; preserves mass, counts multiplicity."""
    _check_dim(system, mu)
    for _ in range(n):
        if len(mu) == 0:
            return mu
        imgs = np.stack([m(mu.points) for m in system.maps])
        w = np.tile(mu.weights / system.N, system.N)
        mu = DiscreteMeasure(imgs.reshape(-1, system.dim), w, _prefixed(mu.addresses, system.N),
                             dim=system.dim, eps=system.eps, probability=mu.probability)
    return mu


def average_g(system: SelfSimilarSystem, f) -> TestFunction:
    """``G(f)(y) = (1/N) sum_j f(gamma_j(y))``, the predual of ``dual_g``."""

    def fn(X):
        return sum(f(m(X)) for m in system.maps) / system.N

    lip = None if getattr(f, "lipschitz", None) is None else f.lipschitz * system.c
    return TestFunction(fn, lipschitz=lip, name=f"G({getattr(f, 'name', '')})")


def model_level_measure(system: SelfSimilarSystem, b, r: int, i: int) -> DiscreteMeasure:
    """``N^{-(r-i)} F^{r-i}(delta_b)``: uniform on O_{b,r-i}; zero for i > r."""
    if r < 0 or i < 0:
        raise InputError("r and i must be non-negative")
    if i > r:
        return DiscreteMeasure.zero(system.dim, eps=system.eps)
    k = r - i
    pts, addr = orbit_array(system, b, k)
    w = np.full(len(pts), float(system.N) ** (-k))
    return DiscreteMeasure(pts, w, [tuple(a) for a in addr], dim=system.dim, eps=system.eps)


def hutchinson_error_bound(system: SelfSimilarSystem, n_iter: int) -> float:
    """Certified distance in the Hutchinson metric after n_iter averaging steps."""
    return system.c ** n_iter * system.diam


def hutchinson_estimate(system: SelfSimilarSystem, n_iter: int, strategy: str = "deterministic",
                        samples: int = 100_000, start=None, seed=None,
                        cap: int = SUPPORT_CAP) -> DiscreteMeasure:
    """Approximate the Hutchinson measure.

    ``deterministic`` iterates ``dual_g`` from a Dirac mass at ``start``
    (default: the base point); its error is at most ``c**n_iter * diam``.
    ``sampled`` plays the chaos game with ``samples`` itineraries.
    """
    if n_iter < 1:
        raise InputError("n_iter must be >= 1")
    x0 = system.base_point if start is None else np.atleast_1d(np.asarray(start, dtype=float))
    if strategy == "deterministic":
        mu = DiscreteMeasure.dirac(x0, dim=system.dim, eps=system.eps, probability=True)
        for step in range(n_iter):
            if len(mu) * system.N > cap:
                raise SupportExplosion(
                    f"support would reach {len(mu) * system.N} atoms at step {step + 1} (cap {cap}); "
                    "lower n_iter or use the sampled strategy")
            mu = dual_g(system, mu)
        return mu
    if strategy == "sampled":
        rng = np.random.default_rng(seed)
        X = np.repeat(x0[None], samples, axis=0)
        letters = rng.integers(0, system.N, size=(n_iter, samples))
        for step in range(n_iter):
            new = np.empty_like(X)
            for j, m in enumerate(system.maps):
                sel = letters[step] == j
                new[sel] = m(X[sel])
            X = new
        return DiscreteMeasure(X, np.full(samples, 1.0 / samples), dim=system.dim, eps=system.eps,
                               probability=True)
    raise InputError(f"unknown strategy {strategy!r}")


def integrate(mu: DiscreteMeasure, a) -> float:
    return mu.integrate(a)


def point_mass(mu: DiscreteMeasure, x) -> float:
    return mu.point_mass(x)


def contraction_ratio(system: SelfSimilarSystem, mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    """``L(G* mu, G* nu) / L(mu, nu)``, bounded by the contraction constant."""
    from .transport import hutchinson_metric

    base = hutchinson_metric(mu, nu)
    if base < 1e-12:
        raise DegenerateInput("measures are (numerically) equal")
    return hutchinson_metric(dual_g(system, mu), dual_g(system, nu)) / base


def save_measure(mu: DiscreteMeasure, path) -> None:
    path = Path(path)
    if path.suffix == ".json":
        path.write_text(mu.to_json())
    else:
        mu.to_csv(path)
