"""beta-KMS mixtures of the discrete model traces attached to one branch point."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import BetaTooSmall, InputError
from .ifs import SelfSimilarSystem, orbit_array
from .measures import TestFunction

BETA_MARGIN = 1e-6


@dataclass
class KmsSpec:
    """Mixture ``C sum_j (N e^{-beta})^j tau^(b,j)`` truncated after ``depth``."""

    b: np.ndarray
    beta: float
    depth: int
    N: int

    def __post_init__(self):
        self.b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if self.depth < 0:
            raise InputError("depth must be non-negative")
        if not self.beta > np.log(self.N) + BETA_MARGIN:
            raise BetaTooSmall(f"beta = {self.beta} must exceed log N = {np.log(self.N):.12g}")

    @property
    def ratio(self) -> float:
        return self.N * np.exp(-self.beta)

    @property
    def normalizer(self) -> float:
        return 1.0 - self.ratio

    @classmethod
    def for_system(cls, system: SelfSimilarSystem, b, beta: float, depth: int) -> "KmsSpec":
        return cls(b, beta, depth, system.N)


def kms_weights(spec: KmsSpec) -> tuple[np.ndarray, float]:
    """Weights ``C q^j`` for j = 0..depth and the tail ``q^{depth+1}``, with q = N e^{-beta}."""
    q = spec.ratio
    j = np.arange(spec.depth + 1)
    return spec.normalizer * q ** j, q ** (spec.depth + 1)


def orbit_mean(system: SelfSimilarSystem, b, j: int, a) -> float:
    """``tau^(b,j)(a)``: the mean of a over the j-th backward orbit of b."""
    pts, _ = orbit_array(system, b, j)
    return float(np.mean(np.real(a(pts))))


def eval_kms_on_function(system: SelfSimilarSystem, spec: KmsSpec, a) -> tuple[float, float]:
    """Truncated value ``sum_j w_j tau^(b,j)(a)`` and the bound ``sup|a| * tail``."""
    weights, tail = kms_weights(spec)
    value = sum(w * orbit_mean(system, spec.b, j, a) for j, w in enumerate(weights))
    sup = getattr(a, "sup", None)
    if sup is None:
        sup = float(np.abs(a(system.sample(1024, rng=0))).max())
    return float(value), float(sup * tail)


def kms_report(system: SelfSimilarSystem, spec: KmsSpec, functions: list[TestFunction]) -> dict:
    weights, tail = kms_weights(spec)
    values = {}
    for f in functions:
        v, bound = eval_kms_on_function(system, spec, f)
        values[f.name] = [v, bound]
    return {
        "b": spec.b.tolist(),
        "beta": spec.beta,
        "depth": spec.depth,
        "weights": weights.tolist(),
        "tail": tail,
        "values": values,
    }


def kms_report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2)
