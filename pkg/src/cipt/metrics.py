"""Distances and divergences between finite discrete distributions.

All functions take probability vectors of equal length (anything convertible
to a float array, or a :class:`DiscreteDist`). Terms where both masses are
zero contribute nothing.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

NORM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class DiscreteDist:
    """A probability table over a finite support."""

    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float).ravel()
        if p.size == 0:
            raise ValueError("empty distribution")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise ValueError("probabilities must be finite and non-negative")
        if abs(p.sum() - 1.0) > NORM_TOL * max(1, p.size):
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    def __len__(self) -> int:
        return self.p.size

    def __array__(self, dtype=None, copy=None):
        return self.p if dtype is None else self.p.astype(dtype)


def _pair(P, Q) -> tuple[np.ndarray, np.ndarray]:
    p = P.p if isinstance(P, DiscreteDist) else np.asarray(P, dtype=float)
    q = Q.p if isinstance(Q, DiscreteDist) else np.asarray(Q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"support mismatch: {p.shape} vs {q.shape}")
    return p, q


def tv_distance(P, Q) -> float:
    p, q = _pair(P, Q)
    return float(0.5 * np.sum(np.abs(p - q)))


def gen_hellinger(P, Q, gamma: float) -> float:
    """Generalised Hellinger distance ((1/2) sum |p^(1/g) - q^(1/g)|^g)^(1/g).

    ``gamma=1`` is the TV distance and ``gamma=2`` the Hellinger distance.
    """
    if gamma < 1:
        raise ValueError("gamma must be at least 1")
    p, q = _pair(P, Q)
    if gamma == 1:
        return tv_distance(p, q)
    d = np.abs(p ** (1.0 / gamma) - q ** (1.0 / gamma)) ** gamma
    return float((0.5 * np.sum(d)) ** (1.0 / gamma))


def hellinger(P, Q) -> float:
    return gen_hellinger(P, Q, 2.0)


def kl_div(P, Q) -> float:
    p, q = _pair(P, Q)
    s = p > 0
    if np.any(q[s] == 0):
        return float("inf")
    return float(np.sum(p[s] * np.log(p[s] / q[s])))


def renyi_div(P, Q, gamma: float) -> float:
    """Renyi divergence of order gamma of P from Q (natural log).

    Order 1 is the KL divergence. For gamma >= 1 the result is infinite
    whenever P puts mass where Q has none.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if gamma == 1:
        return kl_div(P, Q)
    p, q = _pair(P, Q)
    s = (p > 0) & (q > 0)
    if gamma > 1 and np.any((p > 0) & (q == 0)):
        return float("inf")
    total = np.sum(p[s] ** gamma * q[s] ** (1.0 - gamma))
    if total == 0:
        return float("inf")
    return float(np.log(total) / (gamma - 1.0))


def chi2_div(P, Q) -> float:
    p, q = _pair(P, Q)
    if np.any((p > 0) & (q == 0)):
        return float("inf")
    s = q > 0
    return float(np.sum((p[s] - q[s]) ** 2 / q[s]))


METRICS = ("tv", "hellinger", "renyi")


@dataclass(frozen=True)
class SmoothnessReport:
    """Largest ratio D(P_z, P_z') / |z - z'| over all pairs of a z grid.

    For ``metric="renyi"`` the numerator is the square root of the divergence.
    """

    metric: str
    gamma: float
    lipschitz: float
    grid: tuple[float, ...]
    argmax: tuple[float, float]


def _distance_fn(metric: str, gamma: float) -> Callable:
    if metric == "tv":
        return tv_distance
    if metric == "hellinger":
        return lambda p, q: gen_hellinger(p, q, gamma)
    if metric == "renyi":
        return lambda p, q: np.sqrt(renyi_div(p, q, gamma))
    raise ValueError(f"unknown metric {metric!r}")


def estimate_lipschitz(family: Callable[[float], Sequence[float]], grid: Sequence[float],
                       metric: str = "tv", gamma: float = 1.0) -> SmoothnessReport:
    """Empirical Lipschitz constant of ``z -> family(z)`` over a grid."""
    g = np.asarray(grid, dtype=float)
    if g.ndim != 1 or g.size < 2:
        raise ValueError("grid needs at least two points")
    if np.any(np.diff(g) <= 0):
        raise ValueError("grid must be strictly increasing")
    dist = _distance_fn(metric, gamma)
    pmfs = [DiscreteDist(family(z)).p for z in g]
    best, arg = 0.0, (float(g[0]), float(g[1]))
    for i, j in itertools.combinations(range(g.size), 2):
        r = dist(pmfs[i], pmfs[j]) / (g[j] - g[i])
        if r > best:
            best, arg = float(r), (float(g[i]), float(g[j]))
    return SmoothnessReport(metric, float(gamma), best, tuple(g.tolist()), arg)
