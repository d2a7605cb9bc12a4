"""Seeded samplers for the simulation designs and exact binned moments.

Binary X and Y are encoded as categories 1 (the event ``X = 1``) and
2 (``X = 0``), so every generator returns a :class:`Dataset` with
categorical 2-level axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .binning import Partition
from .core import AxisSpec, Dataset

BINARY = AxisSpec.categorical(2)
PMF_TOL = 1e-12


def _binary_labels(is_one: np.ndarray) -> np.ndarray:
    return np.where(is_one, 1, 2).astype(np.int64)


def _check_pmf(p: np.ndarray, name: str) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if np.any(p < -PMF_TOL) or np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-9):
        raise ValueError(f"{name} is not a valid pmf")
    return np.clip(p, 0.0, None)


# ----------------------------------------------------------------- samplers


def gen_exp1(n: int, M: int, rng: np.random.Generator) -> Dataset:
    """Z uniform on M labels, X uniform on {1, 2}, Y = X."""
    if M < 1:
        raise ValueError("M must be positive")
    z = rng.integers(0, M, size=n)
    x = rng.integers(1, 3, size=n)
    labels = tuple(str(m + 1) for m in range(M))
    return Dataset(x, x.copy(), z, BINARY, BINARY, "categorical", labels)


def exp2_epsilon(n: int) -> float:
    return 1.0 / n


def exp2_pz(z, M: int, eps: float):
    z = np.asarray(z, dtype=float)
    inside = (z >= 0) & (z <= 1)
    return np.where(inside, np.where(z <= 1.0 / M, M - eps, eps / (M - 1)), 0.0)


def exp2_px1(z, M: int):
    """P(X = 1 | z) for the two-piece construction."""
    z = np.asarray(z, dtype=float)
    return np.where(z <= 1.0 / M, 0.5 - 0.5 / M + z, 0.5 + 0.5 / M)


def exp2_sample_z(n: int, M: int, eps: float, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF draw from the two-piece Z density."""
    u = rng.random(n)
    head = 1.0 - eps / M
    tail = 1.0 / M + (u - head) * (M - 1) / eps
    return np.where(u < head, u / (M - eps), np.minimum(tail, 1.0))


def _check_exp2(n: int, M: int) -> float:
    if M < 2:
        raise ValueError("the two-piece construction needs M >= 2")
    if n < 1:
        raise ValueError("n must be positive")
    eps = exp2_epsilon(n)
    if eps >= 0.5:
        raise ValueError("epsilon = 1/n must be below 1/2 (n >= 3)")
    return eps


def gen_exp2_null(n: int, M: int, rng: np.random.Generator) -> Dataset:
    """Two-piece Z density with epsilon = 1/n; X, Y independent given Z."""
    eps = _check_exp2(n, M)
    z = exp2_sample_z(n, M, eps, rng)
    p = exp2_px1(z, M)
    x = _binary_labels(rng.random(n) < p)
    y = _binary_labels(rng.random(n) < p)
    return Dataset(x, y, z, BINARY, BINARY)


def exp3_f(z, theta: float):
    return np.exp(np.sin(theta * np.asarray(z, dtype=float))) / 4.0


def exp3_joint(z, theta: float = 1.0, alternative: bool = False) -> np.ndarray:
    """Cell probabilities ``[..., x, y]`` with index 0 for the value 1."""
    f = exp3_f(z, theta)
    out = np.empty(np.shape(f) + (2, 2))
    if alternative:
        out[..., 0, 0] = f**2 + f / 5
        out[..., 1, 1] = (1 - f) ** 2 + f / 5
        out[..., 0, 1] = out[..., 1, 0] = 4 * f / 5 - f**2
    else:
        q = np.stack([f, 1 - f], axis=-1)
        out[...] = q[..., :, None] * q[..., None, :]
    return out


def gen_exp3(n: int, theta: float, alternative: bool, rng: np.random.Generator) -> Dataset:
    """Z ~ U[0, 1], X, Y Bernoulli(e^{sin(theta z)} / 4), dependent under the alternative."""
    if alternative and theta != 1:
        raise ValueError("the alternative is defined for theta = 1 only")
    z = rng.random(n)
    if alternative:
        cells = exp3_joint(z, theta, True).reshape(n, 4)
        k = (rng.random(n)[:, None] > np.cumsum(cells, axis=1)[:, :3]).sum(axis=1)
        x, y = k // 2 + 1, k % 2 + 1
    else:
        f = exp3_f(z, theta)
        x = _binary_labels(rng.random(n) < f)
        y = _binary_labels(rng.random(n) < f)
    return Dataset(x, y, z, BINARY, BINARY)


def gen_generic_ci(pmf_z: Sequence[float], x_family, y_family, n: int,
                   rng: np.random.Generator) -> Dataset:
    """Categorical Z with X and Y drawn independently from per-label pmf tables.

    ``x_family[k]`` is the pmf of X (over 1..l1) given the k-th Z label.
    """
    pz = _check_pmf(pmf_z, "pmf_z")
    fx = _check_pmf(x_family, "x_family")
    fy = _check_pmf(y_family, "y_family")
    if fx.ndim != 2 or fy.ndim != 2 or len(fx) != len(pz) or len(fy) != len(pz):
        raise ValueError("conditional tables need one row per Z label")
    z = rng.choice(len(pz), size=n, p=pz / pz.sum())
    x = _draw_rows(fx[z], rng)
    y = _draw_rows(fy[z], rng)
    labels = tuple(str(k + 1) for k in range(len(pz)))
    return Dataset(x, y, z, AxisSpec.categorical(max(2, fx.shape[1])),
                   AxisSpec.categorical(max(2, fy.shape[1])), "categorical", labels)


def _draw_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if len(probs) == 0:
        return np.empty(0, dtype=np.int64)
    c = np.cumsum(probs, axis=1)[:, :-1]
    return (rng.random(len(probs))[:, None] >= c).sum(axis=1) + 1


# ------------------------------------------------------------ spec objects


TAGS = ("exp1", "exp2_null", "exp3_null", "exp3_alt", "generic_ci")


@dataclass(frozen=True)
class GeneratorSpec:
    """A serialisable description of a data-generating distribution."""

    tag: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.tag not in TAGS:
            raise ValueError(f"unknown generator {self.tag!r}")
        p = self.params
        if self.tag == "exp1" and p.get("M", 1) < 1:
            raise ValueError("M must be positive")
        if self.tag == "exp2_null":
            _check_exp2(p.get("n", 100), p.get("M", 2))
        if self.tag == "generic_ci":
            gen_generic_ci(p["pmf_z"], p["x_family"], p["y_family"], 0, np.random.default_rng(0))

    def sample(self, n: int, rng: np.random.Generator) -> Dataset:
        p = self.params
        if self.tag == "exp1":
            return gen_exp1(n, p["M"], rng)
        if self.tag == "exp2_null":
            # The density is tied to the design size, the draw may differ (Poissonisation).
            return gen_exp2_null(n, p["M"], rng) if p.get("n", n) == n else \
                _gen_exp2_fixed_eps(n, p["M"], exp2_epsilon(p["n"]), rng)
        if self.tag == "exp3_null":
            return gen_exp3(n, p.get("theta", 1.0), False, rng)
        if self.tag == "exp3_alt":
            return gen_exp3(n, 1.0, True, rng)
        return gen_generic_ci(p["pmf_z"], p["x_family"], p["y_family"], n, rng)

    def to_dict(self) -> dict:
        return {"tag": self.tag, "params": _plain(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> GeneratorSpec:
        return cls(d["tag"], dict(d.get("params", {})))


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_plain(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


def _gen_exp2_fixed_eps(n, M, eps, rng):
    z = exp2_sample_z(n, M, eps, rng)
    p = exp2_px1(z, M)
    return Dataset(_binary_labels(rng.random(n) < p), _binary_labels(rng.random(n) < p),
                   z, BINARY, BINARY)


# ---------------------------------------------------------- binned moments


@dataclass(frozen=True)
class ClosedFormFamily:
    """Z density and conditional joint pmf of (X, Y) as functions of z."""

    pz: Callable[[float], float]
    joint: Callable[[float], np.ndarray]
    breakpoints: tuple[float, ...] = ()


def closed_form_family(spec: GeneratorSpec) -> ClosedFormFamily:
    p = spec.params
    if spec.tag == "exp2_null":
        M, eps = p["M"], exp2_epsilon(p["n"])
        _check_exp2(p["n"], M)

        def joint(z):
            q = float(exp2_px1(z, M))
            v = np.array([q, 1 - q])
            return np.outer(v, v)

        return ClosedFormFamily(lambda z: float(exp2_pz(z, M, eps)), joint, (1.0 / M,))
    if spec.tag in ("exp3_null", "exp3_alt"):
        theta = 1.0 if spec.tag == "exp3_alt" else p.get("theta", 1.0)
        alt = spec.tag == "exp3_alt"
        return ClosedFormFamily(lambda z: 1.0, lambda z: exp3_joint(z, theta, alt))
    raise ValueError(f"{spec.tag!r} has no closed-form conditional family")


@dataclass(frozen=True, eq=False)
class BinnedMoments:
    """Per-bin smoothed pmfs: ``joint[m, x, y]``, marginals, bin masses, L2 gaps."""

    joint: np.ndarray
    x_marginal: np.ndarray
    y_marginal: np.ndarray
    mass: np.ndarray
    l2_gap: np.ndarray


def _quad(f, a, b, points):
    inner = [t for t in points if a < t < b]
    val, err = integrate.quad(f, a, b, points=inner or None, epsabs=1e-13, epsrel=1e-12, limit=200)
    if not np.isfinite(val) or err > 1e-10:
        raise ArithmeticError(f"quadrature did not converge on [{a}, {b}] (err {err:g})")
    return val


def binned_moments(spec: GeneratorSpec | ClosedFormFamily, partition: Partition) -> BinnedMoments:
    """Average the conditional joint pmf over each cell, weighted by the Z density."""
    fam = spec if isinstance(spec, ClosedFormFamily) else closed_form_family(spec)
    shape = np.shape(fam.joint(0.0))
    b = partition.boundaries
    M = partition.M
    joint = np.zeros((M,) + shape)
    mass = np.zeros(M)
    for m in range(M):
        lo, hi = b[m], b[m + 1]
        mass[m] = _quad(fam.pz, lo, hi, fam.breakpoints)
        if mass[m] <= 0:
            continue
        for idx in np.ndindex(*shape):
            g = lambda z, idx=idx: fam.pz(z) * float(np.asarray(fam.joint(z))[idx])
            joint[(m,) + idx] = _quad(g, lo, hi, fam.breakpoints) / mass[m]
    qx = joint.sum(axis=2)
    qy = joint.sum(axis=1)
    gap = np.sum((joint - qx[:, :, None] * qy[:, None, :]) ** 2, axis=(1, 2))
    return BinnedMoments(joint, qx, qy, mass, gap)


def exp2_bin1_closed_forms(M: int) -> dict:
    """Closed forms for the first cell of the two-piece construction, h = 1/M."""
    h = 1.0 / M
    return {"q11": h**2 / 12 + 0.25, "qx1": 0.5, "gap_printed": h**4 / 144,
            "gap_full": h**4 / 36}


def total_mass(spec: GeneratorSpec) -> float:
    fam = closed_form_family(spec)
    return _quad(fam.pz, 0.0, 1.0, fam.breakpoints)

