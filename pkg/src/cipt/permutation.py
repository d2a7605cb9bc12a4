"""Local permutation calibration: sampling, enumeration, p-values, decisions.

Permutations are represented as source-index arrays over the rows of a
:class:`BinnedDataset`: the permuted Y column is ``y[index]``. A batch of B
permutations is a ``(B, n)`` array, which the statistics evaluate in one
vectorised call.
"""

from __future__ import annotations

import dataclasses
import functools
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import statistics as st
from .binning import (BinnedDataset, CategoricalPartition, DoublePartition, assign_bins,
                      categorical_partition, discretize_xy, make_equal_partition)
from .core import Dataset, SeedTree

MODES = ("full", "half", "cyclic")
DEFAULT_CAP = 10**6
TIE_RTOL = 1e-10

StatisticFn = Callable[[BinnedDataset, np.ndarray], np.ndarray]


def _tol(t: float) -> float:
    # Equal count tables give bitwise-equal statistics; this only absorbs
    # rounding between distinct tables with equal exact values.
    return TIE_RTOL * max(1.0, abs(t))


@dataclass(frozen=True, eq=False)
class LocalPermutation:
    """One local permutation: permuted Y at row i is ``y[index[i]]``."""

    index: np.ndarray
    mode: str = "full"

    def per_cell(self, binned: BinnedDataset) -> list[np.ndarray]:
        """0-based permutation of each cell's positions (fine cells in cyclic mode)."""
        groups = _cell_ids(binned, self.mode)
        out = []
        for g in np.unique(groups):
            rows = np.flatnonzero(groups == g)
            pos = {r: k for k, r in enumerate(rows.tolist())}
            out.append(np.array([pos[int(s)] for s in self.index[rows]], dtype=np.int64))
        return out


def _cell_ids(binned: BinnedDataset, mode: str, split: st.WeightedSplit | None = None) -> np.ndarray:
    """Group id per row; rows that never move get a unique negative id."""
    if mode == "cyclic":
        if binned.fine is None:
            raise ValueError("cyclic mode needs a double partition")
        return binned.fine
    if mode == "full":
        return binned.bin_index
    if mode == "half":
        if split is None:
            raise ValueError("half mode needs the weighted-statistic split")
        return np.where(split.role == 0, binned.bin_index, -1 - np.arange(binned.n))
    raise ValueError(f"unknown permutation mode {mode!r}")


def _groups(binned: BinnedDataset, mode: str, split=None) -> list[np.ndarray]:
    """Row lists of each movable cell, in binned (first-assignment) order."""
    ids = _cell_ids(binned, mode, split)
    order = np.argsort(ids, kind="stable")
    sid = ids[order]
    cuts = np.flatnonzero(np.diff(sid)) + 1
    return [g for g in np.split(order, cuts) if g.size > 1 and ids[g[0]] >= 0]


def _identity(n: int, B: int) -> np.ndarray:
    return np.broadcast_to(np.arange(n, dtype=np.int64), (B, n)).copy()


def _shuffle_batch(binned, mode, B, rng, split=None) -> np.ndarray:
    src = _identity(binned.n, B)
    groups = _groups(binned, mode, split)
    if not groups:
        return src
    order = np.concatenate(groups)
    gid = np.repeat(np.arange(len(groups)), [g.size for g in groups]).astype(np.float64)
    key = gid[None, :] + 0.5 * rng.random((B, order.size))
    src[:, order] = order[np.argsort(key, axis=1)]
    return src


def _cyclic_layout(binned: BinnedDataset):
    groups = _groups(binned, "cyclic")
    if not groups:
        return groups, None, None, None
    order = np.concatenate(groups)
    sizes = np.array([g.size for g in groups], dtype=np.int64)
    starts = np.concatenate(([0], np.cumsum(sizes)[:-1]))
    cell = np.repeat(np.arange(len(groups)), sizes)
    rank = np.arange(order.size) - starts[cell]
    return order, sizes, starts, (cell, rank)


def _cyclic_from_shifts(binned: BinnedDataset, shifts: np.ndarray, layout=None) -> np.ndarray:
    """Source indices for a (B, n_cells) array of cyclic shifts over non-trivial fine cells."""
    order, sizes, starts, cr = layout if layout is not None else _cyclic_layout(binned)
    B = shifts.shape[0]
    src = _identity(binned.n, B)
    if sizes is None:
        return src
    cell, rank = cr
    k = shifts[:, cell]
    src[:, order] = order[starts[cell][None, :] + (rank[None, :] + k) % sizes[cell][None, :]]
    return src


def _cyclic_batch(binned, B, rng, distinct: bool) -> np.ndarray:
    layout = _cyclic_layout(binned)
    sizes = layout[1]
    if sizes is None:
        return _identity(binned.n, B)
    shifts = (rng.random((B, sizes.size)) * sizes).astype(np.int64)
    if distinct:
        seen = set()
        rows = []
        for r in shifts:
            key = r.tobytes()
            while key in seen:
                r = (rng.random(sizes.size) * sizes).astype(np.int64)
                key = r.tobytes()
            seen.add(key)
            rows.append(r)
        shifts = np.array(rows, dtype=np.int64).reshape(B, sizes.size)
    return _cyclic_from_shifts(binned, shifts, layout)


def sample_permutations(binned: BinnedDataset, mode: str, B: int, rng: np.random.Generator,
                        split: st.WeightedSplit | None = None, distinct: bool = False) -> np.ndarray:
    """Draw B local permutations as a ``(B, n)`` source-index array.

    ``distinct`` (cyclic mode only) draws without replacement.
    """
    if mode == "cyclic":
        if distinct and B > count_permutations(binned, mode):
            raise ValueError("cannot draw more distinct cyclic permutations than exist")
        return _cyclic_batch(binned, B, rng, distinct)
    if mode not in ("full", "half"):
        raise ValueError(f"unknown permutation mode {mode!r}")
    return _shuffle_batch(binned, mode, B, rng, split)


def sample_local_permutation(binned: BinnedDataset, mode: str, rng: np.random.Generator,
                             split: st.WeightedSplit | None = None) -> LocalPermutation:
    return LocalPermutation(sample_permutations(binned, mode, 1, rng, split)[0], mode)


def count_permutations(binned: BinnedDataset, mode: str, split: st.WeightedSplit | None = None) -> int:
    """Size of the local permutation set: prod sigma_m! (full), prod |W_XY,m|! (half)
    or prod max(sigma_mk, 1) (cyclic)."""
    if mode == "cyclic":
        if binned.fine_counts is None:
            raise ValueError("cyclic mode needs a double partition")
        return math.prod(max(int(s), 1) for s in binned.fine_counts.ravel())
    return math.prod(math.factorial(g.size) for g in _groups(binned, mode, split))


def apply_permutation(binned: BinnedDataset, perm: LocalPermutation | np.ndarray) -> BinnedDataset:
    index = perm.index if isinstance(perm, LocalPermutation) else np.asarray(perm)
    if index.shape != (binned.n,):
        raise ValueError("permutation shape does not match the binned data")
    if not np.array_equal(binned.bin_index[index], binned.bin_index):
        raise ValueError("permutation moves rows across bins")
    return binned.with_y(binned.y[index])


def compose(first: LocalPermutation, second: LocalPermutation) -> LocalPermutation:
    """Permutation equal to applying ``first`` and then ``second``."""
    return LocalPermutation(first.index[second.index], first.mode)


def enumerate_permutations(binned: BinnedDataset, mode: str, split=None, chunk: int = 1 << 15,
                           cap: int = DEFAULT_CAP):
    """Yield every local permutation, in ``(k, n)`` chunks."""
    K = count_permutations(binned, mode, split)
    if K > cap:
        raise ValueError(f"{K} local permutations exceed the enumeration cap {cap}")
    n = binned.n
    if mode == "cyclic":
        layout = _cyclic_layout(binned)
        sizes = layout[1]
        if sizes is None:
            yield _identity(n, 1)
            return
        radices = sizes
        for lo in range(0, K, chunk):
            i = np.arange(lo, min(K, lo + chunk), dtype=np.int64)
            digits = _mixed_radix(i, radices)
            yield _cyclic_from_shifts(binned, digits, layout)
        return
    groups = _groups(binned, mode, split)
    tables = [np.array(list(itertools.permutations(range(g.size))), dtype=np.int64) for g in groups]
    radices = np.array([len(t) for t in tables], dtype=np.int64)
    for lo in range(0, K, chunk):
        i = np.arange(lo, min(K, lo + chunk), dtype=np.int64)
        src = _identity(n, i.size)
        if groups:
            digits = _mixed_radix(i, radices)
            for gi, (g, tab) in enumerate(zip(groups, tables)):
                src[:, g] = g[tab[digits[:, gi]]]
        yield src


def _mixed_radix(i: np.ndarray, radices: np.ndarray) -> np.ndarray:
    out = np.empty((i.size, radices.size), dtype=np.int64)
    rem = i.copy()
    for k, r in enumerate(radices):
        out[:, k] = rem % r
        rem //= r
    return out


@dataclass(frozen=True, eq=False)
class CalibrationResult:
    statistic: float
    permuted: np.ndarray
    p_value: float
    exhaustive: bool
    n_permutations: int

    @property
    def B(self) -> int:
        return len(self.permuted)


def _evaluate(statistic_fn: StatisticFn, binned: BinnedDataset, src: np.ndarray) -> np.ndarray:
    return np.asarray(statistic_fn(binned, binned.y[src]), dtype=float)


def _observed_and_permuted(statistic_fn, binned, src):
    # Evaluate the observed data in the same batch as the permutations so
    # identical count tables give bitwise-identical values.
    allsrc = np.vstack([np.arange(binned.n, dtype=np.int64)[None, :], src])
    vals = _evaluate(statistic_fn, binned, allsrc)
    return float(vals[0]), vals[1:]


def mc_pvalue(statistic_fn: StatisticFn, binned: BinnedDataset, mode: str, B: int,
              rng: np.random.Generator, split=None, cap: int = DEFAULT_CAP) -> CalibrationResult:
    """Monte Carlo p-value (1 + #{T_pi >= T}) / (B + 1).

    Full and half permutations are drawn with replacement. Cyclic ones are
    drawn without replacement; when B >= K* the whole cyclic set is
    enumerated instead and the exact p-value is returned.
    """
    if B < 1:
        raise ValueError("B must be at least 1")
    if mode == "cyclic":
        K = count_permutations(binned, mode)
        if B >= K:
            return exact_pvalue(statistic_fn, binned, mode, split=split, cap=max(cap, K))
        src = sample_permutations(binned, mode, B, rng, split, distinct=True)
    else:
        src = sample_permutations(binned, mode, B, rng, split)
    t, perm = _observed_and_permuted(statistic_fn, binned, src)
    ge = int(np.sum(perm >= t - _tol(t)))
    return CalibrationResult(t, perm, (ge + 1) / (B + 1), False, B)


def exact_pvalue(statistic_fn: StatisticFn, binned: BinnedDataset, mode: str, split=None,
                 cap: int = DEFAULT_CAP) -> CalibrationResult:
    """p = (1/K) #{T_pi >= T} over the whole local permutation set."""
    t = float(_evaluate(statistic_fn, binned, np.arange(binned.n, dtype=np.int64)[None, :])[0])
    parts = [_evaluate(statistic_fn, binned, src)
             for src in enumerate_permutations(binned, mode, split, cap=cap)]
    perm = np.concatenate(parts)
    ge = int(np.sum(perm >= t - _tol(t)))
    return CalibrationResult(t, perm, ge / perm.size, True, perm.size)


@dataclass(frozen=True)
class Decision:
    reject_probability: float
    rejected: bool
    threshold: float


def randomized_decision(result: CalibrationResult, alpha: float, rng: np.random.Generator) -> Decision:
    """Randomised test with exact level alpha under exchangeability.

    With K values sorted ascending, k = K - floor(K alpha) and T_(k) the
    k-th one: reject when T > T_(k), reject with probability
    a = (K alpha - K+) / K0 when T = T_(k), where K+ and K0 count values
    above and equal to T_(k). A Monte Carlo result is treated as the finite
    set of its B draws plus the observed statistic.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    t = result.statistic
    vals = result.permuted if result.exhaustive else np.concatenate(([t], result.permuted))
    K = vals.size
    srt = np.sort(vals)
    k = K - math.floor(K * alpha + 1e-12)
    tk = float(srt[k - 1])
    tol = _tol(tk)
    k_plus = int(np.sum(vals > tk + tol))
    k_zero = int(np.sum(np.abs(vals - tk) <= tol))
    if t > tk + tol:
        prob = 1.0
    elif abs(t - tk) <= tol:
        prob = min(1.0, max(0.0, (K * alpha - k_plus) / k_zero))
    else:
        prob = 0.0
    rejected = bool(rng.random() < prob)
    return Decision(prob, rejected, tk)


def poissonize(ds: Dataset, n: int, rate_multiplier: float, rng: np.random.Generator):
    """Draw N ~ Poisson(rate * n); keep a uniform N-subset when N <= n.

    Returns ``(subsample, truncated)``. When N > n the subsample is empty and
    ``truncated`` is True; the caller must then accept the null.
    """
    N = int(rng.poisson(rate_multiplier * n))
    if N > n or N > ds.n:
        return ds.take(np.array([], dtype=np.int64)), True
    idx = np.sort(rng.choice(ds.n, size=N, replace=False))
    return ds.take(idx), False


# ---------------------------------------------------------------- run_test


@dataclass(frozen=True)
class TestConfig:
    """Everything that determines a single test run apart from data and seed.

    ``bins`` is the coarse bin count M (ignored for categorical Z, where
    each label is a bin). ``sub_bins`` turns on double binning and requires
    cyclic permutations. ``poisson`` is ``None``, ``"half"`` (N ~ Pois(n/2))
    or ``"full"`` (N ~ Pois(n)); either way the test accepts when N > n.
    """

    __test__ = False  # not a pytest class

    bins: int | None = None
    sub_bins: int | None = None
    stat: str = "ustat"
    perm: str = "full"
    B: int = 100
    alpha: float = 0.05
    poisson: str | None = None
    holder_s: float | None = None
    overflow: bool = False
    calibration: str = "mc"
    randomized: bool = False
    normalization: str = "printed"
    cap: int = DEFAULT_CAP

    def __post_init__(self):
        if self.stat not in ("ustat", "weighted"):
            raise ValueError(f"unknown statistic {self.stat!r}")
        if self.perm not in MODES:
            raise ValueError(f"unknown permutation mode {self.perm!r}")
        if self.perm == "half" and self.stat != "weighted":
            raise ValueError("half permutation needs the weighted statistic")
        if self.perm == "cyclic" and not self.sub_bins:
            raise ValueError("cyclic permutation needs sub-bins (double binning)")
        if self.sub_bins and self.perm != "cyclic":
            raise ValueError("double binning uses cyclic permutations")
        if self.bins is not None and self.bins < 1:
            raise ValueError("bins must be positive")
        if self.B < 1:
            raise ValueError("B must be at least 1")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.poisson not in (None, "half", "full"):
            raise ValueError("poisson must be None, 'half' or 'full'")
        if self.calibration not in ("mc", "exact"):
            raise ValueError("calibration must be 'mc' or 'exact'")
        if self.normalization not in st.NORMALIZATIONS:
            raise ValueError(f"unknown normalization {self.normalization!r}")


@dataclass(frozen=True, eq=False)
class TestOutcome:
    __test__ = False

    statistic: float
    permuted_statistics: np.ndarray
    p_value: float
    decision: str
    reject_probability: float
    randomized: bool
    poisson_truncated: bool
    n_used: int
    exhaustive: bool
    config: dict = field(default_factory=dict)
    seed: int = 0
    seed_path: tuple = ()

    @property
    def rejected(self) -> bool:
        return self.decision == "reject"


def bin_dataset(ds: Dataset, config: TestConfig) -> BinnedDataset:
    if not (ds.x_spec.is_categorical and ds.y_spec.is_categorical):
        if config.bins is None:
            raise ValueError("discretising real X/Y needs the bin count")
        ds = discretize_xy(ds, config.bins, config.holder_s or 1.0)
    if ds.z_kind == "categorical":
        if config.sub_bins:
            raise ValueError("double binning needs real-valued z")
        part = categorical_partition(ds)
    else:
        if config.bins is None:
            raise ValueError("real-valued z needs the bin count")
        part = make_equal_partition(config.bins, config.overflow)
        if config.sub_bins:
            part = DoublePartition(part, config.sub_bins)
    return assign_bins(ds, part)


def statistic_function(binned: BinnedDataset, config: TestConfig, rng: np.random.Generator):
    """The statistic as a batch function, plus the weighted split if any."""
    if config.stat == "ustat":
        return st.t_ci, None
    split = st.draw_weighted_split(binned, rng)
    return functools.partial(_weighted_batch, split=split, normalization=config.normalization), split


def _weighted_batch(binned, y, *, split, normalization):
    return st.weighted_statistic(binned, split, y, normalization)


def calibrate(statistic_fn, binned, config: TestConfig, rng, split=None) -> CalibrationResult:
    if config.calibration == "exact":
        return exact_pvalue(statistic_fn, binned, config.perm, split, config.cap)
    return mc_pvalue(statistic_fn, binned, config.perm, config.B, rng, split, config.cap)


def run_test(ds: Dataset, config: TestConfig, seed: int | SeedTree = 0) -> TestOutcome:
    """Bin, compute the statistic, calibrate by local permutation, decide.

    Sub-streams of the seed: 0 Poissonisation, 1 weight split,
    2 permutations, 3 randomised decision.
    """
    tree = seed if isinstance(seed, SeedTree) else SeedTree(int(seed))
    snapshot = dataclasses.asdict(config)
    truncated = False
    if config.poisson is not None:
        rate = 0.5 if config.poisson == "half" else 1.0
        ds, truncated = poissonize(ds, ds.n, rate, tree.derive(0).rng())
    if truncated:
        return TestOutcome(float("nan"), np.empty(0), 1.0, "accept", 0.0, config.randomized,
                           True, 0, False, snapshot, tree.master, tree.path)

    binned = bin_dataset(ds, config)
    fn, split = statistic_function(binned, config, tree.derive(1).rng())
    result = calibrate(fn, binned, config, tree.derive(2).rng(), split)
    if config.randomized:
        dec = randomized_decision(result, config.alpha, tree.derive(3).rng())
        decision, prob = ("reject" if dec.rejected else "accept"), dec.reject_probability
    else:
        rej = result.p_value <= config.alpha
        decision, prob = ("reject" if rej else "accept"), float(rej)
    return TestOutcome(result.statistic, result.permuted, result.p_value, decision, prob,
                       config.randomized, False, ds.n, result.exhaustive, snapshot,
                       tree.master, tree.path)
