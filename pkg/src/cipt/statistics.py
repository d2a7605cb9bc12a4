"""Binned fourth-order U-statistics for conditional independence.

Two paths compute the same U-statistic. The naive path averages the
symmetrised kernel over every 4-subset of a bin and is kept as a reference.
The counting path uses only the bin's contingency table, so it costs
O(sigma + l1*l2) per bin. It is vectorised over a batch of permuted Y
columns, which is what the permutation engine calls.

For an ordered 4-tuple (a, b, c, d) the kernel term is
``<psi_ab, psi_cd>_w`` with ``psi_ab = e(x_a, y_a) - e(x_a, y_b)``. Summing
over ordered tuples of distinct indices gives

    (n-2)(n-3) D - 2(n-3)(G - D) + P - 4G + 2D

where, with N the joint counts and Nx, Ny the margins,
``D = sum w N(N-1)``, ``G = sum w N(Nx-1)(Ny-1)`` and
``P = sum w Nx(Nx-1) Ny(Ny-1)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .binning import BinnedDataset

Pair = tuple[int, int]

NORMALIZATIONS = ("printed", "mean4")


def psi(pair_i: Pair, y_j: int, x: int, y: int) -> int:
    """1(X_i=x, Y_i=y) - 1(X_i=x) 1(Y_j=y)."""
    xi, yi = pair_i
    return int(xi == x and yi == y) - int(xi == x) * int(y_j == y)


def h_kernel(pairs: Sequence[Pair], ell1: int, ell2: int, weights=None) -> float:
    """Symmetrised order-4 kernel, averaged over all 24 orderings.

    ``weights`` (shape ``(ell1, ell2)``) holds ``1 + a_xy``; each cell's
    product is divided by it. Categories are 1-based.
    """
    if len(pairs) != 4:
        raise ValueError("kernel takes exactly four pairs")
    total = 0.0
    for o in itertools.permutations(range(4)):
        pa, pb, pc, pd = (pairs[k] for k in o)
        for x in range(1, ell1 + 1):
            for y in range(1, ell2 + 1):
                v = psi(pa, pb[1], x, y) * psi(pc, pd[1], x, y)
                if v:
                    total += v if weights is None else v / weights[x - 1][y - 1]
    return total / 24.0


def _psi_table(pairs: Sequence[Pair], ell1: int, ell2: int) -> np.ndarray:
    """psi_ij as an (n, n, ell1*ell2) array, built cell by cell."""
    n = len(pairs)
    out = np.zeros((n, n, ell1 * ell2))
    for i, (xi, yi) in enumerate(pairs):
        for j, (_, yj) in enumerate(pairs):
            out[i, j, (xi - 1) * ell2 + (yi - 1)] += 1
            out[i, j, (xi - 1) * ell2 + (yj - 1)] -= 1
    return out


def u_stat_naive(pairs: Sequence[Pair], ell1: int, ell2: int, weights=None) -> float:
    """Average of :func:`h_kernel` over all 4-subsets (vectorised enumeration)."""
    n = len(pairs)
    if n < 4:
        raise ValueError("U-statistic needs at least 4 pairs")
    table = _psi_table(pairs, ell1, ell2)
    w = np.ones(ell1 * ell2) if weights is None else 1.0 / np.asarray(weights, float).ravel()
    combos = np.array(list(itertools.combinations(range(n), 4)))
    orders = np.array(list(itertools.permutations(range(4))))
    tup = combos[:, orders]  # (n_combos, 24, 4)
    a, b, c, d = (tup[..., k] for k in range(4))
    vals = np.sum(table[a, b] * table[c, d] * w, axis=-1)
    return float(vals.mean())


def _ordered_sum(N: np.ndarray, w=None) -> np.ndarray:
    """Sum of the kernel over ordered distinct 4-tuples from joint counts.

    ``N`` has shape ``(..., ell1, ell2)``; ``w`` broadcasts against it.
    """
    N = N.astype(np.float64)
    if w is None:
        w = 1.0
    nx = N.sum(axis=-1, keepdims=True)
    ny = N.sum(axis=-2, keepdims=True)
    n = N.sum(axis=(-2, -1))
    D = np.sum(w * N * (N - 1), axis=(-2, -1))
    G = np.sum(w * N * (nx - 1) * (ny - 1), axis=(-2, -1))
    P = np.sum(w * (nx * (nx - 1)) * (ny * (ny - 1)), axis=(-2, -1))
    return (n - 2) * (n - 3) * D - 2 * (n - 3) * (G - D) + P - 4 * G + 2 * D


def _falling4(n):
    return n * (n - 1) * (n - 2) * (n - 3)


def _contingency(pairs: Sequence[Pair], ell1: int, ell2: int) -> np.ndarray:
    N = np.zeros((ell1, ell2))
    for x, y in pairs:
        N[x - 1, y - 1] += 1
    return N


def u_stat(pairs: Sequence[Pair], ell1: int, ell2: int) -> float:
    """U(W_m) by the counting path."""
    n = len(pairs)
    if n < 4:
        raise ValueError("U-statistic needs at least 4 pairs")
    return float(_ordered_sum(_contingency(pairs, ell1, ell2)) / _falling4(n))


def _batch_y(binned: BinnedDataset, y) -> tuple[np.ndarray, bool]:
    if y is None:
        y = binned.y
    y = np.asarray(y)
    single = y.ndim == 1
    return np.atleast_2d(y), single


def _cell_counts(cells: np.ndarray, n_cells: int) -> np.ndarray:
    """Row-wise bincount of a (B, n) array of cell ids into (B, n_cells)."""
    B = cells.shape[0]
    flat = cells + (np.arange(B, dtype=np.int64) * n_cells)[:, None]
    return np.bincount(flat.ravel(), minlength=B * n_cells).reshape(B, n_cells)


def _chunks(B: int, per_row: int, budget: int = 1 << 23):
    step = max(1, budget // max(per_row, 1))
    for lo in range(0, B, step):
        yield lo, min(B, lo + step)


def t_ci(binned: BinnedDataset, y=None):
    """Sum over bins with sigma >= 4 of sigma_m * U(W_m).

    ``y`` optionally replaces the binned Y column; a 2-D ``(B, n)`` array
    evaluates B columns at once and returns a length-B array.
    """
    yb, single = _batch_y(binned, y)
    sig = binned.counts
    active = np.flatnonzero(sig >= 4)
    B = yb.shape[0]
    out = np.zeros(B)
    if active.size:
        l1, l2 = binned.ell1, binned.ell2
        remap = np.full(binned.n_bins, -1, dtype=np.int64)
        remap[active] = np.arange(active.size)
        rows = np.flatnonzero(remap[binned.bin_index] >= 0)
        base = remap[binned.bin_index[rows]] * (l1 * l2) + (binned.x[rows] - 1) * l2
        s = sig[active].astype(np.float64)
        scale = 1.0 / ((s - 1) * (s - 2) * (s - 3))
        ncell = active.size * l1 * l2
        for lo, hi in _chunks(B, ncell + rows.size):
            cells = base[None, :] + (yb[lo:hi, rows] - 1)
            N = _cell_counts(cells, ncell).reshape(hi - lo, active.size, l1, l2)
            out[lo:hi] = np.sum(_ordered_sum(N) * scale, axis=-1)
    return float(out[0]) if single else out


# ---------------------------------------------------------------- weighted


@dataclass(frozen=True)
class SplitBins:
    """Random three-way split of one bin, as positions within W_m."""

    x_idx: np.ndarray
    y_idx: np.ndarray
    xy_idx: np.ndarray
    t: int

    @property
    def t1(self) -> int:
        return len(self.x_idx)

    @property
    def t2(self) -> int:
        return len(self.y_idx)

    @property
    def sizes(self) -> tuple[int, int, int]:
        return self.t1, self.t2, len(self.xy_idx)

    def parts(self, pairs: Sequence[Pair]):
        """(W_X x-values, W_Y y-values, W_XY pairs) for this split."""
        return ([pairs[i][0] for i in self.x_idx], [pairs[i][1] for i in self.y_idx],
                [pairs[i] for i in self.xy_idx])


def split_sizes(sigma: int, ell1: int, ell2: int) -> tuple[int, int, int, int]:
    """(t, t1, t2, |W_XY|); pairs beyond 4 + 4t go to W_XY."""
    if sigma < 4:
        raise ValueError("weighted split needs sigma >= 4")
    t = (sigma - 4) // 4
    t1, t2 = min(t, ell1), min(t, ell2)
    return t, t1, t2, sigma - t1 - t2


def split_for_weights(pairs_or_sigma, ell1: int, ell2: int, rng: np.random.Generator) -> SplitBins:
    sigma = pairs_or_sigma if isinstance(pairs_or_sigma, (int, np.integer)) else len(pairs_or_sigma)
    t, t1, t2, _ = split_sizes(int(sigma), ell1, ell2)
    perm = rng.permutation(int(sigma))
    return SplitBins(np.sort(perm[:t1]), np.sort(perm[t1:t1 + t2]), np.sort(perm[t1 + t2:]), t)


@dataclass(frozen=True)
class WeightTable:
    a_x: np.ndarray
    a_y: np.ndarray

    @property
    def joint(self) -> np.ndarray:
        """1 + a_xy = (1 + a_x)(1 + a_y), shape (ell1, ell2)."""
        return np.outer(1 + self.a_x, 1 + self.a_y)


def compute_weights(split_or_x, ell1: int, ell2: int, w_y=None, pairs=None) -> WeightTable:
    """Occurrence counts a_x over W_X and a_y over W_Y.

    Call as ``compute_weights(split, l1, l2, pairs=W_m)`` or directly with
    the value lists ``compute_weights(wx, l1, l2, wy)``.
    """
    if isinstance(split_or_x, SplitBins):
        wx, wy, _ = split_or_x.parts(pairs)
    else:
        wx, wy = split_or_x, (w_y if w_y is not None else [])
    a_x = np.bincount(np.asarray(wx, dtype=np.int64) - 1, minlength=ell1)[:ell1] if len(wx) else np.zeros(ell1, int)
    a_y = np.bincount(np.asarray(wy, dtype=np.int64) - 1, minlength=ell2)[:ell2] if len(wy) else np.zeros(ell2, int)
    return WeightTable(a_x.astype(np.int64), a_y.astype(np.int64))


def _weighted_norm(normalization: str, t, s):
    if normalization == "printed":
        m = 2 * t + 4
        return 24.0 * m * (m - 1) / 2.0
    if normalization == "mean4":
        return _falling4(s)
    raise ValueError(f"unknown normalization {normalization!r}")


def u_stat_weighted(pairs: Sequence[Pair], weights: WeightTable, *, normalization: str = "printed",
                    t: int | None = None) -> float:
    """Weighted U-statistic on W_XY.

    ``printed`` divides the sum over 4-subsets by binom(2t + 4, 2);
    ``mean4`` divides by binom(|W_XY|, 4). When ``t`` is omitted it is read
    off ``|W_XY| = 2t + 4``.
    """
    s = len(pairs)
    if s < 4:
        raise ValueError("weighted U-statistic needs |W_XY| >= 4")
    if t is None:
        t = (s - 4) // 2
    ell1, ell2 = len(weights.a_x), len(weights.a_y)
    total = _ordered_sum(_contingency(pairs, ell1, ell2), 1.0 / weights.joint)
    return float(total / _weighted_norm(normalization, t, s))


def omega(sigma, ell1: int, ell2: int):
    return np.sqrt(np.minimum(sigma, ell1) * np.minimum(sigma, ell2))


@dataclass(frozen=True, eq=False)
class WeightedSplit:
    """Per-row roles for a whole binned dataset.

    ``role`` is 0 for W_XY rows, 1 for W_X, 2 for W_Y and -1 for rows in
    bins with sigma < 4. ``t`` holds t_m per bin (0 for inactive bins).
    """

    role: np.ndarray
    t: np.ndarray
    bins: tuple

    def xy_mask(self) -> np.ndarray:
        return self.role == 0


def draw_weighted_split(binned: BinnedDataset, rng: np.random.Generator) -> WeightedSplit:
    role = np.full(binned.n, -1, dtype=np.int64)
    t = np.zeros(binned.n_bins, dtype=np.int64)
    off = binned.offsets
    splits = []
    for m in range(binned.n_bins):
        if binned.counts[m] < 4:
            splits.append(None)
            continue
        sp = split_for_weights(int(binned.counts[m]), binned.ell1, binned.ell2, rng)
        base = off[m]
        role[base + sp.xy_idx] = 0
        role[base + sp.x_idx] = 1
        role[base + sp.y_idx] = 2
        t[m] = sp.t
        splits.append(sp)
    role.setflags(write=False)
    t.setflags(write=False)
    return WeightedSplit(role, t, tuple(splits))


def weighted_statistic(binned: BinnedDataset, split: WeightedSplit, y=None,
                       normalization: str = "printed"):
    """Sum over bins with sigma >= 4 of sigma_m * omega_m * U_W(W_m) for a fixed split.

    Weights are recomputed from the (possibly permuted) Y column, so the
    same function serves both full and half permutation.
    """
    yb, single = _batch_y(binned, y)
    B = yb.shape[0]
    out = np.zeros(B)
    sig = binned.counts
    active = np.flatnonzero(sig >= 4)
    if active.size == 0:
        return 0.0 if single else out
    l1, l2 = binned.ell1, binned.ell2
    A = active.size
    remap = np.full(binned.n_bins, -1, dtype=np.int64)
    remap[active] = np.arange(A)
    bidx = remap[binned.bin_index]
    role = split.role

    xr = np.flatnonzero(role == 1)
    a_x = np.bincount(bidx[xr] * l1 + (binned.x[xr] - 1), minlength=A * l1).reshape(A, l1)
    yr = np.flatnonzero(role == 2)
    xyr = np.flatnonzero(role == 0)
    base_xy = bidx[xyr] * (l1 * l2) + (binned.x[xyr] - 1) * l2

    s_xy = np.bincount(bidx[xyr], minlength=A).astype(np.float64)
    t_act = split.t[active].astype(np.float64)
    sig_a = sig[active].astype(np.float64)
    coef = sig_a * omega(sig_a, l1, l2) / _weighted_norm(normalization, t_act, s_xy)

    for lo, hi in _chunks(B, A * (l1 * l2 + l2) + binned.n):
        b = hi - lo
        N = _cell_counts(base_xy[None, :] + (yb[lo:hi, xyr] - 1), A * l1 * l2).reshape(b, A, l1, l2)
        a_y = _cell_counts(bidx[yr][None, :] * l2 + (yb[lo:hi, yr] - 1), A * l2).reshape(b, A, l2)
        w = 1.0 / ((1.0 + a_x)[None, :, :, None] * (1.0 + a_y)[:, :, None, :])
        out[lo:hi] = np.sum(_ordered_sum(N, w) * coef, axis=-1)
    return float(out[0]) if single else out


def t_ci_weighted(binned: BinnedDataset, rng: np.random.Generator, normalization: str = "printed"):
    """Draw the per-bin splits and return (statistic, split) for reuse."""
    split = draw_weighted_split(binned, rng)
    return weighted_statistic(binned, split, normalization=normalization), split
