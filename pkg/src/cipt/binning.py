"""Partitions of the Z support and assignment of observations to bins."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import AxisSpec, DataError, Dataset


def ceil_power(value: float, exponent: float) -> int:
    """``ceil(value ** exponent)`` robust to floating error at exact integers."""
    v = float(value) ** float(exponent)
    r = round(v)
    if abs(v - r) <= 1e-9 * max(1.0, abs(v)):
        return int(r)
    return int(math.ceil(v))


@dataclass(frozen=True)
class Partition:
    """Cells of [0, 1] given by increasing boundaries.

    Cells are half-open ``[a, b)`` except the last, which is closed. With
    ``overflow`` set, an extra cell collects every z outside [0, 1].
    """

    boundaries: tuple[float, ...]
    overflow: bool = False

    def __post_init__(self):
        b = tuple(float(v) for v in self.boundaries)
        if len(b) < 2:
            raise ValueError("a partition needs at least one cell")
        if b[0] != 0.0 or b[-1] != 1.0:
            raise ValueError("boundaries must span [0, 1]")
        if any(hi <= lo for lo, hi in zip(b, b[1:])):
            raise ValueError("boundaries must be strictly increasing")
        object.__setattr__(self, "boundaries", b)

    @property
    def M(self) -> int:
        return len(self.boundaries) - 1

    @property
    def n_cells(self) -> int:
        return self.M + int(self.overflow)

    @property
    def h(self) -> float:
        """Maximum cell diameter."""
        b = np.asarray(self.boundaries)
        return float(np.max(np.diff(b)))

    def locate(self, z: np.ndarray) -> np.ndarray:
        """0-based cell index of each z; the overflow cell is index M."""
        z = np.asarray(z, dtype=float)
        idx = np.searchsorted(np.asarray(self.boundaries), z, side="right") - 1
        idx = np.minimum(idx, self.M - 1)
        outside = (z < 0) | (z > 1)
        if np.any(outside):
            if not self.overflow:
                raise DataError("z out of support [0, 1] and overflow bin disabled")
            idx = np.where(outside, self.M, idx)
        return idx.astype(np.int64)


def make_equal_partition(M: int, overflow: bool = False) -> Partition:
    if int(M) != M or M < 1:
        raise ValueError("number of bins M must be a positive integer")
    M = int(M)
    bounds = [i / M for i in range(M + 1)]
    return Partition(tuple(bounds), overflow)


@dataclass(frozen=True)
class DoublePartition:
    """A coarse partition whose cells are each split into ``b`` equal sub-cells."""

    coarse: Partition
    b: int

    def __post_init__(self):
        if int(self.b) != self.b or self.b < 1:
            raise ValueError("sub-bin factor b must be a positive integer")
        object.__setattr__(self, "b", int(self.b))

    @property
    def M(self) -> int:
        return self.coarse.M

    @property
    def fine_boundaries(self) -> tuple[float, ...]:
        cb = self.coarse.boundaries
        out = [0.0]
        for lo, hi in zip(cb, cb[1:]):
            out.extend(lo + (hi - lo) * k / self.b for k in range(1, self.b))
            out.append(hi)
        return tuple(out)

    @property
    def fine(self) -> Partition:
        return Partition(self.fine_boundaries, self.coarse.overflow)

    @property
    def h(self) -> float:
        return self.fine.h

    def locate(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(coarse cell, global fine cell ``m * b + k``) for each z."""
        fine = self.fine.locate(z)
        nfine = self.M * self.b
        coarse = np.where(fine >= nfine, self.M, fine // self.b)
        fine = np.where(fine >= nfine, self.M * self.b, fine)
        return coarse.astype(np.int64), fine.astype(np.int64)


@dataclass(frozen=True)
class CategoricalPartition:
    """One cell per categorical Z label."""

    M: int

    @property
    def n_cells(self) -> int:
        return self.M


@dataclass(frozen=True, eq=False)
class BinnedDataset:
    """Observations grouped by Z cell, stored contiguously per cell.

    Rows are stably sorted by cell, so ``x[offsets[m]:offsets[m+1]]`` is
    the X part of W_m in order of first assignment. When a double
    partition was used, ``fine`` holds each row's global sub-cell id
    (``m * b + k``) and ``fine_counts[m, k]`` the sub-cell sizes.
    """

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    bin_index: np.ndarray
    counts: np.ndarray
    source_rows: np.ndarray
    x_spec: AxisSpec
    y_spec: AxisSpec
    z_kind: str = "real"
    z_labels: tuple = ()
    fine: np.ndarray | None = None
    fine_counts: np.ndarray | None = None

    @property
    def n(self) -> int:
        return len(self.x)

    @property
    def n_bins(self) -> int:
        return len(self.counts)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate(([0], np.cumsum(self.counts)))

    @property
    def sub_factor(self) -> int | None:
        return None if self.fine_counts is None else self.fine_counts.shape[1]

    @property
    def ell1(self) -> int:
        return self.x_spec.cardinality

    @property
    def ell2(self) -> int:
        return self.y_spec.cardinality

    def bins(self) -> list[list[tuple[int, int]]]:
        """The pair lists W_1..W_M."""
        off = self.offsets
        xs, ys = self.x.tolist(), self.y.tolist()
        return [list(zip(xs[off[m]:off[m + 1]], ys[off[m]:off[m + 1]]))
                for m in range(self.n_bins)]

    def sub_bins(self) -> list[list[list[tuple[int, int]]]]:
        """The pair lists W_{m,k}, indexed ``[m][k]``."""
        if self.fine is None:
            raise ValueError("no sub-bin structure")
        b = self.sub_factor
        out = [[[] for _ in range(b)] for _ in range(self.n_bins)]
        for xi, yi, f in zip(self.x.tolist(), self.y.tolist(), self.fine.tolist()):
            out[f // b][f % b].append((xi, yi))
        return out

    def with_y(self, y: np.ndarray) -> BinnedDataset:
        y = np.asarray(y, dtype=self.y.dtype)
        if y.shape != self.y.shape:
            raise ValueError("replacement y has the wrong shape")
        return BinnedDataset(self.x, y, self.z, self.bin_index, self.counts, self.source_rows,
                             self.x_spec, self.y_spec, self.z_kind, self.z_labels,
                             self.fine, self.fine_counts)

    def flatten(self) -> Dataset:
        """Back to a Dataset, rows restored to their original order."""
        inv = np.argsort(self.source_rows, kind="stable")
        return Dataset(self.x[inv], self.y[inv], self.z[inv], self.x_spec, self.y_spec,
                       self.z_kind, self.z_labels)


def assign_bins(ds: Dataset, p: Partition | DoublePartition | CategoricalPartition) -> BinnedDataset:
    """Group rows of ``ds`` into the cells of ``p`` (stable within each cell)."""
    fine = fine_counts = None
    if isinstance(p, CategoricalPartition):
        if ds.z_kind != "categorical":
            raise DataError("categorical partition needs categorical z")
        if ds.n and int(ds.z.max()) >= p.M:
            raise DataError("z label code outside the categorical partition")
        coarse = ds.z.astype(np.int64)
        n_bins = p.M
    else:
        if ds.z_kind != "real":
            raise DataError("interval partitions need real-valued z")
        if isinstance(p, DoublePartition):
            coarse, fine = p.locate(ds.z)
            n_bins = p.coarse.n_cells
        else:
            coarse = p.locate(ds.z)
            n_bins = p.n_cells
    order = np.argsort(coarse, kind="stable")
    counts = np.bincount(coarse, minlength=n_bins).astype(np.int64)
    if fine is not None:
        b = p.b
        fine = fine[order]
        fine_counts = np.bincount(fine, minlength=n_bins * b).astype(np.int64)
        fine_counts = fine_counts[: n_bins * b].reshape(n_bins, b)
        for arr in (fine, fine_counts):
            arr.setflags(write=False)
    cols = []
    for a in (ds.x[order], ds.y[order], ds.z[order], coarse[order], counts, order):
        a = np.ascontiguousarray(a)
        a.setflags(write=False)
        cols.append(a)
    return BinnedDataset(*cols, ds.x_spec, ds.y_spec, ds.z_kind, ds.z_labels, fine, fine_counts)


def categorical_partition(ds: Dataset) -> CategoricalPartition:
    if ds.z_kind != "categorical":
        raise DataError("dataset has real-valued z")
    m = len(ds.z_labels) if ds.z_labels else (int(ds.z.max()) + 1 if ds.n else 1)
    return CategoricalPartition(max(m, 1))


def discretize_xy(ds: Dataset, M: int, s: float) -> Dataset:
    """Map real X/Y onto ``ceil(M ** (1/s))`` equal-width categories.

    Categorical axes pass through unchanged.
    """
    if not s > 0:
        raise ValueError("smoothness s must be positive")
    m_prime = ceil_power(M, 1.0 / s)
    part = make_equal_partition(m_prime)
    x, xs = ds.x, ds.x_spec
    y, ys = ds.y, ds.y_spec
    spec = AxisSpec.categorical(max(m_prime, 2))
    if not xs.is_categorical:
        x, xs = part.locate(ds.x) + 1, spec
    if not ys.is_categorical:
        y, ys = part.locate(ds.y) + 1, spec
    return ds.with_xy(x, y, xs, ys)
