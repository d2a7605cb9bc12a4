"""Domain types shared across the package: axis specs, datasets, seeds."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np


class DataError(ValueError):
    """Raised when input rows do not conform to the declared axis specs."""


@dataclass(frozen=True)
class AxisSpec:
    """Type of an X or Y axis.

    ``kind`` is ``"categorical"`` (labels 1..cardinality) or ``"real"``
    (values in [0, 1]).
    """

    kind: str
    cardinality: int | None = None

    def __post_init__(self):
        if self.kind == "categorical":
            if self.cardinality is None or self.cardinality < 2:
                raise ValueError("categorical axis needs cardinality >= 2")
        elif self.kind == "real":
            if self.cardinality is not None:
                raise ValueError("real axis has no cardinality")
        else:
            raise ValueError(f"unknown axis kind {self.kind!r}")

    @classmethod
    def categorical(cls, cardinality: int) -> AxisSpec:
        return cls("categorical", int(cardinality))

    @classmethod
    def real(cls) -> AxisSpec:
        return cls("real")

    @property
    def is_categorical(self) -> bool:
        return self.kind == "categorical"


class ObservationTriple(NamedTuple):
    x: float
    y: float
    z: float


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """A validated sample of (x, y, z) triples stored column-wise.

    Categorical axes hold integer labels in 1..cardinality. For a
    categorical Z the column holds integer codes 0..len(z_labels)-1 and
    ``z_labels`` keeps the original label strings.
    """

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    x_spec: AxisSpec
    y_spec: AxisSpec
    z_kind: str = "real"
    z_labels: tuple = ()

    def __post_init__(self):
        n = len(self.x)
        if len(self.y) != n or len(self.z) != n:
            raise ValueError("x, y, z columns differ in length")
        if self.z_kind not in ("real", "categorical"):
            raise ValueError(f"unknown z kind {self.z_kind!r}")
        xdt = np.int64 if self.x_spec.is_categorical else np.float64
        ydt = np.int64 if self.y_spec.is_categorical else np.float64
        zdt = np.int64 if self.z_kind == "categorical" else np.float64
        object.__setattr__(self, "x", _frozen(np.asarray(self.x, dtype=xdt)))
        object.__setattr__(self, "y", _frozen(np.asarray(self.y, dtype=ydt)))
        object.__setattr__(self, "z", _frozen(np.asarray(self.z, dtype=zdt)))

    @property
    def n(self) -> int:
        return len(self.x)

    def __len__(self) -> int:
        return self.n

    def triples(self) -> Iterator[ObservationTriple]:
        for x, y, z in zip(self.x.tolist(), self.y.tolist(), self.z.tolist()):
            yield ObservationTriple(x, y, z)

    def take(self, idx: np.ndarray) -> Dataset:
        """Subset (or reorder) rows by integer index."""
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.x[idx], self.y[idx], self.z[idx], self.x_spec,
                       self.y_spec, self.z_kind, self.z_labels)

    def with_xy(self, x, y, x_spec: AxisSpec, y_spec: AxisSpec) -> Dataset:
        return Dataset(x, y, self.z, x_spec, y_spec, self.z_kind, self.z_labels)


def _check_axis(values: np.ndarray, spec: AxisSpec, name: str) -> np.ndarray:
    if spec.is_categorical:
        if not np.all(np.isfinite(values)):
            raise DataError(f"non-finite value in {name}")
        if np.any(values != np.round(values)):
            raise DataError(f"{name}: categorical labels must be integers")
        bad = (values < 1) | (values > spec.cardinality)
        if np.any(bad):
            v = values[bad][0]
            raise DataError(f"{name}: category out of range ({v:g} not in 1..{spec.cardinality})")
        return values.astype(np.int64)
    if not np.all(np.isfinite(values)):
        raise DataError(f"non-finite value in {name}")
    if np.any((values < 0) | (values > 1)):
        raise DataError(f"{name}: real value outside [0, 1]")
    return values


def validate_dataset(rows: Iterable[Sequence], x_spec: AxisSpec, y_spec: AxisSpec,
                     z_kind: str = "real", *, overflow: bool = False,
                     z_range: tuple[float, float] | None = None,
                     allow_empty: bool = False) -> Dataset:
    """Build a :class:`Dataset` from raw ``(x, y, z)`` rows.

    Real Z outside [0, 1] is an error unless ``overflow`` is set, in which
    case those rows are kept for the overflow bin. ``z_range`` rescales a
    bounded support (lo, hi) onto [0, 1] before the support check.
    Categorical Z labels may be arbitrary strings; they are mapped to codes
    in order of first appearance.
    """
    rows = [tuple(r) for r in rows]
    if not rows and not allow_empty:
        raise DataError("empty input")
    for r in rows:
        if len(r) != 3:
            raise DataError(f"expected 3 fields per row, got {len(r)}")
    try:
        x = np.array([float(r[0]) for r in rows], dtype=float)
        y = np.array([float(r[1]) for r in rows], dtype=float)
    except (TypeError, ValueError) as exc:
        raise DataError(f"unparseable x/y value: {exc}") from None
    x = _check_axis(x, x_spec, "x")
    y = _check_axis(y, y_spec, "y")

    if z_kind == "categorical":
        codes: dict[str, int] = {}
        z = np.array([codes.setdefault(str(r[2]).strip(), len(codes)) for r in rows],
                     dtype=np.int64)
        labels = tuple(codes)
        return Dataset(x, y, z, x_spec, y_spec, "categorical", labels)
    if z_kind != "real":
        raise ValueError(f"unknown z kind {z_kind!r}")
    try:
        z = np.array([float(r[2]) for r in rows], dtype=float)
    except (TypeError, ValueError) as exc:
        raise DataError(f"unparseable z value: {exc}") from None
    if not np.all(np.isfinite(z)):
        raise DataError("non-finite value in z")
    if z_range is not None:
        lo, hi = map(float, z_range)
        if not hi > lo:
            raise ValueError("z_range must satisfy lo < hi")
        z = (z - lo) / (hi - lo)
    if not overflow and np.any((z < 0) | (z > 1)):
        raise DataError("z out of support [0, 1]")
    return Dataset(x, y, z, x_spec, y_spec, "real")


def read_csv_rows(path) -> list[tuple[str, str, str]]:
    """Read ``x,y,z`` rows from a headed CSV file."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"x", "y", "z"} <= {f.strip() for f in reader.fieldnames}:
            raise DataError("CSV header must contain x,y,z")
        out = []
        for rec in reader:
            rec = {k.strip(): v for k, v in rec.items() if k is not None}
            out.append((rec["x"], rec["y"], rec["z"]))
    return out


def infer_axis_spec(values: Sequence[str], kind: str) -> AxisSpec:
    """Axis spec from raw column values; categorical cardinality is the max label."""
    if kind in ("real", "continuous"):
        return AxisSpec.real()
    try:
        top = max((float(v) for v in values), default=2.0)
    except ValueError as exc:
        raise DataError(f"categorical labels must be integers: {exc}") from None
    if not math.isfinite(top):
        raise DataError("non-finite categorical label")
    return AxisSpec.categorical(max(2, int(math.ceil(top))))


@dataclass(frozen=True)
class SeedTree:
    """Counter-based seed derivation: (master seed, path) -> random stream.

    Streams depend only on the master seed and the path, never on the order
    in which they are requested, so parallel schedules cannot change results.
    """

    master: int
    path: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if not 0 <= self.master < 2**64:
            raise ValueError("master seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "path", tuple(int(i) for i in self.path))

    def derive(self, *index: int) -> SeedTree:
        return SeedTree(self.master, self.path + tuple(int(i) for i in index))

    def seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(self.master, spawn_key=self.path)

    def rng(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.seed_sequence()))


def derive_seed(tree: SeedTree, index: int) -> SeedTree:
    return tree.derive(index)
