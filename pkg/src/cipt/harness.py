"""Monte Carlo sweeps over the simulation designs, with CSV output.

Every repetition draws its data from a seed that depends only on the design
cell and the repetition index, so all methods in a cell see the same
datasets and the output does not depend on the worker count.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .binning import ceil_power
from .core import SeedTree
from .generators import GeneratorSpec, gen_exp1, gen_exp2_null, gen_exp3
from .permutation import TestConfig, run_test

EXPERIMENTS = ("exp1", "exp2", "exp3_type1", "exp3_power", "custom")
M_RULES = {"n": 1.0, "n^1/2": 0.5, "n^1/4": 0.25, "n^1/10": 0.1, "n^2/5": 0.4}
METHODS = ("single", "double")
POISSON = ("none", "half", "full")
CSV_FIELDS = ("experiment", "n", "M", "b", "theta", "stat", "perm_mode", "poisson", "B",
              "alpha", "reps", "rejection_rate", "se", "seed")

_DEFAULTS = {
    "exp1": {"n": (200,), "m": tuple(range(10, 121, 10))},
    "exp2": {"n": (100, 400), "m_rule": ("n", "n^1/2", "n^1/4", "n^1/10")},
    "exp3_type1": {"n": (100,), "m_rule": ("n^2/5",), "theta": (1.0, 5.0, 10.0, 15.0, 20.0),
                   "methods": METHODS},
    "exp3_power": {"n": (100, 200, 400), "m_rule": ("n^2/5",), "theta": (1.0,),
                   "methods": METHODS},
    "custom": {"n": (100,)},
}


def m_from_rule(n: int, rule: str) -> int:
    if rule not in M_RULES:
        raise ValueError(f"unknown M rule {rule!r}; choose from {sorted(M_RULES)}")
    return max(1, ceil_power(n, M_RULES[rule]))


@dataclass(frozen=True)
class ExperimentConfig:
    """A sweep over sample sizes, bin counts, smoothness values and methods.

    ``m`` fixes the bin counts; otherwise ``m_rule`` derives them from n.
    ``methods`` applies to the smoothness designs: ``single`` bins once
    with full permutations, ``double`` uses ``b`` sub-bins per bin (b = M
    when unset) with cyclic permutations. ``poisson`` lists sampling
    variants: ``none``, ``half`` (test on a Poisson(n/2) subsample,
    accepting when it exceeds n) and ``full`` (draw Poisson(n) fresh
    observations from the generator).
    """

    experiment: str
    n: tuple[int, ...] = ()
    m: tuple[int, ...] = ()
    m_rule: tuple[str, ...] = ()
    b: int | None = None
    theta: tuple[float, ...] = ()
    stat: str = "ustat"
    perm: str = "full"
    methods: tuple[str, ...] = ()
    poisson: tuple[str, ...] = ("none",)
    B: int = 100
    alpha: float = 0.05
    reps: int = 1000
    seed: int = 0
    workers: int = 1
    calibration: str = "mc"
    randomized: bool = False
    generator: dict | None = None

    def __post_init__(self):
        exp = self.experiment.replace("-", "_")
        if exp not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        object.__setattr__(self, "experiment", exp)
        d = _DEFAULTS[exp]
        for name in ("n", "m", "m_rule", "theta", "methods", "poisson"):
            v = getattr(self, name)
            if isinstance(v, (str, int, float)):
                v = (v,)
            object.__setattr__(self, name, tuple(v))
        if not self.n:
            object.__setattr__(self, "n", d["n"])
        if not self.m and not self.m_rule:
            object.__setattr__(self, "m", d.get("m", ()))
            object.__setattr__(self, "m_rule", d.get("m_rule", ()))
        if not self.theta:
            object.__setattr__(self, "theta", d.get("theta", ()))
        if not self.methods:
            object.__setattr__(self, "methods", d.get("methods", ("single",)))
        if self.m and self.m_rule:
            raise ValueError("give either explicit M values or an M rule, not both")
        if not self.m and not self.m_rule and exp != "custom":
            raise ValueError("no bin counts given")
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        for name in ("n", "m", "theta"):
            if any(not v > 0 for v in getattr(self, name)):
                raise ValueError(f"{name} entries must be positive")
        if self.b is not None and self.b < 1:
            raise ValueError("b must be positive")
        for r in self.m_rule:
            m_from_rule(1, r)
        for meth in self.methods:
            if meth not in METHODS:
                raise ValueError(f"unknown method {meth!r}")
        for p in self.poisson:
            if p not in POISSON:
                raise ValueError(f"unknown poisson option {p!r}")
        if exp == "custom":
            if self.generator is None:
                raise ValueError("custom experiments need a generator description")
            GeneratorSpec.from_dict(self.generator)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> ExperimentConfig:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class ResultRow:
    experiment: str
    n: int
    M: int
    b: int | None
    theta: float | None
    stat: str
    perm_mode: str
    poisson: str
    B: int
    alpha: float
    reps: int
    rejection_rate: float
    se: float
    seed: int
    runtime: float = field(default=0.0, compare=False)

    def csv_record(self) -> dict:
        rec = {k: getattr(self, k) for k in CSV_FIELDS}
        for k in ("b", "theta"):
            if rec[k] is None:
                rec[k] = ""
        for k in ("rejection_rate", "se", "alpha"):
            rec[k] = f"{rec[k]:.6g}" if k == "alpha" else f"{rec[k]:.6f}"
        if rec["theta"] != "":
            rec["theta"] = f"{rec['theta']:g}"
        return rec


@dataclass(frozen=True)
class _Cell:
    key: tuple[int, ...]
    n: int
    M: int
    theta: float | None


@dataclass(frozen=True)
class _Method:
    key: tuple[int, ...]
    test: TestConfig
    poisson: str
    b: int | None


def _cells(cfg: ExperimentConfig) -> list[_Cell]:
    out = []
    thetas = cfg.theta if cfg.experiment in ("exp3_type1", "exp3_power") else (None,)
    for i, n in enumerate(cfg.n):
        ms = list(cfg.m) if cfg.m else [m_from_rule(n, r) for r in cfg.m_rule]
        if not ms:
            ms = [1]
        for j, M in enumerate(ms):
            for k, th in enumerate(thetas):
                out.append(_Cell((i, j, k), int(n), int(M), th))
    return out


def _methods(cfg: ExperimentConfig, cell: _Cell) -> list[_Method]:
    out = []
    smooth = cfg.experiment in ("exp3_type1", "exp3_power")
    methods = cfg.methods if smooth else ("single",)
    for a, meth in enumerate(methods):
        for c, pois in enumerate(cfg.poisson):
            tp = "half" if pois == "half" else None
            if meth == "double":
                b = cfg.b or cell.M
                test = TestConfig(bins=cell.M, sub_bins=b, stat=cfg.stat, perm="cyclic", B=cfg.B,
                                  alpha=cfg.alpha, poisson=tp, calibration=cfg.calibration,
                                  randomized=cfg.randomized)
            else:
                b = None
                perm = "full" if smooth else cfg.perm
                test = TestConfig(bins=cell.M, stat=cfg.stat, perm=perm, B=cfg.B, alpha=cfg.alpha,
                                  poisson=tp, calibration=cfg.calibration,
                                  randomized=cfg.randomized)
            out.append(_Method((a, c), test, pois, b))
    return out


def _sample(cfg: ExperimentConfig, cell: _Cell, size: int, rng: np.random.Generator):
    exp = cfg.experiment
    if exp == "exp1":
        return gen_exp1(size, cell.M, rng)
    if exp == "exp2":
        if size == cell.n:
            return gen_exp2_null(size, cell.M, rng)
        return GeneratorSpec("exp2_null", {"M": cell.M, "n": cell.n}).sample(size, rng)
    if exp == "exp3_type1":
        return gen_exp3(size, cell.theta, False, rng)
    if exp == "exp3_power":
        return gen_exp3(size, 1.0, True, rng)
    return GeneratorSpec.from_dict(cfg.generator).sample(size, rng)


def _one_rep(cfg: ExperimentConfig, cell: _Cell, methods: list[_Method], rep: int) -> list[bool]:
    base = SeedTree(cfg.seed).derive(*cell.key, rep)
    data = _sample(cfg, cell, cell.n, base.derive(0).rng())
    fresh = None
    out = []
    for meth in methods:
        ds = data
        if meth.poisson == "full":
            if fresh is None:
                rng = base.derive(2).rng()
                fresh = _sample(cfg, cell, int(rng.poisson(cell.n)), rng)
            ds = fresh
        res = run_test(ds, meth.test, base.derive(1, *meth.key))
        out.append(res.rejected)
    return out


def _rep_chunk(args) -> list[list[bool]]:
    cfg, cell, methods, reps = args
    return [_one_rep(cfg, cell, methods, r) for r in reps]


def run_experiment(cfg: ExperimentConfig) -> list[ResultRow]:
    """Run every design cell and method; one row per (cell, method, poisson option)."""
    rows = []
    pool = ProcessPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        for cell in _cells(cfg):
            methods = _methods(cfg, cell)
            t0 = time.perf_counter()
            if pool is None:
                results = _rep_chunk((cfg, cell, methods, range(cfg.reps)))
            else:
                chunks = np.array_split(np.arange(cfg.reps), cfg.workers * 4)
                jobs = [(cfg, cell, methods, c.tolist()) for c in chunks if c.size]
                results = [r for part in pool.map(_rep_chunk, jobs) for r in part]
            elapsed = (time.perf_counter() - t0) / cfg.reps
            dec = np.array(results, dtype=bool).reshape(cfg.reps, len(methods))
            for j, meth in enumerate(methods):
                r = float(dec[:, j].mean())
                rows.append(ResultRow(cfg.experiment, cell.n, cell.M, meth.b, cell.theta,
                                      cfg.stat, meth.test.perm, meth.poisson, cfg.B, cfg.alpha,
                                      cfg.reps, r, math.sqrt(r * (1 - r) / cfg.reps), cfg.seed,
                                      elapsed))
    finally:
        if pool is not None:
            pool.shutdown()
    return rows


def write_csv(rows: Sequence[ResultRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow(row.csv_record())
