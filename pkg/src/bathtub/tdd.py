"""Trip distance distributions (TDDs).

A :class:`TddSpec` describes the distances of trips entering the reservoir at
one of three aggregation levels. A :class:`DynamicTdd` switches between specs
at fixed stage start times. Trip entries are generated deterministically from
an aggregate inflow so that integer trip counts track the real demand.
"""

from __future__ import annotations

import bisect
import enum
import heapq
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np
from scipy import stats

__all__ = [
    "TddLevel",
    "TddCategory",
    "TddSpec",
    "DynamicTdd",
    "GenerationCarry",
    "steady_distance",
    "tdd_at",
    "generate_entries",
    "ChiSquarePair",
    "chi_square_stationarity",
]

_SUM_TOL = 1e-9


class TddLevel(enum.Enum):
    MEAN_ONLY = "mean"
    CATEGORICAL = "categorical"
    INDIVIDUAL = "individual"


@dataclass(frozen=True)
class TddCategory:
    mean_distance: float  # [m]
    proportion: float

    def __post_init__(self):
        if not self.mean_distance > 0:
            raise ValueError(f"category mean distance must be positive, got {self.mean_distance}")
        if not 0 <= self.proportion <= 1:
            raise ValueError(f"category proportion must be in [0, 1], got {self.proportion}")


@dataclass(frozen=True)
class TddSpec:
    """Trip distance distribution.

    Build instances with :meth:`mean_only`, :meth:`categorical` or
    :meth:`individual`; ``mean_distance`` and ``variance`` are derived from
    the categories (or explicit distances) and are always populated.
    """

    level: TddLevel
    categories: tuple[TddCategory, ...]
    mean_distance: float
    variance: float
    individual_distances: tuple[float, ...] | None = None

    def __post_init__(self):
        if not self.mean_distance > 0:
            raise ValueError("TDD mean distance must be positive")
        if self.variance < 0:
            raise ValueError("TDD variance must be non-negative")
        if self.level is TddLevel.CATEGORICAL:
            if not self.categories:
                raise ValueError("categorical TDD needs at least one category")
            total = math.fsum(c.proportion for c in self.categories)
            if abs(total - 1.0) > _SUM_TOL:
                raise ValueError(f"category proportions sum to {total!r}, expected 1")
            mean, var = _moments(self.categories)
            if abs(mean - self.mean_distance) > _SUM_TOL * mean:
                raise ValueError("mean_distance inconsistent with categories")
            if abs(var - self.variance) > _SUM_TOL * max(var, mean * mean):
                raise ValueError("variance inconsistent with categories")

    @classmethod
    def mean_only(cls, mean_distance: float) -> "TddSpec":
        return cls(
            TddLevel.MEAN_ONLY,
            (TddCategory(float(mean_distance), 1.0),),
            float(mean_distance),
            0.0,
        )

    @classmethod
    def categorical(cls, categories: Sequence[TddCategory] | Sequence[tuple[float, float]]) -> "TddSpec":
        cats = tuple(c if isinstance(c, TddCategory) else TddCategory(*map(float, c)) for c in categories)
        if not cats:
            raise ValueError("categorical TDD needs at least one category")
        mean, var = _moments(cats)
        return cls(TddLevel.CATEGORICAL, cats, mean, var)

    @classmethod
    def individual(cls, distances: Sequence[float]) -> "TddSpec":
        d = np.asarray(distances, dtype=float)
        if d.size == 0 or np.any(d <= 0):
            raise ValueError("individual trip distances must be a non-empty list of positive values")
        values, counts = np.unique(d, return_counts=True)
        cats = tuple(TddCategory(float(v), float(c) / d.size) for v, c in zip(values, counts))
        return cls(
            TddLevel.INDIVIDUAL,
            cats,
            float(d.mean()),
            float(d.var()),
            tuple(float(x) for x in d),
        )

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    def as_mean_only(self) -> "TddSpec":
        return TddSpec.mean_only(self.mean_distance)


def _moments(categories: Sequence[TddCategory]) -> tuple[float, float]:
    p = np.array([c.proportion for c in categories])
    d = np.array([c.mean_distance for c in categories])
    p = p / p.sum()
    mean = float(np.dot(p, d))
    var = float(np.dot(p, (d - mean) ** 2))
    return mean, var


def steady_distance(spec: TddSpec) -> float:
    """Steady-state trip distance ``D* = (D**2 + sigma**2) / (2 D)`` [m]."""
    D = spec.mean_distance
    if D == 0:
        raise ValueError("steady distance undefined for zero mean distance")
    return (D * D + spec.variance) / (2.0 * D)


@dataclass(frozen=True)
class DynamicTdd:
    """Piecewise-constant TDD schedule; stage ``i`` covers ``[start_i, start_{i+1})``."""

    stages: tuple[tuple[float, TddSpec], ...]

    def __post_init__(self):
        if not self.stages:
            raise ValueError("dynamic TDD needs at least one stage")
        starts = [s for s, _ in self.stages]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("stage start times must be strictly increasing")

    @classmethod
    def static(cls, spec: TddSpec, start: float = 0.0) -> "DynamicTdd":
        return cls(((float(start), spec),))

    @property
    def starts(self) -> list[float]:
        return [s for s, _ in self.stages]

    @property
    def max_categories(self) -> int:
        return max(len(spec.categories) for _, spec in self.stages)

    def as_mean_only(self) -> "DynamicTdd":
        return DynamicTdd(tuple((s, spec.as_mean_only()) for s, spec in self.stages))


def tdd_at(dyn: DynamicTdd, t: float) -> TddSpec:
    """Spec of the latest stage whose start is ``<= t`` (stages are closed on the left)."""
    i = bisect.bisect_right(dyn.starts, t) - 1
    if i < 0:
        raise ValueError(f"time {t} precedes the first TDD stage at {dyn.stages[0][0]}")
    return dyn.stages[i][1]


# -- deterministic trip generation ---------------------------------------------


@dataclass(frozen=True)
class GenerationCarry:
    """Per-category demand owed but not yet generated (may be slightly negative).

    Slots are indexed by category position, so a stage switch that keeps the
    category layout carries residuals across the boundary.
    """

    residuals: tuple[float, ...] = field(default_factory=tuple)

    @property
    def total(self) -> float:
        return math.fsum(self.residuals)


def _apportion(owed: np.ndarray, rate: np.ndarray, m: int) -> np.ndarray:
    """Hand out ``m`` trips one at a time, earliest deadline first.

    A slot's next trip falls due once its owed demand reaches 1; measured in
    total demand that happens after ``(1 - owed) / rate`` more vehicles.
    Only slots still owed demand are eligible. This keeps every slot's
    cumulative count within one trip of its real demand.
    """
    owed = owed.astype(float).copy()
    alloc = np.zeros(len(owed), dtype=np.int64)
    heap = [((1.0 - o) / r, i) for i, (o, r) in enumerate(zip(owed, rate)) if o > 1e-12]
    heapq.heapify(heap)
    for _ in range(m):
        if heap:
            _, i = heapq.heappop(heap)
        else:  # float slack in the window total; give it to the most owed slot
            i = int(np.argmax(owed))
        alloc[i] += 1
        owed[i] -= 1.0
        if owed[i] > 1e-12:
            heapq.heappush(heap, ((1.0 - owed[i]) / rate[i], i))
    return alloc


def _interleave(alloc: np.ndarray) -> np.ndarray:
    """Category index per trip, spreading each category evenly over the window."""
    keys = []
    for c, a in enumerate(alloc):
        for i in range(int(a)):
            keys.append(((i + 0.5) / a, c))
    keys.sort()
    return np.array([c for _, c in keys], dtype=np.int64)


def generate_entries(
    spec: TddSpec,
    inflow_count: float,
    window: tuple[float, float],
    carry: GenerationCarry | None = None,
) -> tuple[list[tuple[float, float]], GenerationCarry]:
    """Turn a real-valued demand for one window into integer trip entries.

    Each category accrues ``inflow_count * p_d`` vehicles of demand. The
    window releases ``floor`` of the total owed demand, shared out earliest
    deadline first, so cumulative generated counts stay within one trip of
    the cumulative real demand in every category. Entry times are placed at the
    midpoints of equal sub-intervals of the window.

    Returns ``(entries, carry)`` with entries as ``(entry_time, distance)``
    sorted by time.
    """
    if inflow_count < 0:
        raise ValueError(f"negative inflow count {inflow_count}")
    t0, t1 = window
    if t1 <= t0:
        raise ValueError("generation window must have positive length")
    carry = carry or GenerationCarry()
    if inflow_count == 0:
        return [], carry

    p = np.array([c.proportion for c in spec.categories], dtype=float)
    dist = np.array([c.mean_distance for c in spec.categories], dtype=float)
    k = max(len(p), len(carry.residuals))
    owed = np.zeros(k)
    owed[: len(carry.residuals)] = carry.residuals
    owed[: len(p)] += inflow_count * p
    active = np.zeros(k, dtype=bool)
    active[: len(p)] = p > 0

    m = int(math.floor(math.fsum(owed[active]) + 1e-9))
    alloc = np.zeros(k, dtype=np.int64)
    if m > 0:
        alloc[active] = _apportion(owed[active], p[active[: len(p)]], m)
    owed = owed - alloc
    new_carry = GenerationCarry(tuple(float(x) for x in owed))

    if m <= 0:
        return [], new_carry
    cats = _interleave(alloc)
    width = (t1 - t0) / m
    entries = [(t0 + (j + 0.5) * width, float(dist[c])) for j, c in enumerate(cats)]
    return entries, new_carry


# -- stationarity test -----------------------------------------------------------


@dataclass(frozen=True)
class ChiSquarePair:
    first: int
    second: int
    statistic: float
    dof: int
    p_value: float
    reject: bool


def chi_square_stationarity(
    histograms: Sequence[Sequence[float]], significance: float = 0.05
) -> list[ChiSquarePair]:
    """Pairwise Pearson chi-square homogeneity tests between TDD histograms.

    For each pair the expected counts come from the pair's pooled
    distribution; ``dof = categories - 1``.
    """
    h = [np.asarray(x, dtype=float) for x in histograms]
    if len(h) < 2:
        raise ValueError("need at least two histograms")
    if len({x.shape for x in h}) != 1 or h[0].ndim != 1:
        raise ValueError("histograms must share the same category grid")
    if not 0 < significance < 1:
        raise ValueError("significance must be in (0, 1)")
    out = []
    for i, j in combinations(range(len(h)), 2):
        obs = np.vstack([h[i], h[j]])
        col = obs.sum(axis=0)
        row = obs.sum(axis=1)
        expected = np.outer(row, col) / obs.sum()
        if np.any(expected <= 0):
            raise ValueError(f"zero expected count in pair ({i}, {j})")
        stat = float(((obs - expected) ** 2 / expected).sum())
        dof = obs.shape[1] - 1
        pval = float(stats.chi2.sf(stat, dof))
        out.append(ChiSquarePair(i, j, stat, dof, pval, pval < significance))
    return out
