"""Inflow profiles and per-class demand coefficients."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .tdd import DynamicTdd, TddCategory, TddSpec

__all__ = [
    "DemandProfile",
    "ClassCoefficientSchedule",
    "inflow_at",
    "apply_class_coefficients",
    "dynamic_tdd_from_schedule",
    "fast_changing_profile",
    "slow_changing_profile",
]


@dataclass(frozen=True)
class DemandProfile:
    """Piecewise-linear inflow rate e(t) [veh/s] through ``(time, rate)`` breakpoints."""

    breakpoints: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if len(self.breakpoints) < 2:
            raise ValueError("a demand profile needs at least two breakpoints")
        times = [t for t, _ in self.breakpoints]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("demand breakpoint times must be strictly increasing")
        if any(r < 0 for _, r in self.breakpoints):
            raise ValueError("demand rates must be non-negative")
        # cumulative demand at each breakpoint, for exact window integrals
        cum = [0.0]
        for (ta, ra), (tb, rb) in zip(self.breakpoints, self.breakpoints[1:]):
            cum.append(cum[-1] + 0.5 * (ra + rb) * (tb - ta))
        object.__setattr__(self, "_cum", tuple(cum))
        object.__setattr__(self, "_times", tuple(times))

    @classmethod
    def from_points(cls, points: Sequence[tuple[float, float]]) -> "DemandProfile":
        return cls(tuple((float(t), float(r)) for t, r in points))

    @property
    def start(self) -> float:
        return self._times[0]

    @property
    def end(self) -> float:
        return self._times[-1]

    @property
    def times(self) -> tuple[float, ...]:
        return self._times

    @property
    def peak(self) -> float:
        return max(r for _, r in self.breakpoints)

    def _check(self, t: float) -> None:
        if t < self.start or t > self.end:
            raise ValueError(f"time {t} outside demand profile support [{self.start}, {self.end}]")

    def rate(self, t: float) -> float:
        self._check(t)
        i = bisect.bisect_right(self._times, t) - 1
        if i >= len(self._times) - 1:
            return self.breakpoints[-1][1]
        (ta, ra), (tb, rb) = self.breakpoints[i], self.breakpoints[i + 1]
        return ra + (rb - ra) * (t - ta) / (tb - ta)

    def cumulative(self, t: float) -> float:
        """Vehicles demanded in ``[start, t]`` (exact for the linear pieces)."""
        self._check(t)
        i = bisect.bisect_right(self._times, t) - 1
        if i >= len(self._times) - 1:
            return self._cum[-1]
        ta, ra = self.breakpoints[i]
        return self._cum[i] + 0.5 * (ra + self.rate(t)) * (t - ta)

    def cumulative_many(self, ts) -> np.ndarray:
        ts = np.asarray(ts, dtype=float)
        if ts.size and (ts.min() < self.start or ts.max() > self.end):
            raise ValueError(f"times outside demand profile support [{self.start}, {self.end}]")
        times = np.array(self._times)
        rates = np.array([r for _, r in self.breakpoints])
        i = np.clip(np.searchsorted(times, ts, side="right") - 1, 0, len(times) - 2)
        r_t = np.interp(ts, times, rates)
        return np.array(self._cum)[i] + 0.5 * (rates[i] + r_t) * (ts - times[i])

    def integral(self, t0: float, t1: float) -> float:
        return self.cumulative(t1) - self.cumulative(t0)

    def scaled(self, factor: float) -> "DemandProfile":
        return DemandProfile(tuple((t, r * factor) for t, r in self.breakpoints))


def inflow_at(profile: DemandProfile, t: float) -> float:
    return profile.rate(t)


def fast_changing_profile(peak: float, base_fraction: float = 0.3) -> DemandProfile:
    """2.5 h profile with short ramps: plateau at ``peak`` [veh/s] until 1 h."""
    lo = peak * base_fraction
    return DemandProfile.from_points(
        [(0, lo), (900, lo), (1200, peak), (3600, peak), (3900, lo), (9000, lo)]
    )


def slow_changing_profile(peak: float, base_fraction: float = 0.3) -> DemandProfile:
    """2.5 h profile with long ramps and a rounded peak at 1 h."""
    lo = peak * base_fraction
    mid = lo + 0.75 * (peak - lo)
    return DemandProfile.from_points(
        [(0, lo), (1800, mid), (3000, peak), (4200, peak), (6000, mid), (7800, lo), (9000, lo)]
    )


@dataclass(frozen=True)
class ClassCoefficientSchedule:
    """Piecewise-constant demand multipliers per OD class."""

    classes: tuple[tuple[str, tuple[tuple[float, float], ...]], ...]

    def __post_init__(self):
        seen = set()
        for label, stages in self.classes:
            if label in seen:
                raise ValueError(f"duplicate class {label!r}")
            seen.add(label)
            if not stages:
                raise ValueError(f"class {label!r} has no stages")
            starts = [s for s, _ in stages]
            if any(b <= a for a, b in zip(starts, starts[1:])):
                raise ValueError(f"stage starts of class {label!r} must be strictly increasing")
            if any(m < 0 for _, m in stages):
                raise ValueError(f"negative multiplier in class {label!r}")

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Sequence[tuple[float, float]]]) -> "ClassCoefficientSchedule":
        return cls(tuple((label, tuple((float(s), float(m)) for s, m in stages)) for label, stages in mapping.items()))

    @property
    def labels(self) -> list[str]:
        return [label for label, _ in self.classes]

    @property
    def stage_starts(self) -> list[float]:
        return sorted({s for _, stages in self.classes for s, _ in stages})

    def multiplier(self, label: str, t: float) -> float:
        for name, stages in self.classes:
            if name == label:
                i = bisect.bisect_right([s for s, _ in stages], t) - 1
                if i < 0:
                    raise ValueError(f"time {t} precedes the first stage of class {label!r}")
                return stages[i][1]
        raise KeyError(label)


def apply_class_coefficients(
    base_tdd_by_class: Mapping[str, Sequence[TddCategory]],
    schedule: ClassCoefficientSchedule,
    t: float,
) -> TddSpec:
    """Categorical TDD after weighting each class by its multiplier at ``t``.

    Base proportions are shares of total demand. Categories with equal mean
    distance are merged, zero-weight categories dropped, and proportions
    renormalised to one.
    """
    missing = set(base_tdd_by_class) - set(schedule.labels)
    if missing:
        raise ValueError(f"schedule has no coefficients for classes {sorted(missing)}")
    weights: dict[float, float] = {}
    for label, cats in base_tdd_by_class.items():
        mult = schedule.multiplier(label, t)
        for c in cats:
            weights[c.mean_distance] = weights.get(c.mean_distance, 0.0) + c.proportion * mult
    total = math.fsum(weights.values())
    if total <= 0:
        raise ValueError(f"all class multipliers are zero at t={t}")
    cats = [TddCategory(d, w / total) for d, w in sorted(weights.items()) if w > 0]
    # absorb rounding so the proportions sum to one exactly enough
    p = np.array([c.proportion for c in cats])
    p /= math.fsum(p)
    return TddSpec.categorical([TddCategory(c.mean_distance, float(x)) for c, x in zip(cats, p)])


def dynamic_tdd_from_schedule(
    base_tdd_by_class: Mapping[str, Sequence[TddCategory]],
    schedule: ClassCoefficientSchedule,
) -> DynamicTdd:
    stages = tuple((s, apply_class_coefficients(base_tdd_by_class, schedule, s)) for s in schedule.stage_starts)
    return DynamicTdd(stages)
