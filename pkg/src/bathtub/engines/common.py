"""Run configuration and result containers shared by all engines."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from ..demand import DemandProfile
from ..mfd import MfdParams
from ..tdd import DynamicTdd, GenerationCarry, generate_entries, tdd_at


class SimulationError(RuntimeError):
    """Raised when an engine cannot continue (instability, runaway demand, bad state)."""


class ConfigError(ValueError):
    pass


def _is_multiple(a: float, b: float) -> bool:
    r = a / b
    return abs(r - round(r)) <= 1e-9 * max(1.0, abs(r))


@dataclass(frozen=True)
class SimConfig:
    """Parameters of one simulation run.

    Construction never raises on inconsistent values; engines call
    :meth:`validate` so batch runs can record the failure per run.
    """

    duration: float
    mfd: MfdParams
    demand: DemandProfile
    tdd: DynamicTdd
    output_resolution: float = 60.0
    engine_time_step: float = 1.0
    alpha: float = 0.0
    generation_resolution: float = 60.0
    trip_cap: int = 1_000_000

    def validate(self, fixed_step: bool = True) -> None:
        if not self.duration > 0:
            raise ConfigError(f"duration must be positive, got {self.duration}")
        if not self.output_resolution > 0:
            raise ConfigError("output_resolution must be positive")
        if not self.engine_time_step > 0:
            raise ConfigError("engine_time_step must be positive")
        if not self.generation_resolution > 0:
            raise ConfigError("generation_resolution must be positive")
        if fixed_step and not _is_multiple(self.output_resolution, self.engine_time_step):
            raise ConfigError(
                f"output_resolution {self.output_resolution} is not a multiple of "
                f"engine_time_step {self.engine_time_step}"
            )
        if self.demand.start > 0 or self.demand.end < self.duration:
            raise ConfigError(
                f"demand profile [{self.demand.start}, {self.demand.end}] does not cover [0, {self.duration}]"
            )
        if self.tdd.stages[0][0] > 0:
            raise ConfigError("the first TDD stage must start at the simulation start (t=0)")
        if self.trip_cap <= 0:
            raise ConfigError("trip_cap must be positive")

    @property
    def sample_times(self) -> np.ndarray:
        count = int(math.floor(self.duration / self.output_resolution + 1e-9))
        return np.arange(count + 1) * self.output_resolution

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.engine_time_step))

    def step_grid(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.engine_time_step


@dataclass(frozen=True)
class Trip:
    id: int
    entry_time: float
    total_distance: float
    exit_threshold: float = math.nan
    remaining_distance: float = 0.0
    exit_time: float = math.nan


@dataclass
class TripLog:
    """Columnar record of every generated trip; ``exit_time`` is NaN while inside."""

    entry_time: np.ndarray
    distance: np.ndarray
    exit_time: np.ndarray
    exit_threshold: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.entry_time)

    @property
    def completed_mask(self) -> np.ndarray:
        return ~np.isnan(self.exit_time)

    def completed(self) -> Iterator[Trip]:
        for i in np.flatnonzero(self.completed_mask):
            yield Trip(
                id=int(i),
                entry_time=float(self.entry_time[i]),
                total_distance=float(self.distance[i]),
                exit_threshold=float(self.exit_threshold[i]) if self.exit_threshold is not None else math.nan,
                remaining_distance=0.0,
                exit_time=float(self.exit_time[i]),
            )


@dataclass
class SimResult:
    """Time series sampled every ``output_resolution`` seconds.

    ``inflow`` and ``outflow`` are averages over the window ending at each
    sample (zero at t=0). ``demand_cumulative`` is the exact integral of the
    demand profile, so ``demand_cumulative - exits_cumulative - accumulation``
    is the conservation residual, bounded by ``conservation_bound``.
    """

    engine: str
    time: np.ndarray
    accumulation: np.ndarray
    inflow: np.ndarray
    outflow: np.ndarray
    speed: np.ndarray
    demand_cumulative: np.ndarray
    exits_cumulative: np.ndarray
    conservation_bound: np.ndarray
    remaining_distance: np.ndarray | None = None
    trips: TripLog | None = None
    trajectory: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)

    def __post_init__(self):
        n = len(self.time)
        for name in ("accumulation", "inflow", "outflow", "speed", "demand_cumulative", "exits_cumulative"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"series {name} has length {len(getattr(self, name))}, expected {n}")

    def conservation_residual(self) -> np.ndarray:
        return self.demand_cumulative - self.exits_cumulative - (self.accumulation - self.accumulation[0])


def window_average(cumulative: np.ndarray, resolution: float) -> np.ndarray:
    out = np.zeros_like(cumulative, dtype=float)
    out[1:] = np.diff(cumulative) / resolution
    return out


def schedule_entries(config: SimConfig) -> tuple[np.ndarray, np.ndarray]:
    """All trip entries of a run as ``(entry_times, distances)``, sorted by time."""
    res = config.generation_resolution
    carry = GenerationCarry()
    times: list[float] = []
    dists: list[float] = []
    t0 = 0.0
    w = 0
    while t0 < config.duration - 1e-9:
        t1 = min((w + 1) * res, config.duration)
        count = config.demand.integral(t0, t1)
        spec = tdd_at(config.tdd, t0)
        entries, carry = generate_entries(spec, max(count, 0.0), (t0, t1), carry)
        for te, d in entries:
            times.append(te)
            dists.append(d)
        w += 1
        t0 = t1
    return np.array(times, dtype=float), np.array(dists, dtype=float)


def trip_conservation_bound(config: SimConfig, times: np.ndarray) -> np.ndarray:
    """Rounding bound on generated-vs-real demand at each sample time."""
    k = float(config.tdd.max_categories)
    at_boundary = np.array([_is_multiple(t, config.generation_resolution) or t >= config.duration for t in times])
    window_max = config.demand.peak * config.generation_resolution
    return np.where(at_boundary, k, k + window_max + 1.0)
