"""Comparison metrics: smoothing, windowed normalised RMSE, step convergence
and calibration of the M-model ``alpha``."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .engines.common import SimConfig, SimResult
from .engines.continuous import run_m_model

__all__ = [
    "AlignedSeries",
    "exponential_smooth",
    "normalized_rmse",
    "mean_relative_difference",
    "ConvergenceReport",
    "convergence_test",
    "AlphaReport",
    "calibrate_alpha",
    "WINDOWS",
    "heatmap_rows",
]

SMOOTHING = 0.2
WINDOWS = {"increase": (0.0, 3600.0), "decrease": (3600.0, 9000.0), "full": (-math.inf, math.inf)}


@dataclass(frozen=True)
class AlignedSeries:
    time: np.ndarray
    reference: np.ndarray
    candidate: np.ndarray

    def __post_init__(self):
        t, r, c = (np.asarray(x, dtype=float) for x in (self.time, self.reference, self.candidate))
        if not (len(t) == len(r) == len(c)):
            raise ValueError("aligned series must have equal lengths")
        if np.any(np.diff(t) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        object.__setattr__(self, "time", t)
        object.__setattr__(self, "reference", r)
        object.__setattr__(self, "candidate", c)


def exponential_smooth(series: Sequence[float], smoothing: float = SMOOTHING) -> np.ndarray:
    """Simple exponential smoothing, ``s[0] = x[0]``, ``s[t] = p x[t] + (1-p) s[t-1]``."""
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        raise ValueError("cannot smooth an empty series")
    if not 0 < smoothing <= 1:
        raise ValueError("smoothing parameter must lie in (0, 1]")
    out = np.empty_like(x)
    s = x[0]
    out[0] = s
    for i in range(1, len(x)):
        s = smoothing * x[i] + (1.0 - smoothing) * s
        out[i] = s
    return out


def normalized_rmse(series: AlignedSeries, window: tuple[float, float] = WINDOWS["full"]) -> float:
    """RMSE over samples with ``t0 <= t <= t1``, divided by the largest reference value."""
    t0, t1 = window
    mask = (series.time >= t0) & (series.time <= t1)
    if not mask.any():
        raise ValueError(f"window {window} contains no samples")
    norm = float(np.max(series.reference))
    if not norm > 0:
        raise ValueError("reference maximum is zero; cannot normalise")
    err = series.candidate[mask] - series.reference[mask]
    return float(np.sqrt(np.mean(err * err)) / norm)


def mean_relative_difference(a: np.ndarray, b: np.ndarray) -> float:
    """``sum|a - b| / sum|b|``: mean absolute difference relative to the mean level of ``b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = float(np.abs(b).sum())
    diff = float(np.abs(a - b).sum())
    if denom == 0:
        return 0.0 if diff == 0 else math.inf
    return diff / denom


@dataclass
class ConvergenceReport:
    dt: float
    converged: bool
    steps: list[float] = field(default_factory=list)
    differences: list[float] = field(default_factory=list)


def convergence_test(
    runner: Callable[[float], SimResult],
    initial_dt: float,
    threshold: float = 0.01,
    max_halvings: int = 8,
) -> ConvergenceReport:
    """Halve the time step until two consecutive runs differ by less than ``threshold``.

    The difference is :func:`mean_relative_difference` of the accumulation
    series. The coarser step of the first passing pair is returned. Raises
    ``RuntimeError`` after ``max_halvings`` without convergence.
    """
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    if not initial_dt > 0:
        raise ValueError("initial_dt must be positive")
    report = ConvergenceReport(dt=initial_dt, converged=False, steps=[initial_dt])
    if math.isinf(threshold):
        report.converged = True
        return report
    dt = initial_dt
    prev = runner(dt).accumulation
    for _ in range(max_halvings):
        fine = dt / 2
        cur = runner(fine).accumulation
        diff = mean_relative_difference(cur, prev)
        report.steps.append(fine)
        report.differences.append(diff)
        if diff < threshold:
            report.dt = dt
            report.converged = True
            return report
        dt, prev = fine, cur
    raise RuntimeError(
        f"no convergence after {max_halvings} halvings (last difference {report.differences[-1]:.3g})"
    )


@dataclass
class AlphaReport:
    alpha: float
    rmse: float
    curve: list[tuple[float, float]]
    failures: dict[float, str] = field(default_factory=dict)


def _alpha_grid(lo: float, hi: float, resolution: float) -> list[float]:
    if resolution <= 0:
        raise ValueError("grid resolution must be positive")
    i0 = math.ceil(lo / resolution - 1e-9)
    i1 = math.floor(hi / resolution + 1e-9)
    grid = [round(i * resolution, 12) + 0.0 for i in range(i0, i1 + 1)]
    if not grid:
        raise ValueError("alpha grid is empty")
    return grid


def calibrate_alpha(
    reference: Sequence[float],
    config: SimConfig,
    grid: tuple[float, float, float] = (-5.0, 5.0, 0.1),
    refine: bool = True,
    runner: Callable[[SimConfig], SimResult] = run_m_model,
) -> AlphaReport:
    """Pick the M-model ``alpha`` that minimises the full-window normalised RMSE.

    ``reference`` is an accumulation series on the config's output grid.
    Grid ties go to the smallest ``|alpha|``. A golden-section pass inside
    one grid cell either side of the best point replaces it only if strictly
    better. Failing grid points are reported, not raised.
    """
    ref = np.asarray(reference, dtype=float)
    times = config.sample_times
    if len(ref) != len(times):
        raise ValueError(f"reference has {len(ref)} samples, output grid has {len(times)}")
    lo, hi, res = grid
    points = _alpha_grid(lo, hi, res)

    def score(alpha: float) -> float:
        result = runner(replace(config, alpha=alpha))
        return normalized_rmse(AlignedSeries(times, ref, result.accumulation))

    curve: list[tuple[float, float]] = []
    failures: dict[float, str] = {}
    for a in points:
        try:
            curve.append((a, score(a)))
        except Exception as exc:
            failures[a] = f"{type(exc).__name__}: {exc}"
    if not curve:
        raise RuntimeError(f"every alpha grid point failed: {failures}")

    best_a, best_e = min(curve, key=lambda p: (p[1], abs(p[0]), p[0]))
    if refine and best_e > 0 and len(points) > 1:
        a_lo = max(lo, best_a - res)
        a_hi = min(hi, best_a + res)
        try:
            opt = minimize_scalar(score, bounds=(a_lo, a_hi), method="bounded", options={"xatol": res * 1e-3})
            if opt.success and opt.fun < best_e:
                best_a, best_e = float(opt.x), float(opt.fun)
                curve.append((best_a, best_e))
                curve.sort()
        except Exception as exc:
            failures[math.nan] = f"refinement failed: {exc}"
    return AlphaReport(alpha=best_a, rmse=best_e, curve=curve, failures=failures)


def heatmap_rows(
    scenario: str,
    reference: SimResult | np.ndarray,
    candidates: Mapping[str, SimResult],
    windows: Mapping[str, tuple[float, float]] = WINDOWS,
    smoothing: float = SMOOTHING,
) -> list[tuple[str, str, str, float]]:
    """Windowed normalised RMSE of each engine against the reference.

    Trip-based series (engine names starting with ``EB``/``TB``), including a
    trip-based reference, are exponentially smoothed first. Windows holding no
    samples (a run shorter than the window start) are left out.
    """
    if isinstance(reference, SimResult):
        ref = reference.accumulation
        if reference.engine.startswith(("EB", "TB")):
            ref = exponential_smooth(ref, smoothing)
    else:
        ref = np.asarray(reference, dtype=float)
    rows = []
    for name, result in candidates.items():
        cand = result.accumulation
        if name.startswith(("EB", "TB")):
            cand = exponential_smooth(cand, smoothing)
        aligned = AlignedSeries(result.time, ref, cand)
        for wname, win in windows.items():
            if not np.any((result.time >= win[0]) & (result.time <= win[1])):
                continue
            rows.append((scenario, name, wname, normalized_rmse(aligned, win)))
    return rows
