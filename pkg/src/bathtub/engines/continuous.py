"""Accumulation-based model and M-model, integrated with forward Euler.

Inflow per step is the exact integral of the piecewise-linear demand over
the step, so vehicle conservation holds to rounding error. Outflow is
evaluated at the start of the step and clamped to ``[0, n/dt]``.
"""

from __future__ import annotations

import numpy as np

from ..mfd import speed_function
from ..tdd import steady_distance
from .common import SimConfig, SimResult, SimulationError, window_average

__all__ = ["run_accumulation_based", "run_m_model"]

_INSTABILITY_FRACTION = 0.1


def _stage_arrays(config: SimConfig, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    starts = np.array(config.tdd.starts)
    idx = np.searchsorted(starts, t, side="right") - 1
    means = np.array([spec.mean_distance for _, spec in config.tdd.stages])
    dstar = np.array([steady_distance(spec) for _, spec in config.tdd.stages])
    return means[idx], dstar[idx]


def _prepare(config: SimConfig):
    config.validate(fixed_step=True)
    dt = config.engine_time_step
    steps = config.step_grid()
    cum_demand = config.demand.cumulative_many(steps)
    step_inflow = np.diff(cum_demand)
    mean_d, dstar = _stage_arrays(config, steps[:-1])
    per_sample = int(round(config.output_resolution / dt))
    return dt, steps, cum_demand, step_inflow, mean_d, dstar, per_sample


def _finish(engine, config, speed, n_s, out_s, m_s=None) -> SimResult:
    times = config.sample_times
    n_arr = np.array(n_s)
    out_cum = np.array(out_s)
    demand_cum = config.demand.cumulative_many(times)
    scale = 1.0 + float(demand_cum[-1]) if len(demand_cum) else 1.0
    return SimResult(
        engine=engine,
        time=times,
        accumulation=n_arr,
        inflow=window_average(demand_cum, config.output_resolution),
        outflow=window_average(out_cum, config.output_resolution),
        speed=np.array([speed(x) for x in n_arr]),
        demand_cumulative=demand_cum,
        exits_cumulative=out_cum,
        conservation_bound=np.full(len(times), 1e-9 * scale),
        remaining_distance=None if m_s is None else np.array(m_s),
    )


def run_accumulation_based(config: SimConfig) -> SimResult:
    """Integrate ``dn/dt = e(t) - n V(n) / D(t)``.

    The mean trip distance ``D(t)`` switches at TDD stage boundaries.
    """
    dt, steps, _, step_inflow, mean_d, _, per_sample = _prepare(config)
    speed = speed_function(config.mfd)
    guard = _INSTABILITY_FRACTION * config.mfd.jam_accumulation

    n = 0.0
    out_cum = 0.0
    n_s, out_s = [n], [out_cum]
    for i in range(len(step_inflow)):
        v = speed(n)
        g = n * v / mean_d[i]
        if g < 0.0:
            g = 0.0
        elif g * dt > n:
            g = n / dt
        dn = step_inflow[i] - g * dt
        if abs(dn) > guard:
            raise SimulationError(f"Euler step at t={steps[i]} changes n by {dn:.1f} veh; reduce engine_time_step")
        n += dn
        if n < 0.0:
            n = 0.0
        out_cum += g * dt
        if (i + 1) % per_sample == 0:
            n_s.append(n)
            out_s.append(out_cum)
    return _finish("AB", config, speed, n_s, out_s)


def run_m_model(config: SimConfig) -> SimResult:
    """Integrate the M-model with remaining-distance state ``m``.

    ``dn/dt = e - g`` and ``dm/dt = e D - n V(n)`` with
    ``g = n V(n) / D * (1 + alpha (m / (n D*) - 1))``.
    With ``alpha = 0`` every arithmetic step matches
    :func:`run_accumulation_based`.
    """
    dt, steps, _, step_inflow, mean_d, dstar, per_sample = _prepare(config)
    speed = speed_function(config.mfd)
    guard = _INSTABILITY_FRACTION * config.mfd.jam_accumulation
    alpha = config.alpha

    n = 0.0
    m = 0.0
    out_cum = 0.0
    n_s, out_s, m_s = [n], [out_cum], [m]
    for i in range(len(step_inflow)):
        v = speed(n)
        d = mean_d[i]
        if n > 0.0:
            g = n * v / d * (1.0 + alpha * (m / (n * dstar[i]) - 1.0))
        else:
            if m > 1e-6 * d:
                raise SimulationError(f"inconsistent state at t={steps[i]}: n=0 with m={m:.3g} m")
            g = n * v / d
        if g < 0.0:
            g = 0.0
        elif g * dt > n:
            g = n / dt
        dn = step_inflow[i] - g * dt
        if abs(dn) > guard:
            raise SimulationError(f"Euler step at t={steps[i]} changes n by {dn:.1f} veh; reduce engine_time_step")
        m += step_inflow[i] * d - n * v * dt
        n += dn
        if n < 0.0:
            n = 0.0
        if m < 0.0:
            m = 0.0
        out_cum += g * dt
        if (i + 1) % per_sample == 0:
            n_s.append(n)
            out_s.append(out_cum)
            m_s.append(m)
    return _finish("M", config, speed, n_s, out_s, m_s)
