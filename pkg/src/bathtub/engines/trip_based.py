"""Trip-based bathtub engines.

Every trip drives at the network speed ``V(n)`` until it has covered its own
distance. The fixed-step engine freezes ``V`` over each step; the event
engine advances between entries and exits in closed form.
"""

from __future__ import annotations

import heapq
import math

import numpy as np

from ..mfd import speed_function
from .common import (
    ConfigError,
    SimConfig,
    SimResult,
    SimulationError,
    TripLog,
    schedule_entries,
    trip_conservation_bound,
    window_average,
)

__all__ = ["run_trip_based_fixed", "run_event_based"]


def _memo_speed(config: SimConfig):
    raw = speed_function(config.mfd)
    cache: dict[int, float] = {}

    def speed(n: int) -> float:
        v = cache.get(n)
        if v is None:
            v = cache[n] = raw(float(n))
        return v

    return speed


def _entries(config: SimConfig, entries) -> tuple[np.ndarray, np.ndarray, bool]:
    """Generated entries, or caller-supplied ``(times, distances)`` checked for sanity."""
    if entries is None:
        t, d = schedule_entries(config)
        return t, d, False
    t = np.asarray(entries[0], dtype=float)
    d = np.asarray(entries[1], dtype=float)
    if t.shape != d.shape or t.ndim != 1:
        raise ConfigError("entry times and distances must be 1-d arrays of equal length")
    if len(t) and (np.any(np.diff(t) < 0) or t[0] < 0 or t[-1] > config.duration):
        raise ConfigError("entry times must be sorted and inside [0, duration]")
    if np.any(d <= 0):
        raise ConfigError("trip distances must be positive")
    return t, d, True


def _result(engine, config, speed, n_s, in_s, out_s, m_s, log, explicit, trajectory=None) -> SimResult:
    times = config.sample_times
    n_arr = np.array(n_s, dtype=float)
    res = config.output_resolution
    if explicit:
        # supplied trips are the demand; conservation is exact in integers
        demand_cum = np.searchsorted(log.entry_time, times, side="right").astype(float)
        bound = np.full(len(times), 0.5)
    else:
        demand_cum = config.demand.cumulative_many(times)
        bound = trip_conservation_bound(config, times)
    return SimResult(
        engine=engine,
        time=times,
        accumulation=n_arr,
        inflow=window_average(np.array(in_s, dtype=float), res),
        outflow=window_average(np.array(out_s, dtype=float), res),
        speed=np.array([speed(int(x)) for x in n_s]),
        demand_cumulative=demand_cum,
        exits_cumulative=np.array(out_s, dtype=float),
        conservation_bound=bound,
        remaining_distance=np.array(m_s, dtype=float),
        trips=log,
        trajectory=trajectory,
    )


def run_trip_based_fixed(config: SimConfig, entries=None) -> SimResult:
    """Trip-based model on a fixed time grid.

    Within a step of length ``dt`` all trips share ``V = V(n(t))``. Trips
    whose remaining distance runs out exit at the fractional time
    ``t + remaining / V``; trips entering mid-step only travel for the part
    of the step after their entry. ``entries`` optionally replaces the
    generated trips with explicit ``(entry_times, distances)``.
    """
    config.validate(fixed_step=True)
    dt = config.engine_time_step
    if dt > config.generation_resolution + 1e-12:
        raise ConfigError(
            f"engine_time_step {dt} exceeds generation_resolution {config.generation_resolution}"
        )
    speed = _memo_speed(config)
    entry_t, entry_d, explicit = _entries(config, entries)
    n_trips = len(entry_t)
    exit_time = np.full(n_trips, np.nan)
    per_sample = int(round(config.output_resolution / dt))
    n_steps = config.n_steps
    # index of the first entry at or after each step end
    step_ends = (np.arange(n_steps) + 1) * dt
    entry_stop = np.searchsorted(entry_t, step_ends, side="left")

    rem = np.empty(0)
    ids = np.empty(0, dtype=np.int64)
    ptr = 0
    exited = 0
    n_s, in_s, out_s, m_s = [0], [0], [0], [0.0]
    for i in range(n_steps):
        t = i * dt
        t1 = step_ends[i]
        v = speed(len(rem))
        if len(rem):
            after = rem - v * dt
            done = after <= 0.0
            if done.any():
                exit_time[ids[done]] = t + rem[done] / v
                exited += int(done.sum())
                keep = ~done
                rem, ids = after[keep], ids[keep]
            else:
                rem = after
        stop = entry_stop[i]
        if stop > ptr:
            new_ids = np.arange(ptr, stop)
            new_rem = entry_d[ptr:stop] - v * (t1 - entry_t[ptr:stop])
            done = new_rem <= 0.0
            if done.any():
                exit_time[new_ids[done]] = entry_t[new_ids[done]] + entry_d[new_ids[done]] / v
                exited += int(done.sum())
                new_ids, new_rem = new_ids[~done], new_rem[~done]
            rem = np.concatenate([rem, new_rem])
            ids = np.concatenate([ids, new_ids])
            ptr = stop
            if len(rem) > config.trip_cap:
                raise SimulationError(f"{len(rem)} active trips exceed trip_cap={config.trip_cap}")
        if (i + 1) % per_sample == 0:
            n_s.append(len(rem))
            in_s.append(ptr)
            out_s.append(exited)
            m_s.append(float(rem.sum()))
    log = TripLog(entry_time=entry_t, distance=entry_d, exit_time=exit_time)
    return _result("TB", config, speed, n_s, in_s, out_s, m_s, log, explicit)


def run_event_based(config: SimConfig, entries=None) -> SimResult:
    """Event-driven trip-based model.

    Keeps the cumulative production ``P(t) = integral of V(n(s)) ds``. A trip
    entering at ``P_e`` exits when ``P`` reaches ``P_e + D_i``; thresholds sit
    in a min-heap. Between events ``n`` and hence ``V`` are constant, so event
    times are exact. Samples report the state after all events at or before
    the sample time. ``entries`` as for :func:`run_trip_based_fixed`.
    """
    config.validate(fixed_step=False)
    speed = _memo_speed(config)
    entry_t, entry_d, explicit = _entries(config, entries)
    n_trips = len(entry_t)
    exit_time = np.full(n_trips, np.nan)
    thresholds = np.full(n_trips, np.nan)
    samples = config.sample_times
    duration = config.duration
    cap = config.trip_cap
    inf = math.inf

    heap: list[tuple[float, int]] = []
    t = 0.0
    prod = 0.0
    sum_thr = 0.0
    n = 0
    j = 0
    exited = 0
    s = 1  # sample 0 is the empty initial state
    n_s, in_s, out_s, m_s = [0], [0], [0], [0.0]
    traj_t, traj_n = [0.0], [0]
    while True:
        v = speed(n)
        te = entry_t[j] if j < n_trips else inf
        tx = t + (heap[0][0] - prod) / v if heap and v > 0.0 else inf
        tev = te if te < tx else tx
        while s < len(samples) and samples[s] < tev:
            ts = samples[s]
            n_s.append(n)
            in_s.append(j)
            out_s.append(exited)
            m_s.append(sum_thr - n * (prod + v * (ts - t)))
            s += 1
        if tev > duration or tev == inf:
            break
        prod += v * (tev - t)
        t = tev
        if tx <= te:
            thr, tid = heapq.heappop(heap)
            prod = thr
            n -= 1
            exited += 1
            sum_thr -= thr
            exit_time[tid] = t
        else:
            thr = prod + entry_d[j]
            heapq.heappush(heap, (thr, j))
            thresholds[j] = thr
            sum_thr += thr
            n += 1
            j += 1
            if n > cap:
                raise SimulationError(f"{n} active trips exceed trip_cap={cap}")
        traj_t.append(t)
        traj_n.append(n)
    log = TripLog(entry_time=entry_t, distance=entry_d, exit_time=exit_time, exit_threshold=thresholds)
    trajectory = (np.array(traj_t), np.array(traj_n, dtype=np.int64))
    return _result("EB", config, speed, n_s, in_s, out_s, m_s, log, explicit, trajectory)
