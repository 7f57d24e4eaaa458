"""Built-in networks, trip distance distributions and scenarios.

MFD parameters and lane distances are the fitted values for the Delft
network with freeways (DF), the Delft urban network (DU) and the toy network
(T). Category tables are representative shapes whose class weights are
solved so that the static and per-stage mean trip distances hit the
published values exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

from scipy.optimize import brentq

from .demand import (
    ClassCoefficientSchedule,
    DemandProfile,
    dynamic_tdd_from_schedule,
    fast_changing_profile,
    slow_changing_profile,
)
from .engines.common import SimConfig
from .mfd import MfdParams
from .tdd import DynamicTdd, TddCategory, TddSpec

KM = 1000.0

NETWORKS: dict[str, MfdParams] = {
    "DF": MfdParams(lam=0.034, u_f=19.2, Q=0.18, kappa=0.43, w=2.42, lane_distance=213 * KM),
    "DU": MfdParams(lam=0.03, u_f=12.1, Q=0.15, kappa=0.57, w=3.0, lane_distance=94 * KM),
    "T": MfdParams(lam=0.03, u_f=9.2, Q=0.34, kappa=0.55, w=2.5, lane_distance=58 * KM),
}

# engine time steps that passed the 1% convergence check per network
TIME_STEPS = {"DF": 2.0, "DU": 2.0, "T": 0.5}

STATIC_MEANS = {"DF": 5.28 * KM, "DU": 3.23 * KM}
STAGE_MEANS = {"DF": (5.48 * KM, 5.24 * KM, 5.01 * KM), "DU": (3.55 * KM, 3.25 * KM, 2.95 * KM)}
STAGE_STARTS = (0.0, 3000.0, 6000.0)

PEAK_DEMAND = 20000 / 3600  # veh/s
CAPACITY_FRACTION = 0.8
DURATION = 9000.0

# within-class shapes: (distance km, relative weight)
_CLASS_SHAPES = {
    "DF": {
        "internal": [(1.2, 2), (2.0, 5), (3.0, 6), (4.0, 4), (5.0, 1)],
        "inbound": [(4.0, 1), (5.0, 3), (6.0, 4), (7.0, 2)],
        "outbound": [(6.5, 1), (7.5, 3), (8.2, 6), (9.5, 2), (10.5, 1)],
    },
    "DU": {
        "short": [(0.7, 2), (1.5, 4), (2.5, 3)],
        "medium": [(2.5, 1), (3.5, 4), (4.5, 3)],
        "long": [(5.5, 3), (6.5, 2), (7.5, 1), (8.5, 0.5)],
    },
}
_MIDDLE_CLASS_SHARE = 0.35

# toy network: a few route lengths only, three empty bins
_TOY_CATEGORIES = [(1.4, 0.15), (2.2, 0.25), (2.8, 0.25), (3.5, 0.0), (4.2, 0.2), (5.0, 0.0), (5.8, 0.15), (6.5, 0.0)]


def _normalised(shape):
    total = math.fsum(w for _, w in shape)
    return [(d * KM, w / total) for d, w in shape]


def _class_mean(shape) -> float:
    return math.fsum(d * p for d, p in shape)


@lru_cache(maxsize=None)
def class_tdds(network: str) -> dict[str, tuple[TddCategory, ...]]:
    """Per-class categories whose merged mean equals the static mean distance."""
    shapes = {label: _normalised(s) for label, s in _CLASS_SHAPES[network].items()}
    (lo_label, mid_label, hi_label) = shapes
    m_lo, m_mid, m_hi = (_class_mean(shapes[c]) for c in (lo_label, mid_label, hi_label))
    target = STATIC_MEANS[network]
    rest = 1.0 - _MIDDLE_CLASS_SHARE
    # w_lo + w_hi = rest; w_lo m_lo + w_hi m_hi = target - share*m_mid
    w_hi = (target - _MIDDLE_CLASS_SHARE * m_mid - rest * m_lo) / (m_hi - m_lo)
    weights = {lo_label: rest - w_hi, mid_label: _MIDDLE_CLASS_SHARE, hi_label: w_hi}
    return {
        label: tuple(TddCategory(d, p * weights[label]) for d, p in shape) for label, shape in shapes.items()
    }


def static_tdd(network: str) -> TddSpec:
    if network == "T":
        return TddSpec.categorical(_normalised(_TOY_CATEGORIES))
    merged: dict[float, float] = {}
    for cats in class_tdds(network).values():
        for c in cats:
            merged[c.mean_distance] = merged.get(c.mean_distance, 0.0) + c.proportion
    total = math.fsum(merged.values())
    return TddSpec.categorical([(d, p / total) for d, p in sorted(merged.items())])


def _stage_multipliers(network: str, target: float, middle_boost: float) -> tuple[float, float, float]:
    """Multipliers ``(exp(-x), boost, exp(x))`` for short/middle/long classes hitting ``target``."""
    classes = class_tdds(network)
    labels = list(classes)
    weight = {c: math.fsum(x.proportion for x in classes[c]) for c in labels}
    dist = {c: math.fsum(x.proportion * x.mean_distance for x in classes[c]) for c in labels}

    def mean(x):
        mult = (math.exp(-x), middle_boost, math.exp(x))
        num = math.fsum(m * dist[c] for m, c in zip(mult, labels))
        den = math.fsum(m * weight[c] for m, c in zip(mult, labels))
        return num / den

    x = brentq(lambda x: mean(x) - target, -5.0, 5.0, xtol=1e-15, rtol=1e-15)
    return (math.exp(-x), middle_boost, math.exp(x))


@lru_cache(maxsize=None)
def coefficient_schedule(network: str) -> ClassCoefficientSchedule:
    """Three-stage class multipliers: long trips early, short trips late."""
    labels = list(class_tdds(network))
    boosts = (1.0, 1.3, 1.0)
    per_class: dict[str, list[tuple[float, float]]] = {c: [] for c in labels}
    for start, target, boost in zip(STAGE_STARTS, STAGE_MEANS[network], boosts):
        for c, m in zip(labels, _stage_multipliers(network, target, boost)):
            per_class[c].append((start, m))
    return ClassCoefficientSchedule.from_mapping(per_class)


@lru_cache(maxsize=None)
def dynamic_tdd(network: str) -> DynamicTdd:
    return dynamic_tdd_from_schedule(class_tdds(network), coefficient_schedule(network))


def builtin_tdd(name: str) -> DynamicTdd:
    """``"DF-static"``, ``"DU-dynamic"``, ``"T-static"``, ..."""
    network, _, mode = name.partition("-")
    if network not in NETWORKS or mode not in ("static", "dynamic") or (network == "T" and mode == "dynamic"):
        raise KeyError(f"unknown built-in TDD {name!r}")
    return DynamicTdd.static(static_tdd(network)) if mode == "static" else dynamic_tdd(network)


def peak_demand(network: str) -> float:
    """20000 veh/h, capped at 80% of the capacity outflow of the longest-trip stage."""
    p = NETWORKS[network]
    means = [static_tdd(network).mean_distance, *STAGE_MEANS.get(network, ())]
    return min(PEAK_DEMAND, CAPACITY_FRACTION * p.Q * p.lane_distance / max(means))


def builtin_profile(name: str, peak: float) -> DemandProfile:
    if name in ("1", "profile1", "fast"):
        return fast_changing_profile(peak)
    if name in ("2", "profile2", "slow"):
        return slow_changing_profile(peak)
    raise KeyError(f"unknown built-in demand profile {name!r}")


@dataclass(frozen=True)
class ScenarioSpec:
    code: str
    network: str
    tdd_mode: str
    profile: str


TABLE1 = tuple(
    ScenarioSpec(f"{net}-{mode[0].upper()}-{prof}", net, mode, prof)
    for mode, nets in (("static", ("DF", "DU", "T")), ("dynamic", ("DF", "DU")))
    for net in nets
    for prof in ("1", "2")
)


def scenario_config(spec: ScenarioSpec, **overrides) -> SimConfig:
    kwargs = dict(
        duration=DURATION,
        mfd=NETWORKS[spec.network],
        demand=builtin_profile(spec.profile, peak_demand(spec.network)),
        tdd=builtin_tdd(f"{spec.network}-{spec.tdd_mode}"),
        engine_time_step=TIME_STEPS[spec.network],
    )
    kwargs.update(overrides)
    return SimConfig(**kwargs)


def table1_configs(**overrides) -> list[tuple[str, SimConfig]]:
    return [(s.code, scenario_config(s, **overrides)) for s in TABLE1]
