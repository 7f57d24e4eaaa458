"""Reduce link-level reference simulation output to reservoir quantities.

Link densities are in veh/km, lane distances in km*lane and speeds in m/s
(converted at ingestion when the source file declares km/h).
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .tdd import TddCategory, TddSpec

__all__ = [
    "LinkRecord",
    "RouteShare",
    "OdAssignment",
    "NetworkState",
    "DENSITY_THRESHOLD",
    "aggregate_network_state",
    "network_series",
    "derive_tdd",
    "default_category_edges",
    "speed_dispersion",
    "flow_density_scatter",
]

DENSITY_THRESHOLD = 3.0  # veh/km


@dataclass(frozen=True)
class LinkRecord:
    time: float
    link_id: str
    density: float  # veh/km
    speed: float  # m/s
    lane_distance: float  # km*lane

    def __post_init__(self):
        if self.density < 0 or self.speed < 0 or self.lane_distance < 0:
            raise ValueError(f"negative value in link record {self}")

    @property
    def vehicles(self) -> float:
        return self.density * self.lane_distance


@dataclass(frozen=True)
class RouteShare:
    route_id: str
    length: float  # m
    proportion: float


@dataclass(frozen=True)
class OdAssignment:
    origin: str
    destination: str
    flow: float  # veh/h
    routes: tuple[RouteShare, ...]

    def __post_init__(self):
        if self.flow < 0:
            raise ValueError(f"negative OD flow {self.origin}->{self.destination}")
        if not self.routes:
            raise ValueError(f"OD {self.origin}->{self.destination} has no routes")
        if any(r.length <= 0 for r in self.routes):
            raise ValueError(f"non-positive route length for OD {self.origin}->{self.destination}")
        total = math.fsum(r.proportion for r in self.routes)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"route proportions of OD {self.origin}->{self.destination} sum to {total}")


@dataclass(frozen=True)
class NetworkState:
    time: float
    accumulation: float  # veh
    speed: float  # m/s
    lane_distance: float  # km*lane, links at or above the density threshold
    speed_std: float  # m/s


def aggregate_network_state(
    records: Sequence[LinkRecord], density_threshold: float = DENSITY_THRESHOLD
) -> tuple[float, float, float]:
    """``(n, v, L_N)`` for the records of one time step.

    ``n`` sums vehicles over all links, ``v`` is the vehicle-weighted mean
    link speed (0 for an empty network) and ``L_N`` sums lane distance over
    links with density at least ``density_threshold``. Sub-threshold links
    still count towards ``n`` and ``v``.
    """
    if len(records) == 0:
        raise ValueError("no link records")
    veh = [r.density * r.lane_distance for r in records]
    n = math.fsum(veh)
    v = math.fsum(r.speed * w for r, w in zip(records, veh)) / n if n > 0 else 0.0
    lane = math.fsum(r.lane_distance for r in records if r.density >= density_threshold)
    return n, v, lane


def speed_dispersion(records: Sequence[LinkRecord]) -> float:
    """Vehicle-weighted standard deviation of link speeds around the network mean."""
    if len(records) == 0:
        raise ValueError("no link records")
    w = np.array([r.density * r.lane_distance for r in records])
    n = w.sum()
    if n <= 0:
        return 0.0
    v = np.array([r.speed for r in records])
    mean = np.dot(w, v) / n
    return float(math.sqrt(max(np.dot(w, (v - mean) ** 2) / n, 0.0)))


def _by_time(records: Iterable[LinkRecord]) -> dict[float, list[LinkRecord]]:
    groups: dict[float, list[LinkRecord]] = defaultdict(list)
    for r in records:
        groups[r.time].append(r)
    return dict(sorted(groups.items()))


def network_series(
    records: Iterable[LinkRecord], density_threshold: float = DENSITY_THRESHOLD
) -> list[NetworkState]:
    out = []
    for t, group in _by_time(records).items():
        n, v, lane = aggregate_network_state(group, density_threshold)
        out.append(NetworkState(t, n, v, lane, speed_dispersion(group)))
    return out


def default_category_edges(lengths: Sequence[float], width: float = 1000.0) -> list[float]:
    """1 km bins (by default) from 0 up to past the longest route."""
    top = max(lengths)
    count = int(math.floor(top / width)) + 1
    return [i * width for i in range(count + 1)]


def derive_tdd(assignments: Sequence[OdAssignment], category_edges: Sequence[float]) -> TddSpec:
    """Flow-weighted categorical TDD from assigned route flows.

    ``p_d`` is the share of assigned flow on routes whose length falls in
    category ``d``; the category distance is the flow-weighted mean length of
    those routes. Bins are ``[e_i, e_{i+1})`` with the last bin closed. Empty
    bins keep their midpoint as distance with zero proportion.
    """
    edges = np.asarray(category_edges, dtype=float)
    if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("category edges must be strictly increasing with at least two values")
    k = len(edges) - 1
    flow = np.zeros(k)
    dist_flow = np.zeros(k)
    total = 0.0
    for od in assignments:
        total += od.flow
        for r in od.routes:
            if r.length < edges[0] or r.length > edges[-1]:
                raise ValueError(f"route {r.route_id} length {r.length} outside category grid")
            i = min(int(np.searchsorted(edges, r.length, side="right")) - 1, k - 1)
            q = r.proportion * od.flow
            flow[i] += q
            dist_flow[i] += r.length * q
    if total <= 0:
        raise ValueError("total OD flow is zero")
    cats = []
    for i in range(k):
        p = flow[i] / total
        d = dist_flow[i] / flow[i] if flow[i] > 0 else 0.5 * (edges[i] + edges[i + 1])
        cats.append(TddCategory(float(d), float(p)))
    return TddSpec.categorical(cats)


@dataclass(frozen=True)
class ScatterPoint:
    time: float
    link_id: str
    density: float
    flow: float
    phase: str


def flow_density_scatter(
    records: Iterable[LinkRecord],
    links: Sequence[str] | None = None,
    density_threshold: float = DENSITY_THRESHOLD,
) -> tuple[list[ScatterPoint], list[ScatterPoint]]:
    """Flow-density points per link and for the whole network.

    Link flow is ``k * v`` (veh/h when density is veh/km and speed km/h;
    here veh/km * m/s). Network density is ``n / L_N`` and network flow the
    production ``sum k v d`` per unit active lane distance. ``phase`` marks
    each point ``loading`` or ``unloading`` by the sign of the density change
    since the previous time step.
    """
    groups = _by_time(records)
    if len(groups) < 2:
        raise ValueError("flow-density scatter needs at least two time steps")
    wanted = set(links) if links is not None else None
    link_pts: list[ScatterPoint] = []
    net_pts: list[ScatterPoint] = []
    last_link: dict[str, float] = {}
    last_net = None
    for t, group in groups.items():
        for r in sorted(group, key=lambda r: r.link_id):
            if wanted is not None and r.link_id not in wanted:
                continue
            prev = last_link.get(r.link_id)
            phase = "unloading" if prev is not None and r.density < prev else "loading"
            link_pts.append(ScatterPoint(t, r.link_id, r.density, r.density * r.speed, phase))
            last_link[r.link_id] = r.density
        n, _, lane = aggregate_network_state(group, density_threshold)
        density = n / lane if lane > 0 else 0.0
        prod = math.fsum(r.density * r.speed * r.lane_distance for r in group)
        flow = prod / lane if lane > 0 else 0.0
        phase = "unloading" if last_net is not None and density < last_net else "loading"
        net_pts.append(ScatterPoint(t, "network", density, flow, phase))
        last_net = density
    return link_pts, net_pts
