"""Headered CSV and JSON readers/writers.

Floats are written with 9 significant digits so repeated runs produce
byte-identical files, and every write goes through a temporary file that is
renamed into place.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from collections import OrderedDict
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .aggregate import LinkRecord, NetworkState, OdAssignment, RouteShare
from .demand import ClassCoefficientSchedule, DemandProfile
from .engines.common import SimResult
from .mfd import SpeedAccPoint
from .tdd import DynamicTdd, TddSpec

__all__ = [
    "CsvFormatError",
    "fmt",
    "atomic_write_text",
    "write_csv",
    "read_csv",
    "write_result_csv",
    "read_result_csv",
    "write_trips_csv",
    "read_tdd_csv",
    "write_tdd_csv",
    "read_stage_schedule",
    "read_demand_csv",
    "read_coefficients_csv",
    "read_speed_accumulation_csv",
    "read_link_records_csv",
    "read_od_csv",
    "write_network_state_csv",
    "write_heatmap_csv",
    "read_json",
]

KMH_TO_MPS = 1000.0 / 3600.0

_SPEED_UNITS = {
    "speed_mps": 1.0,
    "speed_m_per_s": 1.0,
    "speed_kmh": KMH_TO_MPS,
    "speed_kmph": KMH_TO_MPS,
    "speed_km_per_h": KMH_TO_MPS,
}


class CsvFormatError(ValueError):
    """Malformed input file; the message names the file, line and field."""

    def __init__(self, path, message: str, line: int | None = None, field: str | None = None):
        where = str(path)
        if line is not None:
            where += f":{line}"
        if field is not None:
            where += f" [{field}]"
        super().__init__(f"{where}: {message}")
        self.path = str(path)
        self.line = line
        self.field = field


def fmt(x: Any) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if x == 0.0:
            return "0"
        return format(x, ".9g")
    return str(x)


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(x) for x in row])
    atomic_write_text(path, buf.getvalue())


def read_csv(path, required: Sequence[str]) -> tuple[list[str], list[tuple[int, dict[str, str]]]]:
    """Rows as ``(line number, {column: text})`` after checking required columns."""
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise CsvFormatError(path, f"cannot read: {exc}") from exc
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise CsvFormatError(path, "empty file, header required", line=1) from None
    missing = [c for c in required if c not in header]
    if missing:
        raise CsvFormatError(path, f"missing column(s) {missing}; header is {header}", line=1)
    rows = []
    for cells in reader:
        line = reader.line_num
        if not cells or all(not c.strip() for c in cells):
            continue
        if len(cells) != len(header):
            raise CsvFormatError(path, f"expected {len(header)} fields, got {len(cells)}", line=line)
        rows.append((line, {h: c.strip() for h, c in zip(header, cells)}))
    return header, rows


def _float(path, line: int, row: dict[str, str], name: str) -> float:
    try:
        value = float(row[name])
    except ValueError:
        raise CsvFormatError(path, f"not a number: {row[name]!r}", line=line, field=name) from None
    if not math.isfinite(value):
        raise CsvFormatError(path, f"non-finite value {row[name]!r}", line=line, field=name)
    return value


def _wrap(path, line: int, exc: Exception) -> CsvFormatError:
    return CsvFormatError(path, str(exc), line=line)


RESULT_COLUMNS = ["time_s", "accumulation_veh", "inflow_veh_per_s", "outflow_veh_per_s", "speed_mps"]


def write_result_csv(path, result: SimResult) -> None:
    header = list(RESULT_COLUMNS)
    cols = [result.time, result.accumulation, result.inflow, result.outflow, result.speed]
    if result.remaining_distance is not None:
        header.append("remaining_distance_m")
        cols.append(result.remaining_distance)
    write_csv(path, header, zip(*cols))


def read_result_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """``(time, accumulation)`` from a result CSV, for use as a reference series."""
    _, rows = read_csv(path, ["time_s", "accumulation_veh"])
    if not rows:
        raise CsvFormatError(path, "no data rows")
    t = np.array([_float(path, ln, r, "time_s") for ln, r in rows])
    n = np.array([_float(path, ln, r, "accumulation_veh") for ln, r in rows])
    return t, n


def write_trips_csv(path, result: SimResult) -> None:
    if result.trips is None:
        raise ValueError(f"engine {result.engine} records no trips")
    log = result.trips
    rows = ((i, log.entry_time[i], log.exit_time[i], log.distance[i]) for i in range(len(log)))
    write_csv(path, ["id", "entry_time_s", "exit_time_s", "distance_m"], rows)


def read_tdd_csv(path) -> TddSpec:
    _, rows = read_csv(path, ["category_mean_m", "proportion"])
    if not rows:
        raise CsvFormatError(path, "no categories")
    cats = [(_float(path, ln, r, "category_mean_m"), _float(path, ln, r, "proportion")) for ln, r in rows]
    try:
        return TddSpec.categorical(cats)
    except ValueError as exc:
        raise CsvFormatError(path, str(exc)) from exc


def write_tdd_csv(path, spec: TddSpec) -> None:
    write_csv(path, ["category_mean_m", "proportion"], ((c.mean_distance, c.proportion) for c in spec.categories))


def read_stage_schedule(path) -> DynamicTdd:
    """Stage file with ``start_time_s, file``; TDD files are relative to it."""
    path = Path(path)
    _, rows = read_csv(path, ["start_time_s", "file"])
    if not rows:
        raise CsvFormatError(path, "no stages")
    stages = []
    for ln, r in rows:
        start = _float(path, ln, r, "start_time_s")
        stages.append((start, read_tdd_csv(path.parent / r["file"])))
    try:
        return DynamicTdd(tuple(stages))
    except ValueError as exc:
        raise CsvFormatError(path, str(exc)) from exc


def read_demand_csv(path) -> DemandProfile:
    _, rows = read_csv(path, ["time_s", "inflow_veh_per_s"])
    points = [(_float(path, ln, r, "time_s"), _float(path, ln, r, "inflow_veh_per_s")) for ln, r in rows]
    try:
        return DemandProfile.from_points(points)
    except ValueError as exc:
        raise CsvFormatError(path, str(exc)) from exc


def read_coefficients_csv(path) -> ClassCoefficientSchedule:
    _, rows = read_csv(path, ["class", "stage_start_s", "multiplier"])
    per_class: dict[str, list[tuple[float, float]]] = OrderedDict()
    for ln, r in rows:
        per_class.setdefault(r["class"], []).append(
            (_float(path, ln, r, "stage_start_s"), _float(path, ln, r, "multiplier"))
        )
    try:
        return ClassCoefficientSchedule.from_mapping(per_class)
    except ValueError as exc:
        raise CsvFormatError(path, str(exc)) from exc


def read_speed_accumulation_csv(path) -> list[SpeedAccPoint]:
    _, rows = read_csv(path, ["time_s", "accumulation_veh", "speed_mps"])
    if not rows:
        raise CsvFormatError(path, "no data rows")
    out = []
    for ln, r in rows:
        n = _float(path, ln, r, "accumulation_veh")
        v = _float(path, ln, r, "speed_mps")
        try:
            out.append(SpeedAccPoint(n, v))
        except ValueError as exc:
            raise _wrap(path, ln, exc) from exc
    return out


def read_link_records_csv(path) -> list[LinkRecord]:
    """Link records; the speed column name declares its unit (``speed_mps`` or ``speed_kmh``)."""
    header, rows = read_csv(path, ["time_s", "link_id", "density_veh_per_km", "lane_distance_lane_km"])
    speed_cols = [h for h in header if h.startswith("speed")]
    if len(speed_cols) != 1 or speed_cols[0] not in _SPEED_UNITS:
        raise CsvFormatError(
            path, f"need exactly one speed column with unit, one of {sorted(_SPEED_UNITS)}; got {speed_cols}", line=1
        )
    col = speed_cols[0]
    scale = _SPEED_UNITS[col]
    out = []
    for ln, r in rows:
        try:
            out.append(
                LinkRecord(
                    time=_float(path, ln, r, "time_s"),
                    link_id=r["link_id"],
                    density=_float(path, ln, r, "density_veh_per_km"),
                    speed=_float(path, ln, r, col) * scale,
                    lane_distance=_float(path, ln, r, "lane_distance_lane_km"),
                )
            )
        except CsvFormatError:
            raise
        except ValueError as exc:
            raise _wrap(path, ln, exc) from exc
    return out


def read_od_csv(path) -> list[OdAssignment]:
    _, rows = read_csv(
        path, ["origin", "destination", "flow_veh_per_h", "route_id", "route_length_m", "route_proportion"]
    )
    groups: dict[tuple[str, str], tuple[float, int, list[RouteShare]]] = OrderedDict()
    for ln, r in rows:
        key = (r["origin"], r["destination"])
        flow = _float(path, ln, r, "flow_veh_per_h")
        route = RouteShare(r["route_id"], _float(path, ln, r, "route_length_m"), _float(path, ln, r, "route_proportion"))
        if key in groups:
            prev_flow, first_line, routes = groups[key]
            if flow != prev_flow:
                raise CsvFormatError(
                    path, f"OD flow {flow} differs from {prev_flow} on line {first_line}", line=ln, field="flow_veh_per_h"
                )
            routes.append(route)
        else:
            groups[key] = (flow, ln, [route])
    out = []
    for (o, d), (flow, ln, routes) in groups.items():
        try:
            out.append(OdAssignment(o, d, flow, tuple(routes)))
        except ValueError as exc:
            raise _wrap(path, ln, exc) from exc
    return out


def write_network_state_csv(path, states: Sequence[NetworkState]) -> None:
    write_csv(
        path,
        ["time_s", "accumulation_veh", "speed_mps", "lane_distance_lane_km", "speed_std_mps"],
        ((s.time, s.accumulation, s.speed, s.lane_distance, s.speed_std) for s in states),
    )


def write_heatmap_csv(path, rows: Iterable[tuple[str, str, str, float]]) -> None:
    write_csv(path, ["scenario", "engine_variant", "window", "nrmse"], rows)


def read_json(path) -> Any:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CsvFormatError(path, f"invalid JSON: {exc.msg}", line=exc.lineno, field=f"column {exc.colno}") from exc
