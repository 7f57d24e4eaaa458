"""Command-line front end.

Suite configs are JSON::

    {
      "engines": ["EB:m", "EB:c", "TB:m", "TB:c", "AB"],
      "reference": {"engine": "EB:c"},
      "defaults": {"duration": 9000},
      "scenarios": [
        {"label": "DF-S-1", "network": "DF", "demand": {"profile": "1"},
         "tdd": "DF-static", "engine_time_step": 2}
      ]
    }

``network`` is a built-in name, ``{"params": {...}}`` or ``{"file": "fit.json"}``.
``demand`` is ``{"profile": "1"|"2", "peak_veh_per_s": x}`` or ``{"file": "d.csv"}``.
``tdd`` is a built-in name, ``{"file": "tdd.csv"}``, ``{"stages": "stages.csv"}``,
``{"individual": "distances.csv"}`` or ``{"classes": {label: csv}, "coefficients": csv}``.
Paths are relative to the config file. ``reference`` may instead be a
mapping of scenario label to result CSV.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import io as bio
from . import networks
from .aggregate import default_category_edges, derive_tdd, flow_density_scatter, network_series
from .analysis import WINDOWS, calibrate_alpha, convergence_test, heatmap_rows
from .demand import dynamic_tdd_from_schedule
from .engines import DEFAULT_VARIANTS, SimConfig, parse_variant, run_scenario_suite, run_variant
from .mfd import CalibrationConfig, MfdParams, calibrate, params_from_dict, params_to_json
from .tdd import DynamicTdd, TddLevel, TddSpec

log = logging.getLogger("bathtub")

BUILTIN_CONFIGS = {"table1-suite": Path(__file__).parent / "data" / "table1-suite.json"}
_SIM_FIELDS = ("duration", "output_resolution", "engine_time_step", "alpha", "generation_resolution", "trip_cap")
_SCENARIO_KEYS = {"label", "network", "demand", "tdd", "tdd_level", "reference", *_SIM_FIELDS}


class ConfigParseError(ValueError):
    pass


@dataclass
class Scenario:
    label: str
    config: SimConfig | None
    error: str | None = None
    reference_file: Path | None = None


@dataclass
class Suite:
    engines: list[str]
    scenarios: list[Scenario]
    reference_engine: str | None


def _resolve_config_path(name: str) -> Path:
    if name in BUILTIN_CONFIGS:
        return BUILTIN_CONFIGS[name]
    return Path(name)


def _fail(where: str, msg: str):
    raise ConfigParseError(f"{where}: {msg}")


def _network(value: Any, base: Path, where: str) -> tuple[MfdParams, str | None]:
    if isinstance(value, str):
        if value not in networks.NETWORKS:
            _fail(where, f"unknown built-in network {value!r}")
        return networks.NETWORKS[value], value
    if isinstance(value, dict) and "params" in value:
        return params_from_dict(value["params"]), None
    if isinstance(value, dict) and "file" in value:
        return params_from_dict(bio.read_json(base / value["file"])), None
    _fail(where, "expected a network name, {'params': ...} or {'file': ...}")


def _demand(value: Any, base: Path, builtin: str | None, where: str):
    if isinstance(value, dict) and "file" in value:
        return bio.read_demand_csv(base / value["file"])
    if isinstance(value, dict) and "profile" in value:
        if "peak_veh_per_s" in value:
            peak = float(value["peak_veh_per_s"])
        elif builtin is not None:
            peak = networks.peak_demand(builtin)
        else:
            _fail(where, "peak_veh_per_s is required for a non built-in network")
        try:
            return networks.builtin_profile(str(value["profile"]), peak)
        except KeyError as exc:
            _fail(where, str(exc))
    _fail(where, "expected {'profile': ...} or {'file': ...}")


def _read_distances(path: Path) -> TddSpec:
    _, rows = bio.read_csv(path, ["distance_m"])
    if not rows:
        raise bio.CsvFormatError(path, "no distances")
    return TddSpec.individual([float(r["distance_m"]) for _, r in rows])


def _tdd(value: Any, base: Path, where: str) -> DynamicTdd:
    if isinstance(value, str):
        try:
            return networks.builtin_tdd(value)
        except KeyError as exc:
            _fail(where, str(exc))
    if isinstance(value, dict):
        if "file" in value:
            return DynamicTdd.static(bio.read_tdd_csv(base / value["file"]))
        if "stages" in value:
            return bio.read_stage_schedule(base / value["stages"])
        if "individual" in value:
            return DynamicTdd.static(_read_distances(base / value["individual"]))
        if "classes" in value and "coefficients" in value:
            classes = {c: bio.read_tdd_csv(base / f).categories for c, f in value["classes"].items()}
            schedule = bio.read_coefficients_csv(base / value["coefficients"])
            return dynamic_tdd_from_schedule(classes, schedule)
    _fail(where, "expected a built-in TDD name or one of file/stages/individual/classes")


def _apply_level(tdd: DynamicTdd, level: str, where: str) -> DynamicTdd:
    try:
        lvl = TddLevel(level)
    except ValueError:
        _fail(where, f"tdd_level must be one of {[x.value for x in TddLevel]}")
    if lvl is TddLevel.MEAN_ONLY:
        return tdd.as_mean_only()
    if lvl is TddLevel.INDIVIDUAL and any(s.level is not TddLevel.INDIVIDUAL for _, s in tdd.stages):
        _fail(where, "individual level needs an individual-distance TDD input")
    return tdd


def _scenario(raw: dict, defaults: dict, base: Path, where: str) -> Scenario:
    label = raw.get("label")
    if not isinstance(label, str) or not label:
        _fail(f"{where}.label", "a non-empty string label is required")
    merged = {**defaults, **raw}
    unknown = sorted(set(merged) - _SCENARIO_KEYS)
    if unknown:
        _fail(where, f"unknown field(s) {unknown}")
    for key in ("network", "demand", "tdd"):
        if key not in merged:
            _fail(f"{where}.{key}", "field is required")
    sim = {}
    for key in _SIM_FIELDS:
        if key in merged:
            value = merged[key]
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                _fail(f"{where}.{key}", f"expected a number, got {value!r}")
            sim[key] = int(value) if key == "trip_cap" else float(value)
    sim.setdefault("duration", networks.DURATION)
    ref = merged.get("reference")
    ref_file = base / ref if isinstance(ref, str) else None
    try:
        mfd, builtin = _network(merged["network"], base, f"{where}.network")
        if builtin is not None:
            sim.setdefault("engine_time_step", networks.TIME_STEPS[builtin])
        demand = _demand(merged["demand"], base, builtin, f"{where}.demand")
        tdd = _apply_level(_tdd(merged["tdd"], base, f"{where}.tdd"), merged.get("tdd_level", "categorical"), where)
        cfg = SimConfig(mfd=mfd, demand=demand, tdd=tdd, **sim)
    except ConfigParseError:
        raise
    except (OSError, ValueError, KeyError) as exc:
        # input file problems isolate the scenario rather than the suite
        return Scenario(label, None, f"{type(exc).__name__}: {exc}", ref_file)
    return Scenario(label, cfg, None, ref_file)


def load_suite(path: Path, engines_override: Sequence[str] | None = None) -> Suite:
    data = bio.read_json(path)
    if not isinstance(data, dict):
        _fail(str(path), "top level must be a JSON object")
    base = path.parent
    engines = list(engines_override) if engines_override else list(data.get("engines", DEFAULT_VARIANTS))
    for i, name in enumerate(engines):
        try:
            parse_variant(name)
        except ValueError as exc:
            _fail(f"{path}: engines[{i}]", str(exc))
    ref = data.get("reference")
    ref_engine = None
    if isinstance(ref, dict) and "engine" in ref:
        ref_engine = ref["engine"]
        try:
            parse_variant(ref_engine)
        except ValueError as exc:
            _fail(f"{path}: reference.engine", str(exc))
    defaults = data.get("defaults", {})
    raw_scenarios = data.get("scenarios", [])
    if not isinstance(raw_scenarios, list):
        _fail(f"{path}: scenarios", "expected a list")
    scenarios = []
    seen = set()
    for i, raw in enumerate(raw_scenarios):
        where = f"{path}: scenarios[{i}]"
        if not isinstance(raw, dict):
            _fail(where, "expected an object")
        sc = _scenario(raw, defaults, base, where)
        if sc.label in seen:
            _fail(f"{where}.label", f"duplicate label {sc.label!r}")
        seen.add(sc.label)
        if isinstance(ref, dict) and "files" in ref and sc.label in ref["files"]:
            sc.reference_file = base / ref["files"][sc.label]
        scenarios.append(sc)
    return Suite(engines, scenarios, ref_engine)


def _safe(name: str) -> str:
    return name.replace(":", "-")


def cmd_run(args) -> int:
    suite = load_suite(_resolve_config_path(args.config), args.engines)
    out = Path(args.out)
    if not suite.scenarios:
        log.warning("config has no scenarios; nothing to do")
        return 0
    failed: list[str] = []
    for sc in suite.scenarios:
        if sc.error:
            failed.append(f"{sc.label}: {sc.error}")
    runnable = [(sc.label, sc.config) for sc in suite.scenarios if sc.config is not None]
    result = run_scenario_suite(runnable, suite.engines, workers=max(1, args.threads))
    for (label, engine), err in result.failures.items():
        failed.append(f"{label}/{engine}: {err}")

    heat: list[tuple[str, str, str, float]] = []
    for sc in suite.scenarios:
        runs = result.results.get(sc.label, {})
        for engine, res in runs.items():
            bio.write_result_csv(out / sc.label / f"{_safe(engine)}.csv", res)
        if not runs:
            continue
        reference = None
        if sc.reference_file is not None:
            try:
                t, n = bio.read_result_csv(sc.reference_file)
                if len(t) != len(sc.config.sample_times) or not np.allclose(t, sc.config.sample_times):
                    raise ValueError("reference timestamps do not match the output grid")
                reference = n
            except (OSError, ValueError) as exc:
                failed.append(f"{sc.label}: reference: {exc}")
        elif suite.reference_engine is not None:
            reference = runs.get(suite.reference_engine)
            if reference is None:
                try:
                    reference = run_variant(suite.reference_engine, sc.config)
                except Exception as exc:
                    failed.append(f"{sc.label}: reference {suite.reference_engine}: {exc}")
        if reference is not None:
            try:
                heat.extend(heatmap_rows(sc.label, reference, runs, WINDOWS))
            except ValueError as exc:
                failed.append(f"{sc.label}: heatmap: {exc}")
    if heat:
        bio.write_heatmap_csv(out / "rmse_heatmap.csv", heat)
    for line in failed:
        print(f"FAILED {line}", file=sys.stderr)
    return 1 if failed else 0


def _initial_params(value: str) -> MfdParams:
    if value in networks.NETWORKS:
        return networks.NETWORKS[value]
    return params_from_dict(bio.read_json(Path(value)))


def cmd_calibrate_mfd(args) -> int:
    data = bio.read_speed_accumulation_csv(args.data)
    opts: dict = {}
    if args.config:
        path = Path(args.config)
        opts = bio.read_json(path)
        initial = opts.get("initial")
        if initial is None:
            _fail(f"{path}: initial", "field is required")
        init = networks.NETWORKS[initial] if isinstance(initial, str) and initial in networks.NETWORKS else (
            params_from_dict(initial) if isinstance(initial, dict) else _initial_params(str(path.parent / initial))
        )
    elif args.initial:
        init = _initial_params(args.initial)
    else:
        _fail("calibrate-mfd", "either --config or --initial is required")
    cfg = CalibrationConfig(
        initial=init,
        bound_fraction=float(opts.get("bound_fraction", 0.2)),
        lambda_bounds=tuple(opts.get("lambda_bounds", (0.03, 0.07))),
    )
    report = calibrate(data, cfg)
    out = Path(args.out)
    bio.atomic_write_text(out / "mfd_params.json", params_to_json(report.params) + "\n")
    bio.atomic_write_text(out / "fit_report.json", json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    print(
        f"rmse {report.rmse_initial:.6g} -> {report.rmse_final:.6g} m/s; "
        f"active bounds: {', '.join(report.active_bounds) or 'none'}"
    )
    return 0


def cmd_aggregate(args) -> int:
    out = Path(args.out)
    records = bio.read_link_records_csv(args.links)
    if not records:
        raise bio.CsvFormatError(args.links, "no link records")
    bio.write_network_state_csv(out / "network_state.csv", network_series(records, args.threshold))
    times = {r.time for r in records}
    if len(times) >= 2:
        link_pts, net_pts = flow_density_scatter(records, density_threshold=args.threshold)
        bio.write_csv(
            out / "link_scatter.csv",
            ["time_s", "link_id", "density_veh_per_km", "flow", "phase"],
            ((p.time, p.link_id, p.density, p.flow, p.phase) for p in link_pts),
        )
        bio.write_csv(
            out / "network_scatter.csv",
            ["time_s", "density_veh_per_lane_km", "flow", "phase"],
            ((p.time, p.density, p.flow, p.phase) for p in net_pts),
        )
    if args.od:
        ods = bio.read_od_csv(args.od)
        lengths = [r.length for od in ods for r in od.routes]
        edges = default_category_edges(lengths, args.category_width)
        bio.write_tdd_csv(out / "tdd.csv", derive_tdd(ods, edges))
    return 0


def cmd_convergence(args) -> int:
    suite = load_suite(_resolve_config_path(args.config))
    engine = args.engine
    parse_variant(engine)
    rows = []
    status = 0
    for sc in suite.scenarios:
        if args.scenario and sc.label not in args.scenario:
            continue
        if sc.config is None:
            print(f"FAILED {sc.label}: {sc.error}", file=sys.stderr)
            status = 1
            continue
        cfg = sc.config

        def runner(dt, cfg=cfg):
            return run_variant(engine, replace(cfg, engine_time_step=dt))

        try:
            rep = convergence_test(runner, args.initial_dt, args.threshold, args.max_halvings)
        except Exception as exc:
            print(f"FAILED {sc.label}: {exc}", file=sys.stderr)
            status = 1
            continue
        for i, (dt, diff) in enumerate(zip(rep.steps[1:], rep.differences), start=1):
            rows.append((sc.label, engine, i, dt, diff, rep.dt))
        print(f"{sc.label}: converged at dt = {rep.dt:g} s")
    bio.write_csv(
        Path(args.out) / "convergence.csv",
        ["scenario", "engine_variant", "halving", "dt_s", "mean_relative_difference", "converged_dt_s"],
        rows,
    )
    return status


def cmd_calibrate_alpha(args) -> int:
    suite = load_suite(_resolve_config_path(args.config))
    lo, hi, res = (float(x) for x in args.grid.split(","))
    ref_engine = suite.reference_engine or "EB:c"
    curve_rows, best_rows = [], []
    status = 0
    for sc in suite.scenarios:
        if sc.config is None:
            print(f"FAILED {sc.label}: {sc.error}", file=sys.stderr)
            status = 1
            continue
        try:
            if sc.reference_file is not None:
                _, ref = bio.read_result_csv(sc.reference_file)
            else:
                ref = run_variant(ref_engine, sc.config).accumulation
            rep = calibrate_alpha(ref, sc.config, grid=(lo, hi, res), refine=not args.no_refine)
        except Exception as exc:
            print(f"FAILED {sc.label}: {exc}", file=sys.stderr)
            status = 1
            continue
        curve_rows.extend((sc.label, a, e) for a, e in rep.curve)
        best_rows.append((sc.label, rep.alpha, rep.rmse, len(rep.failures)))
        print(f"{sc.label}: alpha = {rep.alpha:g} (nrmse {rep.rmse:.4g})")
    out = Path(args.out)
    bio.write_csv(out / "alpha_curve.csv", ["scenario", "alpha", "nrmse"], curve_rows)
    bio.write_csv(out / "alpha_best.csv", ["scenario", "alpha", "nrmse", "failed_grid_points"], best_rows)
    return status


def _engine_list(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bathtub", description="Bathtub traffic reservoir simulations.")
    p.add_argument("--seedless", action="store_true", help="accepted for compatibility; every run is deterministic")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario suite and export CSVs")
    r.add_argument("--config", required=True, help="suite JSON or built-in name (table1-suite)")
    r.add_argument("--out", required=True)
    r.add_argument("--engines", type=_engine_list, default=None, help="comma-separated variants, e.g. EB:c,AB")
    r.add_argument("--threads", type=int, default=1)
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("calibrate-mfd", help="fit MFD parameters to speed-accumulation data")
    c.add_argument("data")
    c.add_argument("--config", help="JSON with initial params and optional bound_fraction, lambda_bounds")
    c.add_argument("--initial", help="built-in network name or parameter JSON file")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_calibrate_mfd)

    a = sub.add_parser("aggregate", help="aggregate link data to network state and TDD")
    a.add_argument("--links", required=True)
    a.add_argument("--od")
    a.add_argument("--threshold", type=float, default=3.0, help="active-link density threshold [veh/km]")
    a.add_argument("--category-width", type=float, default=1000.0, help="TDD bin width [m]")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_aggregate)

    v = sub.add_parser("convergence", help="halve the engine time step until results settle")
    v.add_argument("--config", required=True)
    v.add_argument("--engine", default="TB:c")
    v.add_argument("--scenario", action="append")
    v.add_argument("--initial-dt", type=float, default=2.0)
    v.add_argument("--threshold", type=float, default=0.01)
    v.add_argument("--max-halvings", type=int, default=8)
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_convergence)

    al = sub.add_parser("calibrate-alpha", help="fit the M-model alpha against a reference")
    al.add_argument("--config", required=True)
    al.add_argument("--grid", default="-5,5,0.1", help="lo,hi,resolution")
    al.add_argument("--no-refine", action="store_true")
    al.add_argument("--out", required=True)
    al.set_defaults(func=cmd_calibrate_alpha)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigParseError, bio.CsvFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
