"""Batch execution of engine variants over a set of scenarios."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

from .common import SimConfig, SimResult
from .continuous import run_accumulation_based, run_m_model
from .trip_based import run_event_based, run_trip_based_fixed

log = logging.getLogger(__name__)

DEFAULT_VARIANTS = ("EB:m", "EB:c", "TB:m", "TB:c", "AB")

_RUNNERS: dict[str, Callable[[SimConfig], SimResult]] = {
    "AB": run_accumulation_based,
    "M": run_m_model,
    "EB": run_event_based,
    "TB": run_trip_based_fixed,
}


def parse_variant(name: str) -> tuple[str, str | None]:
    """Split ``"EB:m"`` into ``("EB", "m")``; continuous engines take no suffix."""
    base, _, level = name.partition(":")
    if base not in _RUNNERS:
        raise ValueError(f"unknown engine {name!r}; choose from {sorted(_RUNNERS)}")
    if level and (base in ("AB", "M") or level not in ("m", "c")):
        raise ValueError(f"invalid engine variant {name!r}")
    return base, level or None


def run_variant(name: str, config: SimConfig) -> SimResult:
    base, level = parse_variant(name)
    if level == "m":
        config = replace(config, tdd=config.tdd.as_mean_only())
    result = _RUNNERS[base](config)
    result.engine = name
    return result


@dataclass
class SuiteResult:
    results: dict[str, dict[str, SimResult]] = field(default_factory=dict)
    failures: dict[tuple[str, str], str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures

    def __len__(self) -> int:
        return sum(len(v) for v in self.results.values())


def _run_one(job: tuple[str, str, SimConfig]) -> tuple[str, str, SimResult | None, str | None]:
    label, engine, config = job
    try:
        return label, engine, run_variant(engine, config), None
    except Exception as exc:  # recorded per run; the suite keeps going
        return label, engine, None, f"{type(exc).__name__}: {exc}"


def run_scenario_suite(
    configs: Sequence[tuple[str, SimConfig]],
    engines: Sequence[str] = DEFAULT_VARIANTS,
    workers: int = 1,
) -> SuiteResult:
    """Run every engine variant on every config.

    Results keep the input order of labels and engines regardless of
    ``workers``. Failing runs are collected in ``failures``.
    """
    for name in engines:
        parse_variant(name)
    jobs = [(label, engine, cfg) for label, cfg in configs for engine in engines]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_one, jobs))
    else:
        outcomes = [_run_one(job) for job in jobs]

    suite = SuiteResult()
    for label, _ in configs:
        suite.results.setdefault(label, {})
    for label, engine, result, error in outcomes:
        if error is None:
            suite.results[label][engine] = result
        else:
            log.warning("run %s/%s failed: %s", label, engine, error)
            suite.failures[(label, engine)] = error
    if not engines:
        suite.results = {}
    return suite
