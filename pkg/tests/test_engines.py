from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bathtub.demand import DemandProfile
from bathtub.engines import (
    ConfigError,
    SimConfig,
    SimulationError,
    run_accumulation_based,
    run_event_based,
    run_m_model,
    run_scenario_suite,
    run_trip_based_fixed,
    run_variant,
)
from bathtub.engines.suite import parse_variant
from bathtub.mfd import speed_at_accumulation
from bathtub.networks import NETWORKS, TABLE1, scenario_config, static_tdd
from bathtub.tdd import DynamicTdd, TddSpec, steady_distance

from .conftest import load_oracles

TOY = NETWORKS["T"]
ENGINES = {
    "AB": run_accumulation_based,
    "M": run_m_model,
    "TB": run_trip_based_fixed,
    "EB": run_event_based,
}


def constant_demand(rate, duration):
    return DemandProfile.from_points([(0.0, rate), (duration, rate)])


def make_config(rate=1.0, duration=1800.0, tdd=None, mfd=TOY, **kw):
    tdd = tdd if tdd is not None else DynamicTdd.static(static_tdd("T"))
    demand = rate if isinstance(rate, DemandProfile) else constant_demand(rate, duration)
    kw.setdefault("engine_time_step", 0.5)
    return SimConfig(duration=duration, mfd=mfd, demand=demand, tdd=tdd, **kw)


def single_trip_config(distance, duration=1200.0, **kw):
    # exactly one vehicle demanded in the first generation window
    demand = DemandProfile.from_points([(0, 1 / 60), (60, 1 / 60), (61, 0.0), (duration, 0.0)])
    return make_config(demand, duration, tdd=DynamicTdd.static(TddSpec.mean_only(distance)), **kw)


def step_demand(e1, e2, t_step, duration):
    return DemandProfile.from_points([(0, e1), (t_step, e1), (t_step + 1e-6, e2), (duration, e2)])


class TestSimConfig:
    def test_output_must_be_multiple_of_step(self):
        with pytest.raises(ConfigError):
            run_accumulation_based(make_config(engine_time_step=7.0))

    def test_negative_duration_rejected_at_run(self):
        cfg = SimConfig(duration=-1.0, mfd=TOY, demand=constant_demand(1.0, 10.0), tdd=DynamicTdd.static(static_tdd("T")))
        with pytest.raises(ConfigError):
            run_event_based(cfg)

    def test_sample_grid(self):
        cfg = make_config(duration=600.0)
        np.testing.assert_array_equal(cfg.sample_times, np.arange(0, 601, 60.0))


class TestAccumulationBased:
    def test_empty_network(self):
        res = run_accumulation_based(make_config(0.0))
        assert np.all(res.accumulation == 0) and np.all(res.outflow == 0)

    def test_bisection_fixed_point(self):
        oracle = load_oracles()["steady"]["T"]
        tdd = DynamicTdd.static(TddSpec.mean_only(oracle["mean_distance"]))
        res = run_accumulation_based(make_config(oracle["inflow"], 9000.0, tdd=tdd))
        assert res.accumulation[-1] == pytest.approx(oracle["accumulation"], rel=1e-6)

    def test_instability_guard(self):
        cfg = make_config(60.0, 600.0, engine_time_step=60.0)
        with pytest.raises(SimulationError):
            run_accumulation_based(cfg)

    def test_matches_m_model_at_zero_alpha_on_step(self):
        cfg = make_config(step_demand(1.0, 4.0, 600.0, 2400.0), 2400.0)
        a = run_accumulation_based(cfg)
        m = run_m_model(replace(cfg, alpha=0.0))
        np.testing.assert_array_equal(a.accumulation, m.accumulation)
        np.testing.assert_array_equal(a.outflow, m.outflow)


class TestMModel:
    @pytest.mark.parametrize("alpha", [-3.0, -1.0])
    def test_steady_state_independent_of_alpha(self, alpha):
        oracle = load_oracles()["steady"]["T"]
        tdd = DynamicTdd.static(static_tdd("T"))
        cfg = make_config(oracle["inflow"], 6000.0, tdd=tdd, alpha=alpha)
        res = run_m_model(cfg)
        # same fixed point as the accumulation-based model: e = n V(n) / D
        assert res.accumulation[-1] == pytest.approx(oracle["accumulation"], rel=1e-4)
        m, n = res.remaining_distance[-1], res.accumulation[-1]
        assert m / (n * steady_distance(static_tdd("T"))) == pytest.approx(1.0, rel=1e-4)

    def test_homogeneous_alpha_changes_trajectory_but_conserves(self):
        tdd = DynamicTdd.static(TddSpec.mean_only(3000.0))
        cfg = make_config(step_demand(1.0, 3.0, 600.0, 2400.0), 2400.0, tdd=tdd)
        base = run_m_model(cfg)
        alt = run_m_model(replace(cfg, alpha=-3.0))
        assert np.max(np.abs(base.accumulation - alt.accumulation)) > 1.0
        for res in (base, alt):
            assert np.all(np.abs(res.conservation_residual()) <= res.conservation_bound)


class TestTripBasedFixed:
    def test_single_trip_travel_time(self):
        D = 3000.0
        res = run_trip_based_fixed(single_trip_config(D))
        (trip,) = list(res.trips.completed())
        v1 = float(speed_at_accumulation(TOY, 1.0))
        assert trip.entry_time == 30.0
        assert abs((trip.exit_time - trip.entry_time) - D / v1) <= 0.5

    def test_fifo_homogeneous(self):
        tdd = DynamicTdd.static(TddSpec.mean_only(2500.0))
        res = run_trip_based_fixed(make_config(step_demand(0.5, 3.0, 300.0, 1800.0), 1800.0, tdd=tdd))
        done = res.trips.completed_mask
        exits = res.trips.exit_time[done]
        assert done.sum() > 100
        assert np.all(np.diff(exits) >= 0)

    def test_step_larger_than_generation(self):
        with pytest.raises(ConfigError):
            run_trip_based_fixed(make_config(engine_time_step=120.0, output_resolution=120.0))

    def test_converges_to_event_engine(self):
        cfg = make_config(step_demand(0.5, 2.5, 300.0, 1800.0), 1800.0)
        ref = run_event_based(cfg).accumulation
        prev = None
        for dt in (4.0, 2.0, 1.0, 0.5):
            n = run_trip_based_fixed(replace(cfg, engine_time_step=dt)).accumulation
            diff = np.abs(n - ref).sum() / np.abs(ref).sum()
            assert diff < 0.01
            if prev is not None:
                assert np.abs(n - prev).sum() / np.abs(prev).sum() < 0.01
            prev = n


class TestEventBased:
    def test_single_trip_exact(self):
        D = 3000.0
        res = run_event_based(single_trip_config(D))
        (trip,) = list(res.trips.completed())
        v1 = float(speed_at_accumulation(TOY, 1.0))
        assert trip.exit_time - trip.entry_time == pytest.approx(D / v1, rel=1e-14)

    def test_two_simultaneous_trips_closed_form(self):
        D = 1500.0
        cfg = make_config(0.0, 1200.0)
        res = run_event_based(cfg, entries=([0.0, 0.0], [D, 2 * D]))
        v1 = float(speed_at_accumulation(TOY, 1.0))
        v2 = float(speed_at_accumulation(TOY, 2.0))
        t1 = D / v2
        t2 = t1 + D / v1
        np.testing.assert_allclose(res.trips.exit_time, [t1, t2], rtol=1e-14)
        thr = res.trips.exit_threshold
        assert thr[1] - thr[0] == D

    def test_fifo_homogeneous(self):
        tdd = DynamicTdd.static(TddSpec.mean_only(2500.0))
        res = run_event_based(make_config(step_demand(0.5, 3.0, 300.0, 1800.0), 1800.0, tdd=tdd))
        exits = res.trips.exit_time[res.trips.completed_mask]
        assert np.all(np.diff(exits) >= 0)

    def test_trip_cap(self):
        with pytest.raises(SimulationError):
            run_event_based(make_config(3.0, 1800.0, trip_cap=50))

    def test_explicit_entries_validated(self):
        cfg = make_config(0.0, 600.0)
        with pytest.raises(ConfigError):
            run_event_based(cfg, entries=([10.0, 5.0], [100.0, 100.0]))
        with pytest.raises(ConfigError):
            run_trip_based_fixed(cfg, entries=([10.0], [-1.0]))

    def test_step_independent(self):
        cfg = make_config(2.0, 1200.0)
        a = run_event_based(cfg)
        b = run_event_based(replace(cfg, engine_time_step=0.25))
        np.testing.assert_array_equal(a.accumulation, b.accumulation)


demand_profiles = st.lists(st.floats(0.0, 4.0), min_size=2, max_size=6).map(
    lambda rates: DemandProfile.from_points([(i * 1200.0 / (len(rates) - 1), r) for i, r in enumerate(rates)])
)


class TestInvariants:
    @settings(max_examples=12, deadline=None)
    @given(demand_profiles, st.sampled_from(sorted(ENGINES)), st.sampled_from(["T-static", "mean"]))
    def test_conservation_and_non_negativity(self, demand, engine, tdd_name):
        tdd = DynamicTdd.static(static_tdd("T") if tdd_name == "T-static" else TddSpec.mean_only(3170.0))
        cfg = make_config(demand, 1200.0, tdd=tdd, alpha=-2.0)
        res = ENGINES[engine](cfg)
        assert np.all(res.accumulation >= 0)
        assert np.all(res.outflow >= 0)
        assert np.all(np.abs(res.conservation_residual()) <= res.conservation_bound)

    def test_dynamic_tdd_conservation(self):
        spec = next(s for s in TABLE1 if s.code == "DU-D-1")
        cfg = scenario_config(spec)
        for name in ("AB", "M", "TB", "EB"):
            res = ENGINES[name](cfg)
            assert np.all(np.abs(res.conservation_residual()) <= res.conservation_bound), name


class TestSuite:
    def configs(self):
        return [("a", make_config(1.0, 600.0)), ("b", make_config(2.0, 600.0))]

    def test_all_variants(self):
        out = run_scenario_suite(self.configs())
        assert list(out.results) == ["a", "b"]
        assert list(out.results["a"]) == ["EB:m", "EB:c", "TB:m", "TB:c", "AB"]
        assert len(out) == 10 and out.ok

    def test_empty_engine_selection(self):
        assert run_scenario_suite(self.configs(), engines=[]).results == {}

    def test_failure_isolated(self):
        bad = SimConfig(duration=-5.0, mfd=TOY, demand=constant_demand(1.0, 600.0), tdd=DynamicTdd.static(static_tdd("T")))
        out = run_scenario_suite([*self.configs(), ("bad", bad)], engines=["AB", "EB:c"])
        assert set(out.failures) == {("bad", "AB"), ("bad", "EB:c")}
        assert len(out.results["a"]) == 2

    def test_parallel_matches_serial(self):
        serial = run_scenario_suite(self.configs(), engines=["TB:c", "AB"])
        parallel = run_scenario_suite(self.configs(), engines=["TB:c", "AB"], workers=2)
        for label in ("a", "b"):
            for eng in ("TB:c", "AB"):
                np.testing.assert_array_equal(
                    serial.results[label][eng].accumulation, parallel.results[label][eng].accumulation
                )

    def test_mean_variant_uses_mean_distance(self):
        res = run_variant("EB:m", make_config(1.0, 600.0))
        assert set(np.unique(res.trips.distance)) == {static_tdd("T").mean_distance}

    @pytest.mark.parametrize("name", ["AB:m", "XX", "EB:q", "M:c"])
    def test_bad_variant(self, name):
        with pytest.raises(ValueError):
            parse_variant(name)
