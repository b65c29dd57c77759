"""
Experiment harness tests.

Proves:
    Group 1 - scenario files load into the same scenario as the built-in defaults
    Group 2 - the four strategies plan as documented, are scored on the true losses and
              keep their expected ordering on calibrated fields
    Group 3 - reports are consistent with the results and identical across reruns
    Group 4 - the command line maps failures onto exit codes
"""
import csv
import os

import numpy as np
import pytest
from pydantic import ValidationError

from thzlink.exceptions import ConfigError, InfeasibleError, NumericalError
from thzlink.executors.base_executor import AttenuationExecutor
from thzlink.main import EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_NUMERICAL, EXIT_OK, main
from thzlink.schemas.enums import FieldSource, OracleType, StrategyName
from thzlink.schemas.experiment import ExperimentConfig
from thzlink.schemas.optimizer import FlightPlan
from thzlink.services.absorption_service import AbsorptionService
from thzlink.services.channel_service import ChannelService
from thzlink.services.experiment_service import ExperimentService
from thzlink.services.oracle_service import OracleService
from thzlink.services.report_service import ReportService
from thzlink.services.scenario_service import ScenarioService

from tests.conftest import make_scenario

SCENARIO_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "scenarios")


class StubOracle(AttenuationExecutor):
    """Closed-form variances: faster flight, steeper attack and later slots are more turbulent."""

    def compute_reference_variances(self, mach, attack_deg):
        slots = np.arange(1, self.scenario.slot_count + 1)
        return 0.02 * (1.0 + mach) * (1.0 + abs(attack_deg) / 10.0) * (1.0 + 0.1 * slots)


def stub_oracles(scenario, shared: bool = True):
    field = StubOracle(scenario)
    return {OracleType.FIELD: field, OracleType.SURROGATE: field if shared else StubOracle(scenario)}


def run_all(scenario, **config):
    config = ExperimentConfig(**config)
    return ExperimentService.run_experiment(config, scenario, oracles=stub_oracles(scenario))


def read_csv(path):
    with open(path, newline="") as handle:
        return list(csv.DictReader(handle))


# Group 1


def test_reference_file_matches_defaults():
    loaded = ScenarioService.load_scenario(os.path.join(SCENARIO_DIR, "reference.ini"))
    assert loaded == ScenarioService.default_scenario()
    assert loaded.slot_count == 21 and loaded.band_count == 8
    assert loaded.centers_hz[0] == 100.0e9 and loaded.centers_hz[-1] == 500.0e9


def test_full_band_tiles_the_range():
    scenario = ScenarioService.load_scenario(None, full_band=True)
    assert scenario.band_count == 40000
    assert scenario.centers_hz[0] == pytest.approx(100.0e9 + 5.0e6)
    assert scenario.widths_hz.sum() == pytest.approx(400.0e9)


def write_ini(tmp_path, text, name="scenario.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_partial_file_keeps_defaults(tmp_path):
    path = write_ini(tmp_path, "[time]\nslot_count = 5\n\n[band]\ncenters_hz = 1e11, 2e11\nwidth_hz = 1e6\n")
    scenario = ScenarioService.load_scenario(path)
    assert scenario.slot_count == 5
    assert list(scenario.centers_hz) == [1.0e11, 2.0e11]
    assert scenario.altitude_m == 1000.0


def test_relative_table_path_resolves_next_to_the_file(tmp_path):
    path = write_ini(tmp_path, "[absorption]\ntable_path = mu.txt\n")
    assert ScenarioService.load_scenario(path).absorption_table_path == str(tmp_path / "mu.txt")


@pytest.mark.parametrize(
    "text",
    [
        "[geometry]\nwingspan_m = 3\n",
        "[cockpit]\naltitude_m = 3\n",
        "[geometry]\naltitude_m = high\n",
        "[flight]\navg_mach_floor = 0.9\n",
        "[flight]\nfeasible_mach = 0.5, 0.5\n",
    ],
)
def test_bad_scenario_files(tmp_path, text):
    with pytest.raises(ConfigError):
        ScenarioService.load_scenario(write_ini(tmp_path, text))


def test_missing_scenario_file(tmp_path):
    with pytest.raises(ConfigError):
        ScenarioService.load_scenario(str(tmp_path / "absent.ini"))


def test_strategy_lists_parse_from_strings():
    config = ExperimentConfig(strategies="expert, FIXED")
    assert config.strategies == [StrategyName.EXPERT, StrategyName.FIXED]
    with pytest.raises(ValidationError):
        ExperimentConfig(strategies="expert,autopilot")
    with pytest.raises(ValidationError):
        ExperimentConfig(strategies="")


# Group 2


def test_random_plan_is_seeded_and_meets_the_floor(small_scenario):
    first = ExperimentService.random_plan(small_scenario, seed=5)
    assert first == ExperimentService.random_plan(small_scenario, seed=5)
    assert first.average_mach >= small_scenario.avg_mach_floor - 1e-12
    plans = {ExperimentService.random_plan(small_scenario, seed=s).summary() for s in range(10)}
    assert len(plans) > 1


def test_random_plan_gives_up_after_the_attempt_cap():
    scenario = make_scenario(slot_count=21, avg_mach_floor=0.7)
    with pytest.raises(InfeasibleError):
        ExperimentService.random_plan(scenario, seed=0, max_attempts=5)


def test_plans_below_the_mach_floor_are_rejected(small_scenario):
    low = FlightPlan(mach=[0.5] * 5, attack_deg=[0.0] * 5)
    assert not low.meets_floor(small_scenario.avg_mach_floor)
    assert FlightPlan(mach=[0.5, 0.7, 0.5, 0.7, 0.6], attack_deg=[0.0] * 5).meets_floor(0.6)
    A = np.ones((5, 3))
    power = np.full((5, 3), 0.01 / 3)
    oracle = StubOracle(small_scenario)
    with pytest.raises(InfeasibleError):
        ExperimentService.evaluate_plan(StrategyName.FIXED, low, power, small_scenario, A, oracle, 1.0)
    short = FlightPlan(mach=[0.7] * 4, attack_deg=[0.0] * 4)
    with pytest.raises(InfeasibleError):
        ExperimentService.evaluate_plan(StrategyName.FIXED, short, power, small_scenario, A, oracle, 1.0)
    with pytest.raises(ValidationError):
        FlightPlan(mach=[0.7, 0.7], attack_deg=[0.0])


def test_strategies_run_in_config_order(small_scenario):
    results = run_all(small_scenario)
    assert [r.strategy for r in results] == [
        StrategyName.OPTIMIZED, StrategyName.EXPERT, StrategyName.RANDOM, StrategyName.FIXED
    ]
    fixed = results[3]
    assert fixed.plan.pairs() == [(0.7, 0.0)] * 5
    assert np.allclose(fixed.power_w, 0.01 / 3, rtol=1e-12)
    assert fixed.trace is None and results[1].trace is not None


def test_identical_oracles_make_expert_and_optimized_agree(small_scenario):
    optimized, expert = run_all(small_scenario, strategies="optimized,expert")
    assert optimized.plan == expert.plan
    assert optimized.capacity_bps == expert.capacity_bps


def test_expert_never_loses_to_the_fixed_baseline(small_scenario):
    results = {r.strategy: r for r in run_all(small_scenario, strategies="expert,fixed")}
    assert results[StrategyName.EXPERT].spectral_efficiency >= results[StrategyName.FIXED].spectral_efficiency
    assert results[StrategyName.EXPERT].bound_fraction <= 1.0 + 1e-9


def test_results_are_scored_on_the_true_oracle(small_scenario):
    oracles = stub_oracles(small_scenario, shared=False)
    oracles[OracleType.SURROGATE].compute_reference_variances = lambda m, a: np.full(5, 0.3)
    config = ExperimentConfig(strategies="optimized")
    (result,) = ExperimentService.run_experiment(config, small_scenario, oracles=oracles)
    truth = oracles[OracleType.FIELD]
    expected = [truth.reference_attenuation_db(m, a)[k] for k, (m, a) in enumerate(result.plan.pairs())]
    assert result.attenuation_db == pytest.approx(expected, rel=1e-12)


def test_concurrent_run_matches_sequential(small_scenario):
    sequential = run_all(small_scenario, seed=3)
    concurrent = run_all(small_scenario, seed=3, concurrent=True)
    for a, b in zip(sequential, concurrent):
        assert a.plan == b.plan
        assert a.capacity_bps == b.capacity_bps


def test_optimized_strategy_needs_a_model(small_scenario):
    config = ExperimentConfig(strategies="optimized")
    with pytest.raises(ConfigError):
        ExperimentService.build_oracles(config, small_scenario, c0=1.0)
    with pytest.raises(ConfigError):
        ExperimentService.run_strategy(
            config, StrategyName.OPTIMIZED, small_scenario, np.ones((5, 3)), {OracleType.FIELD: StubOracle(small_scenario)}
        )


def test_imported_fields_need_a_directory(small_scenario):
    with pytest.raises(ConfigError):
        OracleService.build(OracleType.FIELD, small_scenario, FieldSource.IMPORT, None, c0=1.0)


def test_water_filling_beats_uniform_power(small_scenario):
    rows = ExperimentService.compare_power_allocation(small_scenario, StubOracle(small_scenario))
    assert len(rows) == 6
    for row in rows:
        assert row["waterfill_se"] >= row["uniform_se"]
        assert row["improvement_pct"] >= 0.0


@pytest.mark.slow
def test_water_filling_strictly_beats_uniform_on_calibrated_fields():
    scenario = ScenarioService.default_scenario()
    rows = ExperimentService.compare_power_allocation(scenario, OracleService.build(OracleType.FIELD, scenario))
    assert len(rows) == 6
    assert all(row["waterfill_se"] > row["uniform_se"] for row in rows)


@pytest.mark.slow
def test_strategy_ordering_holds_on_almost_every_seed(field_surrogate):
    rows, hits = ExperimentService.ordering_study(
        ExperimentConfig(), ScenarioService.default_scenario(), range(100), model=field_surrogate
    )
    assert len(rows) == 100
    assert hits >= 95


def test_sweep_on_generated_fields(small_scenario, coarse_grid, tmp_path):
    oracle = OracleService.build(OracleType.FIELD, small_scenario, grid_spec=coarse_grid, c0=1.0)
    rows = ExperimentService.attenuation_sweep(small_scenario, oracle)
    assert len(rows) == 6 * 5
    assert all(row["attenuation_db"] >= 0.0 for row in rows)
    path = tmp_path / "sweep.csv"
    ExperimentService.write_rows(rows, str(path))
    written = read_csv(path)
    assert list(written[0]) == ["mach", "attack_deg", "slot", "attenuation_db"]
    assert float(written[7]["attenuation_db"]) == rows[7]["attenuation_db"]
    with pytest.raises(ConfigError):
        ExperimentService.write_rows([], str(tmp_path / "empty.csv"))


def test_spectrum_rows_break_down_the_band_loss(small_scenario):
    oracle = StubOracle(small_scenario)
    rows = ExperimentService.spectrum_rows(small_scenario, oracle, 0.7, 5.0, 3)
    assert [row["frequency_hz"] for row in rows] == [100.0e9, 200.0e9, 300.0e9]
    assert [row["turbulence_db"] for row in rows] == pytest.approx(oracle.band_losses(0.7, 5.0)[0][2], rel=1e-12)
    for row in rows:
        assert row["total_db"] == pytest.approx(row["fspl_db"] + row["absorption_db"] + row["turbulence_db"])
    assert rows[0]["fspl_db"] < rows[1]["fspl_db"] < rows[2]["fspl_db"]
    with pytest.raises(ConfigError):
        ExperimentService.spectrum_rows(small_scenario, oracle, 0.7, 5.0, 6)

# Group 3


def test_report_tables_agree_with_results(small_scenario, tmp_path):
    results = run_all(small_scenario)
    paths = ReportService.report(results, str(tmp_path))
    by_slot = read_csv(paths["attenuation_by_slot"])
    assert len(by_slot) == 5
    assert float(by_slot[2]["expert_attenuation_db"]) == results[1].attenuation_db[2]
    power = read_csv(paths["power_by_slot"])
    assert float(power[0]["fixed_power_w"]) == pytest.approx(0.01, rel=1e-12)
    summary = {row["strategy"]: row for row in read_csv(paths["summary"])}
    for result in results:
        row = summary[result.strategy.value]
        assert float(row["spectral_efficiency_bps_hz"]) == result.spectral_efficiency
        assert float(row["mean_attenuation_db"]) == pytest.approx(np.mean(result.attenuation_db), rel=1e-12)


def test_results_json_round_trip(small_scenario, tmp_path):
    results = run_all(small_scenario, strategies="expert,fixed")
    paths = ReportService.report(results, str(tmp_path))
    loaded = ReportService.load_results_json(paths["results"])
    assert [r.spectral_efficiency for r in loaded] == [r.spectral_efficiency for r in results]
    assert loaded[0].trace.capacities == results[0].trace.capacities


def test_reruns_are_byte_identical(small_scenario, tmp_path):
    first = ReportService.report(run_all(small_scenario, seed=2), str(tmp_path / "a"), svg=True)
    second = ReportService.report(run_all(small_scenario, seed=2), str(tmp_path / "b"), svg=True)
    assert "spectral_efficiency_svg" in first
    for name, path in first.items():
        with open(path, "rb") as a, open(second[name], "rb") as b:
            assert a.read() == b.read(), name


def test_report_rejects_empty_or_ragged_results(small_scenario, tmp_path):
    with pytest.raises(ConfigError):
        ReportService.report([], str(tmp_path))
    results = run_all(small_scenario, strategies="expert,fixed")
    results[1] = results[1].model_copy(update={"attenuation_db": results[1].attenuation_db[:3]})
    with pytest.raises(ConfigError):
        ReportService.report(results, str(tmp_path))


# Group 4


def test_cli_rerenders_saved_results(small_scenario, tmp_path):
    paths = ReportService.report(run_all(small_scenario, strategies="fixed"), str(tmp_path / "run"))
    out = tmp_path / "rendered"
    code = main(["report", "--out", str(out), "--results", paths["results"], "--log-level", "warning"])
    assert code == EXIT_OK
    assert (out / "summary.csv").read_text() == open(paths["summary"]).read()


def test_cli_run_writes_report_and_traces(small_scenario, tmp_path, monkeypatch):
    results = run_all(small_scenario, strategies="expert,fixed")
    monkeypatch.setattr(ExperimentService, "run_experiment", staticmethod(lambda config, scenario: results))
    code = main(["run", "--out", str(tmp_path), "--strategies", "expert,fixed"])
    assert code == EXIT_OK
    assert (tmp_path / "trace_expert.csv").exists()
    assert not (tmp_path / "trace_fixed.csv").exists()
    assert len(read_csv(tmp_path / "attenuation_by_slot.csv")) == 5



def test_cli_spectrum_writes_breakdown_and_table(tmp_path, monkeypatch):
    monkeypatch.setattr("thzlink.main._true_oracle", lambda args, scenario: StubOracle(scenario))
    code = main(["spectrum", "--out", str(tmp_path), "--slot", "4", "--svg"])
    assert code == EXIT_OK
    rows = read_csv(tmp_path / "attenuation_spectrum.csv")
    assert len(rows) == 8
    assert list(rows[0]) == ["frequency_hz", "fspl_db", "absorption_db", "turbulence_db", "total_db"]
    assert (tmp_path / "attenuation_spectrum.svg").exists()
    table = AbsorptionService.load_table(str(tmp_path / "absorption_table.txt"))
    expected = ChannelService.absorption_table(ScenarioService.default_scenario())
    assert np.array_equal(table.mu_per_m, expected.mu_per_m)
    assert main(["spectrum", "--out", str(tmp_path), "--slot", "40"]) == EXIT_CONFIG

@pytest.mark.parametrize(
    "argv",
    [
        ["run", "--scenario", "no/such/scenario.ini"],
        ["report", "--results", "no/such/results.json"],
        ["train-surrogate", "--dataset", "no/such/dataset.txt"],
        ["run", "--strategies", "autopilot"],
    ],
)
def test_cli_configuration_errors_exit_2(tmp_path, argv):
    assert main(argv + ["--out", str(tmp_path)]) == EXIT_CONFIG


@pytest.mark.parametrize("error, expected", [(InfeasibleError, EXIT_INFEASIBLE), (NumericalError, EXIT_NUMERICAL)])
def test_cli_failure_exit_codes(tmp_path, monkeypatch, error, expected):
    def fail(config, scenario):
        raise error("boom")

    monkeypatch.setattr(ExperimentService, "run_experiment", staticmethod(fail))
    assert main(["run", "--out", str(tmp_path)]) == expected
