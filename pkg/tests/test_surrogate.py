"""
Diffusion surrogate tests.

Proves:
    Group 1 - the noise schedule and forward corruption follow their closed forms
    Group 2 - the denoiser gradients, model file and sampler are exact and deterministic
    Group 3 - dataset rows come from the generated fields and score the surrogate against them
    Group 4 - trained models sample a point mass and a Gaussian faithfully and the
              field-trained surrogate stays accurate on held-out flight conditions
"""
import logging

import numpy as np
import pytest
from pydantic import ValidationError

from thzlink.exceptions import DomainError
from thzlink.schemas.enums import OptimizerKind
from thzlink.schemas.field import WakeModelParams
from thzlink.schemas.surrogate import ModelSpec, NoiseSchedule, OptimizerConfig
from thzlink.services.dataset_service import DatasetService
from thzlink.services.denoiser_network import time_embedding
from thzlink.services.geometry_service import GeometryService
from thzlink.services.scenario_service import ScenarioService
from thzlink.services.surrogate_service import SurrogateService

TINY = ModelSpec(hidden_widths=[6], time_embedding_size=4)


def synthetic_dataset(rows: int = 64, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.column_stack([
        rng.uniform(-60.0, 60.0, rows),
        rng.uniform(-40.0, 20.0, rows),
        rng.choice([0.5, 0.7], rows),
        rng.choice([-10.0, 0.0, 10.0], rows),
        rng.normal(220.0, 3.0, rows),
        rng.normal(2.6e4, 200.0, rows),
        10.0 ** rng.uniform(-17.0, -14.0, rows),
    ])


def train_tiny(epochs: int = 2, seed: int = 0, kind: OptimizerKind = OptimizerKind.SGD):
    config = OptimizerConfig(kind=kind, epochs=epochs, batch_size=16, early_stop_patience=50)
    schedule = SurrogateService.make_schedule(20, 1e-3, 0.5)
    return SurrogateService.train(synthetic_dataset(), schedule, TINY, config, seed=seed)


# Group 1


def test_two_step_schedule_by_hand():
    schedule = SurrogateService.make_schedule(2, 0.1, 0.2)
    assert schedule.alpha_bars == pytest.approx([0.9, 0.72], abs=1e-15)
    assert schedule.sigmas[0] == 0.0
    assert schedule.sigmas[1] == pytest.approx(np.sqrt(0.1 * 0.2 / 0.28), rel=1e-12)


def test_default_schedule_reaches_pure_noise():
    schedule = SurrogateService.make_schedule()
    alpha_bars = np.asarray(schedule.alpha_bars)
    assert schedule.step_count == 200
    assert np.all(np.diff(alpha_bars) < 0)
    assert alpha_bars[-1] <= 1e-4
    assert alpha_bars[-1] == pytest.approx(np.prod(1.0 - np.linspace(1e-4, 0.1, 200)), rel=1e-12)
    assert np.max(np.abs(np.cumprod(schedule.alphas) - alpha_bars)) <= 1e-12


def test_short_schedule_warns_when_final_step_is_not_noise(caplog):
    with caplog.at_level(logging.WARNING):
        schedule = SurrogateService.make_schedule(200, 1e-4, 0.02)
    assert schedule.alpha_bars[-1] > 1e-4
    assert "not pure noise" in caplog.text


@pytest.mark.parametrize("args", [(1, 1e-4, 0.02), (10, 0.0, 0.02), (10, 0.05, 0.01), (10, 1e-4, 1.0)])
def test_schedule_rejects_bad_parameters(args):
    with pytest.raises(DomainError):
        SurrogateService.make_schedule(*args)


def test_schedule_container_checks_consistency():
    schedule = SurrogateService.make_schedule(2, 0.1, 0.2)
    values = schedule.model_dump()
    values["alpha_bars"] = [0.9, 0.7]
    with pytest.raises(ValidationError):
        NoiseSchedule(**values)


def test_forward_corrupt_by_hand():
    schedule = SurrogateService.make_schedule(2, 0.1, 0.2)
    x_t = SurrogateService.forward_corrupt([1.0, 2.0, 3.0], 2, [0.5, -0.5, 0.0], schedule)
    a, b = np.sqrt(0.72), np.sqrt(0.28)
    assert x_t == pytest.approx([a + 0.5 * b, 2.0 * a - 0.5 * b, 3.0 * a], rel=1e-12)
    assert SurrogateService.forward_corrupt(np.zeros(3), 2, [1.0, 2.0, 3.0], schedule) == pytest.approx(
        b * np.array([1.0, 2.0, 3.0]), rel=1e-12
    )


def test_forward_corrupt_step_range():
    schedule = SurrogateService.make_schedule(2, 0.1, 0.2)
    with pytest.raises(DomainError):
        SurrogateService.forward_corrupt(np.zeros(3), 0, np.zeros(3), schedule)
    with pytest.raises(DomainError):
        SurrogateService.forward_corrupt(np.zeros(3), 3, np.zeros(3), schedule)


def test_forward_marginal_moments():
    schedule = SurrogateService.make_schedule()
    rng = np.random.default_rng(5)
    n = 20000
    x0 = np.tile([1.0, -2.0, 0.5], (n, 1))
    t = 40
    samples = SurrogateService.forward_corrupt(x0, np.full(n, t), rng.standard_normal((n, 3)), schedule)
    alpha_bar = schedule.alpha_bars[t - 1]
    variance = 1.0 - alpha_bar
    assert np.all(np.abs(samples.mean(axis=0) - np.sqrt(alpha_bar) * x0[0]) <= 3.0 * np.sqrt(variance / n))
    assert np.all(np.abs(samples.var(axis=0) - variance) <= 3.0 * variance * np.sqrt(2.0 / n))


# Group 2


def test_time_embedding_shape():
    assert time_embedding([1, 2, 3], 16).shape == (3, 16)
    assert time_embedding(7, 5).shape == (1, 5)
    assert np.all(np.abs(time_embedding(np.arange(1, 201), 16)) <= 1.0)


def test_backprop_matches_central_differences():
    model = train_tiny(epochs=1).model
    error = SurrogateService.gradient_check(model, synthetic_dataset(8, seed=3), seed=1, step=1e-5)
    assert error <= 1e-4


def test_training_is_deterministic_per_seed():
    first = train_tiny(epochs=3, seed=4)
    second = train_tiny(epochs=3, seed=4)
    assert first.loss_trace == second.loss_trace
    assert first.model.weights == second.model.weights
    assert first.epochs_run == 3 and not first.early_stopped


def test_adam_variant_trains():
    result = train_tiny(epochs=2, kind=OptimizerKind.ADAM)
    assert len(result.loss_trace) == 2
    assert all(np.isfinite(result.loss_trace))


def test_training_rejects_empty_or_misshaped_data():
    with pytest.raises(DomainError):
        SurrogateService.train(np.zeros((0, 7)))
    with pytest.raises(DomainError):
        SurrogateService.train(np.zeros((4, 5)))


def test_b_channel_is_standardized_in_log_space():
    dataset = synthetic_dataset()
    stats = SurrogateService.fit_stats(dataset)
    standardized = stats.standardize_x(dataset[:, 4:7])
    assert np.allclose(standardized.mean(axis=0), 0.0, atol=1e-12)
    assert np.allclose(stats.destandardize_x(standardized), dataset[:, 4:7], rtol=1e-9, atol=0.0)


def test_model_file_resaves_byte_identical(tmp_path):
    model = train_tiny(epochs=2).model
    first = tmp_path / "model.json"
    second = tmp_path / "again.json"
    SurrogateService.save_model(model, str(first))
    SurrogateService.save_model(SurrogateService.load_model(str(first)), str(second))
    assert first.read_bytes() == second.read_bytes()


def test_missing_model_file_is_an_error(tmp_path):
    with pytest.raises(DomainError):
        SurrogateService.load_model(str(tmp_path / "absent.json"))


def test_sampling_is_deterministic_per_seed():
    model = train_tiny(epochs=1).model
    conditions = [[0.0, -5.0, 0.7, 0.0], [10.0, -20.0, 0.5, 10.0]]
    first = SurrogateService.sample(conditions, model, seed=3, standardized=True)
    again = SurrogateService.sample(conditions, model, seed=3, standardized=True)
    other = SurrogateService.sample(conditions, model, seed=4, standardized=True)
    assert first.shape == (2, 3)
    assert np.array_equal(first, again)
    assert not np.array_equal(first, other)


def test_sampling_rejects_mismatched_schedule():
    model = train_tiny(epochs=1).model
    with pytest.raises(DomainError):
        SurrogateService.sample([[0.0, 0.0, 0.7, 0.0]], model, SurrogateService.make_schedule(30, 1e-3, 0.5))


# Group 3


def test_dataset_rows_per_condition(small_scenario, coarse_grid):
    rows = DatasetService.generate_dataset(
        small_scenario, [(0.0, 0.0), (0.7, 5.0)], c0=1.0, grid_spec=coarse_grid, points_per_condition=20
    )
    assert rows.shape == (40, 7)
    still = rows[rows[:, 2] == 0.0]
    assert len(still) == 20
    assert np.all(still[:, 6] == 0.0)
    assert np.all(rows[:, 0] >= coarse_grid.x1_min - 1e-9) and np.all(rows[:, 0] <= coarse_grid.x1_max + 1e-9)


def test_dataset_file_round_trip(tmp_path):
    rows = synthetic_dataset(10)
    path = tmp_path / "data" / "dataset.txt"
    DatasetService.save_dataset(rows, str(path))
    assert path.read_text().startswith("# x1 x2 M alpha T P B")
    assert np.array_equal(DatasetService.load_dataset(str(path)), rows)


def test_dataset_file_errors(tmp_path):
    with pytest.raises(DomainError):
        DatasetService.load_dataset(str(tmp_path / "absent.txt"))
    short = tmp_path / "short.txt"
    short.write_text("1 2 3 4 5 6\n")
    with pytest.raises(DomainError):
        DatasetService.load_dataset(str(short))
    with pytest.raises(DomainError):
        DatasetService.generate_dataset(None, [(0.5, 0.0)], c0=1.0, points_per_condition=1)


def test_held_out_conditions_fall_between_training_nodes():
    held_out = DatasetService.held_out_conditions()
    training = set(DatasetService.default_conditions())
    assert len(held_out) == 9
    assert not training.intersection(held_out)
    assert all(0.4 < m < 0.8 and -10.0 < a < 10.0 for m, a in held_out)


def test_surrogate_evaluation_scores_every_slot(small_scenario, coarse_grid):
    model = train_tiny(epochs=1).model
    conditions = DatasetService.held_out_conditions()[:2]
    evaluation = SurrogateService.evaluate_surrogate(
        model,
        small_scenario,
        conditions,
        params=WakeModelParams(calibration_scale=1.0),
        grid_spec=coarse_grid,
        n_path=16,
    )
    assert len(evaluation.rows) == 2 * small_scenario.slot_count
    assert [(row.mach, row.attack_deg) for row in evaluation.rows[::small_scenario.slot_count]] == conditions
    errors = [(row.true_db - row.predicted_db) ** 2 for row in evaluation.rows]
    assert evaluation.rmse_db == pytest.approx(np.sqrt(np.mean(errors)), rel=1e-12)
    with pytest.raises(DomainError):
        SurrogateService.evaluate_surrogate(
            model, small_scenario, [], params=WakeModelParams(calibration_scale=1.0), grid_spec=coarse_grid
        )


# Group 4


@pytest.fixture(scope="module")
def point_mass_training():
    """Still-air rows: every target is (T_inf, P_inf, 0) whatever the condition."""
    rng = np.random.default_rng(8)
    n = 256
    dataset = np.column_stack([
        rng.uniform(-60.0, 60.0, n),
        rng.uniform(-40.0, 20.0, n),
        np.full(n, 0.7),
        np.zeros(n),
        np.full(n, 220.0),
        np.full(n, 2.6e4),
        np.zeros(n),
    ])
    config = OptimizerConfig(
        kind=OptimizerKind.ADAM, learning_rate=3e-3, epochs=300, batch_size=64, early_stop_patience=300
    )
    schedule = SurrogateService.make_schedule(50, 0.02, 0.3)
    return SurrogateService.train(dataset, schedule, ModelSpec(hidden_widths=[32, 32]), config, seed=2)


@pytest.mark.slow
def test_point_mass_training_converges(point_mass_training):
    trace = point_mass_training.loss_trace
    assert trace[49] < trace[0]
    assert min(trace) < 0.2 * trace[0]


@pytest.mark.slow
def test_point_mass_samples_concentrate(point_mass_training):
    model = point_mass_training.model
    conditions = np.tile([0.0, -10.0, 0.7, 0.0], (50, 1))
    samples = SurrogateService.sample(conditions, model, seed=6, standardized=True)
    assert np.mean(np.abs(samples)) <= 0.1


@pytest.mark.slow
def test_still_air_model_predicts_no_turbulence(point_mass_training, small_scenario):
    model = point_mass_training.model
    path = GeometryService.slot_geometry(small_scenario, 3)
    loss = SurrogateService.predict_attenuation(0.7, 0.0, path, model, seed=1)
    assert 0.0 <= loss <= 0.5
    assert SurrogateService.predict_attenuation(0.7, 0.0, path, model, seed=1) == loss
    with pytest.raises(DomainError):
        SurrogateService.predict_attenuation(0.7, 0.0, path, model, SurrogateService.make_schedule(30, 1e-3, 0.5))


@pytest.mark.slow
def test_gaussian_toy_samples_match_mean_and_covariance():
    rng = np.random.default_rng(11)
    n = 2000
    mean = np.array([2.0, -1.0])
    cov = np.array([[1.0, 0.6], [0.6, 0.8]])
    targets = rng.multivariate_normal(mean, cov, n)
    dataset = np.column_stack([
        np.zeros(n), np.zeros(n), np.full(n, 0.7), np.zeros(n), targets, np.zeros(n),
    ])
    config = OptimizerConfig(
        kind=OptimizerKind.ADAM, learning_rate=1e-3, epochs=400, batch_size=64, early_stop_patience=400
    )
    model = SurrogateService.train(dataset, spec=ModelSpec(hidden_widths=[64, 64]), opt_config=config, seed=3).model
    samples = SurrogateService.sample(np.tile([0.0, 0.0, 0.7, 0.0], (n, 1)), model, seed=4)[:, :2]
    assert np.linalg.norm(samples.mean(axis=0) - mean) <= 0.10 * np.linalg.norm(mean)
    assert np.linalg.norm(np.cov(samples, rowvar=False) - cov) <= 0.15 * np.linalg.norm(cov)


@pytest.mark.slow
def test_field_trained_surrogate_generalizes_to_held_out_conditions(field_surrogate):
    evaluation = SurrogateService.evaluate_surrogate(
        field_surrogate, ScenarioService.default_scenario(), DatasetService.held_out_conditions()
    )
    assert len(evaluation.rows) == 9 * 21
    assert evaluation.rmse_db <= 1.5
