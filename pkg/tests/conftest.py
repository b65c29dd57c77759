import numpy as np
import pytest

from thzlink.schemas.absorption import AbsorptionTable
from thzlink.schemas.enums import OptimizerKind
from thzlink.schemas.field import GridSpec
from thzlink.schemas.scenario import Scenario, SubBand
from thzlink.schemas.surrogate import OptimizerConfig, SurrogateModel
from thzlink.services.calibration_service import CalibrationService
from thzlink.services.dataset_service import DatasetService
from thzlink.services.scenario_service import ScenarioService
from thzlink.services.surrogate_service import SurrogateService


def make_scenario(**overrides) -> Scenario:
    values = {
        "slot_count": 5,
        "sub_bands": [SubBand(center_hz=f, width_hz=10.0e6) for f in (100.0e9, 200.0e9, 300.0e9)],
    }
    values.update(overrides)
    return Scenario(**values)


def constant_table(mu: float) -> AbsorptionTable:
    freqs = np.array([50.0e9, 600.0e9])
    alts = np.array([0.0, 2000.0])
    return AbsorptionTable(frequencies_hz=freqs, altitudes_m=alts, mu_per_m=np.full((2, 2), mu))


@pytest.fixture
def small_scenario() -> Scenario:
    """Five slots, three sub-bands, default link budget and flight sets."""
    return make_scenario()


@pytest.fixture
def coarse_grid() -> GridSpec:
    """Half-size body-frame grid at 2 m spacing."""
    return GridSpec(x1_min=-60.0, x1_max=60.0, x2_min=-40.0, x2_max=20.0, spacing=2.0)


@pytest.fixture
def clear_table() -> AbsorptionTable:
    return constant_table(0.0)


@pytest.fixture(scope="session")
def field_surrogate() -> SurrogateModel:
    """Surrogate trained on generated wake fields of the reference scenario at the calibrated c0."""
    scenario = ScenarioService.default_scenario()
    dataset = DatasetService.generate_dataset(
        scenario,
        DatasetService.default_conditions(),
        CalibrationService.resolve_c0(),
        points_per_condition=800,
    )
    config = OptimizerConfig(kind=OptimizerKind.ADAM, epochs=150)
    return SurrogateService.train(dataset, opt_config=config, seed=0).model
