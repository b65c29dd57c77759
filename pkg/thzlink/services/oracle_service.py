import logging
from typing import Optional

from thzlink.exceptions import ConfigError
from thzlink.executors.base_executor import AttenuationExecutor
from thzlink.executors.field_executor import FieldExecutor
from thzlink.executors.surrogate_executor import SurrogateExecutor
from thzlink.schemas.enums import FieldSource, OracleType
from thzlink.schemas.field import GridSpec, WakeModelParams
from thzlink.schemas.scenario import Scenario
from thzlink.schemas.surrogate import SurrogateModel

logger = logging.getLogger(__name__)


class OracleService:
    """Builds attenuation oracles by type"""

    @staticmethod
    def build(
        oracle_type: OracleType,
        scenario: Scenario,
        source: FieldSource = FieldSource.GENERATOR,
        field_dir: Optional[str] = None,
        model: Optional[SurrogateModel] = None,
        params: Optional[WakeModelParams] = None,
        grid_spec: Optional[GridSpec] = None,
        seed: int = 0,
        c0: Optional[float] = None,
    ) -> AttenuationExecutor:
        """
        Create the oracle for a strategy.

        Args:
            oracle_type: FIELD traces true fields, SURROGATE samples the trained model
            scenario: Scenario the oracle serves
            source: Where true fields come from
            field_dir: Directory of imported field files
            model: Trained surrogate (SURROGATE only)
            params: Wake generator coefficients
            grid_spec: Generator grid
            seed: Generator and sampler seed
            c0: Structure-parameter constant; calibrated when omitted

        Returns:
            Callable oracle (M, α) -> K×I linear losses
        """
        if oracle_type == OracleType.FIELD:
            return FieldExecutor(scenario, source, field_dir, params, grid_spec, seed, c0)
        if oracle_type == OracleType.SURROGATE:
            if model is None:
                raise ConfigError("The surrogate oracle needs a trained model (--model)")
            return SurrogateExecutor(scenario, model, seed)
        raise ConfigError(f"Unsupported oracle type: {oracle_type}")
