import logging
import os
from typing import Dict, Optional, Tuple

import numpy as np

from thzlink.exceptions import ConfigError
from thzlink.executors.base_executor import AttenuationExecutor
from thzlink.schemas.enums import FieldSource
from thzlink.schemas.field import FieldGrid, GridSpec, WakeModelParams
from thzlink.schemas.scenario import Scenario
from thzlink.services.calibration_service import CalibrationService
from thzlink.services.flowfield_service import FlowfieldService
from thzlink.services.turbulence_service import TurbulenceService

logger = logging.getLogger(__name__)


def field_filename(mach: float, attack_deg: float) -> str:
    return f"field_M{mach:g}_alpha{attack_deg:g}.txt"


class FieldExecutor(AttenuationExecutor):
    """Oracle that traces the LoS through true fields, generated or imported"""

    def __init__(
        self,
        scenario: Scenario,
        source: FieldSource = FieldSource.GENERATOR,
        field_dir: Optional[str] = None,
        params: Optional[WakeModelParams] = None,
        grid_spec: Optional[GridSpec] = None,
        seed: int = 0,
        c0: Optional[float] = None,
    ):
        super().__init__(scenario)
        if source == FieldSource.IMPORT and not field_dir:
            raise ConfigError("Imported fields need a field directory")
        self.source = source
        self.field_dir = field_dir
        self.params = params or WakeModelParams()
        self.grid_spec = grid_spec
        self.seed = seed
        self.c0 = c0 if c0 is not None else CalibrationService.resolve_c0(self.params)
        self._fields: Dict[Tuple[float, float], FieldGrid] = {}

    def field(self, mach: float, attack_deg: float) -> FieldGrid:
        key = (mach, attack_deg)
        if key not in self._fields:
            if self.source == FieldSource.IMPORT:
                path = os.path.join(self.field_dir, field_filename(mach, attack_deg))
                if not os.path.exists(path):
                    raise ConfigError(f"No field file for M={mach:g}, alpha={attack_deg:g}: {path}")
                self._fields[key] = FlowfieldService.import_field(path)
            else:
                self._fields[key] = FlowfieldService.generate_wake_field(
                    mach, attack_deg, self.grid_spec, self.params, self.seed
                )
        return self._fields[key]

    def compute_reference_variances(self, mach: float, attack_deg: float) -> np.ndarray:
        field = self.field(mach, attack_deg)
        return np.array(
            [
                TurbulenceService.rytov_variance(
                    field,
                    path,
                    self.reference_frequency_hz,
                    self.scenario.altitude_m,
                    self.scenario.ground_ref_m,
                    c0=self.c0,
                )
                for path in self.paths
            ]
        )
