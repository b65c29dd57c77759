from typing import Optional

import numpy as np

from thzlink.executors.base_executor import AttenuationExecutor
from thzlink.schemas.scenario import Scenario
from thzlink.schemas.surrogate import SurrogateModel
from thzlink.services.surrogate_service import SurrogateService


class SurrogateExecutor(AttenuationExecutor):
    """Oracle that samples B along the LoS from the trained diffusion surrogate"""

    def __init__(self, scenario: Scenario, model: SurrogateModel, seed: int = 0, n_path: Optional[int] = None):
        super().__init__(scenario)
        self.model = model
        self.seed = seed
        self.n_path = n_path

    def compute_reference_variances(self, mach: float, attack_deg: float) -> np.ndarray:
        return SurrogateService.predict_rytov_variances(
            mach,
            attack_deg,
            self.paths,
            self.model,
            self.reference_frequency_hz,
            self.scenario.ground_ref_m,
            self.n_path,
            self.seed,
        )
