from typing import Dict, Tuple

import numpy as np

from thzlink.config import settings
from thzlink.schemas.scenario import Scenario
from thzlink.services.geometry_service import GeometryService
from thzlink.services.turbulence_service import TurbulenceService


class AttenuationExecutor:
    """
    Turbulence-loss oracle for one scenario.

    Subclasses supply the per-slot Rytov variance at the reference frequency; the
    per-band losses follow from the f^{7/6} law. Results are cached per (M, α).
    """

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.reference_frequency_hz = settings.reference_frequency_hz
        self.paths = GeometryService.all_slots(scenario)
        self._variances: Dict[Tuple[float, float], np.ndarray] = {}
        self._losses: Dict[Tuple[float, float], Tuple[np.ndarray, np.ndarray]] = {}

    def compute_reference_variances(self, mach: float, attack_deg: float) -> np.ndarray:
        raise NotImplementedError

    def reference_variances(self, mach: float, attack_deg: float) -> np.ndarray:
        key = (mach, attack_deg)
        if key not in self._variances:
            self._variances[key] = np.asarray(self.compute_reference_variances(mach, attack_deg), dtype=float)
        return self._variances[key]

    def band_losses(self, mach: float, attack_deg: float) -> Tuple[np.ndarray, np.ndarray]:
        """(dB, linear) K×I turbulence losses over the scenario's sub-bands."""
        key = (mach, attack_deg)
        if key not in self._losses:
            sigma2 = self.reference_variances(mach, attack_deg)
            rows_db, rows_linear = [], []
            for path, value in zip(self.paths, sigma2):
                loss_db, loss_linear, _ = TurbulenceService.attenuation_for_bands(
                    float(value), self.reference_frequency_hz, self.scenario.centers_hz, path.range_m
                )
                rows_db.append(loss_db)
                rows_linear.append(loss_linear)
            self._losses[key] = (np.vstack(rows_db), np.vstack(rows_linear))
        return self._losses[key]

    def reference_attenuation_db(self, mach: float, attack_deg: float) -> np.ndarray:
        """Per-slot loss (dB) at the reference frequency."""
        sigma2 = self.reference_variances(mach, attack_deg)
        f_ref = self.reference_frequency_hz
        return np.array(
            [
                TurbulenceService.attenuation_for_bands(float(value), f_ref, [f_ref], path.range_m)[0][0]
                for path, value in zip(self.paths, sigma2)
            ]
        )

    def __call__(self, mach: float, attack_deg: float) -> np.ndarray:
        return self.band_losses(mach, attack_deg)[1]
