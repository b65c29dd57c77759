import logging
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.optimize import bisect

from thzlink.config import Settings, settings
from thzlink.exceptions import NumericalError
from thzlink.schemas.field import GridSpec, WakeModelParams
from thzlink.schemas.scenario import Scenario
from thzlink.schemas.turbulence import CalibrationResult
from thzlink.services.flowfield_service import FlowfieldService
from thzlink.services.geometry_service import GeometryService
from thzlink.services.scenario_service import ScenarioService
from thzlink.services.turbulence_service import TurbulenceService

logger = logging.getLogger(__name__)


class CalibrationService:
    """Tunes the scale on c0 so that generated wakes reproduce the target loss band"""

    @staticmethod
    def unit_rytov_variances(
        scenario: Scenario,
        params: WakeModelParams,
        mach: float,
        f_hz: float,
        seed: int = 0,
        grid_spec: Optional[GridSpec] = None,
    ) -> np.ndarray:
        """σ² with c0 = c0_base for every (attack angle, slot); shape (n_attack, K)."""
        slots = GeometryService.all_slots(scenario)
        values = np.empty((len(scenario.feasible_attack_deg), len(slots)))
        for a, attack in enumerate(scenario.feasible_attack_deg):
            field = FlowfieldService.generate_wake_field(mach, attack, grid_spec, params, seed)
            for path in slots:
                values[a, path.slot_index - 1] = TurbulenceService.rytov_variance(
                    field, path, f_hz, scenario.altitude_m, scenario.ground_ref_m, c0=settings.c0_base
                )
        return values

    @staticmethod
    def losses_for_scale(unit_sigma2: np.ndarray, scale: float, f_hz: float, ranges_m: np.ndarray) -> np.ndarray:
        """Loss in dB for every entry of unit_sigma2 once c0 carries the given scale."""
        losses = np.empty_like(unit_sigma2)
        for index, sigma2 in np.ndenumerate(unit_sigma2):
            params = TurbulenceService.fading_parameters(scale * sigma2, f_hz, ranges_m[index[-1]])
            losses[index], _ = TurbulenceService.loss_from_scintillation(TurbulenceService.scintillation(params))
        return losses

    @staticmethod
    def calibrate(
        scenario: Scenario,
        params: Optional[WakeModelParams] = None,
        seed: int = 0,
        config: Optional[Settings] = None,
        grid_spec: Optional[GridSpec] = None,
    ) -> CalibrationResult:
        """
        Bisect the c0 scale so that the midpoint of the min and max loss sits at the band centre.

        σ² is linear in c0, so the fields are traced once at unit scale and the
        bisection only re-evaluates the closed-form loss.

        Raises:
            NumericalError: the wake produces no turbulence, or no bracket is found
        """
        config = config or settings
        params = params or WakeModelParams()
        low_db, high_db = config.calibration_band_db
        target = (low_db + high_db) / 2.0
        f_ref = config.reference_frequency_hz
        ranges = np.array([path.range_m for path in GeometryService.all_slots(scenario)])

        unit = CalibrationService.unit_rytov_variances(scenario, params, config.calibration_mach, f_ref, seed, grid_spec)
        if not np.any(unit > 0):
            raise NumericalError("Wake field yields zero Rytov variance on every slot; cannot calibrate c0")

        def objective(scale: float) -> float:
            losses = CalibrationService.losses_for_scale(unit, scale, f_ref, ranges)
            return (losses.min() + losses.max()) / 2.0 - target

        # start where the strongest slot sees σ² = 0.1, far below the band
        low = 0.1 / unit.max()
        if objective(low) >= 0:
            raise NumericalError(f"Loss midpoint already above {target} dB at scale {low:.3e}")
        high = low
        for _ in range(config.max_bracket_doublings):
            high *= 2.0
            if objective(high) > 0:
                break
            low = high
        else:
            raise NumericalError("Could not bracket the c0 calibration scale")

        scale = bisect(objective, low, high, xtol=1e-14, rtol=1e-12, maxiter=200)
        losses = CalibrationService.losses_for_scale(unit, scale, f_ref, ranges)
        result = CalibrationResult(
            scale=scale,
            c0=config.c0_base * scale,
            min_loss_db=float(losses.min()),
            max_loss_db=float(losses.max()),
            target_db=target,
            mach=config.calibration_mach,
            reference_frequency_hz=f_ref,
        )
        if not result.in_band(low_db, high_db):
            logger.warning(
                f"Calibrated losses [{result.min_loss_db:.2f}, {result.max_loss_db:.2f}] dB leave the "
                f"{low_db:g}-{high_db:g} dB band",
                extra={"scale": scale},
            )
        logger.info(
            f"Calibrated c0 scale {scale:.6g} (c0={result.c0:.6g}); losses "
            f"{result.min_loss_db:.2f}-{result.max_loss_db:.2f} dB at M={config.calibration_mach:g}",
            extra={"scale": scale, "c0": result.c0},
        )
        return result

    @staticmethod
    def reference_calibration() -> CalibrationResult:
        """Calibration of the reference scenario with default wake parameters, run once per process."""
        return _reference_calibration()

    @staticmethod
    def resolve_c0(params: Optional[WakeModelParams] = None) -> float:
        """
        c0 used by the true-field oracle.

        Order: THZLINK_C0_SCALE, then the wake parameters' calibration_scale, then the
        frozen reference calibration. The simulated scenario never feeds back into c0.
        """
        if settings.c0_scale is not None:
            return settings.c0_base * settings.c0_scale
        if params is not None and params.calibration_scale is not None:
            return settings.c0_base * params.calibration_scale
        return CalibrationService.reference_calibration().c0


@lru_cache(maxsize=1)
def _reference_calibration() -> CalibrationResult:
    return CalibrationService.calibrate(
        ScenarioService.default_scenario(), WakeModelParams(), settings.calibration_seed
    )
