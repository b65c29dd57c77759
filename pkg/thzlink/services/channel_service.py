import logging
from typing import Optional

import numpy as np
from scipy.integrate import trapezoid

from thzlink.config import Settings, settings
from thzlink.exceptions import DomainError
from thzlink.schemas.absorption import AbsorptionTable
from thzlink.schemas.scenario import Scenario, SlotGeometry
from thzlink.services.absorption_service import AbsorptionService
from thzlink.services.geometry_service import GeometryService
from thzlink.utils.units import SPEED_OF_LIGHT, db_to_linear, dbm_to_watts, linear_to_db

logger = logging.getLogger(__name__)


class ChannelService:
    """Frequency-selective THz link budget"""

    @staticmethod
    def fspl_db(f_hz, r_m):
        """
        Free-space path loss 20·log10(4πrf/c).

        Args:
            f_hz: Frequency (Hz), scalar or array
            r_m: Range (m), scalar or array

        Returns:
            Loss in dB
        """
        f = np.asarray(f_hz, dtype=float)
        r = np.asarray(r_m, dtype=float)
        if np.any(f <= 0) or np.any(r <= 0):
            raise DomainError(f"Path loss needs positive frequency and range, got f={f_hz}, r={r_m}")
        value = 20.0 * np.log10(4.0 * np.pi * r * f / SPEED_OF_LIGHT)
        return float(value) if value.ndim == 0 else value

    @staticmethod
    def absorption_transmittance(
        f_hz: float,
        path: SlotGeometry,
        table: AbsorptionTable,
        n_quad: Optional[int] = None,
    ) -> float:
        """exp(−∫ μ_abs dr) along the slant LoS path, μ taken at the local altitude."""
        n_quad = n_quad or settings.absorption_quad_points
        if n_quad < 2:
            raise DomainError(f"Absorption quadrature needs at least 2 samples, got {n_quad}")
        u = np.linspace(0.0, 1.0, n_quad)
        _, altitudes = path.point_at(u)
        mu = AbsorptionService.mu(table, f_hz, altitudes)
        optical_depth = trapezoid(mu, dx=path.range_m / (n_quad - 1))
        return float(np.exp(-optical_depth))

    @staticmethod
    def weather_loss_db(
        f_hz: float,
        rain_rate: float,
        cloud_density: float,
        path_length_m: float,
        config: Optional[Settings] = None,
    ) -> float:
        """(k_r·R^a_r + k_c·ρ_c) dB/km over the path; coefficients do not depend on f."""
        config = config or settings
        if rain_rate < 0 or cloud_density < 0 or path_length_m < 0:
            raise DomainError(
                f"Weather inputs must be non-negative: rain={rain_rate}, cloud={cloud_density}, length={path_length_m}"
            )
        gamma_rain = config.rain_coefficient_db_per_km * rain_rate ** config.rain_exponent if rain_rate > 0 else 0.0
        gamma_cloud = config.cloud_coefficient_db_per_km * cloud_density
        return (gamma_rain + gamma_cloud) * path_length_m / 1000.0

    @staticmethod
    def absorption_table(scenario: Scenario) -> AbsorptionTable:
        if scenario.absorption_table_path:
            return AbsorptionService.load_table(scenario.absorption_table_path)
        return AbsorptionService.default_table(h_max_m=max(12000.0, scenario.altitude_m))

    @staticmethod
    def coefficient_A(
        scenario: Scenario,
        k: int,
        i: int,
        table: Optional[AbsorptionTable] = None,
    ) -> float:
        """A_k^i = c²·G_Tx·G_Rx·τ / ((4π r_k f_i)²·L_rain·L_cloud), linear; i is 0-based."""
        table = table if table is not None else ChannelService.absorption_table(scenario)
        path = GeometryService.slot_geometry(scenario, k)
        f = scenario.sub_bands[i].center_hz
        gains_db = scenario.tx_gain_db + scenario.rx_gain_db
        weather_db = ChannelService.weather_loss_db(
            f, scenario.weather.rain_rate_mm_h, scenario.weather.cloud_density_g_m3, path.range_m
        )
        transmittance = ChannelService.absorption_transmittance(f, path, table)
        value = (
            db_to_linear(gains_db - weather_db)
            * transmittance
            * (SPEED_OF_LIGHT / (4.0 * np.pi * path.range_m * f)) ** 2
        )
        return float(value)

    @staticmethod
    def coefficient_matrix(scenario: Scenario, table: Optional[AbsorptionTable] = None) -> np.ndarray:
        """K×I matrix of A_k^i, vectorised over bands (same quadrature as coefficient_A)."""
        table = table if table is not None else ChannelService.absorption_table(scenario)
        freqs = scenario.centers_hz
        n_quad = settings.absorption_quad_points
        u = np.linspace(0.0, 1.0, n_quad)
        gains_db = scenario.tx_gain_db + scenario.rx_gain_db
        A = np.empty((scenario.slot_count, scenario.band_count))
        for path in GeometryService.all_slots(scenario):
            _, altitudes = path.point_at(u)
            mu = AbsorptionService.mu_grid(table, freqs, altitudes)
            transmittance = np.exp(-trapezoid(mu, dx=path.range_m / (n_quad - 1), axis=1))
            weather_db = ChannelService.weather_loss_db(
                freqs[0], scenario.weather.rain_rate_mm_h, scenario.weather.cloud_density_g_m3, path.range_m
            )
            A[path.slot_index - 1] = (
                db_to_linear(gains_db - weather_db)
                * transmittance
                * (SPEED_OF_LIGHT / (4.0 * np.pi * path.range_m * freqs)) ** 2
            )
        logger.debug(f"Coefficient matrix {A.shape}: min {A.min():.3e}, max {A.max():.3e}")
        return A

    @staticmethod
    def noise_per_band(scenario: Scenario) -> np.ndarray:
        """N_i = N0·Δf_i in watts."""
        return dbm_to_watts(scenario.noise_psd_dbm_hz) * scenario.widths_hz

    @staticmethod
    def capacity_terms(A, L, P, N, df) -> np.ndarray:
        """Elementwise Δf·log2(1 + A·P/(L·N)), broadcast over slots and bands."""
        P = np.asarray(P, dtype=float)
        if np.any(P < 0):
            raise DomainError("Transmit power must be non-negative")
        snr = np.asarray(A) * P / (np.asarray(L) * np.asarray(N))
        return np.asarray(df) * np.log2(1.0 + snr)

    @staticmethod
    def slot_capacity(
        scenario: Scenario,
        k: int,
        power_row,
        L_turb_row,
        A_row=None,
    ) -> float:
        """
        Capacity of slot k in bit/s.

        Args:
            scenario: Scenario
            k: Slot index (1-based)
            power_row: Per-band transmit power (W)
            L_turb_row: Per-band linear turbulence loss (≥ 1)
            A_row: Precomputed A_k^i row, computed when omitted

        Returns:
            Σ_i Δf_i·log2(1 + A·P/(L·N_i))
        """
        L_turb_row = np.asarray(L_turb_row, dtype=float)
        if np.any(L_turb_row < 1.0):
            raise DomainError("Linear turbulence loss must be at least 1")
        if A_row is None:
            table = ChannelService.absorption_table(scenario)
            A_row = [ChannelService.coefficient_A(scenario, k, i, table) for i in range(scenario.band_count)]
        terms = ChannelService.capacity_terms(
            A_row, L_turb_row, power_row, ChannelService.noise_per_band(scenario), scenario.widths_hz
        )
        return float(np.sum(terms))

    @staticmethod
    def attenuation_spectrum(
        scenario: Scenario,
        k: int,
        L_turb_db_row,
        table: Optional[AbsorptionTable] = None,
    ) -> dict:
        """Per-band FSPL, absorption and turbulence losses (dB) for slot k."""
        table = table if table is not None else ChannelService.absorption_table(scenario)
        path = GeometryService.slot_geometry(scenario, k)
        freqs = scenario.centers_hz
        absorption = np.array(
            [-linear_to_db(ChannelService.absorption_transmittance(f, path, table)) for f in freqs]
        )
        return {
            "frequency_hz": freqs,
            "fspl_db": ChannelService.fspl_db(freqs, path.range_m),
            "absorption_db": absorption,
            "turbulence_db": np.asarray(L_turb_db_row, dtype=float),
        }
