import logging
from functools import lru_cache
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from thzlink.config import Settings, settings
from thzlink.exceptions import DomainError
from thzlink.schemas.absorption import AbsorptionTable

logger = logging.getLogger(__name__)


class AbsorptionService:
    """Molecular absorption tables: built-in Lorentzian default and file-backed tables"""

    @staticmethod
    def lorentzian_mu(frequencies_hz, altitudes_m, config: Optional[Settings] = None) -> np.ndarray:
        """μ_abs(f, h) from the configured water-vapour lines, decaying with a scale height."""
        config = config or settings
        f = np.asarray(frequencies_hz, dtype=float)[:, None]
        h = np.asarray(altitudes_m, dtype=float)[None, :]
        lines = np.zeros_like(f)
        for center, width, strength in zip(
            config.absorption_line_centers_hz,
            config.absorption_line_widths_hz,
            config.absorption_line_strengths,
        ):
            lines = lines + strength * width ** 2 / ((f - center) ** 2 + width ** 2)
        return (lines + config.absorption_background_per_m) * np.exp(-h / config.absorption_scale_height_m)

    @staticmethod
    def default_table(
        f_range_hz: Tuple[float, float] = (50.0e9, 1000.0e9),
        h_max_m: float = 12000.0,
    ) -> AbsorptionTable:
        return _default_table(float(f_range_hz[0]), float(f_range_hz[1]), float(h_max_m))

    @staticmethod
    def load_table(path: str) -> AbsorptionTable:
        """
        Load a `f_Hz h_m mu_per_m` table sorted by (f, h).

        Args:
            path: Table file path

        Returns:
            Validated AbsorptionTable
        """
        data = np.loadtxt(Path(path), comments="#", ndmin=2)
        if data.shape[1] != 3:
            raise DomainError(f"Absorption table '{path}' must have 3 columns, found {data.shape[1]}")
        freqs = np.unique(data[:, 0])
        alts = np.unique(data[:, 1])
        if freqs.size * alts.size != data.shape[0]:
            raise DomainError(f"Absorption table '{path}' is not a full frequency × altitude grid")
        expected_f = np.repeat(freqs, alts.size)
        expected_h = np.tile(alts, freqs.size)
        if not (np.array_equal(data[:, 0], expected_f) and np.array_equal(data[:, 1], expected_h)):
            raise DomainError(f"Absorption table '{path}' must be sorted by (f, h)")
        logger.info(f"Loaded absorption table {path}: {freqs.size} frequencies × {alts.size} altitudes")
        return AbsorptionTable(
            frequencies_hz=freqs,
            altitudes_m=alts,
            mu_per_m=data[:, 2].reshape(freqs.size, alts.size),
        )

    @staticmethod
    def save_table(table: AbsorptionTable, path: str) -> None:
        f = np.repeat(table.frequencies_hz, table.altitudes_m.size)
        h = np.tile(table.altitudes_m, table.frequencies_hz.size)
        np.savetxt(path, np.column_stack([f, h, table.mu_per_m.ravel()]), fmt="%.17g", header="f_Hz h_m mu_per_m")

    @staticmethod
    def mu(table: AbsorptionTable, f_hz: float, altitudes_m) -> np.ndarray:
        """Bilinear μ_abs at one frequency and an array of altitudes; out of range is an error."""
        return AbsorptionService.mu_grid(table, [f_hz], altitudes_m)[0]

    @staticmethod
    def mu_grid(table: AbsorptionTable, frequencies_hz, altitudes_m) -> np.ndarray:
        """Bilinear μ_abs on the outer product frequencies × altitudes."""
        freqs = np.atleast_1d(np.asarray(frequencies_hz, dtype=float))
        altitudes_m = np.atleast_1d(np.asarray(altitudes_m, dtype=float))
        if freqs.min() < table.frequencies_hz[0] or freqs.max() > table.frequencies_hz[-1]:
            raise DomainError(
                f"Frequencies [{freqs.min():.6g}, {freqs.max():.6g}] Hz outside absorption table "
                f"[{table.frequencies_hz[0]:.6g}, {table.frequencies_hz[-1]:.6g}]"
            )
        if altitudes_m.min() < table.altitudes_m[0] or altitudes_m.max() > table.altitudes_m[-1]:
            raise DomainError(
                f"Altitudes [{altitudes_m.min():.6g}, {altitudes_m.max():.6g}] m outside absorption table "
                f"[{table.altitudes_m[0]:.6g}, {table.altitudes_m[-1]:.6g}]"
            )
        interpolator = RegularGridInterpolator(
            (table.frequencies_hz, table.altitudes_m), table.mu_per_m, method="linear", bounds_error=True
        )
        ff, hh = np.meshgrid(freqs, altitudes_m, indexing="ij")
        return interpolator(np.column_stack([ff.ravel(), hh.ravel()])).reshape(ff.shape)


@lru_cache(maxsize=8)
def _default_table(f_min: float, f_max: float, h_max: float) -> AbsorptionTable:
    freqs = np.arange(f_min, f_max + 0.125e9, 0.25e9)
    alts = np.linspace(0.0, h_max, 25)
    return AbsorptionTable(
        frequencies_hz=freqs,
        altitudes_m=alts,
        mu_per_m=AbsorptionService.lorentzian_mu(freqs, alts),
    )
