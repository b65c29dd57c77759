from pydantic import BaseModel, Field, field_validator, model_validator
from typing import List, Optional

import numpy as np


class SubBand(BaseModel):
    center_hz: float = Field(..., gt=0, description="Sub-band center frequency f_i (Hz)")
    width_hz: float = Field(..., gt=0, description="Sub-band width Δf_i (Hz)")


class WeatherModel(BaseModel):
    rain_rate_mm_h: float = Field(0.0, ge=0, description="Rain rate (mm/h)")
    cloud_density_g_m3: float = Field(0.0, ge=0, description="Cloud liquid water density (g/m^3)")


class Scenario(BaseModel):
    """Full experiment description (geometry, slots, band, link budget, flight sets)"""
    flight_length_m: float = Field(6000.0, gt=0, description="Flight length L (m)")
    altitude_m: float = Field(1000.0, gt=0, description="Flight altitude H (m)")
    ground_ref_m: float = Field(0.0, description="Ground reference height h0 (m)")
    slot_count: int = Field(21, ge=1, description="Number of slots K")
    slot_length_s: float = Field(1.0, gt=0, description="Slot length δt (s)")
    sub_bands: List[SubBand]
    tx_gain_db: float = 30.0
    rx_gain_db: float = 30.0
    noise_psd_dbm_hz: float = -169.0
    avg_power_dbm: float = Field(10.0, description="Average power budget P̄ per slot (dBm)")
    avg_mach_floor: float = Field(0.6, description="Average Mach floor M̄")
    feasible_mach: List[float] = [0.5, 0.7]
    feasible_attack_deg: List[float] = [0.0, -10.0, 10.0]
    weather: WeatherModel = WeatherModel()
    absorption_table_path: Optional[str] = None

    @field_validator("feasible_mach", "feasible_attack_deg")
    @classmethod
    def non_empty_distinct(cls, value: List[float]) -> List[float]:
        """Feasible sets must be non-empty, finite and free of duplicates."""
        if not value:
            raise ValueError("Feasible set must not be empty")
        if not all(np.isfinite(value)):
            raise ValueError(f"Feasible set contains non-finite values: {value}")
        if len(set(value)) != len(value):
            raise ValueError(f"Feasible set contains duplicates: {value}")
        return value

    @model_validator(mode="after")
    def check_invariants(self) -> "Scenario":
        if not self.sub_bands:
            raise ValueError("At least one sub-band is required")
        centers = [band.center_hz for band in self.sub_bands]
        if any(b <= a for a, b in zip(centers, centers[1:])):
            raise ValueError("Sub-band centers must be strictly increasing")
        if self.avg_mach_floor > max(self.feasible_mach):
            raise ValueError(
                f"Average Mach floor {self.avg_mach_floor} exceeds max feasible Mach {max(self.feasible_mach)}"
            )
        if self.ground_ref_m >= self.altitude_m:
            raise ValueError("Ground reference h0 must be below altitude H")
        if any(m < 0 for m in self.feasible_mach):
            raise ValueError("Mach numbers must be non-negative")
        return self

    @property
    def centers_hz(self) -> np.ndarray:
        return np.array([band.center_hz for band in self.sub_bands])

    @property
    def widths_hz(self) -> np.ndarray:
        return np.array([band.width_hz for band in self.sub_bands])

    @property
    def band_count(self) -> int:
        return len(self.sub_bands)


class SlotGeometry(BaseModel):
    """Aircraft and base-station positions for one slot, and the LoS segment between them"""
    slot_index: int = Field(..., ge=1)
    aircraft_x_m: float
    altitude_m: float
    bs_x_m: float
    range_m: float

    def point_at(self, u):
        """World (x, h) at fractional position u ∈ [0, 1] from aircraft to base station."""
        u = np.asarray(u, dtype=float)
        x = self.aircraft_x_m + u * (self.bs_x_m - self.aircraft_x_m)
        h = self.altitude_m * (1.0 - u)
        return x, h
