from pydantic import BaseModel, Field
from typing import Optional, Tuple

import numpy as np

from thzlink.config import settings


class FlightCondition(BaseModel):
    mach: float = Field(..., ge=0, description="Mach number M")
    attack_deg: float = Field(..., description="Attack angle α (degrees)")

    class Config:
        frozen = True


class GridSpec(BaseModel):
    """Body-frame grid extent (x1 forward, x2 up, origin at the aircraft antenna)"""
    x1_min: float = settings.grid_x1_min_m
    x1_max: float = settings.grid_x1_max_m
    x2_min: float = settings.grid_x2_min_m
    x2_max: float = settings.grid_x2_max_m
    spacing: float = Field(settings.grid_spacing_m, gt=0)

    def axes(self) -> Tuple[np.ndarray, np.ndarray]:
        n1 = int(round((self.x1_max - self.x1_min) / self.spacing)) + 1
        n2 = int(round((self.x2_max - self.x2_min) / self.spacing)) + 1
        return (
            np.linspace(self.x1_min, self.x1_max, max(n1, 0)),
            np.linspace(self.x2_min, self.x2_max, max(n2, 0)),
        )


class WakeModelParams(BaseModel):
    """Parametric wake generator coefficients (amplitudes are per unit M²)"""
    t_inf: float = Field(281.65, gt=0, description="Freestream temperature (K)")
    p_inf: float = Field(89874.6, gt=0, description="Freestream pressure (Pa)")
    w_inf: float = Field(10.0, gt=0, description="Freestream dissipation rate (1/s)")
    mach_exponent: float = Field(2.0, gt=0)
    # body core around the antenna reference point
    core_energy: float = Field(40.0, ge=0, description="Core turbulent kinetic energy (m²/s²)")
    core_dissipation: float = Field(20.0, ge=0, description="Core dissipation-rate excess (1/s)")
    core_radius: float = Field(6.0, gt=0)
    # lift-induced pressure dipole
    lift_gradient: float = Field(60.0, ge=0, description="Peak vertical pressure gradient (Pa/m)")
    lift_radius: float = Field(8.0, gt=0)
    lift_attack_gain: float = Field(4.0e-4, description="Relative lift change per degree")
    # wake plume
    wake_temperature: float = Field(0.2, ge=0, description="Plume temperature excess (K)")
    wake_energy: float = Field(0.5, ge=0)
    wake_width: float = Field(3.0, gt=0, description="Plume width at the tail (m)")
    wake_growth: float = Field(0.04, ge=0, description="Width growth per metre downstream")
    wake_attack_growth: float = Field(0.002, ge=0, description="Extra width growth per degree of |α|")
    wake_attack_gain: float = Field(0.03, ge=0, description="Relative plume strength per degree of |α|")
    wake_onset: float = Field(40.0, gt=0, description="Downstream plume build-up length (m)")
    tail_height: float = Field(6.0, description="Plume origin above the reference point (m)")
    deflection_gain: float = Field(0.01, ge=0, description="Centerline drop (m per m downstream per degree)")
    # band-limited modulation
    noise_amplitude: float = Field(0.005, ge=0, lt=1)
    noise_attack_gain: float = Field(0.1, ge=0, description="Noise amplitude growth per degree of |α|")
    noise_length: float = Field(4.0, gt=0, description="Noise correlation length (m)")
    calibration_scale: Optional[float] = Field(None, gt=0, description="c0 calibration scale")


class FieldGrid(BaseModel):
    """Structured 2-D turbulence fields for one flight condition; arrays indexed [i (x1), j (x2)]"""
    x1_axis: np.ndarray
    x2_axis: np.ndarray
    temperature: np.ndarray
    pressure: np.ndarray
    energy: np.ndarray
    dissipation: np.ndarray
    condition: FlightCondition
    t_inf: float = 281.65
    p_inf: float = 89874.6
    w_inf: float = 10.0
    energy_floor: float = settings.energy_floor

    class Config:
        arbitrary_types_allowed = True
        frozen = True

    @property
    def shape(self) -> Tuple[int, int]:
        return self.temperature.shape

    @property
    def x2_spacing(self) -> float:
        return float(self.x2_axis[1] - self.x2_axis[0])

    def contains(self, x1, x2) -> np.ndarray:
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        return (
            (x1 >= self.x1_axis[0]) & (x1 <= self.x1_axis[-1])
            & (x2 >= self.x2_axis[0]) & (x2 <= self.x2_axis[-1])
        )
