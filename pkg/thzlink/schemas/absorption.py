from pydantic import BaseModel, model_validator

import numpy as np


class AbsorptionTable(BaseModel):
    """Molecular absorption μ_abs(f, h) on a frequency × altitude grid (1/m)"""
    frequencies_hz: np.ndarray
    altitudes_m: np.ndarray
    mu_per_m: np.ndarray

    class Config:
        arbitrary_types_allowed = True
        frozen = True

    @model_validator(mode="after")
    def check_table(self) -> "AbsorptionTable":
        if self.mu_per_m.shape != (self.frequencies_hz.size, self.altitudes_m.size):
            raise ValueError(
                f"Absorption table shape {self.mu_per_m.shape} does not match axes "
                f"({self.frequencies_hz.size}, {self.altitudes_m.size})"
            )
        if np.any(np.diff(self.frequencies_hz) <= 0) or np.any(np.diff(self.altitudes_m) <= 0):
            raise ValueError("Absorption table axes must be strictly increasing")
        if np.any(self.mu_per_m < 0):
            f_idx, h_idx = np.argwhere(self.mu_per_m < 0)[0]
            raise ValueError(
                f"Negative absorption coefficient at f={self.frequencies_hz[f_idx]:.6g} Hz, "
                f"h={self.altitudes_m[h_idx]:.6g} m"
            )
        return self
