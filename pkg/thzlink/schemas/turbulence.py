from pydantic import BaseModel, Field
from typing import Tuple


class FadingParams(BaseModel):
    """Large/small-scale fading parameters; α_ls and β_ss are +inf when σ² = 0"""
    sigma2: float = Field(..., ge=0, description="Rytov variance")
    D: float = Field(..., ge=0, description="Aperture parameter")
    alpha_ls: float = Field(..., gt=0)
    beta_ss: float = Field(..., gt=0)
    inv_alpha_ls: float = Field(..., ge=0, description="1/α_ls, exact 0 when σ² = 0")
    inv_beta_ss: float = Field(..., ge=0, description="1/β_ss, exact 0 when σ² = 0")
    l: float = Field(..., gt=0, description="Length scale λ/π (m)")
    f: float = Field(..., gt=0)
    r: float = Field(..., gt=0)


class StructureSample(BaseModel):
    point: Tuple[float, float]
    B: float = Field(..., ge=0)
    T: float
    P: float
    E: float
    W: float
    c0: float


class TurbulenceLoss(BaseModel):
    loss_db: float = Field(..., ge=0)
    loss_linear: float = Field(..., ge=1)
    scintillation: float = Field(..., ge=0, description="s = 1/α + 1/β + 1/(αβ)")
    clamped: bool = False


class CalibrationResult(BaseModel):
    """Outcome of tuning the c0 scale against the target loss band"""
    scale: float = Field(..., gt=0)
    c0: float = Field(..., gt=0)
    min_loss_db: float
    max_loss_db: float
    target_db: float
    mach: float
    reference_frequency_hz: float

    def in_band(self, low_db: float, high_db: float) -> bool:
        return low_db <= self.min_loss_db and self.max_loss_db <= high_db
