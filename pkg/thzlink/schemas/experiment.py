from pydantic import BaseModel, Field, field_validator
from typing import Any, List, Optional

from thzlink.schemas.enums import FieldSource, StrategyName
from thzlink.schemas.optimizer import FlightPlan, IterationTrace


class ExperimentConfig(BaseModel):
    scenario_path: Optional[str] = None
    field_source: FieldSource = FieldSource.GENERATOR
    field_dir: Optional[str] = None
    model_path: Optional[str] = None
    strategies: List[StrategyName] = Field(
        default_factory=lambda: [StrategyName.OPTIMIZED, StrategyName.EXPERT, StrategyName.RANDOM, StrategyName.FIXED]
    )
    seed: int = Field(0, ge=0)
    output_dir: str = "results"
    svg: bool = False
    full_band: bool = False
    concurrent: bool = False

    @field_validator("strategies", mode="before")
    @classmethod
    def normalize_strategies(cls, value: Any) -> List[StrategyName]:
        """Accept 'a,b,c' strings and case-insensitive names."""
        if isinstance(value, str):
            value = [item.strip() for item in value.split(",") if item.strip()]
        if not value:
            raise ValueError("At least one strategy is required")
        normalized = []
        for item in value:
            if isinstance(item, StrategyName):
                normalized.append(item)
                continue
            try:
                normalized.append(StrategyName(str(item).lower()))
            except ValueError as exc:
                raise ValueError(f"Invalid strategy '{item}'. Allowed values: {[s.value for s in StrategyName]}") from exc
        return normalized


class StrategyResult(BaseModel):
    """Per-slot outcome of one strategy evaluated on the true channel"""
    strategy: StrategyName
    plan: FlightPlan
    attenuation_db: List[float] = Field(..., description="Per-slot L_turb at the reference frequency (dB)")
    capacity_bps: List[float]
    power_w: List[List[float]]
    total_bandwidth_hz: float
    capacity_bound_bps: float
    trace: Optional[IterationTrace] = None

    class Config:
        use_enum_values = False

    @property
    def mean_attenuation_db(self) -> float:
        return sum(self.attenuation_db) / len(self.attenuation_db)

    @property
    def spectral_efficiency(self) -> float:
        """Average capacity per slot over total occupied bandwidth (bit/s/Hz)."""
        return sum(self.capacity_bps) / len(self.capacity_bps) / self.total_bandwidth_hz

    @property
    def bound_fraction(self) -> float:
        return sum(self.capacity_bps) / self.capacity_bound_bps if self.capacity_bound_bps > 0 else 0.0
