from pydantic import BaseModel, Field, model_validator
from typing import List, Optional

import numpy as np


class KKTReport(BaseModel):
    """Scaled residuals of the water-filling optimality conditions"""
    stationarity: float
    budget_complementarity: float
    slackness: float
    primal_feasibility: float
    dual_feasibility: float
    tolerance: float
    passed: bool


class WaterfillSolution(BaseModel):
    power: np.ndarray = Field(..., description="K×I transmit powers (W)")
    lambda_: float = Field(..., ge=0, description="Water-level multiplier")
    mu: np.ndarray = Field(..., description="K×I non-negativity multipliers")
    kkt_report: Optional[KKTReport] = None
    iterations: int = 0

    class Config:
        arbitrary_types_allowed = True


class FlightPlan(BaseModel):
    mach: List[float] = Field(..., min_length=1)
    attack_deg: List[float]

    @model_validator(mode="after")
    def one_pair_per_slot(self) -> "FlightPlan":
        if len(self.attack_deg) != len(self.mach):
            raise ValueError(f"{len(self.mach)} Mach values but {len(self.attack_deg)} attack angles")
        return self

    @property
    def average_mach(self) -> float:
        return float(np.mean(self.mach))

    @property
    def slot_count(self) -> int:
        return len(self.mach)

    def meets_floor(self, avg_mach_floor: float, tolerance: float = 1e-12) -> bool:
        return self.average_mach >= avg_mach_floor - tolerance

    def pairs(self):
        return list(zip(self.mach, self.attack_deg))

    def summary(self) -> str:
        return ";".join(f"{m:g}/{a:g}" for m, a in self.pairs())


class IterationRecord(BaseModel):
    iteration: int
    total_capacity_bps: float
    lambda_: float
    plan_summary: str
    power_hash: str


class IterationTrace(BaseModel):
    records: List[IterationRecord] = []
    delta: float
    capacity_bound: float = Field(..., description="Loss-free upper bound C_max(P̄) in bit/s")
    converged: bool = False

    @property
    def capacities(self) -> List[float]:
        return [record.total_capacity_bps for record in self.records]


class JointResult(BaseModel):
    trace: IterationTrace
    solution: WaterfillSolution
    plan: FlightPlan
