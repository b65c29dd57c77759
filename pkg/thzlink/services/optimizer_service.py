import csv
import hashlib
import logging
import os
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from thzlink.config import settings
from thzlink.exceptions import DomainError, InfeasibleError, NumericalError
from thzlink.schemas.optimizer import (
    FlightPlan,
    IterationRecord,
    IterationTrace,
    JointResult,
    KKTReport,
    WaterfillSolution,
)
from thzlink.schemas.scenario import Scenario
from thzlink.services.channel_service import ChannelService
from thzlink.utils.units import dbm_to_watts

logger = logging.getLogger(__name__)

# (mach, attack_deg) -> K×I linear turbulence losses
LossOracle = Callable[[float, float], np.ndarray]

LN2 = np.log(2.0)
_LATTICE_QUANTUM = 1e-9


def power_hash(power: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(power, dtype=float).tobytes()).hexdigest()[:16]


class OptimizerService:
    """Power allocation (water-filling), flight-configuration search and their alternation"""

    @staticmethod
    def _validate(A, L, N, df, avg_power_w):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        L = np.atleast_2d(np.asarray(L, dtype=float))
        N = np.asarray(N, dtype=float)
        df = np.asarray(df, dtype=float)
        for name, values in (("A", A), ("L", L), ("N", N), ("df", df)):
            if not np.all(np.isfinite(values)):
                raise NumericalError(f"Non-finite entries in {name}")
        if not np.isfinite(avg_power_w) or avg_power_w <= 0:
            raise DomainError(f"Average power must be positive, got {avg_power_w}")
        if A.shape != L.shape or A.shape[1] != N.shape[-1] or A.shape[1] != df.shape[-1]:
            raise DomainError(f"Inconsistent shapes A{A.shape}, L{L.shape}, N{N.shape}, df{df.shape}")
        if np.any(A <= 0) or np.any(L < 1.0) or np.any(N <= 0) or np.any(df <= 0):
            raise DomainError("Need A > 0, L >= 1, N > 0 and df > 0 elementwise")
        return A, L, N, df

    @staticmethod
    def waterfill(
        A,
        L,
        avg_power_w: float,
        N,
        df,
        tolerance: Optional[float] = None,
        max_doublings: Optional[int] = None,
    ) -> WaterfillSolution:
        """
        Generalized water-filling P = [KΔf/(λ ln2) − L·N/A]⁺ with (1/K)ΣP = P̄.

        λ is bracketed geometrically from the all-active estimate (a lower bound of
        the root) and refined by bisection on the decreasing budget function; the
        final λ is solved exactly on the resulting active set.

        Raises:
            DomainError: invalid inputs
            NumericalError: non-finite inputs or runaway bracket
        """
        tolerance = settings.waterfill_tolerance if tolerance is None else tolerance
        max_doublings = settings.max_bracket_doublings if max_doublings is None else max_doublings
        A, L, N, df = OptimizerService._validate(A, L, N, df, avg_power_w)
        K = A.shape[0]
        floor = L * N / A
        budget = K * avg_power_w
        width = np.broadcast_to(df, A.shape)

        def allocated(lam: float) -> np.ndarray:
            return np.maximum(K * width / (lam * LN2) - floor, 0.0)

        low = K * width.sum() / (LN2 * (budget + floor.sum()))
        high = low
        for _ in range(max_doublings + 1):
            if allocated(high).sum() <= budget:
                break
            low = high
            high *= 2.0
        else:
            raise NumericalError(f"Water-level bracket exceeded {max_doublings} doublings; check units")

        lam = high
        iterations = 0
        while True:
            iterations += 1
            lam = 0.5 * (low + high)
            excess = allocated(lam).sum() - budget
            if abs(excess) <= tolerance * budget or high - low <= 1e-15 * high:
                break
            if excess > 0:
                low = lam
            else:
                high = lam

        active = allocated(lam) > 0
        exact = K * width[active].sum() / (LN2 * (budget + floor[active].sum()))
        candidate = allocated(exact)
        if np.array_equal(candidate > 0, active) and abs(candidate.sum() - budget) <= abs(allocated(lam).sum() - budget):
            lam = exact
        power = allocated(lam)

        gradient = width / (LN2 * (floor + power))
        mu = np.where(power > 0, 0.0, np.maximum(lam / K - gradient, 0.0))
        solution = WaterfillSolution(power=power, lambda_=lam, mu=mu, iterations=iterations)
        solution.kkt_report = OptimizerService.check_kkt(solution, A, L, N, df, avg_power_w)
        if abs(power.sum() / K - avg_power_w) > 1e-9 * avg_power_w:
            raise NumericalError(f"Water-filling budget not tight: {power.sum() / K} vs {avg_power_w}")
        logger.debug(f"Water-filling converged in {iterations} bisection steps, lambda={lam:.6e}")
        return solution

    @staticmethod
    def check_kkt(
        solution: WaterfillSolution,
        A,
        L,
        N,
        df,
        avg_power_w: float,
        tolerance: Optional[float] = None,
    ) -> KKTReport:
        """
        Scaled residuals of the optimality conditions.

        Stationarity Δf/(ln2(LN/A + P)) − λ/K + μ = 0 and slackness μ·P = 0 are
        scaled by λ/K (and P̄); budget and primal residuals by P̄.
        """
        tolerance = settings.kkt_tolerance if tolerance is None else tolerance
        A = np.atleast_2d(np.asarray(A, dtype=float))
        L = np.atleast_2d(np.asarray(L, dtype=float))
        power = np.atleast_2d(np.asarray(solution.power, dtype=float))
        mu = np.atleast_2d(np.asarray(solution.mu, dtype=float))
        K = power.shape[0]
        lam = solution.lambda_
        if power.shape != A.shape or mu.shape != A.shape:
            raise DomainError(f"Solution shape {power.shape} does not match A{A.shape}")
        floor = L * np.asarray(N, dtype=float) / A
        level = lam / K if lam > 0 else 1.0
        gradient = np.broadcast_to(np.asarray(df, dtype=float), A.shape) / (LN2 * (floor + np.maximum(power, 0.0)))

        stationarity = float(np.max(np.abs(gradient - lam / K + mu)) / level)
        budget_gap = power.sum() / K - avg_power_w
        budget_complementarity = float(abs(budget_gap) / avg_power_w) if lam > 0 else 0.0
        slackness = float(np.max(np.abs(mu * power)) / (level * avg_power_w))
        primal = float(max(0.0, -power.min(), budget_gap) / avg_power_w)
        dual = float(max(0.0, -lam / level, -mu.min() / level))
        residuals = (stationarity, budget_complementarity, slackness, primal, dual)
        return KKTReport(
            stationarity=stationarity,
            budget_complementarity=budget_complementarity,
            slackness=slackness,
            primal_feasibility=primal,
            dual_feasibility=dual,
            tolerance=tolerance,
            passed=all(r <= tolerance for r in residuals),
        )

    @staticmethod
    def uniform_allocation(K: int, I: int, avg_power_w: float) -> np.ndarray:
        """P̄/I on every band of every slot."""
        if K < 1 or I < 1 or avg_power_w <= 0:
            raise DomainError(f"Invalid uniform allocation K={K}, I={I}, P={avg_power_w}")
        return np.full((K, I), avg_power_w / I)

    @staticmethod
    def solution_from_power(power, A, L, N, df) -> WaterfillSolution:
        """Wrap an arbitrary allocation with least-squares multipliers so check_kkt can grade it."""
        power = np.atleast_2d(np.asarray(power, dtype=float))
        A = np.atleast_2d(np.asarray(A, dtype=float))
        K = power.shape[0]
        floor = np.atleast_2d(L) * np.asarray(N, dtype=float) / A
        gradient = np.broadcast_to(np.asarray(df, dtype=float), A.shape) / (LN2 * (floor + power))
        active = power > 0
        lam = K * float(gradient[active].mean()) if np.any(active) else K * float(gradient.max())
        mu = np.where(active, 0.0, np.maximum(lam / K - gradient, 0.0))
        return WaterfillSolution(power=power, lambda_=lam, mu=mu)

    @staticmethod
    def total_capacity(A, L, power, N, df) -> float:
        return float(ChannelService.capacity_terms(A, L, power, N, df).sum())

    @staticmethod
    def capacity_upper_bound(A, N, df, avg_power_w: float) -> float:
        """Loss-free capacity C_max(P̄): water-filling with L ≡ 1."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        ones = np.ones_like(A)
        solution = OptimizerService.waterfill(A, ones, avg_power_w, N, df)
        return OptimizerService.total_capacity(A, ones, solution.power, N, df)

    @staticmethod
    def fixed_plan(scenario: Scenario) -> FlightPlan:
        """Max feasible Mach with α = 0 when allowed (else the first attack angle) on every slot."""
        mach = max(scenario.feasible_mach)
        attack = 0.0 if 0.0 in scenario.feasible_attack_deg else scenario.feasible_attack_deg[0]
        return FlightPlan(mach=[mach] * scenario.slot_count, attack_deg=[attack] * scenario.slot_count)

    @staticmethod
    def plan_losses(plan: FlightPlan, losses: Dict[Tuple[float, float], np.ndarray]) -> np.ndarray:
        return np.vstack([losses[(m, a)][k] for k, (m, a) in enumerate(plan.pairs())])

    @staticmethod
    def slot_capacities(
        power: np.ndarray, A: np.ndarray, L: np.ndarray, N: np.ndarray, df: np.ndarray
    ) -> np.ndarray:
        return ChannelService.capacity_terms(A, L, power, N, df).sum(axis=1)

    @staticmethod
    def best_plan(
        capacities: np.ndarray,
        pairs: List[Tuple[float, float]],
        avg_mach_floor: float,
    ) -> FlightPlan:
        """
        Exact lattice DP: maximise Σ_k C[k, p_k] subject to (1/K)Σ M_k ≥ M̄.

        Args:
            capacities: K × |pairs| per-slot capacity of each (M, α) pair
            pairs: Feasible (M, α) in enumeration order
            avg_mach_floor: M̄

        Ties go to smaller M, then smaller |α|, then earlier enumeration order,
        decided slot by slot from the first slot.

        Raises:
            InfeasibleError: no plan meets the floor
        """
        K = capacities.shape[0]
        units = [int(round(m / _LATTICE_QUANTUM)) for m, _ in pairs]
        required = int(round(K * avg_mach_floor / _LATTICE_QUANTUM))
        if K * max(units) < required:
            raise InfeasibleError(f"Average Mach floor {avg_mach_floor} exceeds the largest feasible Mach")

        reachable = [{0}]
        for _ in range(K):
            reachable.append({s + u for s in reachable[-1] for u in set(units)})
        future: List[Dict[int, float]] = [dict() for _ in range(K + 1)]
        future[K] = {s: (0.0 if s >= required else -np.inf) for s in reachable[K]}
        for k in range(K - 1, -1, -1):
            for s in reachable[k]:
                future[k][s] = max(capacities[k, p] + future[k + 1][s + units[p]] for p in range(len(pairs)))
        if not np.isfinite(future[0][0]):
            raise InfeasibleError(f"No plan reaches average Mach {avg_mach_floor}")

        order = sorted(range(len(pairs)), key=lambda p: (pairs[p][0], abs(pairs[p][1]), p))
        plan_mach, plan_attack = [], []
        state = 0
        for k in range(K):
            values = [capacities[k, p] + future[k + 1][state + units[p]] for p in range(len(pairs))]
            best = max(values)
            slack = 1e-12 * max(1.0, abs(best))
            choice = next(p for p in order if values[p] >= best - slack)
            plan_mach.append(pairs[choice][0])
            plan_attack.append(pairs[choice][1])
            state += units[choice]
        return FlightPlan(mach=plan_mach, attack_deg=plan_attack)

    @staticmethod
    def attitude_search(
        power: np.ndarray,
        scenario: Scenario,
        oracle: LossOracle,
        A: Optional[np.ndarray] = None,
        losses: Optional[Dict[Tuple[float, float], np.ndarray]] = None,
    ) -> FlightPlan:
        """
        Best flight plan for a fixed power matrix.

        Every feasible (M, α) is scored on every slot; `losses` caches oracle output
        across calls.
        """
        A = ChannelService.coefficient_matrix(scenario) if A is None else A
        losses = {} if losses is None else losses
        N = ChannelService.noise_per_band(scenario)
        df = scenario.widths_hz
        pairs = [(m, a) for m in scenario.feasible_mach for a in scenario.feasible_attack_deg]
        capacities = np.empty((scenario.slot_count, len(pairs)))
        for p, (mach, attack) in enumerate(pairs):
            if (mach, attack) not in losses:
                losses[(mach, attack)] = np.asarray(oracle(mach, attack), dtype=float)
            capacities[:, p] = OptimizerService.slot_capacities(power, A, losses[(mach, attack)], N, df)
        return OptimizerService.best_plan(capacities, pairs, scenario.avg_mach_floor)

    @staticmethod
    def joint_optimize(
        scenario: Scenario,
        oracle: LossOracle,
        delta: Optional[float] = None,
        max_iter: Optional[int] = None,
        A: Optional[np.ndarray] = None,
    ) -> JointResult:
        """
        Alternate water-filling and flight-plan search until the capacity gain drops below δ.

        Starts from the fixed plan with uniform power. An iterate that would lower the
        total capacity is rejected, so the trace never decreases. Running out of
        iterations sets converged=False instead of raising.
        """
        max_iter = settings.alternation_max_iter if max_iter is None else max_iter
        A = ChannelService.coefficient_matrix(scenario) if A is None else np.asarray(A, dtype=float)
        N = ChannelService.noise_per_band(scenario)
        df = scenario.widths_hz
        avg_power = float(dbm_to_watts(scenario.avg_power_dbm))
        bound = OptimizerService.capacity_upper_bound(A, N, df, avg_power)
        delta = settings.alternation_delta_rel * bound if delta is None else delta
        if delta <= 0:
            raise DomainError(f"Convergence tolerance must be positive, got {delta}")

        losses: Dict[Tuple[float, float], np.ndarray] = {}
        plan = OptimizerService.fixed_plan(scenario)
        for pair in set(plan.pairs()):
            losses[pair] = np.asarray(oracle(*pair), dtype=float)
        power = OptimizerService.uniform_allocation(scenario.slot_count, scenario.band_count, avg_power)
        solution = OptimizerService.solution_from_power(power, A, OptimizerService.plan_losses(plan, losses), N, df)
        capacity = OptimizerService.total_capacity(A, OptimizerService.plan_losses(plan, losses), power, N, df)
        trace = IterationTrace(delta=delta, capacity_bound=bound)
        trace.records.append(
            IterationRecord(
                iteration=0,
                total_capacity_bps=capacity,
                lambda_=solution.lambda_,
                plan_summary=plan.summary(),
                power_hash=power_hash(power),
            )
        )

        for iteration in range(1, max_iter + 1):
            candidate = OptimizerService.waterfill(A, OptimizerService.plan_losses(plan, losses), avg_power, N, df)
            candidate_plan = OptimizerService.attitude_search(candidate.power, scenario, oracle, A, losses)
            incumbent = OptimizerService.total_capacity(
                A, OptimizerService.plan_losses(plan, losses), candidate.power, N, df
            )
            challenger = OptimizerService.total_capacity(
                A, OptimizerService.plan_losses(candidate_plan, losses), candidate.power, N, df
            )
            if challenger < incumbent:
                candidate_plan, challenger = plan, incumbent
            if challenger < capacity:
                logger.debug(f"Iteration {iteration} would lower capacity; keeping the previous iterate")
                trace.converged = True
                break
            gain = challenger - capacity
            plan, solution, capacity = candidate_plan, candidate, challenger
            trace.records.append(
                IterationRecord(
                    iteration=iteration,
                    total_capacity_bps=capacity,
                    lambda_=solution.lambda_,
                    plan_summary=plan.summary(),
                    power_hash=power_hash(solution.power),
                )
            )
            logger.info(
                f"Iteration {iteration}: total capacity {capacity:.6e} bit/s (gain {gain:.3e})",
                extra={"iteration": iteration, "capacity_bps": capacity},
            )
            if gain < delta:
                trace.converged = True
                break
        if not trace.converged:
            logger.warning(f"Alternation stopped after {max_iter} iterations without converging")
        if capacity > bound * (1.0 + 1e-9):
            raise NumericalError(f"Capacity {capacity:.6e} exceeds the loss-free bound {bound:.6e}")
        return JointResult(trace=trace, solution=solution, plan=plan)

    @staticmethod
    def write_trace(trace: IterationTrace, path: str) -> None:
        """Iteration CSV: iter, total_capacity_bps, lambda, plan_summary, power_hash."""
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["iter", "total_capacity_bps", "lambda", "plan_summary", "power_hash"])
            for record in trace.records:
                writer.writerow(
                    [
                        record.iteration,
                        repr(record.total_capacity_bps),
                        repr(record.lambda_),
                        record.plan_summary,
                        record.power_hash,
                    ]
                )
