import csv
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from thzlink.config import settings
from thzlink.exceptions import ConfigError, InfeasibleError
from thzlink.executors.base_executor import AttenuationExecutor
from thzlink.schemas.enums import OracleType, StrategyName
from thzlink.schemas.experiment import ExperimentConfig, StrategyResult
from thzlink.schemas.field import GridSpec, WakeModelParams
from thzlink.schemas.optimizer import FlightPlan
from thzlink.schemas.scenario import Scenario
from thzlink.schemas.surrogate import SurrogateModel
from thzlink.services.channel_service import ChannelService
from thzlink.services.optimizer_service import OptimizerService
from thzlink.services.oracle_service import OracleService
from thzlink.services.surrogate_service import SurrogateService
from thzlink.utils.units import dbm_to_watts

logger = logging.getLogger(__name__)


def _ensure_parent(path: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)


class ExperimentService:
    """Baseline and optimized strategies, evaluated on the true channel"""

    @staticmethod
    def feasible_pairs(scenario: Scenario) -> List[Tuple[float, float]]:
        return [(m, a) for m in scenario.feasible_mach for a in scenario.feasible_attack_deg]

    @staticmethod
    def random_plan(scenario: Scenario, seed: int, max_attempts: Optional[int] = None) -> FlightPlan:
        """
        Uniform per-slot draws from the feasible pairs, redrawn until the Mach floor holds.

        Raises:
            InfeasibleError: no draw met the floor within `max_attempts`
        """
        max_attempts = settings.random_max_attempts if max_attempts is None else max_attempts
        rng = np.random.default_rng(seed)
        pairs = ExperimentService.feasible_pairs(scenario)
        for attempt in range(1, max_attempts + 1):
            picks = rng.integers(0, len(pairs), size=scenario.slot_count)
            plan = FlightPlan(mach=[pairs[p][0] for p in picks], attack_deg=[pairs[p][1] for p in picks])
            if plan.meets_floor(scenario.avg_mach_floor):
                logger.debug(f"Random plan accepted after {attempt} draws")
                return plan
        raise InfeasibleError(
            f"No random plan reached average Mach {scenario.avg_mach_floor} in {max_attempts} attempts"
        )

    @staticmethod
    def evaluate_plan(
        strategy: StrategyName,
        plan: FlightPlan,
        power: np.ndarray,
        scenario: Scenario,
        A: np.ndarray,
        true_oracle: AttenuationExecutor,
        bound: float,
    ) -> StrategyResult:
        """
        Score a plan and power matrix on the true losses.

        Raises:
            InfeasibleError: the plan does not cover every slot or misses the Mach floor
        """
        if plan.slot_count != scenario.slot_count:
            raise InfeasibleError(f"Plan covers {plan.slot_count} slots, scenario has {scenario.slot_count}")
        if not plan.meets_floor(scenario.avg_mach_floor):
            raise InfeasibleError(
                f"{strategy.value} plan averages Mach {plan.average_mach:.4f}, below the floor {scenario.avg_mach_floor}"
            )
        N = ChannelService.noise_per_band(scenario)
        df = scenario.widths_hz
        losses = np.vstack([true_oracle(m, a)[k] for k, (m, a) in enumerate(plan.pairs())])
        attenuation = [
            float(true_oracle.reference_attenuation_db(m, a)[k]) for k, (m, a) in enumerate(plan.pairs())
        ]
        capacities = OptimizerService.slot_capacities(power, A, losses, N, df)
        return StrategyResult(
            strategy=strategy,
            plan=plan,
            attenuation_db=attenuation,
            capacity_bps=[float(c) for c in capacities],
            power_w=np.asarray(power, dtype=float).tolist(),
            total_bandwidth_hz=float(df.sum()),
            capacity_bound_bps=bound,
        )

    @staticmethod
    def run_strategy(
        config: ExperimentConfig,
        strategy: StrategyName,
        scenario: Scenario,
        A: np.ndarray,
        oracles: Dict[OracleType, AttenuationExecutor],
    ) -> StrategyResult:
        """
        Plan one strategy and evaluate it on the true-field oracle.

        fixed and random fly with uniform power; expert alternates against the true
        fields and optimized against the surrogate, both with water-filled power.
        """
        true_oracle = oracles[OracleType.FIELD]
        N = ChannelService.noise_per_band(scenario)
        avg_power = float(dbm_to_watts(scenario.avg_power_dbm))
        bound = OptimizerService.capacity_upper_bound(A, N, scenario.widths_hz, avg_power)
        uniform = OptimizerService.uniform_allocation(scenario.slot_count, scenario.band_count, avg_power)

        trace = None
        if strategy == StrategyName.FIXED:
            plan, power = OptimizerService.fixed_plan(scenario), uniform
        elif strategy == StrategyName.RANDOM:
            plan, power = ExperimentService.random_plan(scenario, config.seed), uniform
        elif strategy in (StrategyName.EXPERT, StrategyName.OPTIMIZED):
            oracle_type = OracleType.FIELD if strategy == StrategyName.EXPERT else OracleType.SURROGATE
            if oracle_type not in oracles:
                raise ConfigError(f"Strategy '{strategy.value}' needs a {oracle_type.value} oracle")
            joint = OptimizerService.joint_optimize(scenario, oracles[oracle_type], A=A)
            plan, power, trace = joint.plan, joint.solution.power, joint.trace
        else:
            raise ConfigError(f"Unsupported strategy: {strategy}")

        result = ExperimentService.evaluate_plan(strategy, plan, power, scenario, A, true_oracle, bound)
        result.trace = trace
        logger.info(
            f"Strategy {strategy.value}: mean attenuation {result.mean_attenuation_db:.3f} dB, "
            f"spectral efficiency {result.spectral_efficiency:.4f} bit/s/Hz",
            extra={"strategy": strategy.value, "seed": config.seed},
        )
        return result

    @staticmethod
    def build_oracles(
        config: ExperimentConfig,
        scenario: Scenario,
        model: Optional[SurrogateModel] = None,
        params: Optional[WakeModelParams] = None,
        grid_spec: Optional[GridSpec] = None,
        c0: Optional[float] = None,
    ) -> Dict[OracleType, AttenuationExecutor]:
        oracles = {
            OracleType.FIELD: OracleService.build(
                OracleType.FIELD,
                scenario,
                config.field_source,
                config.field_dir,
                params=params,
                grid_spec=grid_spec,
                seed=config.seed,
                c0=c0,
            )
        }
        if StrategyName.OPTIMIZED in config.strategies:
            if model is None:
                if not config.model_path:
                    raise ConfigError("The optimized strategy needs a trained surrogate (--model)")
                model = SurrogateService.load_model(config.model_path)
            oracles[OracleType.SURROGATE] = OracleService.build(
                OracleType.SURROGATE, scenario, model=model, seed=config.seed
            )
        return oracles

    @staticmethod
    def run_experiment(
        config: ExperimentConfig,
        scenario: Scenario,
        model: Optional[SurrogateModel] = None,
        params: Optional[WakeModelParams] = None,
        grid_spec: Optional[GridSpec] = None,
        c0: Optional[float] = None,
        oracles: Optional[Dict[OracleType, AttenuationExecutor]] = None,
    ) -> List[StrategyResult]:
        """
        Run every configured strategy, in config order.

        With `config.concurrent` the strategies run on a thread pool; the oracles are
        filled for every feasible pair beforehand so the threads only read them.
        """
        A = ChannelService.coefficient_matrix(scenario)
        oracles = oracles or ExperimentService.build_oracles(config, scenario, model, params, grid_spec, c0)
        if not config.concurrent:
            return [ExperimentService.run_strategy(config, s, scenario, A, oracles) for s in config.strategies]

        for oracle in oracles.values():
            for mach, attack in ExperimentService.feasible_pairs(scenario):
                oracle(mach, attack)
                oracle.reference_attenuation_db(mach, attack)
        with ThreadPoolExecutor(max_workers=len(config.strategies)) as pool:
            futures = [
                pool.submit(ExperimentService.run_strategy, config, s, scenario, A, oracles)
                for s in config.strategies
            ]
            return [future.result() for future in futures]

    @staticmethod
    def compare_power_allocation(scenario: Scenario, oracle: AttenuationExecutor) -> List[Dict[str, float]]:
        """
        Uniform (C₀) against water-filled (C*) spectral efficiency for each fixed flight configuration.

        Returns:
            Rows with mach, attack_deg, uniform_se, waterfill_se, improvement_pct
        """
        A = ChannelService.coefficient_matrix(scenario)
        N = ChannelService.noise_per_band(scenario)
        df = scenario.widths_hz
        avg_power = float(dbm_to_watts(scenario.avg_power_dbm))
        uniform = OptimizerService.uniform_allocation(scenario.slot_count, scenario.band_count, avg_power)
        normalizer = scenario.slot_count * df.sum()

        rows = []
        for mach, attack in ExperimentService.feasible_pairs(scenario):
            L = oracle(mach, attack)
            baseline = OptimizerService.total_capacity(A, L, uniform, N, df) / normalizer
            solution = OptimizerService.waterfill(A, L, avg_power, N, df)
            optimized = OptimizerService.total_capacity(A, L, solution.power, N, df) / normalizer
            rows.append(
                {
                    "mach": mach,
                    "attack_deg": attack,
                    "uniform_se": baseline,
                    "waterfill_se": optimized,
                    "improvement_pct": 100.0 * (optimized - baseline) / baseline if baseline > 0 else 0.0,
                }
            )
        return rows

    @staticmethod
    def attenuation_sweep(scenario: Scenario, oracle: AttenuationExecutor) -> List[Dict[str, float]]:
        """Per-slot loss at the reference frequency for every feasible (M, α)."""
        rows = []
        for mach, attack in ExperimentService.feasible_pairs(scenario):
            for k, value in enumerate(oracle.reference_attenuation_db(mach, attack), start=1):
                rows.append({"mach": mach, "attack_deg": attack, "slot": k, "attenuation_db": float(value)})
        return rows

    @staticmethod
    def spectrum_rows(
        scenario: Scenario, oracle: AttenuationExecutor, mach: float, attack_deg: float, k: int
    ) -> List[Dict[str, float]]:
        """Loss breakdown over the band for slot k flying (M, α)."""
        if not 1 <= k <= scenario.slot_count:
            raise ConfigError(f"Slot {k} outside 1..{scenario.slot_count}")
        turbulence_db = oracle.band_losses(mach, attack_deg)[0][k - 1]
        spectrum = ChannelService.attenuation_spectrum(scenario, k, turbulence_db)
        columns = ["frequency_hz", "fspl_db", "absorption_db", "turbulence_db"]
        rows = []
        for index in range(scenario.band_count):
            row = {name: float(spectrum[name][index]) for name in columns}
            row["total_db"] = row["fspl_db"] + row["absorption_db"] + row["turbulence_db"]
            rows.append(row)
        return rows

    @staticmethod
    def ordering_study(
        config: ExperimentConfig,
        scenario: Scenario,
        seeds: Sequence[int],
        model: Optional[SurrogateModel] = None,
        params: Optional[WakeModelParams] = None,
        grid_spec: Optional[GridSpec] = None,
    ) -> Tuple[List[Dict[str, float]], int]:
        """
        Repeat the experiment over seeds and count the seeds where
        expert ≥ optimized > random and optimized > fixed in spectral efficiency.

        Returns:
            (per-seed rows, number of seeds with the expected ordering)
        """
        rows, hits = [], 0
        for seed in seeds:
            seeded = config.model_copy(update={"seed": int(seed)})
            results = ExperimentService.run_experiment(seeded, scenario, model, params, grid_spec)
            efficiency = {r.strategy: r.spectral_efficiency for r in results}
            row: Dict[str, float] = {"seed": int(seed)}
            row.update({strategy.value: value for strategy, value in efficiency.items()})
            needed = {StrategyName.EXPERT, StrategyName.OPTIMIZED, StrategyName.RANDOM, StrategyName.FIXED}
            ordered = needed.issubset(efficiency) and (
                efficiency[StrategyName.EXPERT] >= efficiency[StrategyName.OPTIMIZED]
                and efficiency[StrategyName.OPTIMIZED] > efficiency[StrategyName.RANDOM]
                and efficiency[StrategyName.OPTIMIZED] > efficiency[StrategyName.FIXED]
            )
            row["ordered"] = int(ordered)
            hits += int(ordered)
            rows.append(row)
        logger.info(f"Strategy ordering held on {hits} of {len(rows)} seeds")
        return rows, hits

    @staticmethod
    def write_rows(rows: List[Dict[str, float]], path: str) -> None:
        """CSV with the keys of the first row as header; floats at full precision."""
        if not rows:
            raise ConfigError(f"Nothing to write to {path}")
        _ensure_parent(path)
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.DictWriter(handle, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            for row in rows:
                writer.writerow({key: repr(value) if isinstance(value, float) else value for key, value in row.items()})
