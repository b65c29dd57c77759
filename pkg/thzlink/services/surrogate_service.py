import logging
import os
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from thzlink.config import settings
from thzlink.exceptions import DomainError, NumericalError
from thzlink.schemas.enums import OptimizerKind
from thzlink.schemas.field import GridSpec, WakeModelParams
from thzlink.schemas.scenario import Scenario, SlotGeometry
from thzlink.schemas.surrogate import (
    EvaluationRow,
    ModelSpec,
    NoiseSchedule,
    NormalizationStats,
    OptimizerConfig,
    SurrogateEvaluation,
    SurrogateModel,
    TrainingResult,
)
from thzlink.services.calibration_service import CalibrationService
from thzlink.services.denoiser_network import DenoiserNetwork
from thzlink.services.flowfield_service import FlowfieldService
from thzlink.services.geometry_service import GeometryService
from thzlink.services.turbulence_service import TurbulenceService

logger = logging.getLogger(__name__)

# dataset columns: x1 x2 M alpha | T P B
CONDITION_COLUMNS = slice(0, 4)
TARGET_COLUMNS = slice(4, 7)
B_CHANNEL = 2


class _ParameterUpdater:
    """SGD with momentum, or Adam, over the network's weight and bias arrays"""

    def __init__(self, network: DenoiserNetwork, config: OptimizerConfig):
        self.config = config
        self.first = [np.zeros_like(p) for p in network.parameters]
        self.second = [np.zeros_like(p) for p in network.parameters]
        self.steps = 0

    def apply(self, network: DenoiserNetwork, grad_w, grad_b) -> None:
        self.steps += 1
        cfg = self.config
        for index, (param, grad) in enumerate(zip(network.parameters, list(grad_w) + list(grad_b))):
            if cfg.kind == OptimizerKind.ADAM:
                self.first[index] = cfg.momentum * self.first[index] + (1.0 - cfg.momentum) * grad
                self.second[index] = cfg.adam_beta2 * self.second[index] + (1.0 - cfg.adam_beta2) * grad ** 2
                m_hat = self.first[index] / (1.0 - cfg.momentum ** self.steps)
                v_hat = self.second[index] / (1.0 - cfg.adam_beta2 ** self.steps)
                param -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + 1e-8)
            else:
                self.first[index] = cfg.momentum * self.first[index] - cfg.learning_rate * grad
                param += self.first[index]


class SurrogateService:
    """Conditional denoising-diffusion surrogate for (T, P, B) given (x1, x2, M, α)"""

    @staticmethod
    def make_schedule(
        step_count: Optional[int] = None,
        beta_start: Optional[float] = None,
        beta_end: Optional[float] = None,
    ) -> NoiseSchedule:
        """
        Linear-β noise schedule.

        Args:
            step_count: Number of diffusion steps (≥ 2)
            beta_start: First β, in (0, beta_end]
            beta_end: Last β, below 1

        Returns:
            NoiseSchedule with α = 1 − β, ᾱ = cumprod(α) and
            σ_t² = (1 − ᾱ_{t−1})(1 − α_t)/(1 − ᾱ_t), ᾱ_0 = 1
        """
        step_count = settings.diffusion_steps if step_count is None else step_count
        beta_start = settings.beta_start if beta_start is None else beta_start
        beta_end = settings.beta_end if beta_end is None else beta_end
        if step_count < 2:
            raise DomainError(f"Schedule needs at least 2 steps, got {step_count}")
        if not 0.0 < beta_start <= beta_end < 1.0:
            raise DomainError(f"Need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
        betas = np.linspace(beta_start, beta_end, step_count)
        alphas = 1.0 - betas
        alpha_bars = np.cumprod(alphas)
        previous = np.concatenate([[1.0], alpha_bars[:-1]])
        sigmas = np.sqrt((1.0 - previous) * (1.0 - alphas) / (1.0 - alpha_bars))
        if alpha_bars[-1] > 1e-4:
            logger.warning(
                f"Final alpha_bar {alpha_bars[-1]:.3e} exceeds 1e-4; the last step is not pure noise",
                extra={"step_count": step_count, "beta_end": beta_end},
            )
        return NoiseSchedule(
            step_count=step_count,
            betas=betas.tolist(),
            alphas=alphas.tolist(),
            alpha_bars=alpha_bars.tolist(),
            sigmas=sigmas.tolist(),
        )

    @staticmethod
    def forward_corrupt(x0, t, z, schedule: NoiseSchedule) -> np.ndarray:
        """X_t = √ᾱ_t·X0 + √(1 − ᾱ_t)·z; t may be one step or one step per row."""
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > schedule.step_count):
            raise DomainError(f"Diffusion step must lie in 1..{schedule.step_count}, got {t}")
        alpha_bar = np.asarray(schedule.alpha_bars)[t - 1]
        if alpha_bar.ndim == 1:
            alpha_bar = alpha_bar[:, None]
        return np.sqrt(alpha_bar) * np.asarray(x0, dtype=float) + np.sqrt(1.0 - alpha_bar) * np.asarray(z, dtype=float)

    @staticmethod
    def fit_stats(dataset: np.ndarray, b_floor: Optional[float] = None) -> NormalizationStats:
        """Per-channel z-score statistics; B is taken in log10(B + floor) space."""
        b_floor = settings.b_floor if b_floor is None else b_floor
        targets = np.array(dataset[:, TARGET_COLUMNS], dtype=float)
        targets[:, B_CHANNEL] = np.log10(targets[:, B_CHANNEL] + b_floor)
        conditions = dataset[:, CONDITION_COLUMNS]

        def scale(values: np.ndarray) -> np.ndarray:
            spread = values.std(axis=0)
            return np.where(spread > 1e-12, spread, 1.0)

        return NormalizationStats(
            x_mean=targets.mean(axis=0).tolist(),
            x_scale=scale(targets).tolist(),
            c_mean=conditions.mean(axis=0).tolist(),
            c_scale=scale(conditions).tolist(),
            log_channels=[B_CHANNEL],
            b_floor=b_floor,
        )

    @staticmethod
    def to_network(model: SurrogateModel) -> DenoiserNetwork:
        return DenoiserNetwork(model.spec, [np.asarray(w) for w in model.weights], [np.asarray(b) for b in model.biases])

    @staticmethod
    def train(
        dataset: np.ndarray,
        schedule: Optional[NoiseSchedule] = None,
        spec: Optional[ModelSpec] = None,
        opt_config: Optional[OptimizerConfig] = None,
        seed: int = 0,
        stats: Optional[NormalizationStats] = None,
        box: Optional[Sequence[float]] = None,
    ) -> TrainingResult:
        """
        Fit the noise regressor on dataset rows (x1, x2, M, α, T, P, B).

        Each batch draws t uniformly from 1..T and z ~ N(0, I); the loss is the mean
        squared error between z and the predicted noise. Training stops after the
        epoch budget or when the relative loss improvement over the patience window
        falls below the tolerance.

        Raises:
            DomainError: empty dataset or wrong column count
            NumericalError: non-finite loss
        """
        dataset = np.atleast_2d(np.asarray(dataset, dtype=float))
        if dataset.size == 0 or dataset.shape[1] != 7:
            raise DomainError(f"Dataset must be a non-empty (n, 7) array, got shape {dataset.shape}")
        schedule = schedule or SurrogateService.make_schedule()
        spec = spec or ModelSpec()
        opt_config = opt_config or OptimizerConfig()
        stats = stats or SurrogateService.fit_stats(dataset)

        rng = np.random.default_rng(seed)
        network = DenoiserNetwork.initialize(spec, rng)
        updater = _ParameterUpdater(network, opt_config)
        x0 = stats.standardize_x(dataset[:, TARGET_COLUMNS])
        c = stats.standardize_c(dataset[:, CONDITION_COLUMNS])
        count = len(dataset)

        trace: List[float] = []
        early_stopped = False
        for epoch in range(1, opt_config.epochs + 1):
            order = rng.permutation(count)
            total = 0.0
            for start in range(0, count, opt_config.batch_size):
                batch = order[start:start + opt_config.batch_size]
                t = rng.integers(1, schedule.step_count + 1, size=len(batch))
                z = rng.standard_normal((len(batch), spec.x_dim))
                x_t = SurrogateService.forward_corrupt(x0[batch], t, z, schedule)
                loss, grad_w, grad_b = network.loss_and_gradients(x_t, c[batch], t, z)
                if not np.isfinite(loss):
                    raise NumericalError(f"Training diverged at epoch {epoch}, batch starting at row {start}")
                updater.apply(network, grad_w, grad_b)
                total += loss * len(batch)
            trace.append(total / count)
            if epoch % opt_config.log_every == 0 or epoch == 1:
                logger.info(f"Epoch {epoch}: mean loss {trace[-1]:.6f}", extra={"epoch": epoch, "loss": trace[-1]})
            if len(trace) > opt_config.early_stop_patience:
                reference = trace[-1 - opt_config.early_stop_patience]
                improvement = (reference - trace[-1]) / abs(reference) if reference != 0 else 0.0
                if improvement < opt_config.early_stop_tol:
                    early_stopped = True
                    logger.info(f"Early stop at epoch {epoch}: relative improvement {improvement:.2e}")
                    break

        model_kwargs = {}
        if box is not None:
            model_kwargs["box"] = list(box)
        model = SurrogateModel(
            schedule=schedule,
            spec=spec,
            weights=[w.tolist() for w in network.weights],
            biases=[b.tolist() for b in network.biases],
            stats=stats,
            seed=seed,
            loss_trace=trace,
            **model_kwargs,
        )
        return TrainingResult(model=model, loss_trace=trace, epochs_run=len(trace), early_stopped=early_stopped)

    @staticmethod
    def sample(
        conditions,
        model: SurrogateModel,
        schedule: Optional[NoiseSchedule] = None,
        seed: int = 0,
        standardized: bool = False,
    ) -> np.ndarray:
        """
        Reverse diffusion from X_T ~ N(0, I) for each condition row (x1, x2, M, α).

        The last update (t = 1) adds no noise. Returns (T, P, B) per row, or the
        standardized estimate when `standardized` is set.

        Raises:
            DomainError: schedule length differs from the model's
            NumericalError: non-finite state, naming the step
        """
        schedule = schedule or model.schedule
        if schedule.step_count != model.schedule.step_count:
            raise DomainError(
                f"Schedule has {schedule.step_count} steps but the model was trained with {model.schedule.step_count}"
            )
        conditions = np.atleast_2d(np.asarray(conditions, dtype=float))
        network = SurrogateService.to_network(model)
        c = model.stats.standardize_c(conditions)
        alphas, alpha_bars, sigmas = schedule.arrays()

        rng = np.random.default_rng(seed)
        x = rng.standard_normal((len(conditions), model.spec.x_dim))
        for t in range(schedule.step_count, 0, -1):
            noise = network.predict(x, c, t)
            x = (x - (1.0 - alphas[t - 1]) / np.sqrt(1.0 - alpha_bars[t - 1]) * noise) / np.sqrt(alphas[t - 1])
            if t > 1:
                x = x + sigmas[t - 1] * rng.standard_normal(x.shape)
            if not np.all(np.isfinite(x)):
                raise NumericalError(f"Non-finite reverse-diffusion state at step {t}")
        return x if standardized else model.stats.destandardize_x(x)

    @staticmethod
    def predict_rytov_variances(
        mach: float,
        attack_deg: float,
        paths: Sequence[SlotGeometry],
        model: SurrogateModel,
        f_hz: float,
        h0: float = 0.0,
        n_path: Optional[int] = None,
        seed: int = 0,
    ) -> np.ndarray:
        """σ² per path from sampled B profiles; all paths share one reverse-diffusion batch."""
        n_path = settings.path_samples if n_path is None else n_path
        x1_bounds, x2_bounds = tuple(model.box[:2]), tuple(model.box[2:])
        segments, rows = [], []
        for path in paths:
            segment = TurbulenceService.path_samples(path, x1_bounds, x2_bounds, n_path)
            segments.append(segment)
            if segment is not None:
                x1, x2, _, _ = segment
                rows.append(np.column_stack([x1, x2, np.full(n_path, mach), np.full(n_path, attack_deg)]))
        if not rows:
            return np.zeros(len(paths))
        B = SurrogateService.sample(np.vstack(rows), model, seed=seed)[:, B_CHANNEL]

        sigma2 = np.zeros(len(paths))
        offset = 0
        for index, (path, segment) in enumerate(zip(paths, segments)):
            if segment is None:
                continue
            _, _, h, length = segment
            sigma2[index] = TurbulenceService.rytov_variance_from_profile(
                B[offset:offset + n_path], h, length, f_hz, path.altitude_m, h0
            )
            offset += n_path
        return sigma2

    @staticmethod
    def predict_attenuation(
        mach: float,
        attack_deg: float,
        path: SlotGeometry,
        model: SurrogateModel,
        schedule: Optional[NoiseSchedule] = None,
        f_hz: Optional[float] = None,
        n_path: Optional[int] = None,
        seed: int = 0,
        h0: float = 0.0,
    ) -> float:
        """Surrogate estimate of the turbulence loss (dB) on one slot's LoS."""
        if schedule is not None and schedule.step_count != model.schedule.step_count:
            raise DomainError("Schedule does not match the model")
        f_hz = settings.reference_frequency_hz if f_hz is None else f_hz
        sigma2 = SurrogateService.predict_rytov_variances(mach, attack_deg, [path], model, f_hz, h0, n_path, seed)[0]
        params = TurbulenceService.fading_parameters(float(sigma2), f_hz, path.range_m)
        return TurbulenceService.turbulence_attenuation_db(params).loss_db

    @staticmethod
    def save_model(model: SurrogateModel, path: str) -> None:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(model.model_dump_json(indent=1))
            handle.write("\n")
        logger.info(f"Saved surrogate model to {path}")

    @staticmethod
    def load_model(path: str) -> SurrogateModel:
        if not os.path.exists(path):
            raise DomainError(f"Model file not found: {path}")
        with open(path, "r", encoding="utf-8") as handle:
            return SurrogateModel.model_validate_json(handle.read())

    @staticmethod
    def gradient_check(model: SurrogateModel, batch: np.ndarray, seed: int = 0, step: float = 1e-5) -> float:
        """
        Backprop vs central-difference gradients on dataset rows.

        Returns:
            Max relative gradient error over every parameter
        """
        batch = np.atleast_2d(np.asarray(batch, dtype=float))
        rng = np.random.default_rng(seed)
        network = SurrogateService.to_network(model)
        x0 = model.stats.standardize_x(batch[:, TARGET_COLUMNS])
        c = model.stats.standardize_c(batch[:, CONDITION_COLUMNS])
        t = rng.integers(1, model.schedule.step_count + 1, size=len(batch))
        z = rng.standard_normal(x0.shape)
        x_t = SurrogateService.forward_corrupt(x0, t, z, model.schedule)
        return network.gradient_check(x_t, c, t, z, step)

    @staticmethod
    def evaluate_surrogate(
        model: SurrogateModel,
        scenario: Scenario,
        conditions: Iterable[Tuple[float, float]],
        params: Optional[WakeModelParams] = None,
        grid_spec: Optional[GridSpec] = None,
        seed: int = 0,
        n_path: Optional[int] = None,
    ) -> SurrogateEvaluation:
        """RMSE (dB) of surrogate vs true-field loss over every slot and condition at the reference frequency."""
        params = params or WakeModelParams()
        f_ref = settings.reference_frequency_hz
        c0 = CalibrationService.resolve_c0(params)
        paths = GeometryService.all_slots(scenario)
        rows: List[EvaluationRow] = []
        for mach, attack in conditions:
            field = FlowfieldService.generate_wake_field(mach, attack, grid_spec, params, seed)
            predicted = SurrogateService.predict_rytov_variances(
                mach, attack, paths, model, f_ref, scenario.ground_ref_m, n_path, seed
            )
            for path, sigma2_hat in zip(paths, predicted):
                sigma2 = TurbulenceService.rytov_variance(
                    field, path, f_ref, scenario.altitude_m, scenario.ground_ref_m, c0=c0
                )
                true_db = TurbulenceService.turbulence_attenuation_db(
                    TurbulenceService.fading_parameters(sigma2, f_ref, path.range_m)
                ).loss_db
                predicted_db = TurbulenceService.turbulence_attenuation_db(
                    TurbulenceService.fading_parameters(float(sigma2_hat), f_ref, path.range_m)
                ).loss_db
                rows.append(
                    EvaluationRow(
                        mach=mach, attack_deg=attack, slot=path.slot_index, true_db=true_db, predicted_db=predicted_db
                    )
                )
        if not rows:
            raise DomainError("No conditions to evaluate")
        rmse = float(np.sqrt(np.mean([(row.true_db - row.predicted_db) ** 2 for row in rows])))
        logger.info(f"Surrogate RMSE {rmse:.3f} dB over {len(rows)} slot samples", extra={"rmse_db": rmse})
        return SurrogateEvaluation(rows=rows, rmse_db=rmse)
