from pydantic import BaseModel, Field, field_validator, model_validator
from typing import Any, List

import numpy as np

from thzlink.config import settings
from thzlink.schemas.enums import Activation, OptimizerKind


class NoiseSchedule(BaseModel):
    """Diffusion noise schedule; index 0 holds step t = 1"""
    step_count: int = Field(..., ge=2)
    betas: List[float]
    alphas: List[float]
    alpha_bars: List[float]
    sigmas: List[float]

    @model_validator(mode="after")
    def check_schedule(self) -> "NoiseSchedule":
        if not (len(self.betas) == len(self.alphas) == len(self.alpha_bars) == len(self.sigmas) == self.step_count):
            raise ValueError("Schedule sequences must all have step_count entries")
        alpha_bars = np.asarray(self.alpha_bars)
        if np.any(np.diff(alpha_bars) >= 0):
            raise ValueError("alpha_bar must be strictly decreasing")
        if np.max(np.abs(np.cumprod(self.alphas) - alpha_bars)) > 1e-12:
            raise ValueError("alpha_bar is not the cumulative product of alpha")
        return self

    def arrays(self):
        return (
            np.asarray(self.alphas),
            np.asarray(self.alpha_bars),
            np.asarray(self.sigmas),
        )


class ModelSpec(BaseModel):
    x_dim: int = Field(3, ge=1)
    c_dim: int = Field(4, ge=1)
    hidden_widths: List[int] = settings.hidden_widths
    time_embedding_size: int = Field(settings.time_embedding_size, ge=2)
    activation: Activation = Activation(settings.activation)

    @field_validator("activation", mode="before")
    @classmethod
    def normalize_activation(cls, value: Any) -> Activation:
        """Allow case-insensitive strings for the activation."""
        if isinstance(value, Activation):
            return value
        if isinstance(value, str):
            try:
                return Activation(value.lower())
            except ValueError as exc:
                raise ValueError(f"Invalid activation '{value}'. Allowed values: {[a.value for a in Activation]}") from exc
        raise TypeError("Activation must be an Activation or string value")

    @property
    def input_size(self) -> int:
        return self.x_dim + self.c_dim + self.time_embedding_size


class OptimizerConfig(BaseModel):
    kind: OptimizerKind = OptimizerKind.SGD
    learning_rate: float = Field(settings.learning_rate, gt=0)
    momentum: float = Field(settings.momentum, ge=0, lt=1)
    adam_beta2: float = Field(0.999, gt=0, lt=1)
    batch_size: int = Field(settings.batch_size, ge=1)
    epochs: int = Field(settings.epochs, ge=1)
    early_stop_tol: float = Field(settings.early_stop_tol, ge=0)
    early_stop_patience: int = Field(settings.early_stop_patience, ge=1)
    log_every: int = Field(10, ge=1)

    @field_validator("kind", mode="before")
    @classmethod
    def normalize_kind(cls, value: Any) -> OptimizerKind:
        if isinstance(value, str):
            try:
                return OptimizerKind(value.lower())
            except ValueError as exc:
                raise ValueError(f"Invalid optimizer '{value}'. Allowed values: {[k.value for k in OptimizerKind]}") from exc
        return value


class NormalizationStats(BaseModel):
    """Per-channel z-score statistics; the B channel is stored in log10 space"""
    x_mean: List[float]
    x_scale: List[float]
    c_mean: List[float]
    c_scale: List[float]
    log_channels: List[int] = []
    b_floor: float = settings.b_floor

    def standardize_x(self, x: np.ndarray) -> np.ndarray:
        x = np.array(x, dtype=float, copy=True)
        for channel in self.log_channels:
            x[:, channel] = np.log10(x[:, channel] + self.b_floor)
        return (x - np.asarray(self.x_mean)) / np.asarray(self.x_scale)

    def destandardize_x(self, z: np.ndarray) -> np.ndarray:
        x = np.asarray(z) * np.asarray(self.x_scale) + np.asarray(self.x_mean)
        for channel in self.log_channels:
            x[:, channel] = np.maximum(np.power(10.0, x[:, channel]) - self.b_floor, 0.0)
        return x

    def standardize_c(self, c: np.ndarray) -> np.ndarray:
        return (np.asarray(c, dtype=float) - np.asarray(self.c_mean)) / np.asarray(self.c_scale)


class SurrogateModel(BaseModel):
    """Self-describing model container: schedule, architecture, parameters, stats, seed"""
    format_version: int = 1
    schedule: NoiseSchedule
    spec: ModelSpec
    weights: List[List[List[float]]]
    biases: List[List[float]]
    stats: NormalizationStats
    seed: int
    box: List[float] = Field(
        default_factory=lambda: [
            settings.grid_x1_min_m, settings.grid_x1_max_m, settings.grid_x2_min_m, settings.grid_x2_max_m
        ],
        description="Body-frame training box x1_min, x1_max, x2_min, x2_max (m)",
    )
    loss_trace: List[float] = []

    @model_validator(mode="after")
    def check_parameters(self) -> "SurrogateModel":
        widths = [self.spec.input_size] + list(self.spec.hidden_widths) + [self.spec.x_dim]
        if len(self.weights) != len(widths) - 1 or len(self.biases) != len(widths) - 1:
            raise ValueError("Parameter count does not match the architecture descriptor")
        for layer, (w, b) in enumerate(zip(self.weights, self.biases)):
            w = np.asarray(w)
            if w.shape != (widths[layer + 1], widths[layer]) or len(b) != widths[layer + 1]:
                raise ValueError(f"Layer {layer} has shape {w.shape}, expected {(widths[layer + 1], widths[layer])}")
            if not np.all(np.isfinite(w)) or not np.all(np.isfinite(b)):
                raise ValueError(f"Layer {layer} has non-finite parameters")
        return self


class TrainingResult(BaseModel):
    model: SurrogateModel
    loss_trace: List[float]
    epochs_run: int
    early_stopped: bool


class EvaluationRow(BaseModel):
    mach: float
    attack_deg: float
    slot: int
    true_db: float
    predicted_db: float


class SurrogateEvaluation(BaseModel):
    rows: List[EvaluationRow]
    rmse_db: float
