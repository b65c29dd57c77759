from pydantic_settings import BaseSettings
from typing import List, Optional


class Settings(BaseSettings):
    # Logging
    log_level: str = "INFO"

    # Channel
    absorption_quad_points: int = 64
    # Two water-vapour lines (Hz, Hz, 1/m) for the built-in absorption table
    absorption_line_centers_hz: List[float] = [183.31e9, 325.15e9]
    absorption_line_widths_hz: List[float] = [3.0e9, 4.0e9]
    absorption_line_strengths: List[float] = [2.5e-3, 1.5e-3]
    absorption_background_per_m: float = 2.0e-5
    absorption_scale_height_m: float = 2000.0
    rain_coefficient_db_per_km: float = 0.1  # k_r, dB/km per (mm/h)^a_r
    rain_exponent: float = 1.0  # a_r
    cloud_coefficient_db_per_km: float = 0.5  # k_c, dB/km per g/m^3
    desk_band_count: int = 8
    full_band_width_hz: float = 10.0e6

    # Flowfield
    grid_x1_min_m: float = -100.0
    grid_x1_max_m: float = 100.0
    grid_x2_min_m: float = -60.0
    grid_x2_max_m: float = 40.0
    grid_spacing_m: float = 1.0
    energy_floor: float = 1.0e-6

    # Turbulence
    c0_base: float = 2.8
    c0_scale: Optional[float] = None  # None → reference-scenario calibration, frozen per process
    calibration_seed: int = 0
    rytov_quad_points: int = 1024
    reference_frequency_hz: float = 100.0e9
    attenuation_floor: float = 1.0e-12
    calibration_band_db: List[float] = [18.0, 28.0]
    calibration_mach: float = 0.7

    # Surrogate
    diffusion_steps: int = 200
    beta_start: float = 1.0e-4
    beta_end: float = 0.1  # 200 linear steps up to 0.1 give alpha_bar_T ≈ 3e-5
    hidden_widths: List[int] = [128, 128]
    time_embedding_size: int = 16
    activation: str = "tanh"
    learning_rate: float = 1.0e-3
    momentum: float = 0.9
    batch_size: int = 128
    epochs: int = 200
    early_stop_tol: float = 1.0e-3
    early_stop_patience: int = 10
    b_floor: float = 1.0e-20
    path_samples: int = 96
    dataset_points_per_condition: int = 2000

    # Optimizer
    kkt_tolerance: float = 1.0e-8
    waterfill_tolerance: float = 1.0e-10
    max_bracket_doublings: int = 1000
    alternation_max_iter: int = 50
    alternation_delta_rel: float = 1.0e-6  # δ = alternation_delta_rel · C_max

    # Harness
    random_max_attempts: int = 1000

    class Config:
        env_file = ".env"
        env_prefix = "THZLINK_"
        case_sensitive = False


settings = Settings()
