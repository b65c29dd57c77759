import logging
import os
from typing import Iterable, List, Optional, Tuple

import numpy as np

from thzlink.config import settings
from thzlink.exceptions import DomainError
from thzlink.schemas.field import GridSpec, WakeModelParams
from thzlink.schemas.scenario import Scenario
from thzlink.services.flowfield_service import FlowfieldService
from thzlink.services.geometry_service import GeometryService
from thzlink.services.turbulence_service import TurbulenceService

logger = logging.getLogger(__name__)

DATASET_HEADER = "x1 x2 M alpha T P B"


class DatasetService:
    """Training rows (x1, x2, M, α, T, P, B) drawn from generated wake fields"""

    @staticmethod
    def default_conditions() -> List[Tuple[float, float]]:
        """Training grid that brackets the feasible flight sets."""
        return [(m, a) for m in (0.4, 0.5, 0.6, 0.7, 0.8) for a in (-10.0, -5.0, 0.0, 5.0, 10.0)]

    @staticmethod
    def held_out_conditions() -> List[Tuple[float, float]]:
        """Conditions between the training grid nodes."""
        return [(m, a) for m in (0.55, 0.65, 0.75) for a in (-7.5, 2.5, 7.5)]

    @staticmethod
    def generate_dataset(
        scenario: Scenario,
        conditions: Iterable[Tuple[float, float]],
        c0: float,
        params: Optional[WakeModelParams] = None,
        grid_spec: Optional[GridSpec] = None,
        points_per_condition: Optional[int] = None,
        seed: int = 0,
    ) -> np.ndarray:
        """
        Sample the fields of each condition.

        Half of the points lie on the slot LoS segments inside the grid box and half
        are uniform over the box, so the surrogate sees both the paths it will be
        queried on and the surrounding wake.
        """
        params = params or WakeModelParams()
        grid_spec = grid_spec or GridSpec()
        points = settings.dataset_points_per_condition if points_per_condition is None else points_per_condition
        if points < 2:
            raise DomainError(f"Need at least 2 points per condition, got {points}")
        rng = np.random.default_rng(seed)
        x1_bounds = (grid_spec.x1_min, grid_spec.x1_max)
        x2_bounds = (grid_spec.x2_min, grid_spec.x2_max)
        segments = [
            (path, GeometryService.body_segment(path, x1_bounds, x2_bounds))
            for path in GeometryService.all_slots(scenario)
        ]
        segments = [(path, span) for path, span in segments if span[1] > span[0]]

        blocks = []
        for mach, attack in conditions:
            field = FlowfieldService.generate_wake_field(mach, attack, grid_spec, params, seed)
            on_path = points // 2 if segments else 0
            x1 = rng.uniform(*x1_bounds, size=points - on_path)
            x2 = rng.uniform(*x2_bounds, size=points - on_path)
            if on_path:
                picks = rng.integers(0, len(segments), size=on_path)
                path_x1, path_x2 = [], []
                for pick in picks:
                    path, (u0, u1) = segments[pick]
                    x, h = path.point_at(rng.uniform(u0, u1))
                    b1, b2 = GeometryService.to_body_frame(path, x, h)
                    path_x1.append(float(b1))
                    path_x2.append(float(b2))
                x1 = np.concatenate([x1, path_x1])
                x2 = np.concatenate([x2, path_x2])
            T, P, _, _ = FlowfieldService.sample_field(field, x1, x2)
            B = TurbulenceService.structure_parameter_B(field, x1, x2, c0)
            blocks.append(np.column_stack([x1, x2, np.full_like(x1, mach), np.full_like(x1, attack), T, P, B]))
        if not blocks:
            raise DomainError("No flight conditions given")
        dataset = np.vstack(blocks)
        logger.info(f"Generated dataset of {len(dataset)} rows over {len(blocks)} conditions")
        return dataset

    @staticmethod
    def save_dataset(rows: np.ndarray, path: str) -> None:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        np.savetxt(path, rows, fmt="%.17g", header=DATASET_HEADER)

    @staticmethod
    def load_dataset(path: str) -> np.ndarray:
        """Read `x1 x2 M alpha T P B` rows; '#' lines are comments."""
        if not os.path.exists(path):
            raise DomainError(f"Dataset file not found: {path}")
        try:
            rows = np.loadtxt(path, ndmin=2)
        except ValueError as exc:
            raise DomainError(f"Dataset {path} is not numeric: {exc}") from exc
        if rows.size == 0 or rows.shape[1] != 7:
            raise DomainError(f"Dataset {path} must have 7 columns ({DATASET_HEADER}), got shape {rows.shape}")
        if not np.all(np.isfinite(rows)):
            raise DomainError(f"Dataset {path} contains non-finite values")
        return rows
