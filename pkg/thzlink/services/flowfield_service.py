import logging
import os
import re
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.ndimage import gaussian_filter
from scipy.special import erf

from thzlink.config import settings
from thzlink.exceptions import DomainError, FieldValidationError
from thzlink.schemas.field import FieldGrid, FlightCondition, GridSpec, WakeModelParams

logger = logging.getLogger(__name__)

_AXIS_RE = re.compile(r"^#\s*axis\s+(x1|x2)\s*:\s*(.*)$")
_CONDITION_RE = re.compile(r"^#\s*condition\s+M\s*=\s*([^,\s]+)\s*,\s*alpha_deg\s*=\s*(\S+)\s*$")
_UNITS_RE = re.compile(r"^#\s*units\s+(\S+)\s*$")
_FREESTREAM_RE = re.compile(r"^#\s*freestream\s+(.*)$")


class FlowfieldService:
    """Turbulence fields (T, P, E, W) around the aircraft in the body frame"""

    @staticmethod
    def wake_centerline(x1, attack_deg: float, params: WakeModelParams) -> np.ndarray:
        """Plume centerline height x2 at body-frame x1; the plume starts at the tail and drops with α."""
        downstream = np.maximum(-np.asarray(x1, dtype=float), 0.0)
        return params.tail_height - params.deflection_gain * attack_deg * downstream

    @staticmethod
    def analytic_fields(
        x1,
        x2,
        mach: float,
        attack_deg: float,
        params: WakeModelParams,
        energy_floor: Optional[float] = None,
    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """
        Noise-free wake model evaluated pointwise.

        Args:
            x1: Body-frame forward coordinate(s) (m)
            x2: Body-frame vertical coordinate(s) (m)
            mach: Mach number
            attack_deg: Attack angle (degrees)
            params: Wake coefficients
            energy_floor: Turbulent kinetic energy floor (m²/s²)

        Returns:
            (T, P, E, W) arrays broadcast to the shape of x1, x2
        """
        energy_floor = settings.energy_floor if energy_floor is None else energy_floor
        x1, x2 = np.broadcast_arrays(np.asarray(x1, dtype=float), np.asarray(x2, dtype=float))
        strength = mach ** params.mach_exponent
        tilt = abs(attack_deg)

        radius2 = x1 ** 2 + x2 ** 2
        core = np.exp(-radius2 / (2.0 * params.core_radius ** 2))

        # ∂P/∂x2 = −g·exp(−ρ²/2r²): higher pressure below the body
        lift = params.lift_gradient * (1.0 + params.lift_attack_gain * tilt)
        pressure = params.p_inf - strength * lift * params.lift_radius * np.sqrt(np.pi / 2.0) * erf(
            x2 / (np.sqrt(2.0) * params.lift_radius)
        ) * np.exp(-x1 ** 2 / (2.0 * params.lift_radius ** 2))

        downstream = np.maximum(-x1, 0.0)
        width = params.wake_width + (params.wake_growth + params.wake_attack_growth * tilt) * downstream
        ramp = 1.0 - np.exp(-downstream / params.wake_onset)
        offset = x2 - FlowfieldService.wake_centerline(x1, attack_deg, params)
        plume = (1.0 + params.wake_attack_gain * tilt) * ramp * np.exp(-offset ** 2 / (2.0 * width ** 2))

        temperature = params.t_inf + strength * params.wake_temperature * plume
        energy = energy_floor + strength * (params.core_energy * core + params.wake_energy * plume)
        dissipation = params.w_inf + strength * params.core_dissipation * core
        return temperature, pressure, energy, dissipation

    @staticmethod
    def generate_wake_field(
        mach: float,
        attack_deg: float,
        grid_spec: Optional[GridSpec] = None,
        params: Optional[WakeModelParams] = None,
        seed: int = 0,
    ) -> FieldGrid:
        """
        Parametric wake field for one flight condition.

        Deterministic for a given seed. The seeded modulation is white noise smoothed
        by a Gaussian filter, normalised to unit deviation, and scales the T and E
        perturbations only, so M = 0 gives the pure freestream.
        """
        grid_spec = grid_spec or GridSpec()
        params = params or WakeModelParams()
        if mach < 0:
            raise DomainError(f"Mach number must be non-negative, got {mach}")
        x1_axis, x2_axis = grid_spec.axes()
        if len(x1_axis) <= 1 or len(x2_axis) <= 1:
            raise DomainError(
                f"Degenerate grid: {len(x1_axis)}×{len(x2_axis)} points; need at least 2 per axis"
            )
        X1, X2 = np.meshgrid(x1_axis, x2_axis, indexing="ij")
        temperature, pressure, energy, dissipation = FlowfieldService.analytic_fields(
            X1, X2, mach, attack_deg, params, settings.energy_floor
        )

        amplitude = params.noise_amplitude * (1.0 + params.noise_attack_gain * abs(attack_deg))
        if amplitude > 0 and mach > 0:
            rng = np.random.default_rng(seed)
            noise = gaussian_filter(
                rng.standard_normal(X1.shape), sigma=params.noise_length / grid_spec.spacing, mode="wrap"
            )
            spread = noise.std()
            if spread > 0:
                noise /= spread
            modulation = np.clip(1.0 + amplitude * noise, 0.0, None)
            temperature = params.t_inf + (temperature - params.t_inf) * modulation
            energy = settings.energy_floor + (energy - settings.energy_floor) * modulation

        field = FieldGrid(
            x1_axis=x1_axis,
            x2_axis=x2_axis,
            temperature=temperature,
            pressure=pressure,
            energy=energy,
            dissipation=dissipation,
            condition=FlightCondition(mach=mach, attack_deg=attack_deg),
            t_inf=params.t_inf,
            p_inf=params.p_inf,
            w_inf=params.w_inf,
            energy_floor=settings.energy_floor,
        )
        FlowfieldService.validate_arrays(field)
        logger.info(
            f"Generated wake field M={mach:g}, alpha={attack_deg:g} deg on {field.shape[0]}x{field.shape[1]} grid",
            extra={"mach": mach, "attack_deg": attack_deg, "seed": seed, "max_energy": float(energy.max())},
        )
        return field

    @staticmethod
    def validate_arrays(field: FieldGrid, rows: Optional[Dict[Tuple[int, int], int]] = None) -> None:
        """
        Check the grid invariants, raising FieldValidationError with the offending cell.

        Args:
            field: Field to check
            rows: Optional map from cell (i, j) to the source file line, cited in messages
        """
        def where(i: int, j: int) -> str:
            cell = f"cell ({i}, {j})"
            if rows and (i, j) in rows:
                cell += f" at line {rows[(i, j)]}"
            return cell

        for name, axis in (("x1", field.x1_axis), ("x2", field.x2_axis)):
            if axis.ndim != 1 or len(axis) < 2:
                raise FieldValidationError(f"Axis {name} must hold at least 2 values")
            steps = np.diff(axis)
            if np.any(steps <= 0):
                bad = int(np.argmax(steps <= 0)) + 1
                raise FieldValidationError(f"Axis {name} is not strictly increasing at index {bad}")
        expected = (len(field.x1_axis), len(field.x2_axis))
        for name in ("temperature", "pressure", "energy", "dissipation"):
            values = getattr(field, name)
            if values.shape != expected:
                raise FieldValidationError(f"Matrix {name} has shape {values.shape}, expected {expected}")
            if not np.all(np.isfinite(values)):
                i, j = np.argwhere(~np.isfinite(values))[0]
                raise FieldValidationError(f"Non-finite {name} at {where(int(i), int(j))}")
        for name in ("temperature", "pressure", "dissipation"):
            values = getattr(field, name)
            if np.any(values <= 0):
                i, j = np.argwhere(values <= 0)[0]
                raise FieldValidationError(
                    f"Non-positive {name} {values[i, j]:g} at {where(int(i), int(j))}"
                )
        if np.any(field.energy < 0):
            i, j = np.argwhere(field.energy < 0)[0]
            raise FieldValidationError(f"Negative energy {field.energy[i, j]:g} at {where(int(i), int(j))}")

    @staticmethod
    def export_field(field: FieldGrid, path: str) -> None:
        """Write the field text format; import_field reads it back exactly."""
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "w", encoding="utf-8") as handle:
            handle.write("# axis x1: " + " ".join(f"{v:.17g}" for v in field.x1_axis) + "\n")
            handle.write("# axis x2: " + " ".join(f"{v:.17g}" for v in field.x2_axis) + "\n")
            handle.write(
                f"# condition M={field.condition.mach:.17g}, alpha_deg={field.condition.attack_deg:.17g}\n"
            )
            handle.write("# units SI\n")
            handle.write(
                f"# freestream T={field.t_inf:.17g}, P={field.p_inf:.17g}, "
                f"W={field.w_inf:.17g}, E_floor={field.energy_floor:.17g}\n"
            )
            n1, n2 = field.shape
            for i in range(n1):
                for j in range(n2):
                    handle.write(
                        f"{i} {j} {field.temperature[i, j]:.17g} {field.pressure[i, j]:.17g} "
                        f"{field.energy[i, j]:.17g} {field.dissipation[i, j]:.17g}\n"
                    )
        logger.debug(f"Exported field to {path}")

    @staticmethod
    def import_field(path: str) -> FieldGrid:
        """
        Read and validate a field file.

        Raises:
            FieldValidationError: malformed header or rows, missing or duplicate cells,
                non-monotone axes, non-positive T/P/W or negative E
        """
        if not os.path.exists(path):
            raise FieldValidationError(f"Field file not found: {path}")
        axes: Dict[str, np.ndarray] = {}
        condition = None
        freestream: Dict[str, float] = {}
        cells: Dict[Tuple[int, int], Tuple[int, Tuple[float, float, float, float]]] = {}

        with open(path, "r", encoding="utf-8") as handle:
            for line_no, raw in enumerate(handle, start=1):
                line = raw.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    match = _AXIS_RE.match(line)
                    if match:
                        try:
                            axes[match.group(1)] = np.array([float(v) for v in match.group(2).split()])
                        except ValueError as exc:
                            raise FieldValidationError(f"Line {line_no}: malformed axis values") from exc
                        continue
                    match = _CONDITION_RE.match(line)
                    if match:
                        try:
                            condition = FlightCondition(mach=float(match.group(1)), attack_deg=float(match.group(2)))
                        except ValueError as exc:
                            raise FieldValidationError(f"Line {line_no}: malformed condition") from exc
                        continue
                    match = _UNITS_RE.match(line)
                    if match:
                        if match.group(1).upper() != "SI":
                            raise FieldValidationError(f"Line {line_no}: unsupported units '{match.group(1)}'")
                        continue
                    match = _FREESTREAM_RE.match(line)
                    if match:
                        for item in match.group(1).split(","):
                            key, _, value = item.partition("=")
                            try:
                                freestream[key.strip()] = float(value)
                            except ValueError as exc:
                                raise FieldValidationError(f"Line {line_no}: malformed freestream entry") from exc
                    continue

                parts = line.split()
                if len(parts) != 6:
                    raise FieldValidationError(f"Line {line_no}: expected 'i j T P E W', got {len(parts)} columns")
                try:
                    i, j = int(parts[0]), int(parts[1])
                    values = tuple(float(v) for v in parts[2:])
                except ValueError as exc:
                    raise FieldValidationError(f"Line {line_no}: non-numeric entry") from exc
                if (i, j) in cells:
                    raise FieldValidationError(f"Line {line_no}: duplicate cell ({i}, {j})")
                cells[(i, j)] = (line_no, values)

        for name in ("x1", "x2"):
            if name not in axes:
                raise FieldValidationError(f"Missing '# axis {name}:' header")
        if condition is None:
            raise FieldValidationError("Missing '# condition M=..., alpha_deg=...' header")

        n1, n2 = len(axes["x1"]), len(axes["x2"])
        data = np.full((4, n1, n2), np.nan)
        rows: Dict[Tuple[int, int], int] = {}
        for (i, j), (line_no, values) in cells.items():
            if not (0 <= i < n1 and 0 <= j < n2):
                raise FieldValidationError(f"Line {line_no}: cell ({i}, {j}) outside the {n1}x{n2} grid")
            data[:, i, j] = values
            rows[(i, j)] = line_no
        if len(cells) != n1 * n2:
            missing = next((i, j) for i in range(n1) for j in range(n2) if (i, j) not in cells)
            raise FieldValidationError(
                f"Shape mismatch: {len(cells)} cells for a {n1}x{n2} grid, first missing cell {missing}"
            )

        defaults = WakeModelParams()
        field = FieldGrid.model_construct(
            x1_axis=axes["x1"],
            x2_axis=axes["x2"],
            temperature=data[0],
            pressure=data[1],
            energy=data[2],
            dissipation=data[3],
            condition=condition,
            t_inf=freestream.get("T", defaults.t_inf),
            p_inf=freestream.get("P", defaults.p_inf),
            w_inf=freestream.get("W", defaults.w_inf),
            energy_floor=freestream.get("E_floor", settings.energy_floor),
        )
        FlowfieldService.validate_arrays(field, rows)
        logger.info(f"Imported field {n1}x{n2} from {path}", extra={"mach": condition.mach})
        return field

    @staticmethod
    def sample_field(field: FieldGrid, x1, x2) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """
        Bilinear (T, P, E, W) at body-frame points.

        Points outside the grid box get the freestream (T∞, P∞, E floor, W∞).
        Scalars in give scalars out.
        """
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        scalar = x1.ndim == 0 and x2.ndim == 0
        x1, x2 = np.broadcast_arrays(np.atleast_1d(x1), np.atleast_1d(x2))
        stacked = np.stack([field.temperature, field.pressure, field.energy, field.dissipation], axis=-1)
        interpolator = RegularGridInterpolator((field.x1_axis, field.x2_axis), stacked, method="linear")

        values = np.empty(x1.shape + (4,))
        values[...] = (field.t_inf, field.p_inf, field.energy_floor, field.w_inf)
        inside = field.contains(x1, x2)
        if np.any(inside):
            values[inside] = interpolator(np.column_stack([x1[inside], x2[inside]]))
        if scalar:
            return tuple(float(v) for v in values.reshape(4))
        return values[..., 0], values[..., 1], values[..., 2], values[..., 3]
