import csv
import logging
import os
from typing import List, Optional, Tuple

import numpy as np

from thzlink.config import settings
from thzlink.exceptions import DomainError
from thzlink.schemas.field import FieldGrid
from thzlink.schemas.scenario import SlotGeometry
from thzlink.schemas.turbulence import FadingParams, StructureSample, TurbulenceLoss
from thzlink.services.flowfield_service import FlowfieldService
from thzlink.services.geometry_service import GeometryService
from thzlink.utils.units import SPEED_OF_LIGHT

logger = logging.getLogger(__name__)

POTENTIAL_EXPONENT = 0.286
RYTOV_PREFACTOR = 2.25
ALTITUDE_WEIGHT_EXPONENT = 5.0 / 6.0


def potential_temperature(temperature, pressure_pa):
    """θ = T·(1000/P)^0.286 with P in hPa."""
    return np.asarray(temperature, dtype=float) * np.power(
        1000.0 / (np.asarray(pressure_pa, dtype=float) / 100.0), POTENTIAL_EXPONENT
    )


def weighted_interval_integrals(B_values, s_values) -> np.ndarray:
    """
    ∫B·s^{5/6}dt over each sample interval, t ∈ [0, 1].

    B is linear between samples and the weight is integrated exactly, which keeps
    the rule second order up to the s = 0 endpoint. Moments go through log1p/expm1
    on thin intervals.
    """
    B_values = np.asarray(B_values, dtype=float)
    s_values = np.clip(np.asarray(s_values, dtype=float), 0.0, None)
    p = ALTITUDE_WEIGHT_EXPONENT
    b0, b1 = B_values[:-1], B_values[1:]
    s0, s1 = s_values[:-1], s_values[1:]

    flat = s0 == s1
    from_zero = (s0 == 0.0) & ~flat
    r = np.where(flat | from_zero, 1.0, (s1 - s0) / np.where(s0 > 0.0, s0, 1.0))
    with np.errstate(divide="ignore"):
        log_ratio = np.log1p(r)
    first = np.expm1((p + 1.0) * log_ratio) / (p + 1.0)
    second = np.expm1((p + 2.0) * log_ratio) / (p + 2.0)

    base = np.power(s0, p)
    top = np.power(s1, p)
    m0 = np.where(flat, base, base * first / r)
    m1 = np.where(flat, 0.5 * base, base * (second - first) / r ** 2)
    m0 = np.where(from_zero, top / (p + 1.0), m0)
    m1 = np.where(from_zero, top / (p + 2.0), m1)
    return b0 * (m0 - m1) + b1 * m1


class TurbulenceService:
    """Structure parameter, path-integrated Rytov variance and fading loss"""

    @staticmethod
    def potential_gradient(field: FieldGrid, x1, x2) -> np.ndarray:
        """∂θ/∂x2 by central difference with one grid spacing; one-sided at the box edges."""
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        step = field.x2_spacing
        top, bottom = field.x2_axis[-1], field.x2_axis[0]
        up = np.where(x2 + step <= top, x2 + step, x2)
        down = np.where(x2 - step >= bottom, x2 - step, x2)
        T_up, P_up, _, _ = FlowfieldService.sample_field(field, x1, up)
        T_dn, P_dn, _, _ = FlowfieldService.sample_field(field, x1, down)
        span = up - down
        return (potential_temperature(T_up, P_up) - potential_temperature(T_dn, P_dn)) / np.where(
            span > 0, span, 1.0
        )

    @staticmethod
    def structure_parameter_B(field: FieldGrid, x1, x2, c0: Optional[float] = None):
        """
        B = c0·(√(E·W))^{4/3}/T²·(∂θ/∂h)² at body-frame points.

        Zero outside the field box, where the freestream is uniform.
        """
        c0 = settings.c0_base if c0 is None else c0
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        scalar = x1.ndim == 0 and x2.ndim == 0
        x1, x2 = np.broadcast_arrays(np.atleast_1d(x1), np.atleast_1d(x2))
        T, _, E, W = FlowfieldService.sample_field(field, x1, x2)
        gradient = TurbulenceService.potential_gradient(field, x1, x2)
        B = c0 * np.power(np.sqrt(np.maximum(E * W, 0.0)), 4.0 / 3.0) / T ** 2 * gradient ** 2
        B = np.where(field.contains(x1, x2), B, 0.0)
        return float(B[0]) if scalar else B

    @staticmethod
    def structure_sample(field: FieldGrid, x1: float, x2: float, c0: Optional[float] = None) -> StructureSample:
        c0 = settings.c0_base if c0 is None else c0
        T, P, E, W = FlowfieldService.sample_field(field, x1, x2)
        return StructureSample(
            point=(x1, x2), B=TurbulenceService.structure_parameter_B(field, x1, x2, c0), T=T, P=P, E=E, W=W, c0=c0
        )

    @staticmethod
    def rytov_variance_from_profile(
        B_values,
        altitudes_m,
        segment_length_m: float,
        f_hz: float,
        H: float,
        h0: float,
    ) -> float:
        """
        σ² = 2.25(2πf/c)^{7/6}(H−h0)^{5/6}∫B·((h−h0)/(H−h0))^{5/6}dr on equally spaced samples.

        Product rule: B is linear between samples, the altitude weight is exact.

        Args:
            B_values: Structure parameter at each sample
            altitudes_m: Altitude h of each sample
            segment_length_m: Path length covered by the samples
            f_hz: Carrier frequency
            H: Flight altitude
            h0: Ground reference height
        """
        B_values = np.asarray(B_values, dtype=float)
        altitudes_m = np.asarray(altitudes_m, dtype=float)
        if f_hz <= 0:
            raise DomainError(f"Frequency must be positive, got {f_hz}")
        if H <= h0:
            raise DomainError(f"Altitude {H} must exceed ground reference {h0}")
        if len(B_values) < 2:
            raise DomainError(f"Rytov quadrature needs at least 2 samples, got {len(B_values)}")
        if segment_length_m <= 0:
            return 0.0
        step = segment_length_m / (len(B_values) - 1)
        integral = step * float(np.sum(weighted_interval_integrals(B_values, (altitudes_m - h0) / (H - h0))))
        prefactor = RYTOV_PREFACTOR * (2.0 * np.pi * f_hz / SPEED_OF_LIGHT) ** (7.0 / 6.0) * (H - h0) ** (5.0 / 6.0)
        return float(max(prefactor * integral, 0.0))

    @staticmethod
    def field_bounds(field: FieldGrid):
        return (field.x1_axis[0], field.x1_axis[-1]), (field.x2_axis[0], field.x2_axis[-1])

    @staticmethod
    def path_samples(path: SlotGeometry, x1_bounds, x2_bounds, n_quad: int):
        """
        Equally spaced samples of the LoS segment clipped to a body-frame box.

        Returns:
            (x1, x2, h, segment_length) or None when the path misses the box
        """
        if n_quad < 2:
            raise DomainError(f"Rytov quadrature needs at least 2 samples, got {n_quad}")
        u0, u1 = GeometryService.body_segment(path, x1_bounds, x2_bounds)
        if u1 <= u0:
            return None
        u = np.linspace(u0, u1, n_quad)
        x, h = path.point_at(u)
        x1, x2 = GeometryService.to_body_frame(path, x, h)
        return x1, x2, h, (u1 - u0) * path.range_m

    @staticmethod
    def rytov_variance(
        field: FieldGrid,
        path: SlotGeometry,
        f_hz: float,
        H: float,
        h0: float,
        n_quad: Optional[int] = None,
        c0: Optional[float] = None,
    ) -> float:
        """Path-integrated Rytov variance of one slot's LoS under the given field."""
        n_quad = settings.rytov_quad_points if n_quad is None else n_quad
        samples = TurbulenceService.path_samples(path, *TurbulenceService.field_bounds(field), n_quad)
        if samples is None:
            return 0.0
        x1, x2, h, length = samples
        B = TurbulenceService.structure_parameter_B(field, x1, x2, c0)
        return TurbulenceService.rytov_variance_from_profile(B, h, length, f_hz, H, h0)

    @staticmethod
    def fading_parameters(sigma2: float, f_hz: float, r_m: float) -> FadingParams:
        """
        Large- and small-scale fading parameters.

        D uses the wavenumber-like f/c (1/m) so that it is dimensionless; σ^{12/5}
        is (σ²)^{6/5}. At σ² = 0 both parameters are +inf with zero reciprocals.
        """
        if sigma2 < 0 or f_hz <= 0 or r_m <= 0:
            raise DomainError(f"Invalid fading inputs sigma2={sigma2}, f={f_hz}, r={r_m}")
        l = (SPEED_OF_LIGHT / f_hz) / np.pi
        D2 = np.pi * (f_hz / SPEED_OF_LIGHT) * l ** 2 / (2.0 * r_m)
        a, b = TurbulenceService.fading_exponents(sigma2, D2)
        inv_alpha = float(np.expm1(a))
        inv_beta = float(np.expm1(b))
        return FadingParams(
            sigma2=sigma2,
            D=float(np.sqrt(D2)),
            alpha_ls=1.0 / inv_alpha if inv_alpha > 0 else float("inf"),
            beta_ss=1.0 / inv_beta if inv_beta > 0 else float("inf"),
            inv_alpha_ls=inv_alpha,
            inv_beta_ss=inv_beta,
            l=l,
            f=f_hz,
            r=r_m,
        )

    @staticmethod
    def fading_exponents(sigma2: float, D2: float) -> Tuple[float, float]:
        """The two exponents a, b with 1/α = e^a − 1 and 1/β = e^b − 1."""
        s125 = sigma2 ** 1.2
        a = 0.49 * sigma2 / (1.0 + 0.18 * D2 + 0.56 * s125) ** (7.0 / 6.0)
        b = (
            0.51 * sigma2 * (1.0 + 0.69 * D2 * s125) ** (-5.0 / 6.0)
            / (1.0 + 0.9 * D2 + 0.62 * s125) ** (7.0 / 6.0)
        )
        return a, b

    @staticmethod
    def scintillation(params: FadingParams) -> float:
        """s = 1/α + 1/β + 1/(αβ)."""
        return params.inv_alpha_ls + params.inv_beta_ss + params.inv_alpha_ls * params.inv_beta_ss

    @staticmethod
    def loss_from_scintillation(s: float, floor: Optional[float] = None) -> Tuple[float, bool]:
        """(−10·log10 max(|1 − √s|, floor) clamped at 0 dB, clamped flag)."""
        floor = settings.attenuation_floor if floor is None else floor
        magnitude = abs(1.0 - np.sqrt(s))
        clamped = False
        if magnitude < floor:
            magnitude = floor
            clamped = True
        loss_db = float(-10.0 * np.log10(magnitude))
        if loss_db < 0:
            clamped = True
        return (loss_db if loss_db > 0 else 0.0), clamped

    @staticmethod
    def turbulence_attenuation_db(params: FadingParams, floor: Optional[float] = None) -> TurbulenceLoss:
        """
        Loss −10·log10|1 − √s| in dB, reported as a non-negative number.

        |1 − √s| is floored at `floor` and negative losses are clamped to 0 dB; either
        case sets the clamped flag.
        """
        s = TurbulenceService.scintillation(params)
        loss_db, clamped = TurbulenceService.loss_from_scintillation(s, floor)
        if clamped:
            logger.warning(
                f"Clamped turbulence loss at s={s:.6g}",
                extra={"sigma2": params.sigma2, "f_hz": params.f, "r_m": params.r},
            )
        return TurbulenceLoss(
            loss_db=loss_db, loss_linear=float(10.0 ** (loss_db / 10.0)), scintillation=float(s), clamped=clamped
        )

    @staticmethod
    def attenuation_for_bands(
        sigma2_ref: float,
        f_ref_hz: float,
        frequencies_hz,
        r_m: float,
        floor: Optional[float] = None,
    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Per-band loss from a reference Rytov variance via σ²(f) = σ²_ref·(f/f_ref)^{7/6}.

        Vectorised form of fading_parameters followed by turbulence_attenuation_db.

        Returns:
            (loss_db, loss_linear, clamped) arrays over the bands
        """
        floor = settings.attenuation_floor if floor is None else floor
        if f_ref_hz <= 0 or r_m <= 0 or sigma2_ref < 0:
            raise DomainError(f"Invalid band-loss inputs sigma2={sigma2_ref}, f_ref={f_ref_hz}, r={r_m}")
        frequencies_hz = np.atleast_1d(np.asarray(frequencies_hz, dtype=float))
        if np.any(frequencies_hz <= 0):
            raise DomainError("Band frequencies must be positive")
        sigma2 = sigma2_ref * (frequencies_hz / f_ref_hz) ** (7.0 / 6.0)
        l = (SPEED_OF_LIGHT / frequencies_hz) / np.pi
        D2 = np.pi * (frequencies_hz / SPEED_OF_LIGHT) * l ** 2 / (2.0 * r_m)
        a, b = TurbulenceService.fading_exponents(sigma2, D2)
        inv_alpha, inv_beta = np.expm1(a), np.expm1(b)
        s = inv_alpha + inv_beta + inv_alpha * inv_beta
        magnitude = np.abs(1.0 - np.sqrt(s))
        clamped = magnitude < floor
        loss_db = -10.0 * np.log10(np.maximum(magnitude, floor))
        clamped |= loss_db < 0
        loss_db = np.where(loss_db > 0, loss_db, 0.0)
        if np.any(clamped):
            logger.warning(
                f"Clamped turbulence loss on {int(clamped.sum())} of {len(clamped)} bands",
                extra={"sigma2_ref": sigma2_ref, "r_m": r_m},
            )
        return loss_db, np.power(10.0, loss_db / 10.0), clamped

    @staticmethod
    def diagnostics(
        field: FieldGrid,
        path: SlotGeometry,
        f_hz: float,
        H: float,
        h0: float,
        n_quad: Optional[int] = None,
        c0: Optional[float] = None,
    ) -> List[dict]:
        """Per-sample (x1, x2, h, B, running σ²) along the clipped path."""
        n_quad = settings.rytov_quad_points if n_quad is None else n_quad
        samples = TurbulenceService.path_samples(path, *TurbulenceService.field_bounds(field), n_quad)
        if samples is None:
            return []
        x1, x2, h, length = samples
        B = TurbulenceService.structure_parameter_B(field, x1, x2, c0)
        prefactor = RYTOV_PREFACTOR * (2.0 * np.pi * f_hz / SPEED_OF_LIGHT) ** (7.0 / 6.0) * (H - h0) ** (5.0 / 6.0)
        pieces = weighted_interval_integrals(B, (h - h0) / (H - h0))
        running = prefactor * length / (n_quad - 1) * np.concatenate([[0.0], np.cumsum(pieces)])
        return [
            {
                "slot": path.slot_index,
                "sample": index,
                "x1_m": float(x1[index]),
                "x2_m": float(x2[index]),
                "h_m": float(h[index]),
                "B": float(B[index]),
                "sigma2_running": float(running[index]),
            }
            for index in range(n_quad)
        ]

    @staticmethod
    def write_diagnostics(path: str, samples: List[dict]) -> None:
        """Dump diagnostic rows as CSV."""
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        columns = ["slot", "sample", "x1_m", "x2_m", "h_m", "B", "sigma2_running"]
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.DictWriter(handle, fieldnames=columns)
            writer.writeheader()
            for row in samples:
                writer.writerow({key: (f"{row[key]:.10g}" if isinstance(row[key], float) else row[key]) for key in columns})
        logger.info(f"Wrote {len(samples)} turbulence diagnostic rows to {path}")
