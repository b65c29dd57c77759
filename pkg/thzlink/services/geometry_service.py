from typing import List, Tuple

import numpy as np

from thzlink.exceptions import DomainError
from thzlink.schemas.scenario import Scenario, SlotGeometry


class GeometryService:
    """Slot geometry along the fixed S→D trajectory"""

    @staticmethod
    def aircraft_x(scenario: Scenario, k: int) -> float:
        """Aircraft x at the midpoint of slot k (1-based)."""
        if not 1 <= k <= scenario.slot_count:
            raise DomainError(f"Slot index {k} outside 1..{scenario.slot_count}")
        return (k - 0.5) * scenario.flight_length_m / scenario.slot_count

    @staticmethod
    def slot_geometry(scenario: Scenario, k: int) -> SlotGeometry:
        x_k = GeometryService.aircraft_x(scenario, k)
        bs_x = scenario.flight_length_m / 2.0
        return SlotGeometry(
            slot_index=k,
            aircraft_x_m=x_k,
            altitude_m=scenario.altitude_m,
            bs_x_m=bs_x,
            range_m=float(np.hypot(x_k - bs_x, scenario.altitude_m)),
        )

    @staticmethod
    def all_slots(scenario: Scenario) -> List[SlotGeometry]:
        return [GeometryService.slot_geometry(scenario, k) for k in range(1, scenario.slot_count + 1)]

    @staticmethod
    def to_body_frame(path: SlotGeometry, x, h) -> Tuple[np.ndarray, np.ndarray]:
        """World (x, h) to aircraft body frame: x1 forward, x2 up, origin at the antenna."""
        return np.asarray(x, dtype=float) - path.aircraft_x_m, np.asarray(h, dtype=float) - path.altitude_m

    @staticmethod
    def body_segment(path: SlotGeometry, x1_bounds, x2_bounds) -> Tuple[float, float]:
        """
        Fractional interval [u0, u1] of the LoS segment lying inside a body-frame box.

        Returns (0, 0) when the segment misses the box.
        """
        d1, d2 = path.bs_x_m - path.aircraft_x_m, -path.altitude_m
        u_lo, u_hi = 0.0, 1.0
        for delta, (lo, hi) in ((d1, x1_bounds), (d2, x2_bounds)):
            if delta == 0.0:
                if not lo <= 0.0 <= hi:
                    return 0.0, 0.0
                continue
            a, b = lo / delta, hi / delta
            u_lo = max(u_lo, min(a, b))
            u_hi = min(u_hi, max(a, b))
        if u_hi <= u_lo:
            return 0.0, 0.0
        return u_lo, u_hi
