"""Three-element (RCR) outlet boundary conditions split by outlet area."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DISTAL_FRACTION = 0.91
PROXIMAL_FRACTION = 0.09


@dataclass
class WindkesselSet:
    """Per-outlet ``(R_p, R_d, C)`` in dyn s/cm^5 and cm^5/dyn; distal pressure is 0."""

    proximal: np.ndarray
    distal: np.ndarray
    capacitance: np.ndarray
    p_mean: float
    q: float
    c_total: float

    @property
    def r_total(self) -> float:
        return self.p_mean / self.q

    def outlet_resistance(self) -> np.ndarray:
        return self.proximal + self.distal


def split_windkessel(p_mean: float, q: float, c_total: float, outlet_areas) -> WindkesselSet:
    areas = np.asarray(outlet_areas, dtype=np.float64)
    if not (p_mean > 0 and q > 0 and c_total > 0):
        raise ValueError("mean pressure, flow and capacitance must be positive")
    if areas.ndim != 1 or len(areas) == 0 or np.any(areas <= 0):
        raise ValueError("outlet areas must be a nonempty list of positive values")
    r = p_mean / q
    share = areas.sum() / areas  # parallel circuit: R_i = R * A_total / A_i
    return WindkesselSet(
        proximal=PROXIMAL_FRACTION * r * share,
        distal=DISTAL_FRACTION * r * share,
        capacitance=c_total * areas / areas.sum(),
        p_mean=p_mean, q=q, c_total=c_total,
    )
