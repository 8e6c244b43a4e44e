"""Performance measures: NMSE over states and empirical SMNR."""

from __future__ import annotations

import numpy as np

from .exceptions import CalibrationError, DimensionError
from .measurement import MeasModel, empirical_smnr_db

# Perfect estimates would give -inf dB; they are floored so that averages
# over trajectories stay finite.
NMSE_FLOOR_DB = -300.0


def nmse_db_per_trajectory(truth: list[np.ndarray], estimates: list[np.ndarray],
                           coords: list[int] | None = None) -> np.ndarray:
    """Per-trajectory 10*log10(sum ||x - xhat||^2 / sum ||x||^2).

    `coords` restricts both numerator and denominator to a subset of state
    coordinates (e.g. [0] for the first component).
    """
    if len(truth) != len(estimates):
        raise DimensionError("truth and estimates must have the same number of trajectories")
    out = np.empty(len(truth))
    for j, (x, xh) in enumerate(zip(truth, estimates)):
        x = np.asarray(x, dtype=np.float64)
        xh = np.asarray(xh, dtype=np.float64)
        if x.shape != xh.shape:
            raise DimensionError(f"trajectory {j}: shapes {x.shape} vs {xh.shape}")
        if coords is not None:
            x = x[:, coords]
            xh = xh[:, coords]
        denom = float(np.sum(x**2))
        if denom == 0.0:
            raise CalibrationError(f"trajectory {j}: all-zero truth, NMSE undefined")
        ratio = float(np.sum((x - xh) ** 2)) / denom
        out[j] = max(10.0 * np.log10(ratio), NMSE_FLOOR_DB) if ratio > 0.0 else NMSE_FLOOR_DB
    return out


def nmse_db(truth: list[np.ndarray], estimates: list[np.ndarray],
            coords: list[int] | None = None) -> float:
    """Average of the per-trajectory NMSE values, in dB."""
    return float(np.mean(nmse_db_per_trajectory(truth, estimates, coords)))


def nmse_stderr_db(truth: list[np.ndarray], estimates: list[np.ndarray],
                   coords: list[int] | None = None) -> float:
    """Standard error of the per-trajectory NMSE values."""
    per = nmse_db_per_trajectory(truth, estimates, coords)
    if len(per) < 2:
        return 0.0
    return float(np.std(per, ddof=1) / np.sqrt(len(per)))


def smnr_db(states: list[np.ndarray], model: MeasModel, sigma_w2: float) -> float:
    """Empirical signal-to-measurement-noise ratio in dB."""
    return empirical_smnr_db(states, model.h, sigma_w2)
