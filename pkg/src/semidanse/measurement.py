"""Linear compressed measurement model y_t = H x_t + w_t and SMNR calibration."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import StateTrajectory
from .exceptions import CalibrationError, DimensionError
from .numerics import SeededRng, as_matrix, covariance_factor

# The three measurement matrices used across the experiments.
DENSE_RANDOM_2X3 = "dense2x3"
PARTIAL_2OF3 = "partial23"
EXTREME_1OF3 = "extreme1"
BUILTIN_H_NAMES = (DENSE_RANDOM_2X3, PARTIAL_2OF3, EXTREME_1OF3)

_BUILTIN_H = {
    # 2x3 with i.i.d. standard-normal entries, drawn once and fixed.
    DENSE_RANDOM_2X3: np.array(
        [
            [0.37992, 0.34099, 1.04317],
            [0.98070, -0.70477, 2.17908],
        ]
    ),
    # Observe the second and third state components.
    PARTIAL_2OF3: np.array(
        [
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
        ]
    ),
    # Observe only the first state component.
    EXTREME_1OF3: np.array([[1.0, 0.0, 0.0]]),
}


def builtin_h(name: str) -> np.ndarray:
    """Return a copy of one of the canonical measurement matrices."""
    if name not in _BUILTIN_H:
        raise ValueError(f"unknown builtin H {name!r}; expected one of {BUILTIN_H_NAMES}")
    return _BUILTIN_H[name].copy()


@dataclass(frozen=True)
class MeasModel:
    """Known linear measurement system: H and the noise covariance C_w."""

    h: np.ndarray
    c_w: np.ndarray

    def __post_init__(self):
        h = as_matrix(self.h, "H")
        c_w = as_matrix(self.c_w, "C_w")
        n = h.shape[0]
        if c_w.shape != (n, n):
            raise DimensionError(f"C_w shape {c_w.shape} does not match H rows {n}")
        if np.linalg.eigvalsh(0.5 * (c_w + c_w.T)).min() < -1e-10:
            raise ValueError("C_w must be PSD")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "c_w", c_w)

    @property
    def n(self) -> int:
        return self.h.shape[0]

    @property
    def m(self) -> int:
        return self.h.shape[1]

    @classmethod
    def isotropic(cls, h: np.ndarray, sigma_w2: float) -> "MeasModel":
        h = as_matrix(h, "H")
        return cls(h, sigma_w2 * np.eye(h.shape[0]))


@dataclass(frozen=True)
class MeasTrajectory:
    """Length-T measurement sequence paired with the seed that produced it."""

    measurements: np.ndarray  # (T, n)
    model: MeasModel
    seed: int

    def __post_init__(self):
        meas = np.asarray(self.measurements, dtype=np.float64)
        if meas.ndim != 2:
            raise DimensionError(f"measurements must be (T, n), got {meas.shape}")
        if meas.shape[1] != self.model.n:
            raise DimensionError(
                f"measurement dim {meas.shape[1]} does not match model n {self.model.n}"
            )
        object.__setattr__(self, "measurements", meas)

    def __len__(self) -> int:
        return self.measurements.shape[0]


def measure_states(states: np.ndarray, model: MeasModel, seed: int) -> np.ndarray:
    """Noisy measurements (T, n) of a raw (T, 3) state array."""
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 2 or states.shape[1] != model.m:
        raise DimensionError(
            f"states shape {states.shape} incompatible with H columns {model.m}"
        )
    clean = states @ model.h.T
    gen = SeededRng(seed)
    factor = covariance_factor(model.c_w)
    noise = gen.standard_normal(clean.shape) @ factor.T
    return clean + noise


def measure(states: StateTrajectory, model: MeasModel, seed: int) -> MeasTrajectory:
    """y_t = H x_t + w_t with w_t i.i.d. N(0, C_w); deterministic per seed."""
    return MeasTrajectory(
        measurements=measure_states(states.states, model, seed),
        model=model,
        seed=seed,
    )


def _signal_powers(state_arrays: list[np.ndarray], h: np.ndarray) -> np.ndarray:
    """Per-trajectory centered second moments of {H x_t} over time."""
    powers = np.empty(len(state_arrays))
    for j, states in enumerate(state_arrays):
        hx = np.asarray(states, dtype=np.float64) @ h.T
        centered = hx - hx.mean(axis=0)
        powers[j] = np.mean(np.sum(centered**2, axis=1))
    return powers


def calibrate_sigma_w(states: list[StateTrajectory] | list[np.ndarray], h: np.ndarray,
                      target_smnr_db: float) -> float:
    """Invert the empirical SMNR for the noise variance sigma_w2.

    The per-trajectory SMNR is 10 log10 of the centered sample second moment of
    {H x_t} over n * sigma_w2; the average over trajectories is set equal to
    `target_smnr_db` and solved in closed form.
    """
    h = as_matrix(h, "H")
    arrays = [s.states if isinstance(s, StateTrajectory) else np.asarray(s) for s in states]
    if not arrays:
        raise CalibrationError("no trajectories supplied")
    powers = _signal_powers(arrays, h)
    if np.any(powers <= 0.0):
        raise CalibrationError("a trajectory has zero signal variance under H")
    n = h.shape[0]
    mean_log_power = float(np.mean(np.log10(powers)))
    return 10.0 ** (mean_log_power - target_smnr_db / 10.0) / n


def empirical_smnr_db(states: list[StateTrajectory] | list[np.ndarray], h: np.ndarray,
                      sigma_w2: float) -> float:
    """Empirical SMNR in dB for noise variance sigma_w2 on the given trajectories."""
    h = as_matrix(h, "H")
    arrays = [s.states if isinstance(s, StateTrajectory) else np.asarray(s) for s in states]
    if not arrays:
        raise CalibrationError("no trajectories supplied")
    if sigma_w2 <= 0.0:
        raise CalibrationError("sigma_w2 must be positive")
    powers = _signal_powers(arrays, h)
    if np.any(powers <= 0.0):
        raise CalibrationError("a trajectory has zero signal variance under H")
    n = h.shape[0]
    return float(np.mean(10.0 * np.log10(powers / (n * sigma_w2))))
