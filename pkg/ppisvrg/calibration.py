"""Calibration maps (x, f) -> E[Y | X, F] used by the calibrated auxiliary gradient."""
from dataclasses import dataclass, asdict
from typing import Optional, Protocol, Tuple, Dict, Any

import numpy as np


class Calibration(Protocol):
    def __call__(self, x: np.ndarray, f: np.ndarray) -> np.ndarray:
        raise NotImplementedError()

    def to_dict(self) -> Dict[str, Any]:
        raise NotImplementedError()


def sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True)
class AffineCalibration:
    """E[Y | X, F] = slope * F + intercept (continuous outcomes)."""
    slope: float = 1.0
    intercept: float = 0.0

    def __call__(self, x: np.ndarray, f: np.ndarray) -> np.ndarray:
        return self.slope * np.asarray(f, dtype=float) + self.intercept

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": "affine", **asdict(self)}


@dataclass(frozen=True)
class FlipCalibration:
    """
    P(Y = 1 | X, F) for hard predictions that disagree with Y with
    probability flip_prob, obtained by Bayes' rule from the base rate.

    The base rate is the constant prevalence when theta is None, otherwise
    sigmoid(x . theta) of the raw features.

    Attributes:
        flip_prob (float): Disagreement probability P(F != Y).
        prevalence (float): Marginal P(Y = 1), used when theta is None.
        theta (Optional[Tuple[float, ...]]): Logistic parameter of P(Y = 1 | X).
    """
    flip_prob: float
    prevalence: float = 0.5
    theta: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if not 0.0 <= self.flip_prob <= 0.5:
            raise ValueError(f"flip_prob must lie in [0, 0.5], got {self.flip_prob}")
        if not 0.0 < self.prevalence < 1.0:
            raise ValueError(f"prevalence must lie in (0, 1), got {self.prevalence}")

    def base_rate(self, x: np.ndarray, num: int) -> np.ndarray:
        if self.theta is None:
            return np.full(num, self.prevalence)
        x = np.asarray(x, dtype=float).reshape(num, -1)
        return sigmoid(x @ np.asarray(self.theta, dtype=float))

    def __call__(self, x: np.ndarray, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        s = self.base_rate(x, f.shape[0])
        q = self.flip_prob
        p_if_one = s * (1 - q) / (s * (1 - q) + (1 - s) * q)
        p_if_zero = s * q / (s * q + (1 - s) * (1 - q))
        # soft predictions interpolate between the two hard cases
        return f * p_if_one + (1 - f) * p_if_zero

    def to_dict(self) -> Dict[str, Any]:
        theta = list(self.theta) if self.theta is not None else None
        return {"kind": "flip", "flip_prob": self.flip_prob,
                "prevalence": self.prevalence, "theta": theta}


def make_calibration(params: Dict[str, Any]) -> Calibration:
    """
    Build a calibration map from its dictionary form.

    Args:
        params (Dict[str, Any]): The output of ``to_dict`` or a config block.

    Returns:
        Calibration: The calibration map.
    """
    params = dict(params)
    kind = params.pop("kind", None)
    if kind == "affine":
        return AffineCalibration(**params)
    if kind == "flip":
        theta = params.pop("theta", None)
        return FlipCalibration(theta=tuple(theta) if theta is not None else None, **params)
    raise ValueError(f"unknown calibration kind '{kind}', expected 'affine' or 'flip'")
