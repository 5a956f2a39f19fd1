"""Per-sample losses, gradients and the auxiliary gradient of the PPI objective"""
from __future__ import annotations
from enum import Enum
from math import exp, log1p
from dataclasses import dataclass, replace
from typing import Optional, Dict, Any
import logging

import numpy as np
from numba import njit

from ppisvrg.calibration import Calibration
from ppisvrg.data import SplitDataset

logging.getLogger('numba').setLevel(logging.WARNING)

# kernel codes; both logistic kinds share one kernel
MEAN_SQ, RIDGE, LOGISTIC = 0, 1, 2


class LossKind(str, Enum):
    MEAN_SQ = "mean_sq"
    RIDGE = "ridge"
    LOGISTIC_L2 = "logistic_l2"
    LOGISTIC_PLAIN = "logistic_plain"

    @property
    def code(self) -> int:
        if self == LossKind.MEAN_SQ:
            return MEAN_SQ
        if self == LossKind.RIDGE:
            return RIDGE
        return LOGISTIC

    @property
    def is_logistic(self) -> bool:
        return self.code == LOGISTIC


class AuxMode(str, Enum):
    G_EQUALS_ELL = "g_equals_ell"
    CALIBRATED = "calibrated"


class CalibrationMissingError(ValueError):
    """Calibrated auxiliary requested without a calibration map."""


@dataclass(frozen=True)
class LossModel:
    """
    A per-sample loss together with its auxiliary gradient and constants.

    The auxiliary gradient is the loss gradient evaluated at the auxiliary
    label: f itself (g = l) or the calibrated conditional mean E[Y | X, F].
    All three losses are affine in the label, so this equals
    E[grad l(theta, X, Y) | X, F] whenever the calibration is exact.

    Attributes:
        kind (LossKind): Which loss.
        regularization (float): Ridge penalty, added to every sample's loss.
        aux_mode (AuxMode): Choice of auxiliary function g.
        calibration (Optional[Calibration]): Map (x, f) -> E[Y | X, F].
        smoothness_lambda (Optional[float]): Per-sample smoothness; see certify().
        strong_convexity_gamma (Optional[float]): Strong convexity of L^n; see certify().
        fit_intercept (bool): Append a constant feature for regression losses.
        compensated (bool): Kahan summation in full-gradient reductions.
    """
    kind: LossKind = LossKind.MEAN_SQ
    regularization: float = 0.0
    aux_mode: AuxMode = AuxMode.G_EQUALS_ELL
    calibration: Optional[Calibration] = None
    smoothness_lambda: Optional[float] = None
    strong_convexity_gamma: Optional[float] = None
    fit_intercept: bool = False
    compensated: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", LossKind(self.kind))
        object.__setattr__(self, "aux_mode", AuxMode(self.aux_mode))
        if self.regularization < 0:
            raise ValueError(f"regularization must be >= 0, got {self.regularization}")
        if self.kind == LossKind.MEAN_SQ and self.regularization != 0:
            raise ValueError("mean_sq takes no regularization")
        if self.kind == LossKind.LOGISTIC_PLAIN and self.regularization != 0:
            raise ValueError("logistic_plain takes no regularization; use logistic_l2")
        if self.kind in (LossKind.RIDGE, LossKind.LOGISTIC_L2) and self.regularization <= 0:
            raise ValueError(f"{self.kind.value} needs regularization > 0")
        if self.smoothness_lambda is not None and self.smoothness_lambda <= 0:
            raise ValueError(f"smoothness_lambda must be > 0, got {self.smoothness_lambda}")
        if self.strong_convexity_gamma is not None:
            if self.strong_convexity_gamma < 0:
                raise ValueError(
                    f"strong_convexity_gamma must be >= 0, got {self.strong_convexity_gamma}")
            if self.kind == LossKind.LOGISTIC_PLAIN and self.strong_convexity_gamma != 0:
                raise ValueError("logistic_plain has strong_convexity_gamma = 0")
        if self.aux_mode == AuxMode.CALIBRATED and self.calibration is None:
            raise CalibrationMissingError("aux_mode 'calibrated' requires a calibration map")

    def features(self, x: np.ndarray) -> np.ndarray:
        """Design matrix for the kernels; mean_sq ignores features entirely."""
        x = np.asarray(x, dtype=np.float64)
        x = x.reshape(1, -1) if x.ndim == 1 else x
        if self.kind == LossKind.MEAN_SQ:
            return np.zeros((x.shape[0], 0))
        if self.fit_intercept:
            x = np.concatenate((x, np.ones((x.shape[0], 1))), axis=1)
        return np.ascontiguousarray(x)

    def param_dim(self, data_dim: int) -> int:
        if self.kind == LossKind.MEAN_SQ:
            return 1
        return data_dim + (1 if self.fit_intercept else 0)

    def aux_labels(self, x: np.ndarray, f: np.ndarray) -> np.ndarray:
        """Labels at which the auxiliary gradient evaluates the loss gradient."""
        f = np.ascontiguousarray(np.asarray(f, dtype=np.float64))
        if self.aux_mode == AuxMode.CALIBRATED:
            if self.calibration is None:
                raise CalibrationMissingError("aux_mode 'calibrated' requires a calibration map")
            return np.ascontiguousarray(self.calibration(x, f), dtype=np.float64)
        if self.kind.is_logistic and not np.all(np.isin(f, (0.0, 1.0))):
            raise ValueError(
                "g = l with a logistic loss needs hard predictions in {0, 1}; "
                "use aux_mode 'calibrated' for probabilistic predictions")
        return f

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "regularization": self.regularization,
            "aux_mode": self.aux_mode.value,
            "calibration": self.calibration.to_dict() if self.calibration is not None else None,
            "smoothness_lambda": self.smoothness_lambda,
            "strong_convexity_gamma": self.strong_convexity_gamma,
            "fit_intercept": self.fit_intercept,
            "compensated": self.compensated,
        }


@njit
def _dot(theta: np.ndarray, x: np.ndarray) -> float:
    z = 0.0
    for j in range(x.shape[0]):
        z += theta[j] * x[j]
    return z


@njit
def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + exp(-z))
    ez = exp(z)
    return ez / (1.0 + ez)


@njit
def _softplus(z: float) -> float:
    return max(z, 0.0) + log1p(exp(-abs(z)))


@njit
def sample_loss(kind: int, reg: float, theta: np.ndarray, x: np.ndarray, y: float) -> float:
    """
    Loss of one sample.

    Logistic: log(1 + exp(-y~ z)) with y~ = 2y - 1 and z = theta . x, written
    as softplus(z) - y z, which agrees for y in {0, 1} and extends to soft labels.
    """
    if kind == MEAN_SQ:
        r = theta[0] - y
        return 0.5 * r * r
    z = _dot(theta, x)
    if kind == RIDGE:
        r = z - y
        base = 0.5 * r * r
    else:
        base = _softplus(z) - y * z
    sq = 0.0
    for j in range(theta.shape[0]):
        sq += theta[j] * theta[j]
    return base + 0.5 * reg * sq


@njit
def sample_grad_into(kind: int, reg: float, theta: np.ndarray, x: np.ndarray, y: float,
                     out: np.ndarray):
    if kind == MEAN_SQ:
        out[0] = theta[0] - y
        return
    z = _dot(theta, x)
    if kind == RIDGE:
        c = z - y
    else:
        c = _sigmoid(z) - y
    for j in range(theta.shape[0]):
        out[j] = c * x[j] + reg * theta[j]


@njit
def mean_grad(kind: int, reg: float, theta: np.ndarray, x: np.ndarray, y: np.ndarray,
              compensated: bool) -> np.ndarray:
    """Mean of per-sample gradients, accumulated left to right in record order."""
    k = theta.shape[0]
    num = y.shape[0]
    acc = np.zeros(k)
    carry = np.zeros(k)
    g = np.empty(k)
    for i in range(num):
        sample_grad_into(kind, reg, theta, x[i], y[i], g)
        if compensated:
            for j in range(k):
                term = g[j] - carry[j]
                total = acc[j] + term
                carry[j] = (total - acc[j]) - term
                acc[j] = total
        else:
            for j in range(k):
                acc[j] += g[j]
    for j in range(k):
        acc[j] /= num
    return acc


@njit
def mean_loss(kind: int, reg: float, theta: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    total = 0.0
    for i in range(y.shape[0]):
        total += sample_loss(kind, reg, theta, x[i], y[i])
    return total / y.shape[0]


def _theta(theta) -> np.ndarray:
    theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta has non-finite entries")
    return np.ascontiguousarray(theta)


def _check_dims(model: LossModel, theta: np.ndarray, x: np.ndarray):
    expected = 1 if model.kind == LossKind.MEAN_SQ else x.shape[-1]
    if theta.shape[0] != expected:
        raise ValueError(
            f"dimension mismatch: theta has {theta.shape[0]} entries, "
            f"{model.kind.value} on these features needs {expected}")


def _row(x) -> np.ndarray:
    """One feature vector; None stands for the empty vector of d = 0 data."""
    return np.zeros(0) if x is None else np.asarray(x, dtype=np.float64).reshape(-1)


def loss(model: LossModel, theta, x, y: float) -> float:
    theta = _theta(theta)
    feats = model.features(_row(x))[0]
    _check_dims(model, theta, feats)
    return sample_loss(model.kind.code, model.regularization, theta, feats, float(y))


def grad(model: LossModel, theta, x, y: float) -> np.ndarray:
    theta = _theta(theta)
    feats = model.features(_row(x))[0]
    _check_dims(model, theta, feats)
    out = np.empty(theta.shape[0])
    sample_grad_into(model.kind.code, model.regularization, theta, feats, float(y), out)
    return out


def aux_grad(model: LossModel, theta, x, f: float) -> np.ndarray:
    x = _row(x).reshape(1, -1)
    label = model.aux_labels(x, np.array([float(f)]))[0]
    return grad(model, theta, x[0], label)


def full_grad(model: LossModel, theta, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Arithmetic mean of per-sample gradients over the records (x, y)."""
    theta = _theta(theta)
    y = np.ascontiguousarray(np.asarray(y, dtype=np.float64))
    if y.shape[0] == 0:
        raise ValueError("full_grad needs a non-empty record set")
    x = np.zeros((y.shape[0], 0)) if x is None else np.asarray(x, dtype=float)
    feats = model.features(x.reshape(y.shape[0], -1))
    _check_dims(model, theta, feats)
    return mean_grad(model.kind.code, model.regularization, theta, feats, y, model.compensated)


@dataclass(frozen=True)
class KernelData:
    """Contiguous kernel inputs of a dataset under one loss model."""
    x_lab: np.ndarray
    y_lab: np.ndarray
    aux_lab: np.ndarray
    x_all: np.ndarray
    aux_all: np.ndarray


def kernel_data(model: LossModel, ds: SplitDataset) -> KernelData:
    aux_all = model.aux_labels(ds.x_all, ds.f_all)
    return KernelData(
        x_lab=model.features(ds.x_lab),
        y_lab=np.ascontiguousarray(ds.y_lab),
        aux_lab=np.ascontiguousarray(aux_all[:ds.n]),
        x_all=model.features(ds.x_all),
        aux_all=aux_all)


def labeled_data(model: LossModel, ds: SplitDataset) -> KernelData:
    """Kernel inputs for plain SVRG: the control variate is l itself on the labeled records."""
    x_lab = model.features(ds.x_lab)
    y_lab = np.ascontiguousarray(ds.y_lab)
    return KernelData(x_lab=x_lab, y_lab=y_lab, aux_lab=y_lab, x_all=x_lab, aux_all=y_lab)


def ppi_objective_grad(model: LossModel, theta, ds: SplitDataset,
                       data: Optional[KernelData] = None) -> np.ndarray:
    """
    Gradient of the PPI objective:
    mean_lab grad l + mean_all grad g - mean_lab grad g.
    """
    theta = _theta(theta)
    data = data if data is not None else kernel_data(model, ds)
    _check_dims(model, theta, data.x_lab)
    code, reg, comp = model.kind.code, model.regularization, model.compensated
    labeled = mean_grad(code, reg, theta, data.x_lab, data.y_lab, comp)
    pooled = mean_grad(code, reg, theta, data.x_all, data.aux_all, comp)
    rectifier = mean_grad(code, reg, theta, data.x_lab, data.aux_lab, comp)
    return labeled + (pooled - rectifier)


def objective(model: LossModel, theta, ds: SplitDataset, target: str = "labeled",
              data: Optional[KernelData] = None) -> float:
    """
    Value of the labeled empirical loss L^n ('labeled') or of the PPI
    objective ('ppi'), with g evaluated as the loss at the auxiliary label.
    """
    if target not in ("labeled", "ppi"):
        raise ValueError(f"unknown objective target '{target}', expected 'labeled' or 'ppi'")
    theta = _theta(theta)
    if data is None:
        data = kernel_data(model, ds) if target == "ppi" else labeled_data(model, ds)
    code, reg = model.kind.code, model.regularization
    labeled = mean_loss(code, reg, theta, data.x_lab, data.y_lab)
    if target == "labeled":
        return labeled
    pooled = mean_loss(code, reg, theta, data.x_all, data.aux_all)
    rectifier = mean_loss(code, reg, theta, data.x_lab, data.aux_lab)
    return labeled + (pooled - rectifier)


def smoothness_for(model: LossModel, ds: SplitDataset) -> float:
    """Certified per-sample smoothness over every record's features."""
    if model.kind == LossKind.MEAN_SQ:
        return 1.0
    feats = model.features(ds.x_all)
    max_sq_norm = float(np.max(np.sum(feats**2, axis=1))) if feats.shape[1] else 0.0
    scale = 0.25 if model.kind.is_logistic else 1.0
    return max(scale * max_sq_norm + model.regularization, np.finfo(float).tiny)


def strong_convexity_for(model: LossModel, ds: SplitDataset) -> float:
    """Strong convexity of L^n: exact for quadratics, the penalty for logistic losses."""
    if model.kind == LossKind.MEAN_SQ:
        return 1.0
    if model.kind == LossKind.RIDGE:
        feats = model.features(ds.x_lab)
        hessian = feats.T @ feats / ds.n
        return float(max(np.linalg.eigvalsh(hessian)[0], 0.0)) + model.regularization
    return model.regularization


def certify(model: LossModel, ds: SplitDataset) -> LossModel:
    """Fill missing smoothness and strong convexity constants from the data."""
    lam = model.smoothness_lambda if model.smoothness_lambda is not None \
        else smoothness_for(model, ds)
    gamma = model.strong_convexity_gamma if model.strong_convexity_gamma is not None \
        else strong_convexity_for(model, ds)
    return replace(model, smoothness_lambda=lam, strong_convexity_gamma=gamma)
