"""Convergence constants, error floors and bound checks for the variance-reduced optimizers"""
from __future__ import annotations
from enum import Enum
from math import isfinite
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from numba import njit
from scipy import stats

from ppisvrg.data import SplitDataset, SyntheticSpec, OutcomeKind, true_calibration
from ppisvrg.losses import (
    LossModel, LossKind, AuxMode, kernel_data, mean_grad, sample_grad_into, grad)
from ppisvrg.optim import InvalidStepSizeError, reference_solution


@dataclass(frozen=True)
class RateConstants:
    """
    Linear-rate constants of PPI-SVRG:
    alpha = 1 / (gamma eta (1 - 2 lambda eta) m) + 2 lambda eta / (1 - 2 lambda eta),
    beta = eta / (1 - 2 lambda eta).
    """
    alpha: float
    beta: float
    valid: bool

    def to_dict(self):
        return {"alpha": self.alpha, "beta": self.beta, "valid": self.valid}


def rate_constants(gamma_sc: float, lam: float, eta: float, m: int) -> RateConstants:
    if gamma_sc <= 0:
        raise ValueError(f"gamma_sc must be > 0, got {gamma_sc}")
    if lam <= 0:
        raise ValueError(f"lambda must be > 0, got {lam}")
    if eta <= 0:
        raise ValueError(f"eta must be > 0, got {eta}")
    if m < 1:
        raise ValueError(f"m must be at least 1, got {m}")
    two_le = 2.0 * lam * eta
    if two_le >= 1.0:
        raise InvalidStepSizeError(
            f"2 lambda eta = {two_le} must be < 1 (lambda={lam}, eta={eta})")
    shrink = 1.0 - two_le
    alpha = 1.0 / (gamma_sc * eta * shrink * m) + two_le / shrink
    beta = eta / shrink
    return RateConstants(alpha=alpha, beta=beta, valid=bool(0.0 < alpha < 1.0))


def bound_curve(constants: RateConstants, gap0: float, floor: float, S: int) -> List[float]:  # pylint: disable=invalid-name
    """alpha^s gap0 + beta (1 - alpha^s) / (1 - alpha) floor for s = 0..S."""
    if not constants.valid:
        raise ValueError(f"alpha = {constants.alpha} gives no contraction; bound undefined")
    a, b = constants.alpha, constants.beta
    return [a**s * gap0 + b * (1.0 - a**s) / (1.0 - a) * floor for s in range(S + 1)]


@dataclass(frozen=True)
class BoundCheck:
    satisfied: bool
    violations: List[int] = field(default_factory=list)
    worst_excess: float = 0.0


def check_bound(gaps: Sequence[float], curve: Sequence[float], max_violations: int = 0,
                tolerance: float = 0.0, atol: float = 1e-12) -> BoundCheck:
    """
    Compare measured gaps against a bound curve epoch by epoch.

    Args:
        max_violations (int): Epochs allowed to exceed the bound.
        tolerance (float): Relative excess those epochs may show.
        atol (float): Absolute slack for rounding in the gap evaluation.

    Returns:
        BoundCheck: satisfied flag, violating epochs and the worst relative excess.
    """
    if len(gaps) != len(curve):
        raise ValueError(f"{len(gaps)} gaps against a curve of {len(curve)} points")
    violations, worst = [], 0.0
    for s, (gap, bound) in enumerate(zip(gaps, curve)):
        if gap > bound + atol:
            violations.append(s)
            excess = (gap - bound) / bound if bound > 0 else float("inf")
            worst = max(worst, excess)
    satisfied = len(violations) <= max_violations and worst < tolerance if violations else True
    return BoundCheck(satisfied=satisfied, violations=violations, worst_excess=worst)


class FloorEstimator(str, Enum):
    ANALYTIC = "analytic"
    RESIDUAL = "residual"
    ENUMERATION = "enumeration"


@dataclass(frozen=True)
class FloorEstimate:
    """E[Var(grad l at theta_star | X, F)], the trace of the component variances."""
    conditional_variance: float
    estimator: FloorEstimator
    se: float = 0.0

    def __post_init__(self):
        if self.conditional_variance < 0:
            raise ValueError(f"conditional variance must be >= 0, got {self.conditional_variance}")

    def to_dict(self):
        return {"conditional_variance": self.conditional_variance,
                "estimator": self.estimator.value, "se": self.se}


@dataclass(frozen=True)
class DiscreteJoint:
    """A finite joint distribution of (F, Y) given as (f, y, probability) triples."""
    outcomes: Tuple[Tuple[float, float, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "outcomes", tuple(tuple(map(float, o)) for o in self.outcomes))
        if not self.outcomes:
            raise ValueError("outcomes must not be empty")
        probs = np.array([p for _, _, p in self.outcomes])
        if np.any(probs < 0):
            raise ValueError("outcome probabilities must be >= 0")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError(f"outcome probabilities must sum to 1, got {probs.sum()}")

    def predictions(self) -> List[float]:
        return sorted({f for f, _, _ in self.outcomes})


@dataclass(frozen=True)
class VarianceDecomposition:
    total: float
    within: float
    between: float


def _trace_var(values: np.ndarray, probs: np.ndarray) -> float:
    mean = probs @ values
    return float(probs @ np.sum((values - mean)**2, axis=1))


def total_variance_decomposition(joint: DiscreteJoint,
                                 grad_fn: Callable[[float, float], np.ndarray]) \
        -> VarianceDecomposition:
    """
    Split Var(grad) into E[Var(grad | F)] and Var(E[grad | F]) by enumeration.

    grad_fn(y, f) returns the gradient vector of one outcome.
    """
    grads = np.array([np.atleast_1d(grad_fn(y, f)) for f, y, _ in joint.outcomes], dtype=float)
    probs = np.array([p for _, _, p in joint.outcomes])
    fs = np.array([f for f, _, _ in joint.outcomes])
    total = _trace_var(grads, probs)
    within, cond_means, cond_probs = 0.0, [], []
    for f in joint.predictions():
        mask = fs == f
        p_f = probs[mask].sum()
        if p_f == 0:
            continue
        within += p_f * _trace_var(grads[mask], probs[mask] / p_f)
        cond_means.append(probs[mask] @ grads[mask] / p_f)
        cond_probs.append(p_f)
    between = _trace_var(np.array(cond_means), np.array(cond_probs))
    return VarianceDecomposition(total=total, within=within, between=between)


@njit
def residual_sq_norms(kind: int, reg: float, theta: np.ndarray, x: np.ndarray, y: np.ndarray,
                      aux: np.ndarray) -> np.ndarray:
    """Per-record |grad l(theta, x, y) - grad g(theta, x, f)|^2."""
    k = theta.shape[0]
    out = np.empty(y.shape[0])
    g = np.empty(k)
    h = np.empty(k)
    for i in range(y.shape[0]):
        sample_grad_into(kind, reg, theta, x[i], y[i], g)
        sample_grad_into(kind, reg, theta, x[i], aux[i], h)
        sq = 0.0
        for j in range(k):
            sq += (g[j] - h[j])**2
        out[i] = sq
    return out


def _analytic_floor(model: LossModel, spec: SyntheticSpec) -> FloorEstimate:
    if spec.outcome_kind == OutcomeKind.CONTINUOUS:
        noise = spec.pred_noise_sigma**2
        if model.kind == LossKind.MEAN_SQ:
            return FloorEstimate(noise, FloorEstimator.ANALYTIC)
        if model.kind == LossKind.RIDGE:
            # standard normal features: E|x|^2 = dim, plus the constant column
            sq_norm = spec.dim + (1 if model.fit_intercept else 0)
            return FloorEstimate(noise * sq_norm, FloorEstimator.ANALYTIC)
    elif model.kind == LossKind.MEAN_SQ and spec.dim == 0:
        calibration = true_calibration(spec)
        s, q = spec.prevalence, spec.flip_prob
        p_one = s * (1 - q) + (1 - s) * q
        floor = 0.0
        for f, weight in ((1.0, p_one), (0.0, 1.0 - p_one)):
            p = float(calibration(np.zeros((1, 0)), np.array([f]))[0])
            floor += weight * p * (1.0 - p)
        return FloorEstimate(floor, FloorEstimator.ANALYTIC)
    raise ValueError(
        f"no closed-form floor for {model.kind.value} on {spec.outcome_kind.value} "
        f"data with dim={spec.dim}; pass a dataset for the residual estimator")


def _residual_floor(model: LossModel, ds: SplitDataset, theta_star) -> FloorEstimate:
    if model.aux_mode == AuxMode.G_EQUALS_ELL and ds.outcome_kind == OutcomeKind.BINARY \
            and not ds.has_hard_predictions():
        raise ValueError(
            "residual floor with g = l is undefined for probabilistic predictions; "
            "use aux_mode 'calibrated'")
    if theta_star is None:
        theta_star = reference_solution(model, ds, "ppi")
    theta_star = np.atleast_1d(np.asarray(theta_star, dtype=np.float64))
    data = kernel_data(model, ds)
    norms = residual_sq_norms(model.kind.code, model.regularization, theta_star,
                              data.x_lab, data.y_lab, data.aux_lab)
    se = float(np.std(norms, ddof=1) / np.sqrt(ds.n)) if ds.n > 1 else float("nan")
    return FloorEstimate(float(np.mean(norms)), FloorEstimator.RESIDUAL, se)


def _enumerated_floor(model: LossModel, joint: DiscreteJoint, theta_star) -> FloorEstimate:
    if model.kind != LossKind.MEAN_SQ:
        raise ValueError("enumeration needs a feature-free loss (mean_sq)")
    theta_star = 0.0 if theta_star is None else theta_star
    parts = total_variance_decomposition(joint, lambda y, f: grad(model, theta_star, None, y))
    return FloorEstimate(parts.within, FloorEstimator.ENUMERATION)


def conditional_variance_floor(model: LossModel,
                               source: Union[SplitDataset, SyntheticSpec, DiscreteJoint],
                               theta_star=None) -> FloorEstimate:
    """
    Estimate the error floor E[Var(grad l at theta_star | X, F)].

    Args:
        source: a SyntheticSpec gives the closed form, a SplitDataset the
            residual mean over labeled records, a DiscreteJoint the exact
            enumeration.
        theta_star: Minimizer; the PPI reference solution when None.
    """
    if isinstance(source, SyntheticSpec):
        return _analytic_floor(model, source)
    if isinstance(source, DiscreteJoint):
        return _enumerated_floor(model, source, theta_star)
    return _residual_floor(model, source, theta_star)


@dataclass(frozen=True)
class PPlusBoundInputs:
    """
    Statistical terms of the PPI-SVRG++ bound.

    Attributes:
        sigma_ppi_sq (float): max over theta of E|grad l(theta) - grad g(theta)|^2.
        epsilon_bias (float): |mean_all grad g - mean_lab grad g|.
        diameter_D (float): Domain diameter.
        eta (float): Step size.
        T (int): Total inner iterations, m0 (2^S - 1).
        smoothness_lambda (float): Per-sample smoothness.
    """
    sigma_ppi_sq: float
    epsilon_bias: float
    diameter_D: float  # pylint: disable=invalid-name
    eta: float
    T: int  # pylint: disable=invalid-name
    smoothness_lambda: float = 1.0

    def __post_init__(self):
        for name in ("sigma_ppi_sq", "epsilon_bias", "diameter_D", "eta", "smoothness_lambda"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.T < 1:
            raise ValueError(f"T must be at least 1, got {self.T}")


def doubling_iterations(m0: int, S: int) -> int:  # pylint: disable=invalid-name
    return m0 * (2**S - 1)


def default_pp_step(lam: float) -> float:
    """Step size 1/(10 lambda), inside the eta < 1/(4 lambda) constraint."""
    return 1.0 / (10.0 * lam)


def pplus_bound(inputs: PPlusBoundInputs, dist0_sq: float, gap0: float, S: int) -> float:  # pylint: disable=invalid-name
    """
    2 |theta_0 - theta_star|^2 / (eta T) + 4 lambda eta gap0 / 2^(S-1)
    + 2 (2 eta sigma_ppi^2 + 2 D epsilon_bias).
    """
    eta, lam = inputs.eta, inputs.smoothness_lambda
    optimization = 2.0 * dist0_sq / (eta * inputs.T) + 4.0 * lam * eta * gap0 / 2.0**(S - 1)
    statistical = 2.0 * eta * inputs.sigma_ppi_sq + 2.0 * inputs.diameter_D * inputs.epsilon_bias
    return optimization + 2.0 * statistical


def sigma_ppi_sq(model: LossModel, ds: SplitDataset, thetas: Sequence) -> float:
    """Largest mean squared residual |grad l - grad g|^2 over the given points."""
    data = kernel_data(model, ds)
    code, reg = model.kind.code, model.regularization
    return max(float(np.mean(residual_sq_norms(
        code, reg, np.atleast_1d(np.asarray(theta, dtype=np.float64)),
        data.x_lab, data.y_lab, data.aux_lab))) for theta in thetas)


def epsilon_bias(model: LossModel, ds: SplitDataset, theta) -> float:
    data = kernel_data(model, ds)
    theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
    code, reg, comp = model.kind.code, model.regularization, model.compensated
    pooled = mean_grad(code, reg, theta, data.x_all, data.aux_all, comp)
    labeled = mean_grad(code, reg, theta, data.x_lab, data.aux_lab, comp)
    return float(np.linalg.norm(pooled - labeled))


@dataclass(frozen=True)
class EmpiricalRate:
    alpha_hat: float
    floor_hat: float
    identifiable: bool

    def to_dict(self):
        alpha = self.alpha_hat if isfinite(self.alpha_hat) else None
        return {"alpha_hat": alpha, "floor_hat": self.floor_hat,
                "identifiable": self.identifiable}


def fit_empirical_rate(gaps: Sequence[float], plateau_window: Optional[int] = None) \
        -> EmpiricalRate:
    """
    Fit gap_s ~ alpha^s c + floor.

    The floor is the mean of the trailing window when the window is flat
    next to the head: its log-slope is less than half the log-slope of the
    first half of the gaps. A pure geometric sequence has no floor.
    alpha is exp of the least-squares slope of log(gap_s - floor) over the
    epochs clearly above the floor (gap_s > 2 floor).
    """
    gaps = np.asarray(gaps, dtype=float)
    if gaps.size < 4:
        raise ValueError(f"need at least 4 gaps, got {gaps.size}")
    if not np.all(gaps > 0):
        raise ValueError("gaps must be positive")
    window = plateau_window or max(3, gaps.size // 4)
    if not 2 <= window <= gaps.size:
        raise ValueError(f"plateau window must lie in [2, {gaps.size}], got {window}")
    epochs = np.arange(gaps.size, dtype=float)
    tail = slice(gaps.size - window, gaps.size)
    head = slice(0, max(2, gaps.size // 2))
    head_slope = stats.linregress(epochs[head], np.log(gaps[head])).slope
    tail_slope = stats.linregress(epochs[tail], np.log(gaps[tail])).slope
    plateau = head_slope > -1e-12 or tail_slope > 0.5 * head_slope
    floor_hat = float(np.mean(gaps[tail])) if plateau else 0.0
    above = gaps > 2.0 * floor_hat if plateau else np.ones(gaps.size, dtype=bool)
    if np.count_nonzero(above) < 2:
        return EmpiricalRate(alpha_hat=float("nan"), floor_hat=floor_hat, identifiable=False)
    fit = stats.linregress(epochs[above], np.log(gaps[above] - floor_hat))
    return EmpiricalRate(alpha_hat=float(np.exp(fit.slope)), floor_hat=floor_hat,
                         identifiable=True)
