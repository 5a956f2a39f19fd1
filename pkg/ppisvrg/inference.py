"""Naive, closed-form PPI and optimizer-based PPI estimates of a mean with confidence intervals"""
from __future__ import annotations
from enum import Enum
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from ppisvrg.data import SplitDataset, resample_with_replacement
from ppisvrg.losses import LossModel, LossKind, kernel_data, ppi_objective_grad
from ppisvrg.optim import OptConfig, run_ppi_svrg
from ppisvrg.rng import child_seed, check_seed, STREAM_BOOTSTRAP
from ppisvrg.logging import logger, timeit

# Phi^-1(0.975) to six decimals
Z_975 = 1.959964
# iterate noise standard deviations a converged constant-step run stays within
NOISE_Z = 5.0


class Method(str, Enum):
    NAIVE = "naive"
    PPI = "ppi"
    PPI_SVRG = "ppi_svrg"


class UndefinedStandardError(ValueError):
    """Too few records for a sample variance."""


@dataclass(frozen=True)
class EstimateReport:
    method: Method
    theta_hat: float
    se: float
    ci_lo: float
    ci_hi: float
    z: float = Z_975
    meta: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def build(cls, method: Method, theta_hat: float, se: float, z: float = Z_975,
              meta: Optional[Dict[str, Any]] = None) -> "EstimateReport":
        half = z * se
        return cls(method=Method(method), theta_hat=float(theta_hat), se=float(se),
                   ci_lo=float(theta_hat - half), ci_hi=float(theta_hat + half),
                   z=z, meta=dict(meta or {}))

    @property
    def ci_width(self) -> float:
        return 2.0 * self.z * self.se

    def covers(self, theta: float) -> bool:
        return bool(self.ci_lo <= theta <= self.ci_hi)

    def to_dict(self) -> Dict[str, Any]:
        record = {"method": self.method.value, "theta_hat": self.theta_hat, "se": self.se,
                  "ci_lo": self.ci_lo, "ci_hi": self.ci_hi,
                  "B": self.meta.get("B"), "deflation": self.meta.get("deflation"),
                  "converged": self.meta.get("converged")}
        record.update({k: v for k, v in self.meta.items() if k not in record})
        return record


@dataclass(frozen=True)
class BootstrapConfig:
    """
    Nonparametric bootstrap of the PPI-SVRG estimate.

    Attributes:
        B (int): Number of reruns.
        deflation (float): Multiplier on the bootstrap standard deviation.
        seed (int): Parent seed of the resampling streams.
        tol (float): Gradient norm under which the point estimate counts as converged,
            raised to NOISE_Z iterate-noise standard deviations for constant steps.
    """
    B: int = 100  # pylint: disable=invalid-name
    deflation: float = 0.95
    seed: int = 0
    tol: float = 1e-8

    def __post_init__(self):
        if self.B < 2:
            raise ValueError(f"B must be at least 2, got {self.B}")
        if not self.deflation > 0:
            raise ValueError(f"deflation must be > 0, got {self.deflation}")
        if not self.tol > 0:
            raise ValueError(f"tol must be > 0, got {self.tol}")
        check_seed(self.seed)

    def to_dict(self) -> Dict[str, Any]:
        return {"B": self.B, "deflation": self.deflation, "seed": self.seed, "tol": self.tol}


def naive_estimate(ds: SplitDataset, z: float = Z_975) -> EstimateReport:
    """Labeled mean with SE sqrt(var(y) / n), unbiased variance."""
    if ds.n < 2:
        raise UndefinedStandardError(f"naive SE needs n >= 2 labeled records, got n={ds.n}")
    se = np.sqrt(np.var(ds.y_lab, ddof=1) / ds.n)
    return EstimateReport.build(Method.NAIVE, np.mean(ds.y_lab), se, z)


def ppi_point_estimate(ds: SplitDataset) -> float:
    """Rectifier form Y_lab + F_all - F_lab, F_all pooling labeled and unlabeled predictions."""
    return float(np.mean(ds.y_lab) + np.mean(ds.f_all) - np.mean(ds.f_lab))


def ppi_weighted_estimate(ds: SplitDataset) -> float:
    """Weighted form mean(Y - w F)_lab + mean(w F)_unlab with w = N / (N + n)."""
    w = ds.N / (ds.N + ds.n)
    unlabeled = w * np.mean(ds.f_unlab) if ds.N else 0.0
    return float(np.mean(ds.y_lab - w * ds.f_lab) + unlabeled)


def ppi_estimate(ds: SplitDataset, z: float = Z_975, strict: bool = True) -> EstimateReport:
    """
    Closed-form PPI estimate of E[Y].

    SE^2 = var(Y - w F)_lab / n + var(w F)_unlab / N. With N < 2 the SE is
    undefined: strict raises, otherwise the report carries nan SE and CI.
    """
    if ds.n < 2:
        raise UndefinedStandardError(f"PPI SE needs n >= 2 labeled records, got n={ds.n}")
    theta_hat = ppi_point_estimate(ds)
    meta = {"equivalence_gap": abs(theta_hat - ppi_weighted_estimate(ds))}
    if ds.N < 2:
        if strict:
            raise UndefinedStandardError(
                f"PPI SE needs N >= 2 unlabeled records, got N={ds.N}")
        return EstimateReport.build(Method.PPI, theta_hat, float("nan"), z, meta)
    w = ds.N / (ds.N + ds.n)
    labeled_term = np.var(ds.y_lab - w * ds.f_lab, ddof=1) / ds.n
    unlabeled_term = np.var(w * ds.f_unlab, ddof=1) / ds.N
    meta.update(labeled_term=float(labeled_term), unlabeled_term=float(unlabeled_term))
    return EstimateReport.build(Method.PPI, theta_hat, np.sqrt(labeled_term + unlabeled_term),
                                z, meta)


def bootstrap_se(estimates: Sequence[float], deflation: float) -> Tuple[float, float]:
    """(deflation * sd, sd) of the bootstrap estimates, unbiased variance."""
    raw_sd = float(np.std(np.asarray(estimates, dtype=float), ddof=1))
    return deflation * raw_sd, raw_sd


def iterate_noise_sd(model: LossModel, ds: SplitDataset, eta: float) -> float:
    """
    Stationary sd of constant-step PPI-SVRG iterates around the PPI solution on
    mean_sq: sqrt(eta * Var(y - a) / (2 - eta)), a the auxiliary labels.
    """
    data = kernel_data(model, ds)
    resid_var = float(np.var(data.y_lab - data.aux_lab))
    return float(np.sqrt(eta * resid_var / (2.0 - eta)))


def _point_estimate(model: LossModel, ds: SplitDataset, opt_cfg: OptConfig) -> float:
    return float(run_ppi_svrg(model, ds, opt_cfg).final_theta[0])


def _bootstrap_rep(model: LossModel, ds: SplitDataset, opt_cfg: OptConfig,
                   seed: int) -> float:
    resampled = resample_with_replacement(ds, ds.n, ds.N, seed)
    return _point_estimate(model, resampled, opt_cfg)


@timeit
def ppi_svrg_estimate(ds: SplitDataset, model: LossModel, opt_cfg: OptConfig,
                      boot_cfg: BootstrapConfig, z: float = Z_975, n_jobs: int = 1,
                      warn: bool = True) -> EstimateReport:
    """
    Point estimate from PPI-SVRG on mean_sq, SE from a deflated bootstrap.

    Rerun b resamples both parts of ds with child seed (boot seed, b) and
    reruns the optimizer with the same configuration, so the spread comes
    from the resampling alone.

    Args:
        n_jobs (int): joblib workers for the reruns; results are reduced in rerun order.
        warn (bool): Log a warning when the point estimate misses its tolerance.
    """
    if model.kind != LossKind.MEAN_SQ:
        raise ValueError(f"ppi_svrg_estimate estimates a mean and needs mean_sq, "
                         f"got {model.kind.value}")
    opt_cfg = replace(opt_cfg, compute_gaps=False)
    theta_hat = _point_estimate(model, ds, opt_cfg)
    grad_norm = float(np.linalg.norm(ppi_objective_grad(model, [theta_hat], ds)))
    noise_sd = iterate_noise_sd(model, ds, opt_cfg.eta)
    tol = max(boot_cfg.tol, NOISE_Z * noise_sd)
    converged = grad_norm < tol
    if not converged:
        message = f"PPI-SVRG stopped at gradient norm {grad_norm:.3e} >= tol {tol:.1e}"
        if warn:
            logger.warning(message)
        else:
            logger.debug(message)

    seeds = [child_seed(boot_cfg.seed, STREAM_BOOTSTRAP, b) for b in range(boot_cfg.B)]
    estimates = Parallel(n_jobs=n_jobs)(
        delayed(_bootstrap_rep)(model, ds, opt_cfg, seed) for seed in seeds)
    se, raw_sd = bootstrap_se(estimates, boot_cfg.deflation)
    meta = {"B": boot_cfg.B, "deflation": boot_cfg.deflation, "converged": converged,
            "raw_sd": raw_sd, "grad_norm": grad_norm, "noise_sd": noise_sd}
    return EstimateReport.build(Method.PPI_SVRG, theta_hat, se, z, meta)
