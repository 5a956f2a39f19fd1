"""Monte Carlo evaluation over labeled-fraction grids, optimizer comparisons and bound checks"""
from __future__ import annotations
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from scipy import stats

from ppisvrg.data import SplitDataset, SyntheticSpec, labeled_size, subsample_labeled
from ppisvrg.losses import LossKind, LossModel, certify
from ppisvrg.optim import Algorithm, OptConfig, Trajectory, run, reference_solution
from ppisvrg.inference import (
    Method, EstimateReport, BootstrapConfig, naive_estimate, ppi_estimate, ppi_svrg_estimate)
from ppisvrg.theory import (
    DiscreteJoint, EmpiricalRate, FloorEstimate, RateConstants, bound_curve, check_bound,
    conditional_variance_floor, fit_empirical_rate, rate_constants)
from ppisvrg.rng import child_seed, check_seed, STREAM_BOOTSTRAP, STREAM_OPTIMIZER
from ppisvrg.logging import logger, timeit

FAST_MODE_B = 25

def default_protocol_opt() -> OptConfig:
    return OptConfig(eta=0.001, m=1000, S=30, record_every=1000, algorithm=Algorithm.PPI_SVRG)


@dataclass(frozen=True)
class ProtocolConfig:
    """
    Monte Carlo protocol over labeled fractions.

    Attributes:
        gamma_grid (Tuple[float, ...]): Labeled fractions; rep draws floor(gamma * n_pool) labels.
        reps (int): Repetitions per labeled fraction.
        methods (Tuple[Method, ...]): Estimators to evaluate.
        theta_star (Optional[float]): Truth for bias and coverage.
        master_seed (int): Seed of every rep stream.
        pool_mean_target (bool): Target the pool's labeled mean instead of theta_star.
        bootstrap (BootstrapConfig): Bootstrap of the ppi_svrg estimator.
        opt (OptConfig): Optimizer of the ppi_svrg estimator.
        fast_mode (bool): Bootstrap with B = 25 for smoke runs.
        model (LossModel): mean_sq model of the ppi_svrg estimator.
    """
    gamma_grid: Tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5)
    reps: int = 200
    methods: Tuple[Method, ...] = (Method.NAIVE, Method.PPI, Method.PPI_SVRG)
    theta_star: Optional[float] = None
    master_seed: int = 0
    pool_mean_target: bool = False
    bootstrap: BootstrapConfig = field(default_factory=BootstrapConfig)
    opt: OptConfig = field(default_factory=default_protocol_opt)
    fast_mode: bool = False
    model: LossModel = field(default_factory=LossModel)

    def __post_init__(self):
        object.__setattr__(self, "gamma_grid", tuple(float(g) for g in self.gamma_grid))
        object.__setattr__(self, "methods", tuple(Method(m) for m in self.methods))
        if self.reps < 1:
            raise ValueError(f"reps must be at least 1, got {self.reps}")
        if not self.gamma_grid:
            raise ValueError("gamma_grid must not be empty")
        for gamma in self.gamma_grid:
            if not 0.0 < gamma <= 1.0:
                raise ValueError(f"gamma_grid values must lie in (0, 1], got {gamma}")
        if not self.methods:
            raise ValueError("methods must not be empty")
        if self.model.kind != LossKind.MEAN_SQ:
            raise ValueError(f"the protocol estimates a mean; model kind must be mean_sq, "
                             f"got {self.model.kind.value}")
        check_seed(self.master_seed)

    @property
    def effective_bootstrap(self) -> BootstrapConfig:
        return replace(self.bootstrap, B=FAST_MODE_B) if self.fast_mode else self.bootstrap

    def to_dict(self) -> Dict[str, Any]:
        return {
            "gamma_grid": list(self.gamma_grid), "reps": self.reps,
            "methods": [m.value for m in self.methods], "theta_star": self.theta_star,
            "master_seed": self.master_seed, "pool_mean_target": self.pool_mean_target,
            "bootstrap": self.bootstrap.to_dict(), "opt": self.opt.to_dict(),
            "fast_mode": self.fast_mode, "model": self.model.to_dict(),
        }


@dataclass(frozen=True)
class CellStats:
    method: Method
    gamma: float
    mse: float
    bias: float
    variance: float
    mean_ci_width: float
    coverage: float
    reps_used: int
    unconverged: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {"method": self.method.value, "gamma": self.gamma, "mse": self.mse,
                "bias": self.bias, "variance": self.variance, "ci_width": self.mean_ci_width,
                "coverage": self.coverage, "reps_used": self.reps_used,
                "unconverged": self.unconverged}


REPORT_COLUMNS = ("method", "gamma", "mse", "bias", "variance", "ci_width", "coverage",
                  "reps_used")


@dataclass
class MonteCarloReport:
    cells: List[CellStats]
    theta_star: float
    config: Optional[Dict[str, Any]] = None

    def cell(self, method: Union[Method, str], gamma: float) -> CellStats:
        method = Method(method)
        for c in self.cells:
            if c.method == method and np.isclose(c.gamma, gamma):
                return c
        raise KeyError(f"no cell for method={method.value}, gamma={gamma}")

    @property
    def gammas(self) -> List[float]:
        return sorted({c.gamma for c in self.cells})

    @property
    def methods(self) -> List[Method]:
        return list(dict.fromkeys(c.method for c in self.cells))

    def rows(self) -> List[Dict[str, Any]]:
        return [c.to_dict() for c in self.cells]

    def to_dict(self) -> Dict[str, Any]:
        return {"theta_star": self.theta_star, "cells": self.rows(), "config": self.config}


def _aggregate(method: Method, gamma: float, reports: Sequence[EstimateReport],
               theta_star: float) -> CellStats:
    errors = np.array([r.theta_hat for r in reports]) - theta_star
    mse = float(np.mean(errors**2))
    bias = float(np.mean(errors))
    return CellStats(
        method=method, gamma=gamma, mse=mse, bias=bias, variance=max(mse - bias**2, 0.0),
        mean_ci_width=float(np.mean([r.ci_width for r in reports])),
        coverage=float(np.mean([r.covers(theta_star) for r in reports])),
        reps_used=len(reports),
        unconverged=sum(1 for r in reports if r.meta.get("converged") is False))


def _run_rep(pool: SplitDataset, gamma: float, seed: int, cfg: ProtocolConfig,
             boot: BootstrapConfig) -> List[EstimateReport]:
    sample = subsample_labeled(pool, gamma, seed)
    reports = []
    for method in cfg.methods:
        if method == Method.NAIVE:
            reports.append(naive_estimate(sample))
        elif method == Method.PPI:
            reports.append(ppi_estimate(sample, strict=False))
        else:
            opt = replace(cfg.opt, seed=child_seed(seed, STREAM_OPTIMIZER))
            rep_boot = replace(boot, seed=child_seed(seed, STREAM_BOOTSTRAP))
            reports.append(ppi_svrg_estimate(sample, cfg.model, opt, rep_boot, warn=False))
    return reports


def protocol_target(pool: SplitDataset, cfg: ProtocolConfig) -> float:
    if cfg.pool_mean_target:
        return float(np.mean(pool.y_lab))
    if cfg.theta_star is None:
        raise ValueError("protocol needs theta_star unless pool_mean_target is set")
    return float(cfg.theta_star)


@timeit
def run_protocol(pool: SplitDataset, cfg: ProtocolConfig, n_jobs: int = 1) -> MonteCarloReport:
    """
    Repeat, for every labeled fraction gamma and rep r: draw floor(gamma * n)
    labeled and N unlabeled records with replacement from the pool, then
    estimate the mean with every method. Rep (gamma index i, r) is seeded
    with child_seed(master_seed, i, r); reps run in parallel and are
    aggregated in rep order.
    """
    theta_star = protocol_target(pool, cfg)
    for gamma in cfg.gamma_grid:
        n_lab = labeled_size(gamma, pool.n)
        if n_lab < 2:
            raise ValueError(
                f"gamma={gamma} gives floor(gamma * n)={n_lab} labeled records "
                f"out of n={pool.n}; at least 2 are needed")
    boot = cfg.effective_bootstrap
    if Method.PPI_SVRG in cfg.methods and boot.B >= 100:
        logger.warning(
            f"ppi_svrg bootstrap with B={boot.B} reruns the optimizer "
            f"{boot.B + 1} times per rep; use fast_mode for smoke runs")

    cells = []
    for i, gamma in enumerate(cfg.gamma_grid):
        seeds = [child_seed(cfg.master_seed, i, r) for r in range(cfg.reps)]
        per_rep = Parallel(n_jobs=n_jobs)(
            delayed(_run_rep)(pool, gamma, seed, cfg, boot) for seed in seeds)
        for k, method in enumerate(cfg.methods):
            cell = _aggregate(method, gamma, [reports[k] for reports in per_rep], theta_star)
            if cell.unconverged:
                logger.warning(f"{method.value} at gamma={gamma}: {cell.unconverged} of "
                               f"{cell.reps_used} point estimates missed the tolerance")
            cells.append(cell)
    return MonteCarloReport(cells=cells, theta_star=theta_star, config=cfg.to_dict())


def reduction(mse_a: float, mse_b: float) -> float:
    """Percentage MSE reduction of a against baseline b."""
    if mse_b == 0:
        raise ValueError("baseline MSE is zero; reduction undefined")
    return 100.0 * (1.0 - mse_a / mse_b)


def reduction_table(report: MonteCarloReport, method: Method = Method.PPI_SVRG,
                    baselines: Sequence[Method] = (Method.PPI, Method.NAIVE)) \
        -> List[Dict[str, Any]]:
    """One row per gamma: reduction of method's MSE against each baseline, in percent."""
    method = Method(method)
    baselines = [Method(b) for b in baselines]
    missing = [m.value for m in [method, *baselines] if m not in report.methods]
    if missing:
        raise ValueError(f"report has no cells for {', '.join(missing)}")
    rows = []
    for gamma in report.gammas:
        mse_a = report.cell(method, gamma).mse
        row = {"gamma": gamma}
        for base in baselines:
            row[f"vs_{base.value}"] = reduction(mse_a, report.cell(base, gamma).mse)
        rows.append(row)
    return rows


@dataclass(frozen=True)
class TrendResult:
    rho: float
    pvalue: float


def label_scarcity_trend(report: MonteCarloReport, method: Method) -> TrendResult:
    """Spearman correlation of the method's MSE with gamma; negative when labels help."""
    gammas = report.gammas
    if len(gammas) < 3:
        raise ValueError(f"trend needs at least 3 labeled fractions, got {len(gammas)}")
    mses = [report.cell(method, g).mse for g in gammas]
    rho, pvalue = stats.spearmanr(gammas, mses)
    return TrendResult(rho=float(rho), pvalue=float(pvalue))


COMPARE_ALGORITHMS = (Algorithm.SGD, Algorithm.SVRG, Algorithm.PPI_SVRG, Algorithm.PPI_SVRG_PP)


@timeit
def compare_optimizers(model: LossModel, ds: SplitDataset, cfg: OptConfig,
                       algorithms: Sequence[Algorithm] = COMPARE_ALGORITHMS) \
        -> Dict[Algorithm, Trajectory]:
    """Run every algorithm on the same dataset with the same seed, gaps attached."""
    model = certify(model, ds)
    stars = {}
    trajectories = {}
    for algorithm in algorithms:
        algorithm = Algorithm(algorithm)
        target = algorithm.target
        if target not in stars:
            stars[target] = reference_solution(model, ds, target)
        trajectories[algorithm] = run(model, ds, replace(cfg, algorithm=algorithm),
                                      theta_star=stars[target])
    return trajectories


@dataclass
class BoundReport:
    constants: RateConstants
    floor: FloorEstimate
    curve: List[float]
    gaps: List[float]
    satisfied: bool
    violations: List[int]
    empirical: Optional[EmpiricalRate] = None
    config: Optional[Dict[str, Any]] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "alpha": self.constants.alpha, "beta": self.constants.beta,
            "floor": self.floor.conditional_variance, "floor_estimator": self.floor.estimator.value,
            "floor_se": self.floor.se,
            "bound_curve": self.curve, "empirical_gaps": self.gaps,
            "satisfied": self.satisfied, "violations": self.violations,
            "empirical_rate": self.empirical.to_dict() if self.empirical is not None else None,
            "config": self.config,
        }


@timeit
def bound_experiment(model: LossModel, ds: SplitDataset, cfg: OptConfig,
                     floor_source: Union[SplitDataset, SyntheticSpec, DiscreteJoint, None] = None,
                     seeds: int = 20, max_violations: int = 0, tolerance: float = 0.0,
                     n_jobs: int = 1) -> BoundReport:
    """
    Average PPI-SVRG gaps over seeds and compare them with the linear-rate bound.

    Seed k runs with child_seed(cfg.seed, k). The floor comes from
    floor_source (the dataset itself when None); the as-run floor fitted from
    the averaged gaps is reported next to it.
    """
    model = certify(model, ds)
    constants = rate_constants(model.strong_convexity_gamma, model.smoothness_lambda,
                               cfg.eta, cfg.m)
    theta_star = reference_solution(model, ds, "ppi")
    floor = conditional_variance_floor(model, ds if floor_source is None else floor_source,
                                       theta_star)
    base = replace(cfg, algorithm=Algorithm.PPI_SVRG, snapshot_rule=None, record_every=cfg.m)
    runs = Parallel(n_jobs=n_jobs)(
        delayed(run)(model, ds, replace(base, seed=child_seed(cfg.seed, k)), theta_star)
        for k in range(seeds))
    gaps = np.mean([traj.gaps for traj in runs], axis=0).tolist()
    curve = bound_curve(constants, gaps[0], floor.conditional_variance, cfg.S)
    check = check_bound(gaps, curve, max_violations=max_violations, tolerance=tolerance)
    empirical = None
    if len(gaps) >= 4 and all(g > 0 for g in gaps):
        empirical = fit_empirical_rate(gaps)
    return BoundReport(constants=constants, floor=floor, curve=curve, gaps=gaps,
                       satisfied=check.satisfied, violations=check.violations,
                       empirical=empirical, config=base.to_dict())
