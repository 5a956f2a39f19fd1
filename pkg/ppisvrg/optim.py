"""SGD, SVRG, PPI-SVRG and PPI-SVRG++ with full trajectory recording.

Every optimizer draws its randomness from one PCG64 stream seeded by
``OptConfig.seed``. Per epoch the stream yields, in this order, the inner
sample indices i_0..i_{m-1} (one ``integers`` call) and then, for the
random-iterate snapshot rule only, the snapshot index tau (one more call).
"""
from __future__ import annotations
from enum import Enum
from math import sqrt
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Dict, Any, Sequence

import numpy as np
from numba import njit

from ppisvrg.data import SplitDataset
from ppisvrg.losses import (
    LossModel, kernel_data, labeled_data, mean_grad, sample_grad_into, certify,
    objective, ppi_objective_grad)
from ppisvrg.rng import make_rng, check_seed
from ppisvrg.logging import logger


class Algorithm(str, Enum):
    SGD = "sgd"
    SVRG = "svrg"
    PPI_SVRG = "ppi_svrg"
    PPI_SVRG_PP = "ppi_svrg_pp"

    @property
    def target(self) -> str:
        """The objective the algorithm minimizes."""
        return "ppi" if self in (Algorithm.PPI_SVRG, Algorithm.PPI_SVRG_PP) else "labeled"


class SnapshotRule(str, Enum):
    RANDOM_ITERATE = "random_iterate"
    AVERAGE = "average"


class InvalidStepSizeError(ValueError):
    """The step size violates the constraint a convergence guarantee needs."""


@dataclass(frozen=True)
class OptConfig:
    """
    Configuration of one optimizer run.

    Attributes:
        eta (float): Step size, > 0 (0 only for SGD sanity runs).
        m (int): Inner steps per epoch for SGD, SVRG and PPI-SVRG.
        m0 (int): First epoch length of PPI-SVRG++; epoch s has m0 * 2^(s-1) steps.
        S (int): Number of outer epochs.
        seed (int): 64-bit seed of the run's random stream.
        snapshot_rule (Optional[SnapshotRule]): None picks the algorithm's own rule.
        record_every (int): Record every k-th inner iterate.
        theta0 (Optional[Tuple[float, ...]]): Start point; zeros when None.
        strict (bool): Raise instead of warn when the step size breaks theory constraints.
        max_epoch_length (int): Cap on m0 * 2^(S-1).
        algorithm (Algorithm): Used by run() to dispatch.
        compute_gaps (bool): Compute suboptimality gaps against a reference solution.
    """
    eta: float = 0.1
    m: int = 100
    m0: int = 8
    S: int = 20  # pylint: disable=invalid-name
    seed: int = 0
    snapshot_rule: Optional[SnapshotRule] = None
    record_every: int = 1
    theta0: Optional[Tuple[float, ...]] = None
    strict: bool = False
    max_epoch_length: int = 2**24
    algorithm: Algorithm = Algorithm.PPI_SVRG
    compute_gaps: bool = False

    def __post_init__(self):
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm))
        if self.snapshot_rule is not None:
            object.__setattr__(self, "snapshot_rule", SnapshotRule(self.snapshot_rule))
        if self.theta0 is not None:
            object.__setattr__(self, "theta0", tuple(float(v) for v in np.atleast_1d(self.theta0)))
        if not self.eta >= 0:
            raise ValueError(f"eta must be >= 0, got {self.eta}")
        if self.m < 1:
            raise ValueError(f"m must be at least 1, got {self.m}")
        if self.m0 < 1:
            raise ValueError(f"m0 must be at least 1, got {self.m0}")
        if self.S < 1:
            raise ValueError(f"S must be at least 1, got {self.S}")
        if self.record_every < 1:
            raise ValueError(f"record_every must be at least 1, got {self.record_every}")
        check_seed(self.seed)

    def epoch_lengths(self, algorithm: Algorithm) -> List[int]:
        if algorithm == Algorithm.PPI_SVRG_PP:
            longest = self.m0 * 2**(self.S - 1)
            if longest > self.max_epoch_length:
                raise ValueError(
                    f"epoch length m0 * 2^(S-1) = {longest} exceeds "
                    f"max_epoch_length={self.max_epoch_length}; lower S or m0")
            return [self.m0 * 2**(s - 1) for s in range(1, self.S + 1)]
        return [self.m] * self.S

    def to_dict(self) -> Dict[str, Any]:
        return {
            "eta": self.eta, "m": self.m, "m0": self.m0, "S": self.S, "seed": self.seed,
            "snapshot_rule": self.snapshot_rule.value if self.snapshot_rule else None,
            "record_every": self.record_every,
            "theta0": list(self.theta0) if self.theta0 is not None else None,
            "strict": self.strict, "max_epoch_length": self.max_epoch_length,
            "algorithm": self.algorithm.value, "compute_gaps": self.compute_gaps,
        }


@dataclass(frozen=True)
class InnerRecord:
    s: int
    t: int
    theta: np.ndarray
    v_norm: float


@dataclass
class Trajectory:
    """
    The recorded run of one optimizer.

    snapshots[0] is the start point (s = 0); snapshots[s] for s >= 1 closes
    epoch s. mu_tilde[s - 1] is the snapshot gradient used during epoch s.
    gaps, when present, align with snapshots.
    """
    algorithm: Algorithm
    snapshots: List[Tuple[int, np.ndarray]] = field(default_factory=list)
    inner_records: List[InnerRecord] = field(default_factory=list)
    mu_tilde: List[np.ndarray] = field(default_factory=list)
    gaps: Optional[List[float]] = None
    epoch_lengths: List[int] = field(default_factory=list)
    epoch_starts: List[np.ndarray] = field(default_factory=list)
    epoch_ends: List[np.ndarray] = field(default_factory=list)
    theta_star: Optional[np.ndarray] = None
    config: Optional[OptConfig] = None

    @property
    def total_inner_iterations(self) -> int:
        return int(sum(self.epoch_lengths))

    @property
    def final_theta(self) -> np.ndarray:
        return self.snapshots[-1][1]

    @property
    def num_epochs(self) -> int:
        return len(self.epoch_lengths)

    def to_rows(self) -> List[Dict[str, Any]]:
        """Rows (epoch, t, gap, v_norm, mu_norm), one per recorded inner iterate."""
        rows = []
        for rec in self.inner_records:
            gap = self.gaps[rec.s] if self.gaps is not None else None
            mu_norm = float(np.linalg.norm(self.mu_tilde[rec.s - 1])) if self.mu_tilde else 0.0
            rows.append({"epoch": rec.s, "t": rec.t, "gap": gap,
                         "v_norm": rec.v_norm, "mu_norm": mu_norm})
        return rows

    def summary(self) -> Dict[str, Any]:
        return {
            "algorithm": self.algorithm.value,
            "final_theta": [float(v) for v in self.final_theta],
            "T": self.total_inner_iterations,
            "epoch_lengths": list(self.epoch_lengths),
            "gaps": list(self.gaps) if self.gaps is not None else None,
            "theta_star": [float(v) for v in self.theta_star]
            if self.theta_star is not None else None,
            "config": self.config.to_dict() if self.config is not None else None,
        }


@njit
def inner_loop(kind: int, reg: float, x: np.ndarray, y: np.ndarray, aux: np.ndarray,
               theta0: np.ndarray, snapshot: np.ndarray, mu: np.ndarray, idx: np.ndarray,
               eta: float, tau: int, record_every: int, control: bool):
    """
    One epoch of updates theta_{t+1} = theta_t - eta * v_t, t = 0..m-1, with
    v_t = grad(theta_t, x_i, y_i) - grad(snapshot, x_i, aux_i) + mu when
    control is set and v_t = grad(theta_t, x_i, y_i) otherwise.

    Returns the last iterate, theta_tau (tau < 0 leaves it at theta0), the
    mean of theta_0..theta_{m-1}, and the recorded (t, theta_t, |v_t|).
    """
    k = theta0.shape[0]
    m = idx.shape[0]
    theta = theta0.copy()
    theta_tau = theta0.copy()
    total = np.zeros(k)
    g = np.empty(k)
    h = np.empty(k)
    v = np.empty(k)
    n_rec = (m + record_every - 1) // record_every
    rec_t = np.empty(n_rec, np.int64)
    rec_theta = np.empty((n_rec, k))
    rec_vnorm = np.empty(n_rec)
    r = 0
    for t in range(m):
        if t == tau:
            for j in range(k):
                theta_tau[j] = theta[j]
        for j in range(k):
            total[j] += theta[j]
        i = idx[t]
        sample_grad_into(kind, reg, theta, x[i], y[i], g)
        if control:
            sample_grad_into(kind, reg, snapshot, x[i], aux[i], h)
            for j in range(k):
                v[j] = g[j] - h[j] + mu[j]
        else:
            for j in range(k):
                v[j] = g[j]
        if t % record_every == 0:
            sq = 0.0
            for j in range(k):
                sq += v[j] * v[j]
                rec_theta[r, j] = theta[j]
            rec_t[r] = t
            rec_vnorm[r] = sqrt(sq)
            r += 1
        for j in range(k):
            theta[j] -= eta * v[j]
    for j in range(k):
        total[j] /= m
    return theta, theta_tau, total, rec_t, rec_theta, rec_vnorm


def _start_point(model: LossModel, ds: SplitDataset, cfg: OptConfig) -> np.ndarray:
    k = model.param_dim(ds.dim)
    if cfg.theta0 is None:
        return np.zeros(k)
    theta0 = np.array(cfg.theta0, dtype=np.float64)
    if theta0.shape != (k,):
        raise ValueError(f"theta0 must have {k} entries, got {theta0.shape[0]}")
    return theta0


def _check_step_size(model: LossModel, ds: SplitDataset, cfg: OptConfig, algorithm: Algorithm):
    if algorithm == Algorithm.SGD:
        return
    lam = certify(model, ds).smoothness_lambda
    if algorithm == Algorithm.PPI_SVRG_PP:
        ok, rule = cfg.eta < 1.0 / (4.0 * lam), "eta < 1/(4 lambda)"
    else:
        ok, rule = 2.0 * lam * cfg.eta < 1.0, "2 lambda eta < 1"
    if ok:
        return
    message = f"{algorithm.value}: step size eta={cfg.eta} violates {rule} with lambda={lam}"
    if cfg.strict:
        raise InvalidStepSizeError(message)
    logger.warning(message)


def _record(traj: Trajectory, s: int, rec_t, rec_theta, rec_vnorm):
    traj.inner_records.extend(
        InnerRecord(s, int(t), theta.copy(), float(vn))
        for t, theta, vn in zip(rec_t, rec_theta, rec_vnorm))


def _run(model: LossModel, ds: SplitDataset, cfg: OptConfig, algorithm: Algorithm,
         theta_star=None) -> Trajectory:
    if cfg.eta == 0 and algorithm != Algorithm.SGD:
        raise ValueError(f"{algorithm.value} needs eta > 0")
    _check_step_size(model, ds, cfg, algorithm)
    code, reg, comp = model.kind.code, model.regularization, model.compensated
    data = kernel_data(model, ds) if algorithm.target == "ppi" else labeled_data(model, ds)

    rule = cfg.snapshot_rule or (
        SnapshotRule.AVERAGE if algorithm == Algorithm.PPI_SVRG_PP else SnapshotRule.RANDOM_ITERATE)
    continue_from_last = algorithm in (Algorithm.PPI_SVRG_PP, Algorithm.SGD)
    control = algorithm != Algorithm.SGD

    rng = make_rng(cfg.seed)
    snapshot = _start_point(model, ds, cfg)
    start = snapshot.copy()
    traj = Trajectory(algorithm=algorithm, config=cfg)
    traj.snapshots.append((0, snapshot.copy()))
    empty_mu = np.zeros_like(snapshot)

    for s, m_s in enumerate(cfg.epoch_lengths(algorithm), start=1):
        mu = mean_grad(code, reg, snapshot, data.x_all, data.aux_all, comp) if control else empty_mu
        if control:
            traj.mu_tilde.append(mu.copy())
        idx = rng.integers(0, ds.n, m_s)
        tau = -1
        if control and rule == SnapshotRule.RANDOM_ITERATE:
            tau = int(rng.integers(0, m_s))
        theta0 = start if continue_from_last else snapshot
        last, theta_tau, mean, rec_t, rec_theta, rec_vnorm = inner_loop(
            code, reg, data.x_lab, data.y_lab, data.aux_lab, theta0, snapshot, mu,
            idx, cfg.eta, tau, cfg.record_every, control)
        traj.epoch_lengths.append(m_s)
        traj.epoch_starts.append(theta0.copy())
        traj.epoch_ends.append(last.copy())
        _record(traj, s, rec_t, rec_theta, rec_vnorm)
        if not control:
            snapshot = last
        elif rule == SnapshotRule.RANDOM_ITERATE:
            snapshot = theta_tau
        else:
            snapshot = mean
        start = last
        traj.snapshots.append((s, snapshot.copy()))

    if theta_star is not None or cfg.compute_gaps:
        attach_gaps(traj, model, ds, theta_star)
    return traj


def run_sgd(model: LossModel, ds: SplitDataset, cfg: OptConfig, theta_star=None) -> Trajectory:
    """theta_{t+1} = theta_t - eta grad(theta_t, sample_t) for S * m steps, uniform sampling."""
    return _run(model, ds, cfg, Algorithm.SGD, theta_star)


def run_svrg(model: LossModel, ds: SplitDataset, cfg: OptConfig, theta_star=None) -> Trajectory:
    """SVRG on the labeled records; snapshot gradient over the n labeled records."""
    return _run(model, ds, cfg, Algorithm.SVRG, theta_star)


def run_ppi_svrg(model: LossModel, ds: SplitDataset, cfg: OptConfig, theta_star=None) -> Trajectory:
    """
    PPI-SVRG: snapshot gradient mu_s = mean of aux_grad over all N + n
    records, inner sampling over labeled records, random-iterate snapshot.
    """
    return _run(model, ds, cfg, Algorithm.PPI_SVRG, theta_star)


def run_ppi_svrg_pp(model: LossModel, ds: SplitDataset, cfg: OptConfig,
                    theta_star=None) -> Trajectory:
    """
    PPI-SVRG++: epoch s runs m0 * 2^(s-1) steps from the previous epoch's
    last iterate; the snapshot is the mean of the epoch's iterates theta_0..theta_{m_s-1}.
    """
    return _run(model, ds, cfg, Algorithm.PPI_SVRG_PP, theta_star)


RUNNERS = {
    Algorithm.SGD: run_sgd,
    Algorithm.SVRG: run_svrg,
    Algorithm.PPI_SVRG: run_ppi_svrg,
    Algorithm.PPI_SVRG_PP: run_ppi_svrg_pp,
}


def run(model: LossModel, ds: SplitDataset, cfg: OptConfig, theta_star=None) -> Trajectory:
    return RUNNERS[cfg.algorithm](model, ds, cfg, theta_star)


def reference_solution(model: LossModel, ds: SplitDataset, target: str = "labeled",
                       tol: float = 1e-12, max_iter: int = 200_000,
                       theta0: Optional[Sequence[float]] = None) -> np.ndarray:
    """
    Minimizer of the labeled objective or the PPI objective by deterministic
    full-gradient descent with step 1/lambda, stopped at gradient norm < tol.
    """
    lam = certify(model, ds).smoothness_lambda
    data = kernel_data(model, ds) if target == "ppi" else labeled_data(model, ds)
    code, reg, comp = model.kind.code, model.regularization, model.compensated
    theta = np.zeros(model.param_dim(ds.dim)) if theta0 is None \
        else np.array(theta0, dtype=np.float64)

    def gradient(point: np.ndarray) -> np.ndarray:
        if target == "ppi":
            return ppi_objective_grad(model, point, ds, data)
        return mean_grad(code, reg, point, data.x_lab, data.y_lab, comp)

    for _ in range(max_iter):
        g = gradient(theta)
        if float(np.linalg.norm(g)) < tol:
            return theta
        theta = theta - g / lam
    logger.warning(
        f"reference solver stopped after {max_iter} iterations with gradient norm "
        f"{float(np.linalg.norm(gradient(theta))):.3e} > {tol:.1e}")
    return theta


def attach_gaps(traj: Trajectory, model: LossModel, ds: SplitDataset, theta_star=None):
    """Fill traj.gaps with objective(snapshot) - objective(theta_star) per snapshot."""
    target = traj.algorithm.target
    if theta_star is None:
        theta_star = reference_solution(model, ds, target)
    theta_star = np.atleast_1d(np.asarray(theta_star, dtype=np.float64))
    data = kernel_data(model, ds) if target == "ppi" else labeled_data(model, ds)
    best = objective(model, theta_star, ds, target, data)
    traj.theta_star = theta_star
    traj.gaps = [objective(model, snap, ds, target, data) - best for _, snap in traj.snapshots]


def update_direction(model: LossModel, theta, snapshot, mu, x, y: float, aux: float) -> np.ndarray:
    """The variance-reduced direction v for one sample (x, y) with auxiliary label aux."""
    theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
    snapshot = np.atleast_1d(np.asarray(snapshot, dtype=np.float64))
    row = np.zeros(0) if x is None else np.asarray(x, dtype=np.float64).reshape(-1)
    feats = model.features(row)[0]
    g = np.empty(theta.shape[0])
    h = np.empty(theta.shape[0])
    sample_grad_into(model.kind.code, model.regularization, theta, feats, float(y), g)
    sample_grad_into(model.kind.code, model.regularization, snapshot, feats, float(aux), h)
    return g - h + np.atleast_1d(np.asarray(mu, dtype=np.float64))
