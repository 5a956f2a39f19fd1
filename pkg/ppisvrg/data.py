"""
data.py
Handles the
- SplitDataset of labeled (x, y, f) and prediction-only (x, f) records
- SyntheticSpec and the synthetic generator with controllable prediction quality
- resampling with replacement for bootstrap and Monte Carlo protocols
"""
from __future__ import annotations
from math import floor
from enum import Enum
from dataclasses import dataclass, field, asdict
from typing import List, NamedTuple, Optional, Sequence, Union, Dict, Any

import numpy as np

from ppisvrg.calibration import AffineCalibration, FlipCalibration, Calibration, sigmoid
from ppisvrg.rng import make_rng, check_seed, STREAM_LABELED, STREAM_UNLABELED


class OutcomeKind(str, Enum):
    BINARY = "binary"
    CONTINUOUS = "continuous"


class LabeledRecord(NamedTuple):
    x: np.ndarray
    y: float
    f: float


class UnlabeledRecord(NamedTuple):
    x: np.ndarray
    f: float


def _frozen_array(values) -> np.ndarray:
    arr = np.ascontiguousarray(np.array(values, dtype=np.float64))
    arr.setflags(write=False)
    return arr


def _feature_block(values, rows: int, dim: int = 0) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.size == 0:
        arr = np.zeros((rows, arr.shape[1] if arr.ndim == 2 else dim))
    elif arr.ndim == 1:
        arr = arr.reshape(rows, -1)
    return _frozen_array(arr)


@dataclass(frozen=True, eq=False)
class SplitDataset:
    """
    n labeled records (x, y, f) plus N prediction-only records (x, f).

    Arrays are copied on construction and made read-only, so a dataset can
    be shared between concurrent workers.

    Attributes:
        x_lab (np.ndarray): Labeled features, shape (n, d); d = 0 is allowed.
        y_lab (np.ndarray): Labeled outcomes, shape (n,).
        f_lab (np.ndarray): Predictions on the labeled records, shape (n,).
        x_unlab (np.ndarray): Unlabeled features, shape (N, d).
        f_unlab (np.ndarray): Predictions on the unlabeled records, shape (N,).
        outcome_kind (OutcomeKind): Binary outcomes are stored as {0, 1}.
    """
    x_lab: np.ndarray
    y_lab: np.ndarray
    f_lab: np.ndarray
    x_unlab: np.ndarray
    f_unlab: np.ndarray
    outcome_kind: OutcomeKind = OutcomeKind.CONTINUOUS

    def __post_init__(self):
        n = len(self.y_lab)
        num_unlab = len(self.f_unlab)
        x_lab = _feature_block(self.x_lab, n)
        object.__setattr__(self, "x_lab", x_lab)
        object.__setattr__(self, "y_lab", _frozen_array(self.y_lab))
        object.__setattr__(self, "f_lab", _frozen_array(self.f_lab))
        object.__setattr__(self, "x_unlab", _feature_block(self.x_unlab, num_unlab, x_lab.shape[1]))
        object.__setattr__(self, "f_unlab", _frozen_array(self.f_unlab))
        object.__setattr__(self, "outcome_kind", OutcomeKind(self.outcome_kind))

        if n < 1:
            raise ValueError("a dataset needs at least one labeled record (n >= 1)")
        if self.f_lab.shape != (n,):
            raise ValueError(f"f_lab must have shape ({n},), got {self.f_lab.shape}")
        if self.x_lab.shape[0] != n:
            raise ValueError(f"x_lab must have {n} rows, got {self.x_lab.shape[0]}")
        if self.x_unlab.shape[0] != num_unlab:
            raise ValueError(f"x_unlab must have {num_unlab} rows, got {self.x_unlab.shape[0]}")
        if self.x_unlab.shape[1] != self.x_lab.shape[1]:
            raise ValueError(
                f"labeled and unlabeled features differ in dimension: "
                f"{self.x_lab.shape[1]} vs {self.x_unlab.shape[1]}")
        for name in ("x_lab", "y_lab", "f_lab", "x_unlab", "f_unlab"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite values")
        if self.outcome_kind == OutcomeKind.BINARY and not np.all(np.isin(self.y_lab, (0.0, 1.0))):
            raise ValueError("binary datasets require y in {0, 1}")

    @property
    def n(self) -> int:
        return self.y_lab.shape[0]

    @property
    def N(self) -> int:  # pylint: disable=invalid-name
        return self.f_unlab.shape[0]

    @property
    def dim(self) -> int:
        return self.x_lab.shape[1]

    @property
    def x_all(self) -> np.ndarray:
        """Features of all N + n records, labeled first."""
        return np.concatenate((self.x_lab, self.x_unlab), axis=0)

    @property
    def f_all(self) -> np.ndarray:
        """Predictions of all N + n records, labeled first."""
        return np.concatenate((self.f_lab, self.f_unlab))

    @property
    def labeled(self) -> List[LabeledRecord]:
        return [LabeledRecord(x, float(y), float(f))
                for x, y, f in zip(self.x_lab, self.y_lab, self.f_lab)]

    @property
    def unlabeled(self) -> List[UnlabeledRecord]:
        return [UnlabeledRecord(x, float(f)) for x, f in zip(self.x_unlab, self.f_unlab)]

    def labeled_fraction(self) -> float:
        return self.n / (self.n + self.N)

    def has_hard_predictions(self) -> bool:
        return bool(np.all(np.isin(self.f_all, (0.0, 1.0))))

    def __eq__(self, other) -> bool:
        if not isinstance(other, SplitDataset):
            return NotImplemented
        return self.outcome_kind == other.outcome_kind and all(
            np.array_equal(getattr(self, name), getattr(other, name))
            for name in ("x_lab", "y_lab", "f_lab", "x_unlab", "f_unlab"))

    def __hash__(self):
        return id(self)


def from_records(
        labeled: Sequence[LabeledRecord],
        unlabeled: Sequence[UnlabeledRecord] = (),
        outcome_kind: OutcomeKind = OutcomeKind.CONTINUOUS) -> SplitDataset:
    """Build a dataset from record lists; records must share one feature dimension."""
    if not labeled:
        raise ValueError("a dataset needs at least one labeled record (n >= 1)")
    dims = {np.atleast_1d(np.asarray(r.x, dtype=float)).size for r in labeled} \
        | {np.atleast_1d(np.asarray(r.x, dtype=float)).size for r in unlabeled}
    if len(dims) != 1:
        raise ValueError(f"records have mixed feature dimensions {sorted(dims)}")
    dim = dims.pop()

    def stack(records) -> np.ndarray:
        rows = np.zeros((len(records), dim))
        for i, record in enumerate(records):
            rows[i] = np.asarray(record.x, dtype=float).reshape(dim)
        return rows

    return SplitDataset(
        x_lab=stack(labeled),
        y_lab=[r.y for r in labeled],
        f_lab=[r.f for r in labeled],
        x_unlab=stack(unlabeled),
        f_unlab=[r.f for r in unlabeled],
        outcome_kind=outcome_kind)


def mean_dataset(
        y: Sequence[float], f_lab: Sequence[float], f_unlab: Sequence[float] = (),
        outcome_kind: OutcomeKind = OutcomeKind.CONTINUOUS) -> SplitDataset:
    """Build a d = 0 dataset for pure mean estimation."""
    n, num_unlab = len(y), len(f_unlab)
    return SplitDataset(
        x_lab=np.zeros((n, 0)), y_lab=y, f_lab=f_lab,
        x_unlab=np.zeros((num_unlab, 0)), f_unlab=f_unlab,
        outcome_kind=outcome_kind)


@dataclass(frozen=True)
class SyntheticSpec:
    """
    Parameters of the synthetic generator.

    Continuous: F = mu(X) + zeta with zeta ~ Normal(0, 1), Y = F + eps with
    eps ~ Normal(0, pred_noise_sigma^2); mu(X) = theta_star for dim = 0 and
    X . theta_star otherwise, X ~ Normal(0, I_dim).
    Binary: Y ~ Bernoulli(prevalence) for dim = 0, Bernoulli(sigmoid(X . theta_star))
    otherwise; F = Y flipped with probability flip_prob.
    """
    n: int
    N: int  # pylint: disable=invalid-name
    outcome_kind: OutcomeKind = OutcomeKind.CONTINUOUS
    theta_star: Union[float, Sequence[float], None] = 0.0
    pred_noise_sigma: float = 1.0
    flip_prob: float = 0.0
    prevalence: float = 0.5
    seed: int = 0
    dim: int = 0

    def __post_init__(self):
        object.__setattr__(self, "outcome_kind", OutcomeKind(self.outcome_kind))
        if isinstance(self.theta_star, (list, np.ndarray)):
            object.__setattr__(self, "theta_star", tuple(float(v) for v in self.theta_star))
        if self.n < 1:
            raise ValueError(f"n must be at least 1, got {self.n}")
        if self.N < 0:
            raise ValueError(f"N must be non-negative, got {self.N}")
        if self.dim < 0:
            raise ValueError(f"dim must be non-negative, got {self.dim}")
        if not self.pred_noise_sigma >= 0:
            raise ValueError(f"pred_noise_sigma must be >= 0, got {self.pred_noise_sigma}")
        if not 0.0 <= self.flip_prob <= 0.5:
            raise ValueError(f"flip_prob must lie in [0, 0.5], got {self.flip_prob}")
        if not 0.0 < self.prevalence < 1.0:
            raise ValueError(f"prevalence must lie in (0, 1), got {self.prevalence}")
        check_seed(self.seed)
        if self.dim > 0 and len(self.theta_vector()) != self.dim:
            raise ValueError(
                f"theta_star must have {self.dim} entries for dim={self.dim}, "
                f"got {self.theta_star}")

    def theta_vector(self) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.theta_star if self.theta_star is not None else 0.0,
                                        dtype=float))

    def true_theta(self) -> Union[float, np.ndarray]:
        """The estimand: E[Y] for dim = 0, the regression parameter otherwise."""
        if self.dim > 0:
            return self.theta_vector()
        if self.outcome_kind == OutcomeKind.BINARY:
            return self.prevalence
        return float(self.theta_vector()[0])

    def to_dict(self) -> Dict[str, Any]:
        params = asdict(self)
        params["outcome_kind"] = self.outcome_kind.value
        if isinstance(self.theta_star, tuple):
            params["theta_star"] = list(self.theta_star)
        return params


def generate(spec: SyntheticSpec) -> SplitDataset:
    """
    Draw a dataset from the synthetic model; a pure function of its parameters.

    The draw order is fixed (features, then the prediction/outcome draws over
    all n + N records, labeled first), so specs differing only in
    pred_noise_sigma share their features and predictions.

    Args:
        spec (SyntheticSpec): The generator parameters.

    Returns:
        SplitDataset: n labeled and N prediction-only records.
    """
    rng = make_rng(spec.seed)
    total = spec.n + spec.N
    x = rng.standard_normal((total, spec.dim))

    if spec.outcome_kind == OutcomeKind.CONTINUOUS:
        mu = np.full(total, spec.theta_vector()[0]) if spec.dim == 0 \
            else x @ spec.theta_vector()
        f = mu + rng.standard_normal(total)
        y = f[:spec.n] + rng.normal(0.0, spec.pred_noise_sigma, spec.n)
    else:
        probs = np.full(total, spec.prevalence) if spec.dim == 0 \
            else sigmoid(x @ spec.theta_vector())
        y_all = (rng.random(total) < probs).astype(float)
        flips = rng.random(total) < spec.flip_prob
        f = np.where(flips, 1.0 - y_all, y_all)
        y = y_all[:spec.n]

    return SplitDataset(
        x_lab=x[:spec.n], y_lab=y, f_lab=f[:spec.n],
        x_unlab=x[spec.n:], f_unlab=f[spec.n:],
        outcome_kind=spec.outcome_kind)


def true_calibration(spec: SyntheticSpec) -> Calibration:
    """The exact map (x, f) -> E[Y | X, F] of the synthetic model."""
    if spec.outcome_kind == OutcomeKind.CONTINUOUS:
        return AffineCalibration(1.0, 0.0)
    theta = tuple(spec.theta_vector()) if spec.dim > 0 else None
    return FlipCalibration(spec.flip_prob, spec.prevalence, theta)


def forest_analog(seed: int = 0, flip_prob: float = 0.05) -> SyntheticSpec:
    """Synthetic stand-in for the deforestation data: 160 labeled, 1436 unlabeled, 15.16% positives."""
    return SyntheticSpec(n=160, N=1436, outcome_kind=OutcomeKind.BINARY,
                         theta_star=None, prevalence=0.1516, flip_prob=flip_prob, seed=seed)


def galaxies_analog(seed: int = 0, flip_prob: float = 0.1) -> SyntheticSpec:
    """Synthetic stand-in for the galaxy morphology data: 1674 labeled, 15069 unlabeled."""
    return SyntheticSpec(n=1674, N=15069, outcome_kind=OutcomeKind.BINARY,
                         theta_star=None, prevalence=0.25927, flip_prob=flip_prob, seed=seed)


def labeled_size(gamma: float, n_base: int) -> int:
    """floor(gamma * n_base), robust to binary rounding of gamma."""
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    return int(floor(gamma * n_base + 1e-9))


def resample_with_replacement(
        ds: SplitDataset, n_lab: int, n_unlab: int, seed: int) -> SplitDataset:
    """
    Draw labeled and unlabeled records independently, with replacement.

    Args:
        ds (SplitDataset): The pool to draw from.
        n_lab (int): Number of labeled draws (>= 1).
        n_unlab (int): Number of unlabeled draws (>= 0).
        seed (int): Seed; the two parts use independent child streams.

    Returns:
        SplitDataset: The resampled dataset.
    """
    if n_lab < 1:
        raise ValueError(f"n_lab must be at least 1, got {n_lab}")
    if n_unlab < 0:
        raise ValueError(f"n_unlab must be non-negative, got {n_unlab}")
    if n_unlab > 0 and ds.N == 0:
        raise ValueError("cannot draw unlabeled records from an empty unlabeled pool")

    lab_idx = make_rng(seed, STREAM_LABELED).integers(0, ds.n, n_lab)
    unlab_idx = make_rng(seed, STREAM_UNLABELED).integers(0, max(ds.N, 1), n_unlab)
    return SplitDataset(
        x_lab=ds.x_lab[lab_idx], y_lab=ds.y_lab[lab_idx], f_lab=ds.f_lab[lab_idx],
        x_unlab=ds.x_unlab[unlab_idx].reshape(n_unlab, ds.dim), f_unlab=ds.f_unlab[unlab_idx],
        outcome_kind=ds.outcome_kind)


def subsample_labeled(ds: SplitDataset, gamma: float, seed: int,
                      n_unlab: Optional[int] = None) -> SplitDataset:
    """Resample floor(gamma * n) labeled and (by default) N unlabeled records."""
    n_lab = labeled_size(gamma, ds.n)
    if n_lab < 1:
        raise ValueError(f"gamma={gamma} leaves no labeled records out of n={ds.n}")
    return resample_with_replacement(ds, n_lab, ds.N if n_unlab is None else n_unlab, seed)


@dataclass
class DatasetSummary:
    n: int
    N: int  # pylint: disable=invalid-name
    dim: int
    outcome_kind: str
    labeled_fraction: float
    spec: Optional[Dict[str, Any]] = field(default=None)


def summarize(ds: SplitDataset, spec: Optional[SyntheticSpec] = None) -> DatasetSummary:
    return DatasetSummary(
        n=ds.n, N=ds.N, dim=ds.dim, outcome_kind=ds.outcome_kind.value,
        labeled_fraction=ds.labeled_fraction(),
        spec=spec.to_dict() if spec is not None else None)
