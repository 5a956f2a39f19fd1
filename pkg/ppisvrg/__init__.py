"""Variance-reduced stochastic optimization with prediction-powered control variates."""

__version__ = "0.3.0"

from .logging import logger
from .data import \
    OutcomeKind, LabeledRecord, UnlabeledRecord, SplitDataset, SyntheticSpec, \
    generate, resample_with_replacement, subsample_labeled, from_records, mean_dataset, \
    forest_analog, galaxies_analog, true_calibration
from .data_loader import read_csv, write_csv, DatasetFormatError
from .calibration import AffineCalibration, FlipCalibration
from .losses import LossKind, AuxMode, LossModel, CalibrationMissingError, \
    loss, grad, aux_grad, full_grad, objective, certify
from .optim import \
    Algorithm, SnapshotRule, OptConfig, Trajectory, InvalidStepSizeError, \
    run_sgd, run_svrg, run_ppi_svrg, run_ppi_svrg_pp, run, reference_solution
from .theory import \
    RateConstants, FloorEstimate, PPlusBoundInputs, DiscreteJoint, \
    rate_constants, bound_curve, conditional_variance_floor, pplus_bound, \
    fit_empirical_rate, total_variance_decomposition
from .inference import \
    Method, EstimateReport, BootstrapConfig, UndefinedStandardError, \
    naive_estimate, ppi_estimate, ppi_svrg_estimate
from .harness import ProtocolConfig, MonteCarloReport, run_protocol, reduction_table
from .config import ExperimentConfig, ConfigError
