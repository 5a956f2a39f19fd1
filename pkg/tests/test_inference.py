"""
test inference.py
"""
import numpy as np
import pytest

from ppisvrg.data import SyntheticSpec, generate, mean_dataset
from ppisvrg.losses import LossModel
from ppisvrg.optim import OptConfig
from ppisvrg.inference import \
    Z_975, Method, EstimateReport, BootstrapConfig, UndefinedStandardError, \
    naive_estimate, ppi_estimate, ppi_point_estimate, ppi_weighted_estimate, bootstrap_se, \
    ppi_svrg_estimate, iterate_noise_sd


@pytest.fixture()
def constant_residual():
    rng = np.random.default_rng(4)
    f_lab = rng.normal(size=30)
    return mean_dataset(f_lab + 0.4, f_lab, rng.normal(size=200) - 0.2)


OPT = OptConfig(eta=0.1, m=50, S=40, seed=2)


def test_naive_two_points():
    report = naive_estimate(mean_dataset([0.0, 1.0], [0.0, 0.0]))
    assert report.method == Method.NAIVE
    assert report.theta_hat == 0.5
    assert report.se == 0.5


def test_naive_constant_outcome():
    report = naive_estimate(mean_dataset([2.5, 2.5, 2.5], [0.0, 1.0, 2.0]))
    assert (report.theta_hat, report.se) == (2.5, 0.0)
    assert report.ci_lo == report.ci_hi == 2.5


def test_naive_needs_two_labels():
    with pytest.raises(UndefinedStandardError):
        naive_estimate(mean_dataset([1.0], [1.0], [0.5, 0.5]))


def test_naive_coverage():
    hits = 0
    for seed in range(200):
        ds = generate(SyntheticSpec(n=160, N=0, outcome_kind="binary", prevalence=0.1516,
                                    seed=seed))
        hits += naive_estimate(ds).covers(0.1516)
    assert 0.90 <= hits / 200 <= 0.98


def test_ppi_example():
    ds = mean_dataset([0.0, 1.0], [0.5, 0.5], [1.0, 1.0])
    assert ppi_estimate(ds).theta_hat == pytest.approx(0.75)


def test_ppi_constant_predictor():
    ds = mean_dataset([1.0, 2.0, 4.0], [3.0, 3.0, 3.0], [3.0, 3.0, 3.0, 3.0])
    report = ppi_estimate(ds)
    assert report.theta_hat == pytest.approx(np.mean([1.0, 2.0, 4.0]))
    assert report.meta["unlabeled_term"] == 0.0


def test_ppi_equal_prediction_means():
    ds = mean_dataset([1.0, 3.0], [1.0, 3.0], [0.0, 4.0])
    assert ppi_estimate(ds).theta_hat == pytest.approx(2.0)


def test_ppi_forms_agree():
    for seed in range(10):
        ds = generate(SyntheticSpec(n=20 + seed, N=100, pred_noise_sigma=0.7, theta_star=-1.0,
                                    seed=seed))
        assert ppi_point_estimate(ds) == pytest.approx(ppi_weighted_estimate(ds), abs=1e-12)
        assert ppi_estimate(ds).meta["equivalence_gap"] < 1e-12


def test_ppi_se_undefined_without_unlabeled_records():
    ds = mean_dataset([0.0, 1.0, 2.0], [0.0, 1.0, 2.5], [1.0])
    with pytest.raises(UndefinedStandardError):
        ppi_estimate(ds)
    report = ppi_estimate(ds, strict=False)
    assert report.theta_hat == pytest.approx(ppi_point_estimate(ds))
    assert np.isnan(report.se)


def test_perfect_predictor_dominates_naive():
    for seed in range(20):
        ds = generate(SyntheticSpec(n=50, N=500, pred_noise_sigma=0.0, theta_star=1.0,
                                    seed=seed))
        assert ppi_estimate(ds).se < naive_estimate(ds).se


def test_ci_width_identity():
    ds = generate(SyntheticSpec(n=40, N=80, pred_noise_sigma=0.3, seed=1))
    for report in (naive_estimate(ds), ppi_estimate(ds), ppi_estimate(ds, z=2.5)):
        assert report.ci_hi - report.ci_lo == pytest.approx(2 * report.z * report.se, rel=1e-12)
        assert report.ci_width == 2 * report.z * report.se
        assert report.ci_lo <= report.theta_hat <= report.ci_hi


def test_report_record():
    report = EstimateReport.build("ppi_svrg", 1.0, 0.1, meta={"B": 10, "raw_sd": 0.2})
    record = report.to_dict()
    assert record["method"] == "ppi_svrg"
    assert record["ci_lo"] == pytest.approx(1.0 - Z_975 * 0.1)
    assert (record["B"], record["deflation"], record["converged"]) == (10, None, None)
    assert record["raw_sd"] == 0.2


def test_bootstrap_deflation():
    se, raw_sd = bootstrap_se([0.0, 0.02 * np.sqrt(2.0)], 0.95)
    assert raw_sd == pytest.approx(0.02)
    assert se == pytest.approx(0.019)


@pytest.mark.parametrize("kwargs", [{"B": 1}, {"deflation": 0.0}, {"tol": 0.0}, {"seed": -1}])
def test_invalid_bootstrap_config(kwargs):
    with pytest.raises(ValueError):
        BootstrapConfig(**kwargs)


def test_ppi_svrg_matches_closed_form(constant_residual):
    report = ppi_svrg_estimate(constant_residual, LossModel(), OPT, BootstrapConfig(B=5))
    assert abs(report.theta_hat - ppi_estimate(constant_residual).theta_hat) < 1e-6
    assert report.meta["converged"]
    assert report.meta["B"] == 5
    assert report.se == pytest.approx(0.95 * report.meta["raw_sd"])


def test_identical_resamples_give_zero_se():
    ds = mean_dataset([1.0] * 5, [0.5] * 5, [0.5] * 5)
    report = ppi_svrg_estimate(ds, LossModel(), OPT, BootstrapConfig(B=2))
    assert report.se == 0.0


def test_bootstrap_is_deterministic(constant_residual):
    boot = BootstrapConfig(B=6, seed=17)
    a = ppi_svrg_estimate(constant_residual, LossModel(), OPT, boot)
    b = ppi_svrg_estimate(constant_residual, LossModel(), OPT, boot)
    assert a == b
    c = ppi_svrg_estimate(constant_residual, LossModel(), OPT, BootstrapConfig(B=6, seed=18))
    assert c.se != a.se


def test_bootstrap_workers_do_not_change_result(constant_residual):
    boot = BootstrapConfig(B=4, seed=3)
    serial = ppi_svrg_estimate(constant_residual, LossModel(), OPT, boot)
    parallel = ppi_svrg_estimate(constant_residual, LossModel(), OPT, boot, n_jobs=2)
    assert serial.se == parallel.se


def test_unconverged_run_is_flagged(constant_residual):
    short = OptConfig(eta=0.01, m=5, S=1)
    report = ppi_svrg_estimate(constant_residual, LossModel(), short, BootstrapConfig(B=3),
                               warn=False)
    assert not report.meta["converged"]
    assert report.meta["grad_norm"] > 1e-8


def test_noisy_run_counts_as_converged():
    ds = generate(SyntheticSpec(n=100, N=1000, pred_noise_sigma=0.5, theta_star=1.0, seed=6))
    report = ppi_svrg_estimate(ds, LossModel(), OptConfig(eta=0.01, m=200, S=20, seed=3),
                               BootstrapConfig(B=3))
    assert report.meta["noise_sd"] > 0.0
    assert report.meta["grad_norm"] > BootstrapConfig().tol
    assert report.meta["converged"]


def test_iterate_noise_sd():
    ds = mean_dataset([0.0, 1.0], [0.0, 0.0])
    assert iterate_noise_sd(LossModel(), ds, 0.5) == pytest.approx(np.sqrt(0.25 / 3.0))


def test_ppi_svrg_needs_mean_loss(constant_residual):
    with pytest.raises(ValueError, match="mean_sq"):
        ppi_svrg_estimate(constant_residual, LossModel(kind="ridge", regularization=0.1), OPT,
                          BootstrapConfig())
