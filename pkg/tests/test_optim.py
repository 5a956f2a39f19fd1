"""
test optim.py
"""
import logging
from dataclasses import replace
import numpy as np
import pytest

from ppisvrg.data import SyntheticSpec, generate, mean_dataset
from ppisvrg.losses import LossModel, full_grad, certify
from ppisvrg.optim import \
    Algorithm, OptConfig, SnapshotRule, InvalidStepSizeError, \
    run_sgd, run_svrg, run_ppi_svrg, run_ppi_svrg_pp, run, reference_solution, update_direction
from ppisvrg.theory import default_pp_step


@pytest.fixture()
def noisy_mean():
    return generate(SyntheticSpec(n=40, N=200, pred_noise_sigma=0.5, theta_star=1.0, seed=2))


def closed_form_ppi(ds):
    return np.mean(ds.y_lab) + np.mean(ds.f_all) - np.mean(ds.f_lab)


def test_sgd_zero_step_keeps_theta(noisy_mean):
    traj = run_sgd(LossModel(), noisy_mean, OptConfig(eta=0.0, m=5, S=3, theta0=(1.5,)))
    assert all(theta[0] == 1.5 for _, theta in traj.snapshots)


def test_sgd_hand_iteration():
    ds = mean_dataset([1.0], [1.0])
    traj = run_sgd(LossModel(), ds, OptConfig(eta=0.5, m=2, S=1))
    assert traj.final_theta[0] == pytest.approx(0.75)


def test_sgd_direction_variance_matches_sample_gradients():
    y = np.arange(10, dtype=float)
    ds = mean_dataset(y, y)
    # eta = 0 keeps theta at -1, so |v| = y_i + 1
    traj = run_sgd(LossModel(), ds, OptConfig(eta=0.0, m=4000, S=1, theta0=(-1.0,), seed=5))
    v = np.array([rec.v_norm for rec in traj.inner_records])
    assert set(v) <= set(y + 1.0)
    centered_sq = (v - v.mean())**2
    se = np.std(centered_sq) / np.sqrt(v.size)
    assert abs(np.var(v) - np.var(y)) < 4 * se


def test_control_variate_cancels_at_snapshot():
    model = LossModel(kind="ridge", regularization=0.2)
    theta, x, y = np.array([0.3, -0.4]), np.array([1.0, 2.0]), 0.5
    mu = np.array([0.7, -0.1])
    assert np.array_equal(update_direction(model, theta, theta, mu, x, y, y), mu)


def test_svrg_direction_on_two_points():
    model = LossModel()
    mu = full_grad(model, 0.0, None, [0.0, 2.0])
    assert mu == pytest.approx([-1.0])
    for y in (0.0, 2.0):
        assert update_direction(model, 1.0, 0.0, mu, None, y, y) == pytest.approx([0.0])


def test_single_sample_removes_all_variance():
    model = LossModel(kind="ridge", regularization=0.2)
    x, y = np.array([1.0, -1.0]), 0.25
    snapshot, theta = np.array([0.5, 0.5]), np.array([-0.3, 0.9])
    mu = full_grad(model, snapshot, x.reshape(1, -1), [y])
    v = update_direction(model, theta, snapshot, mu, x, y, y)
    assert np.allclose(v, full_grad(model, theta, x.reshape(1, -1), [y]), rtol=0, atol=1e-12)


def test_perfect_quadratic_direction_is_sample_independent():
    model = LossModel()
    directions = {float(update_direction(model, 1.5, 0.25, -1.0, None, y, y)[0])
                  for y in (0.0, 0.5, 2.0, 3.25)}
    assert directions == {0.25}


def test_direction_is_conditionally_unbiased():
    ds = generate(SyntheticSpec(n=4, N=3, dim=2, theta_star=[1.0, -0.5], seed=3))
    model = LossModel(kind="ridge", regularization=0.1)
    theta, snapshot = np.array([0.2, 0.4]), np.array([-0.5, 1.0])
    mu = full_grad(model, snapshot, ds.x_all, ds.f_all)
    mean_v = np.mean([update_direction(model, theta, snapshot, mu, x, y, f)
                      for x, y, f in zip(ds.x_lab, ds.y_lab, ds.f_lab)], axis=0)
    expected = full_grad(model, theta, ds.x_lab, ds.y_lab) + \
        (mu - full_grad(model, snapshot, ds.x_lab, ds.f_lab))
    assert np.allclose(mean_v, expected, rtol=0, atol=1e-12)


def test_ppi_fixed_point_is_closed_form(noisy_mean):
    model = LossModel()
    theta = closed_form_ppi(noisy_mean)
    snapshot = 0.3
    mu = full_grad(model, snapshot, None, noisy_mean.f_all)
    mean_v = np.mean([update_direction(model, theta, snapshot, mu, None, y, f)
                      for y, f in zip(noisy_mean.y_lab, noisy_mean.f_lab)])
    assert abs(mean_v) < 1e-12


def test_ppi_snapshot_gradient_for_mean(noisy_mean):
    traj = run_ppi_svrg(LossModel(), noisy_mean, OptConfig(eta=0.1, m=20, S=5, seed=1))
    f_bar = np.mean(noisy_mean.f_all)
    for s, mu in enumerate(traj.mu_tilde, start=1):
        assert mu[0] == pytest.approx(traj.snapshots[s - 1][1][0] - f_bar, abs=1e-12)


def test_ppi_svrg_reduces_to_svrg():
    ds = generate(SyntheticSpec(n=50, N=0, dim=5, theta_star=[1.0, -1.0, 0.5, 0.0, 2.0],
                                pred_noise_sigma=0.0, seed=1))
    model = LossModel(kind="ridge", regularization=0.5)
    cfg = OptConfig(eta=0.01, m=100, S=10, seed=7, compute_gaps=True)
    svrg, ppi = run_svrg(model, ds, cfg), run_ppi_svrg(model, ds, cfg)
    assert svrg.total_inner_iterations == 1000
    assert len(svrg.inner_records) == len(ppi.inner_records) == 1000
    for a, b in zip(svrg.inner_records, ppi.inner_records):
        assert np.array_equal(a.theta, b.theta)
        assert a.v_norm == b.v_norm
    for (_, a), (_, b) in zip(svrg.snapshots, ppi.snapshots):
        assert np.array_equal(a, b)
    assert svrg.gaps == ppi.gaps


def test_ppi_svrg_converges_to_closed_form_on_constant_residuals():
    rng = np.random.default_rng(0)
    model = LossModel()
    for k in range(50):
        n, N = int(rng.integers(4, 101)), int(rng.integers(0, 1001))
        f_lab = rng.normal(size=n)
        y = f_lab + rng.normal()
        ds = mean_dataset(y, f_lab, rng.normal(size=N) + 0.3)
        traj = run_ppi_svrg(model, ds, OptConfig(eta=0.1, m=50, S=40, seed=k))
        assert abs(traj.final_theta[0] - closed_form_ppi(ds)) < 1e-8


def test_ppi_svrg_pp_converges_with_perfect_predictions():
    ds = generate(SyntheticSpec(n=30, N=100, pred_noise_sigma=0.0, theta_star=2.0, seed=4))
    cfg = OptConfig(eta=default_pp_step(1.0), m0=8, S=10, seed=3)
    traj = run_ppi_svrg_pp(LossModel(), ds, cfg)
    assert abs(traj.final_theta[0] - closed_form_ppi(ds)) < 1e-8


def test_doubling_schedule():
    cfg = OptConfig(eta=0.1, m0=4, S=3)
    assert cfg.epoch_lengths(Algorithm.PPI_SVRG_PP) == [4, 8, 16]
    traj = run_ppi_svrg_pp(LossModel(), mean_dataset([1.0, 2.0], [1.0, 2.0]), cfg)
    assert traj.total_inner_iterations == 28


@pytest.mark.parametrize("m0", [1, 2, 3, 4, 5])
@pytest.mark.parametrize("S", [1, 2, 3, 4, 5])
def test_doubling_bookkeeping(noisy_mean, m0, S):
    traj = run_ppi_svrg_pp(LossModel(), noisy_mean, OptConfig(eta=0.1, m0=m0, S=S, seed=m0 * S))
    assert traj.total_inner_iterations == m0 * (2**S - 1)
    assert len(traj.inner_records) == traj.total_inner_iterations
    assert len(traj.snapshots) == S + 1
    for s in range(1, S + 1):
        iterates = [rec.theta for rec in traj.inner_records if rec.s == s]
        assert len(iterates) == m0 * 2**(s - 1)
        assert np.allclose(traj.snapshots[s][1], np.mean(iterates, axis=0), rtol=0, atol=1e-12)
    for s in range(1, S):
        assert np.array_equal(traj.epoch_starts[s], traj.epoch_ends[s - 1])


@pytest.mark.parametrize("m", [1, 7, 25])
@pytest.mark.parametrize("S", [1, 4])
def test_fixed_epoch_bookkeeping(noisy_mean, m, S):
    cfg = OptConfig(eta=0.1, m=m, S=S)
    for runner in (run_sgd, run_svrg, run_ppi_svrg):
        traj = runner(LossModel(), noisy_mean, cfg)
        assert traj.total_inner_iterations == S * m
        assert traj.num_epochs == S


def test_ppi_svrg_restarts_from_random_iterate(noisy_mean):
    traj = run_ppi_svrg(LossModel(), noisy_mean, OptConfig(eta=0.1, m=10, S=6, seed=2))
    for s in range(1, 7):
        iterates = [rec.theta for rec in traj.inner_records if rec.s == s]
        assert any(np.array_equal(traj.snapshots[s][1], theta) for theta in iterates)
        if s < 6:
            assert np.array_equal(traj.epoch_starts[s], traj.snapshots[s][1])


def test_average_snapshot_rule_for_ppi_svrg(noisy_mean):
    cfg = OptConfig(eta=0.1, m=10, S=2, snapshot_rule=SnapshotRule.AVERAGE)
    traj = run_ppi_svrg(LossModel(), noisy_mean, cfg)
    first = [rec.theta for rec in traj.inner_records if rec.s == 1]
    assert np.allclose(traj.snapshots[1][1], np.mean(first, axis=0), rtol=0, atol=1e-12)


def test_single_epoch_average(noisy_mean):
    traj = run_ppi_svrg_pp(LossModel(), noisy_mean, OptConfig(eta=0.1, m0=6, S=1))
    iterates = [rec.theta for rec in traj.inner_records]
    assert len(iterates) == 6
    assert np.allclose(traj.final_theta, np.mean(iterates, axis=0), rtol=0, atol=1e-12)


@pytest.mark.parametrize("algorithm", list(Algorithm))
def test_runs_are_deterministic(algorithm):
    ds = generate(SyntheticSpec(n=20, N=30, dim=2, theta_star=[0.5, 0.5], seed=6))
    model = LossModel(kind="ridge", regularization=0.3)
    cfg = OptConfig(eta=0.01, m=15, m0=4, S=4, seed=11, algorithm=algorithm)
    a, b = run(model, ds, cfg), run(model, ds, cfg)
    assert [r.t for r in a.inner_records] == [r.t for r in b.inner_records]
    for ra, rb in zip(a.inner_records, b.inner_records):
        assert np.array_equal(ra.theta, rb.theta)
    other = run(model, ds, OptConfig(eta=0.01, m=15, m0=4, S=4, seed=12, algorithm=algorithm))
    assert not np.array_equal(a.final_theta, other.final_theta)


def test_record_every(noisy_mean):
    traj = run_ppi_svrg(LossModel(), noisy_mean, OptConfig(eta=0.1, m=10, S=2, record_every=3))
    assert [rec.t for rec in traj.inner_records] == [0, 3, 6, 9, 0, 3, 6, 9]
    rows = traj.to_rows()
    assert len(rows) == 8
    assert set(rows[0]) == {"epoch", "t", "gap", "v_norm", "mu_norm"}


def test_gaps_against_reference(noisy_mean):
    cfg = OptConfig(eta=0.1, m=20, S=8, compute_gaps=True, theta0=(5.0,))
    traj = run_ppi_svrg(LossModel(), noisy_mean, cfg)
    assert len(traj.gaps) == 9
    assert traj.theta_star[0] == pytest.approx(closed_form_ppi(noisy_mean), abs=1e-10)
    assert min(traj.gaps) > -1e-12
    assert traj.gaps[-1] < traj.gaps[0]
    summary = traj.summary()
    assert summary["T"] == 160
    assert summary["config"]["algorithm"] == "ppi_svrg"


def test_reference_solution_targets(noisy_mean):
    model = LossModel()
    assert reference_solution(model, noisy_mean, "labeled")[0] == \
        pytest.approx(np.mean(noisy_mean.y_lab), abs=1e-10)
    assert reference_solution(model, noisy_mean, "ppi")[0] == \
        pytest.approx(closed_form_ppi(noisy_mean), abs=1e-10)


def test_epoch_length_overflow_guard():
    with pytest.raises(ValueError, match="max_epoch_length"):
        OptConfig(m0=8, S=30).epoch_lengths(Algorithm.PPI_SVRG_PP)


def test_strict_step_size(noisy_mean):
    with pytest.raises(InvalidStepSizeError):
        run_ppi_svrg(LossModel(), noisy_mean, OptConfig(eta=0.6, m=5, S=1, strict=True))
    with pytest.raises(InvalidStepSizeError):
        run_ppi_svrg_pp(LossModel(), noisy_mean, OptConfig(eta=0.3, m0=2, S=1, strict=True))


def test_lenient_step_size_warns(noisy_mean, caplog):
    with caplog.at_level(logging.WARNING):
        run_svrg(LossModel(), noisy_mean, OptConfig(eta=0.6, m=5, S=1))
    assert "violates" in caplog.text


@pytest.mark.parametrize("kwargs", [
    {"eta": -0.1}, {"m": 0}, {"m0": 0}, {"S": 0}, {"record_every": 0}, {"seed": -1}])
def test_invalid_config(kwargs):
    with pytest.raises(ValueError):
        OptConfig(**kwargs)


def test_zero_step_needs_sgd(noisy_mean):
    with pytest.raises(ValueError, match="eta > 0"):
        run_svrg(LossModel(), noisy_mean, OptConfig(eta=0.0))


def test_start_point_dimension(noisy_mean):
    with pytest.raises(ValueError, match="theta0"):
        run_sgd(LossModel(), noisy_mean, OptConfig(theta0=(1.0, 2.0)))


def test_ppi_svrg_pp_sublinear_decay_without_strong_convexity():
    spec = SyntheticSpec(n=200, N=0, outcome_kind="binary", dim=2, theta_star=[1.0, -0.5],
                         seed=9)
    ds = generate(spec)
    model = certify(LossModel(kind="logistic_plain"), ds)
    cfg = OptConfig(eta=default_pp_step(model.smoothness_lambda), m0=8, S=8, compute_gaps=True)
    runs = [run_ppi_svrg_pp(model, ds, replace(cfg, seed=seed))
            for seed in range(5)]
    gaps = np.mean([traj.gaps for traj in runs], axis=0)
    scaled = [gaps[S] * 8 * (2**S - 1) for S in range(3, 9)]
    assert gaps[3] > 0
    assert all(value <= 3 * scaled[0] for value in scaled)
