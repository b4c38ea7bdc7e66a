# Copyright 2024-2025 The DD-MCMC Authors. All rights reserved.
import numpy as np
import pytest
from scipy import stats

from ddmcmc.modules.gp import (FIT_MAX_NUGGET, LENGTH_GRID_RANGE,
                               SIGMA_F_RANGE, ActiveState, GPHyper, GPModel,
                               active_fit, fit_hyper, interface_table, nlml,
                               predict, sq_exp_kernel)
from ddmcmc.modules.mesh import Segment

INTERFACE = Segment((1.0, 0.0), (1.0, 1.0))


def trace(points):
    points = np.atleast_2d(points)
    return 0.5 + 0.3 * np.sin(2 * points[:, 1]) + 0.1 * points[:, 0]


def sensor_block():
    xs = np.arange(0.75, 1.25 + 1e-9, 0.125)
    ys = np.arange(0.0, 1.0 + 1e-9, 0.125)
    X, Y = np.meshgrid(xs, ys)
    return np.column_stack([X.ravel(), Y.ravel()])


def test_kernel_diagonal_and_symmetry():
    x = np.random.default_rng(0).uniform(size=(6, 2))
    K = sq_exp_kernel(x, x, 0.7, 0.3)
    np.testing.assert_allclose(np.diag(K), 0.49)
    np.testing.assert_allclose(K, K.T)


def test_nlml_matches_gaussian_log_density():
    x = np.column_stack([np.ones(5), np.linspace(0, 1, 5)])
    y = trace(x)
    hyper = GPHyper(0.4, 0.5, noise_std=0.01)
    K = sq_exp_kernel(x, x, 0.4, 0.5) + 1e-4 * np.eye(5)
    ref = -stats.multivariate_normal(np.zeros(5), K).logpdf(y)
    assert nlml(hyper, x, y) == pytest.approx(ref, rel=1e-10)


def test_noise_free_model_interpolates():
    x = np.column_stack([np.ones(5), np.linspace(0, 1, 5)])
    y = trace(x)
    model = GPModel(GPHyper(0.5, 0.3), x, y)
    mean, var = model.predict(x)
    np.testing.assert_allclose(mean, y, atol=1e-6)
    assert var.max() < 1e-6
    mu, v = predict(model, x[2])
    assert isinstance(mu, float) and mu == pytest.approx(y[2], abs=1e-6)


def test_duplicate_inputs_are_rejected():
    x = np.array([[1.0, 0.0], [1.0, 0.0]])
    with pytest.raises(ValueError):
        GPModel(GPHyper(1.0, 1.0), x, [0.0, 1.0])


def test_fitted_gp_recovers_smooth_trace():
    x = np.column_stack([np.ones(9), np.linspace(0, 1, 9)])
    hyper = fit_hyper(x, trace(x), length_ref=1.0)
    model = GPModel(hyper, x, trace(x))
    test = np.column_stack([np.ones(33), np.linspace(0, 1, 33)])
    assert np.abs(model(test) - trace(test)).max() < 1e-3
    assert not hyper.degenerate


def test_constant_data_gives_degenerate_model():
    x = np.column_stack([np.ones(4), np.linspace(0, 1, 4)])
    hyper = fit_hyper(x, np.full(4, 0.3), length_ref=1.0)
    assert hyper.degenerate
    mean, var = GPModel(hyper, x, np.full(4, 0.3)).predict([(1.0, 0.37)])
    assert mean[0] == pytest.approx(0.3)
    assert var[0] < 1e-12


def test_fit_needs_two_points():
    with pytest.raises(ValueError):
        fit_hyper([(1.0, 0.5)], [0.2], length_ref=1.0)


def test_active_fit_starts_at_midpoint_and_converges():
    sensors = sensor_block()
    test = np.column_stack([np.ones(33), np.linspace(0, 1, 33)])
    res = active_fit(INTERFACE, sensors, trace(sensors), test, delta_tol=1e-3)
    assert res.history[0]['point'] == [1.0, 0.5]
    assert not res.exhausted
    assert res.sigma_max < 1e-3
    assert 2 <= res.size < len(sensors)
    assert len(set(res.train)) == res.size
    assert np.abs(res.model(test) - trace(test)).max() < 1e-2
    summary = res.to_dict()
    assert summary['size'] == res.size and 'hyper' in summary


def test_exhausted_fit_reports_the_full_walk(caplog):
    sensors = np.array([[1.0, 0.5], [1.0, 0.0], [1.0, 1.0], [0.875, 0.25]])
    test = np.column_stack([np.ones(9), np.linspace(0, 1, 9)])
    res = active_fit(INTERFACE, sensors, trace(sensors), test, delta_tol=0.0)
    assert res.exhausted
    assert len(res.history) == len(sensors)
    # the final training set is the whole pool, not the kept model's subset
    assert sorted(res.train) == [0, 1, 2, 3] and res.size == 4
    assert res.sigma_max == res.history[-1]['sigma_max']
    kept = res.history[res.model_round]
    assert kept['sigma_max'] == min(h['sigma_max'] for h in res.history)
    assert res.model.n == kept['n_train']
    summary = res.to_dict()
    assert summary['model_size'] == res.model.n and summary['size'] == 4
    assert 'exhausted' in caplog.text


def test_nearest_unused_breaks_ties_by_index():
    sensors = np.array([[0.875, 0.5], [1.125, 0.5], [1.0, 0.0]])
    state = ActiveState(sensors, np.zeros(3), np.zeros((1, 2)), 1e-3)
    assert state.nearest_unused(np.array([1.0, 0.5])) == 0
    state.train.append(0)
    assert state.nearest_unused(np.array([1.0, 0.5])) == 1
    state.train.extend([1, 2])
    assert state.nearest_unused(np.array([1.0, 0.5])) is None


def test_interface_table_columns():
    x = np.column_stack([np.ones(5), np.linspace(0, 1, 5)])
    model = GPModel(GPHyper(0.5, 0.3), x, trace(x))
    test = np.column_stack([np.ones(9), np.linspace(0, 1, 9)])
    table = interface_table(model, INTERFACE, test)
    assert list(table.columns) == ['s', 'mu', 'var', 'x', 'y']
    np.testing.assert_allclose(table.s, np.linspace(0, 1, 9))
    assert (table['var'] >= 0).all()


def test_nlml_of_a_single_zero_observation():
    hyper = GPHyper(0.7, 0.3, noise_std=0.2)
    expected = 0.5 * np.log(0.49 + 0.04) + 0.5 * np.log(2 * np.pi)
    assert nlml(hyper, [(1.0, 0.5)], [0.0]) == pytest.approx(expected, rel=1e-12)


def test_nlml_is_finite_over_the_log_grid():
    x = np.column_stack([np.ones(5), np.linspace(0.125, 0.875, 5)])
    y = trace(x)
    for sf in np.logspace(-3, 3, 20):
        for ell in np.logspace(-3, 3, 20):
            assert np.isfinite(nlml(GPHyper(sf, ell), x, y)), (sf, ell)


def test_prediction_reverts_to_the_prior_far_away():
    x = np.column_stack([np.ones(5), np.linspace(0, 1, 5)])
    model = GPModel(GPHyper(0.6, 0.3), x, trace(x))
    mean, var = model.predict([(50.0, 50.0)])
    assert abs(mean[0]) < 1e-12
    assert var[0] == pytest.approx(0.36, rel=1e-12)


def test_predict_matches_dense_algebra():
    rng = np.random.default_rng(4)
    x = rng.uniform(size=(7, 2))
    y = trace(x)
    hyper = GPHyper(0.8, 0.4, noise_std=0.05)
    query = rng.uniform(size=(11, 2))
    K = sq_exp_kernel(x, x, 0.8, 0.4) + 0.05**2 * np.eye(7)
    ks = sq_exp_kernel(query, x, 0.8, 0.4)
    inv = np.linalg.inv(K)
    mean, var = GPModel(hyper, x, y).predict(query)
    np.testing.assert_allclose(mean, ks @ inv @ y, atol=1e-10)
    np.testing.assert_allclose(var, 0.64 - np.einsum('ij,jk,ik->i', ks, inv, ks),
                               atol=1e-10)


def test_variance_never_grows_with_more_data():
    rng = np.random.default_rng(9)
    hyper = GPHyper(1.0, 0.3, noise_std=0.01)
    for _ in range(20):
        x = rng.uniform(size=(8, 2))
        query = rng.uniform(size=(15, 2))
        before = GPModel(hyper, x[:-1], np.zeros(7)).predict(query)[1]
        after = GPModel(hyper, x, np.zeros(8)).predict(query)[1]
        assert np.all(after <= before + 1e-12)


def test_fit_never_loses_to_the_grid():
    rng = np.random.default_rng(12)
    for _ in range(50):
        n = int(rng.integers(5, 13))
        x = rng.uniform(size=(n, 2))
        y = np.sin(3 * x[:, 0]) * np.cos(2 * x[:, 1]) + 0.05 * rng.standard_normal(n)
        hyper = fit_hyper(x, y, length_ref=1.0, noise_std=0.05)
        scale = np.std(y)
        grid_min = min(
            nlml(GPHyper(scale * a, b, 0.05), x, y, max_nugget=FIT_MAX_NUGGET)
            for a in np.logspace(*np.log10(SIGMA_F_RANGE), 20)
            for b in np.logspace(*np.log10(LENGTH_GRID_RANGE), 20))
        assert nlml(hyper, x, y) <= grid_min + 1e-9


def test_fit_recovers_the_generating_length_scale():
    rng = np.random.default_rng(21)
    x = np.column_stack([np.ones(30), np.sort(rng.uniform(0, 3, 30))])
    K = sq_exp_kernel(x, x, 1.0, 0.3) + 1e-6 * np.eye(30)
    y = np.linalg.cholesky(K) @ rng.standard_normal(30)
    hyper = fit_hyper(x, y, length_ref=1.0, noise_std=1e-3)
    assert 0.15 <= hyper.length_scale <= 0.6


def test_refit_does_not_lose_to_the_warm_start():
    x = np.column_stack([np.ones(6), np.linspace(0.125, 0.875, 6)])
    y = trace(x)
    warm = fit_hyper(x, y, length_ref=1.0)
    coarse = fit_hyper(x, y, length_ref=1.0, grid_size=2, max_evals=1,
                       warm_start=warm)
    assert nlml(coarse, x, y) <= nlml(warm, x, y) + 1e-12
