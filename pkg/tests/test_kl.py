# Copyright 2024-2025 The DD-MCMC Authors. All rights reserved.
import numpy as np
import pytest
from scipy import integrate

from ddmcmc.errors import BasisMismatch, PointOutsideDomain
from ddmcmc.modules.kl import (CovarianceSpec, FieldSample, build_basis,
                               draw_prior, eigenpairs_1d, evaluate_field,
                               extract_local_coeffs)
from ddmcmc.modules.mesh import Grid2D, Rectangle
from ddmcmc.utils.mh_sampler import make_rng

GLOBAL = Rectangle(0.0, 3.0, 0.0, 1.0)
UNIT = Rectangle(0.0, 1.0, 0.0, 1.0)


@pytest.mark.parametrize('corr_len, d_global, d_local', [
    (2.0, 27, 11),
    (1.0, 87, 33),
    (0.5, 307, 109),
])
def test_truncation_counts(corr_len, d_global, d_local):
    spec = CovarianceSpec(sigma=0.25, corr_len=corr_len)
    assert build_basis(spec, GLOBAL, 0.95).d == d_global
    assert build_basis(spec, UNIT, 0.95).d == d_local


def test_captured_variance_crosses_threshold():
    basis = build_basis(CovarianceSpec(corr_len=2.0), GLOBAL, 0.95)
    assert basis.captured > 0.95
    assert basis.captured_curve[-2] <= 0.95
    assert np.all(np.diff(basis.eigvals) <= 0)


@pytest.mark.parametrize('corr_len, interval', [(1.0, (0.0, 1.0)),
                                                (2.0, (0.0, 3.0))])
def test_eigenvalues_match_nystrom(corr_len, interval):
    x = np.linspace(*interval, 2001)
    w = np.full(x.size, x[1] - x[0])
    w[[0, -1]] /= 2
    K = np.exp(-np.abs(x[:, None] - x[None, :]) / corr_len)
    sw = np.sqrt(w)
    ref = np.linalg.eigvalsh(sw[:, None] * K * sw[None, :])[::-1][:10]
    modes = eigenpairs_1d(corr_len, interval, 10)
    np.testing.assert_allclose(modes.eigvals, ref, rtol=1e-4)


def test_eigenvalues_sum_to_interval_length():
    modes = eigenpairs_1d(1.0, (0.0, 1.0), 1000)
    assert modes.eigvals.sum() == pytest.approx(1.0, rel=1e-3)


def test_modes_are_unit_norm():
    modes = eigenpairs_1d(2.0, (1.0, 2.0), 6)
    x = np.linspace(1.0, 2.0, 20001)
    vals = modes.evaluate(x)
    norms = integrate.trapezoid(vals**2, x, axis=0)
    np.testing.assert_allclose(norms, 1.0, rtol=1e-6)
    lam, mode = next(iter(modes))
    assert lam == modes.eigvals[0]
    np.testing.assert_allclose(mode(x[:3]), vals[:3, 0])


@pytest.mark.parametrize('corr_len', [2.0, 1.0])
@pytest.mark.parametrize('rect, nx, ny', [(GLOBAL, 97, 33), (UNIT, 33, 33),
                                          (Rectangle(1.0, 2.0, 0.0, 1.0), 17, 17)])
def test_gram_is_identity_on_working_grid(rect, nx, ny, corr_len):
    grid = Grid2D.on(rect, nx, ny)
    basis = build_basis(CovarianceSpec(corr_len=corr_len), rect, 0.95, grid=grid)
    assert np.abs(basis.gram() - np.eye(basis.d)).max() < 1e-6


def test_coarse_grid_keeps_analytic_modes(caplog):
    grid = Grid2D.on(UNIT, 5, 5)
    basis = build_basis(CovarianceSpec(corr_len=0.5), UNIT, 0.95, grid=grid)
    assert basis.d == 109
    assert 'keeping analytic' in caplog.text


def test_eigenfunctions_reject_outside_points():
    basis = build_basis(CovarianceSpec(), UNIT, 0.95)
    with pytest.raises(PointOutsideDomain):
        basis.eigenfunctions([(1.5, 0.5)])


def test_field_sample_and_projection():
    grid = Grid2D.on(UNIT, 17, 17)
    basis = build_basis(CovarianceSpec(), UNIT, 0.95, grid=grid)
    xi = draw_prior(basis, make_rng(3, 0))
    sample = FieldSample(basis, xi)
    np.testing.assert_allclose(sample(grid.coords), sample.nodal, atol=1e-12)
    np.testing.assert_allclose(evaluate_field(sample, grid.coords[:4]),
                               sample.nodal[:4], atol=1e-12)
    np.testing.assert_allclose(extract_local_coeffs(sample.nodal, basis), xi, atol=1e-8)
    np.testing.assert_allclose(extract_local_coeffs(sample, basis), xi, atol=1e-8)
    with pytest.raises(BasisMismatch):
        FieldSample(basis, np.zeros(basis.d + 1))


def test_prior_draws_are_seeded_and_bounded():
    basis = build_basis(CovarianceSpec(), GLOBAL, 0.95)
    a = draw_prior(basis, make_rng(7, 0))
    b = draw_prior(basis, make_rng(7, 0))
    np.testing.assert_array_equal(a, b)
    assert a.shape == (basis.d,)
    assert np.all(np.abs(a) <= 1)


def test_invalid_truncation_threshold():
    with pytest.raises(ValueError):
        build_basis(CovarianceSpec(), UNIT, 1.0)
    with pytest.raises(ValueError):
        CovarianceSpec(sigma=0.0)


def test_single_mode_field_has_norm_sqrt_lambda():
    grid = Grid2D.on(GLOBAL, 97, 33)
    basis = build_basis(CovarianceSpec(), GLOBAL, 0.95, grid=grid)
    xi = np.zeros(basis.d)
    xi[0] = 1.0
    dev = FieldSample(basis, xi).nodal - basis.nodal_mean
    norm = np.sqrt(grid.weights() @ dev**2)
    assert norm == pytest.approx(np.sqrt(basis.eigvals[0]), rel=1e-6)


@pytest.mark.parametrize('corr_len', [2.0, 0.5])
def test_truncated_variance_stays_below_sigma_squared(corr_len):
    spec = CovarianceSpec(sigma=0.25, corr_len=corr_len)
    basis = build_basis(spec, GLOBAL, 0.95)
    rng = np.random.default_rng(0)
    pts = np.column_stack([rng.uniform(0, 3, 200), rng.uniform(0, 1, 200)])
    var = (basis.eigenfunctions(pts)**2) @ basis.eigvals
    assert np.all(var <= spec.sigma**2 * (1 + 1e-9))
    assert var.mean() > 0.5 * spec.sigma**2


@pytest.mark.parametrize('corr_len', [2.0, 1.0])
def test_2d_eigenvalues_are_scaled_1d_products(corr_len):
    spec = CovarianceSpec(sigma=0.25, corr_len=corr_len)
    basis = build_basis(spec, GLOBAL, 0.95)
    lx = eigenpairs_1d(corr_len, (0.0, 3.0), 64).eigvals
    ly = eigenpairs_1d(corr_len, (0.0, 1.0), 64).eigvals
    ref = np.sort(spec.sigma**2 * np.outer(lx, ly).ravel())[::-1][:basis.d]
    np.testing.assert_allclose(basis.eigvals, ref, rtol=1e-10)


def test_halving_the_correlation_length_spreads_the_variance():
    spec = CovarianceSpec(sigma=0.25, corr_len=1.0)
    short = CovarianceSpec(sigma=0.25, corr_len=0.5)
    total = GLOBAL.area * spec.sigma**2
    long_basis, short_basis = (build_basis(s, GLOBAL, 0.95) for s in (spec, short))
    assert short_basis.eigvals[0] / total < long_basis.eigvals[0] / total
    assert short_basis.d > long_basis.d
    for s in (spec, short):
        assert build_basis(s, UNIT, 0.95).d <= build_basis(s, GLOBAL, 0.95).d
