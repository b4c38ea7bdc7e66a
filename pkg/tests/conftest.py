# Copyright 2024-2025 The DD-MCMC Authors. All rights reserved.
import numpy as np
import pytest

from ddmcmc.configs import load_config, validate_config
from ddmcmc.modules.kl import CovarianceSpec, build_basis
from ddmcmc.modules.mesh import Grid2D, Rectangle


class LinearModel:
    """Toy forward model ``xi -> A xi`` that counts its evaluations."""

    def __init__(self, A):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.calls = 0

    @property
    def d_in(self):
        return self.A.shape[1]

    def __call__(self, xi):
        self.calls += 1
        return self.A @ xi


class FailingModel(LinearModel):

    def __call__(self, xi):
        raise FloatingPointError("diverged")


@pytest.fixture
def small_cfg(tmp_path):
    # 0.125 spacing keeps the 161-sensor lattice and the strip cuts on nodes
    cfg = load_config('tp1')
    cfg.grid.nx, cfg.grid.ny = 25, 9
    cfg.mcmc.n_dd, cfg.mcmc.n_g = 40, 30
    cfg.run.out_dir = str(tmp_path / 'run')
    return validate_config(cfg)


@pytest.fixture(scope='session')
def domain():
    return Rectangle(0.0, 3.0, 0.0, 1.0)


@pytest.fixture(scope='session')
def cov():
    return CovarianceSpec(sigma=0.25, corr_len=2.0, mean=1.0)


@pytest.fixture(scope='session')
def grid_49(domain):
    return Grid2D.on(domain, 49, 17)


@pytest.fixture(scope='session')
def global_basis_49(cov, domain, grid_49):
    return build_basis(cov, domain, 0.95, grid=grid_49)
