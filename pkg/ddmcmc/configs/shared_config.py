# Copyright 2024-2025 The DD-MCMC Authors. All rights reserved.
from easydict import EasyDict

#------------------------ DD-MCMC shared config ------------------------#
ddmcmc_shared_cfg = EasyDict()

# physical domain and global FEM grid
ddmcmc_shared_cfg.domain = EasyDict(x_range=[0.0, 3.0], y_range=[0.0, 1.0])
ddmcmc_shared_cfg.grid = EasyDict(nx=97, ny=33)
ddmcmc_shared_cfg.boundary = EasyDict(
    left='dirichlet', right='dirichlet', bottom='neumann', top='neumann')
ddmcmc_shared_cfg.source = EasyDict(center=[1.5, 0.5], amplitude=3.0)

# three unit-square strips
ddmcmc_shared_cfg.partition = EasyDict(widths=[1.0, 1.0, 1.0])

# permeability prior
ddmcmc_shared_cfg.covariance = EasyDict(mean=1.0, sigma=0.25, corr_len=2.0)
ddmcmc_shared_cfg.kl = EasyDict(delta_kl=0.95, max_terms=2048)

# 23 x 7 sensor lattice, 1% noise
ddmcmc_shared_cfg.sensors = EasyDict(
    x_step=0.125, x_count=23, y_step=0.125, y_count=7)
ddmcmc_shared_cfg.noise = EasyDict(percent=1.0)

# sampling
ddmcmc_shared_cfg.mcmc = EasyDict(
    n_dd=10000,
    n_g=1000,
    beta_dd=0.05,
    beta_g=0.07,
    beta_dd_local=[],
    burn_in=0.1)

# interface GPs; noise is 'none' or 'obs', targets 'clean' or 'noisy'
ddmcmc_shared_cfg.gp = EasyDict(
    delta_tol=1e-7, grid_size=20, max_evals=200, noise='none', targets='clean')

ddmcmc_shared_cfg.run = EasyDict(
    seed=42,
    out_dir='runs',
    workers=1,
    data_grid_refine=1,
    truth_file='',
    progress=False)
