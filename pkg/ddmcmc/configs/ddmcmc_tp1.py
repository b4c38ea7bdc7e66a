# Copyright 2024-2025 The DD-MCMC Authors. All rights reserved.
import copy

from easydict import EasyDict

from .shared_config import ddmcmc_shared_cfg

#------------------------ DD-MCMC test problem 1 (L = 2) ------------------------#

tp1 = EasyDict(__name__='Config: DD-MCMC TP1 (L=2)')
tp1.update(copy.deepcopy(ddmcmc_shared_cfg))

tp1.covariance.corr_len = 2.0

tp1.mcmc.n_dd = 10000
tp1.mcmc.n_g = 1000
tp1.mcmc.beta_dd = 0.05
tp1.mcmc.beta_g = 0.07
