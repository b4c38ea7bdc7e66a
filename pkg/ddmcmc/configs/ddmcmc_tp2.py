# Copyright 2024-2025 The DD-MCMC Authors. All rights reserved.
import copy

from easydict import EasyDict

from .shared_config import ddmcmc_shared_cfg

#------------------------ DD-MCMC test problem 2 (L = 1) ------------------------#

tp2 = EasyDict(__name__='Config: DD-MCMC TP2 (L=1)')
tp2.update(copy.deepcopy(ddmcmc_shared_cfg))

tp2.covariance.corr_len = 1.0

tp2.mcmc.n_dd = 20000
tp2.mcmc.n_g = 2000
tp2.mcmc.beta_dd = 0.05
tp2.mcmc.beta_g = 0.05
