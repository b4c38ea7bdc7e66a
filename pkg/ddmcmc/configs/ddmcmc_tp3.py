# Copyright 2024-2025 The DD-MCMC Authors. All rights reserved.
import copy

from easydict import EasyDict

from .shared_config import ddmcmc_shared_cfg

#------------------------ DD-MCMC test problem 3 (L = 0.5) ------------------------#

tp3 = EasyDict(__name__='Config: DD-MCMC TP3 (L=0.5)')
tp3.update(copy.deepcopy(ddmcmc_shared_cfg))

tp3.covariance.corr_len = 0.5

tp3.mcmc.n_dd = 40000
tp3.mcmc.n_g = 4000
tp3.mcmc.beta_dd = 0.05
tp3.mcmc.beta_g = 0.04
