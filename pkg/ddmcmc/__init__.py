# Copyright 2024-2025 The DD-MCMC Authors. All rights reserved.
from . import configs, distributed, modules
from .dd_mcmc import DDMCMC
from .experiment import Experiment

__version__ = '0.1.0'
