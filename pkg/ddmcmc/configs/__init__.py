# Copyright 2024-2025 The DD-MCMC Authors. All rights reserved.
import copy
import logging
import os.path as osp
import sys

import numpy as np
import tomli_w
from easydict import EasyDict

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..errors import ConfigError
from .ddmcmc_tp1 import tp1
from .ddmcmc_tp2 import tp2
from .ddmcmc_tp3 import tp3
from .shared_config import ddmcmc_shared_cfg

DDMCMC_CONFIGS = {
    'tp1': tp1,
    'tp2': tp2,
    'tp3': tp3,
}

# cost of one global solve in local-solve units, as timed for the 97x33 grid
REFERENCE_COST_RATIO = 16.25

GP_NOISE_MODES = ('none', 'obs')
GP_TARGETS = ('clean', 'noisy')
BOUNDARY_KINDS = ('dirichlet', 'neumann')

__all__ = [
    'DDMCMC_CONFIGS', 'REFERENCE_COST_RATIO', 'load_config', 'dump_config',
    'save_config', 'validate_config', 'sensor_lattice', 'plain_config'
]


def plain_config(cfg):
    """Nested plain dicts without dunder keys, ready for TOML."""
    if isinstance(cfg, dict):
        return {
            k: plain_config(v)
            for k, v in cfg.items()
            if not str(k).startswith('__') and v is not None
        }
    if isinstance(cfg, (list, tuple)):
        return [plain_config(v) for v in cfg]
    return cfg


def _merge(base, override, where=''):
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key '{where}{key}'")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"'{where}{key}' must be a table")
            _merge(base[key], value, f"{where}{key}.")
        else:
            base[key] = value
    return base


def load_config(source):
    """
    Load a config from a preset name (``tp1``), a TOML path, or a preset file
    name (``tp1.toml``) that does not exist on disk.

    Keys missing from a TOML file keep their shared defaults.
    """
    if isinstance(source, dict):
        return EasyDict(copy.deepcopy(source))
    if source in DDMCMC_CONFIGS:
        return copy.deepcopy(DDMCMC_CONFIGS[source])
    if not osp.exists(source):
        stem = osp.splitext(osp.basename(source))[0]
        if stem in DDMCMC_CONFIGS:
            return copy.deepcopy(DDMCMC_CONFIGS[stem])
        raise ConfigError(f"config {source!r} is neither a file nor a preset")
    try:
        with open(source, 'rb') as f:
            raw = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"cannot parse {source}: {e}") from e
    cfg = _merge(plain_config(copy.deepcopy(ddmcmc_shared_cfg)), raw)
    cfg = EasyDict(cfg)
    cfg.__name__ = f"Config: {source}"
    return cfg


def dump_config(cfg):
    return tomli_w.dumps(plain_config(cfg))


def save_config(cfg, path):
    with open(path, 'wb') as f:
        tomli_w.dump(plain_config(cfg), f)
    return path


def sensor_lattice(cfg):
    s = cfg.sensors
    x0, y0 = cfg.domain.x_range[0], cfg.domain.y_range[0]
    xs = x0 + s.x_step * np.arange(1, s.x_count + 1)
    ys = y0 + s.y_step * np.arange(1, s.y_count + 1)
    X, Y = np.meshgrid(xs, ys)
    # x fastest, matching the grid node order
    return np.column_stack([X.ravel(), Y.ravel()])


def _check(cond, msg):
    if not cond:
        raise ConfigError(msg)


def validate_config(cfg):
    """Raise `ConfigError` on the first invalid setting; returns `cfg`."""
    from ..modules.mesh import Grid2D

    try:
        (x0, x1), (y0, y1) = cfg.domain.x_range, cfg.domain.y_range
        nx, ny = int(cfg.grid.nx), int(cfg.grid.ny)
    except (AttributeError, KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"malformed domain or grid section: {e}") from e
    _check(x1 > x0 and y1 > y0, "domain ranges must be increasing")
    _check(nx >= 2 and ny >= 2, f"grid needs nx, ny >= 2, got {nx}x{ny}")
    grid = Grid2D((x0, x1), (y0, y1), nx, ny)

    widths = list(cfg.partition.widths)
    _check(widths and all(w > 0 for w in widths),
           "partition widths must be positive")
    _check(np.isclose(sum(widths), x1 - x0),
           f"partition widths sum to {sum(widths)}, domain width is {x1 - x0}")
    cuts = x0 + np.cumsum(widths)[:-1]
    _check((grid.locate(np.column_stack([cuts, np.full_like(cuts, y0)])) >= 0).all(),
           "partition cuts must fall on grid lines")

    cov = cfg.covariance
    _check(cov.sigma > 0 and cov.corr_len > 0, "sigma and corr_len must be positive")
    _check(0 < cfg.kl.delta_kl < 1, "kl.delta_kl must lie in (0, 1)")
    _check(cfg.kl.max_terms >= 1, "kl.max_terms must be positive")

    s = cfg.sensors
    _check(s.x_step > 0 and s.y_step > 0 and s.x_count >= 1 and s.y_count >= 1,
           "sensor lattice needs positive steps and counts")
    sensors = sensor_lattice(cfg)
    _check((grid.locate(sensors) >= 0).all(), "sensors must land on grid nodes")
    _check(cfg.noise.percent >= 0, "noise.percent must be non-negative")

    kinds = [cfg.boundary[k] for k in ('bottom', 'top', 'left', 'right')]
    _check(all(k in BOUNDARY_KINDS for k in kinds),
           f"boundary kinds must be one of {BOUNDARY_KINDS}")
    _check('dirichlet' in kinds, "at least one boundary edge must be Dirichlet")

    m = cfg.mcmc
    _check(m.n_dd >= 2 and m.n_g >= 2, "chain lengths must be at least 2")
    _check(m.beta_dd > 0 and m.beta_g > 0, "proposal steps must be positive")
    _check(len(m.beta_dd_local) in (0, len(widths)),
           f"mcmc.beta_dd_local needs 0 or {len(widths)} entries")
    _check(all(b > 0 for b in m.beta_dd_local), "local proposal steps must be positive")
    _check(0 <= m.burn_in < 1, "mcmc.burn_in must lie in [0, 1)")

    gp = cfg.gp
    _check(gp.delta_tol > 0, "gp.delta_tol must be positive")
    _check(gp.noise in GP_NOISE_MODES, f"gp.noise must be one of {GP_NOISE_MODES}")
    _check(gp.targets in GP_TARGETS, f"gp.targets must be one of {GP_TARGETS}")
    _check(gp.grid_size >= 2 and gp.max_evals >= 1, "gp grid/evals too small")

    r = cfg.run
    _check(0 <= int(r.seed) < 2**64, "run.seed must be an unsigned 64-bit integer")
    _check(r.workers >= 1, "run.workers must be at least 1")
    _check(int(r.data_grid_refine) == r.data_grid_refine and r.data_grid_refine >= 1,
           "run.data_grid_refine must be a positive integer")

    dd_cost = m.n_dd * len(widths)
    g_cost = m.n_g * REFERENCE_COST_RATIO
    logging.info(
        f"matched-cost check: DD-MCMC {dd_cost:.4g} local-solve units, "
        f"G-MCMC {g_cost:.4g} at ratio {REFERENCE_COST_RATIO} "
        f"(ratio {g_cost / dd_cost:.2f})")
    return cfg
