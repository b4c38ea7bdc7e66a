# Copyright 2024-2025 The DD-MCMC Authors. All rights reserved.
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd
from scipy import linalg, optimize

from ..errors import FactorizationFailure
from .mesh import Segment

__all__ = [
    'GPHyper', 'GPModel', 'ActiveState', 'ActiveFitResult', 'sq_exp_kernel',
    'nlml', 'fit_hyper', 'predict', 'active_fit', 'interface_table'
]

NUGGETS = (0.0, 1e-10, 1e-8, 1e-6)
# the hyperparameter search rejects covariances needing more than this
FIT_MAX_NUGGET = 1e-10
# search box, relative to the target scale and the reference length
SIGMA_F_RANGE = (1e-3, 1e3)
LENGTH_GRID_RANGE = (1e-2, 1e1)
LENGTH_RANGE = (1e-2, 1e2)
LOG_2PI = np.log(2 * np.pi)


@dataclass(frozen=True)
class GPHyper:
    sigma_f: float
    length_scale: float
    noise_std: float = 0.0
    degenerate: bool = False
    # constant prediction for degenerate (constant-valued) data
    offset: float = 0.0

    def __post_init__(self):
        if not (self.sigma_f > 0 and self.length_scale > 0):
            raise ValueError(f"sigma_f and length_scale must be positive: {self}")
        if self.noise_std < 0:
            raise ValueError(f"noise_std must be non-negative: {self}")

    def to_dict(self):
        return {
            'sigma_f': self.sigma_f,
            'length_scale': self.length_scale,
            'noise_std': self.noise_std,
            'degenerate': self.degenerate,
        }


def sq_exp_kernel(x, y, sigma_f, length_scale):
    x = np.asarray(x, dtype=float).reshape(-1, 2)
    y = np.asarray(y, dtype=float).reshape(-1, 2)
    d2 = ((x[:, None, :] - y[None, :, :])**2).sum(axis=-1)
    return sigma_f**2 * np.exp(-d2 / (2 * length_scale**2))


def _factor(hyper: GPHyper, x, max_nugget=NUGGETS[-1]):
    """Cholesky of ``K + noise^2 I`` with nugget escalation up to `max_nugget`."""
    n = len(x)
    K = sq_exp_kernel(x, x, hyper.sigma_f, hyper.length_scale)
    K[np.diag_indices(n)] += hyper.noise_std**2
    for nugget in NUGGETS:
        if nugget > max_nugget:
            break
        try:
            c = linalg.cho_factor(
                K + nugget * hyper.sigma_f**2 * np.eye(n), lower=True)
        except linalg.LinAlgError:
            continue
        if nugget > 0:
            logging.debug(f"GP covariance needed nugget {nugget:g} sigma_f^2")
        return c
    raise FactorizationFailure(
        f"GP covariance not positive definite for {hyper} with {n} points")


def nlml(hyper: GPHyper, x, y, max_nugget=NUGGETS[-1]) -> float:
    """Negative log marginal likelihood of zero-mean GP data."""
    y = np.asarray(y, dtype=float).reshape(-1)
    if len(y) < 1:
        raise ValueError("nlml needs at least one training point")
    c = _factor(hyper, x, max_nugget)
    alpha = linalg.cho_solve(c, y)
    logdet = 2 * np.log(np.diag(c[0])).sum()
    return float(0.5 * logdet + 0.5 * y @ alpha + 0.5 * len(y) * LOG_2PI)


class GPModel:

    def __init__(self, hyper: GPHyper, x, y):
        r"""
        Zero-mean squared-exponential GP conditioned on ``(x, y)``.

        Args:
            hyper (`GPHyper`):
                Kernel hyperparameters and fixed noise level.
            x (`np.ndarray`):
                Training inputs, shape (n, 2).
            y (`np.ndarray`):
                Training targets, shape (n,).
        """
        self.hyper = hyper
        self.x = np.asarray(x, dtype=float).reshape(-1, 2)
        self.y = np.asarray(y, dtype=float).reshape(-1)
        if len(np.unique(self.x, axis=0)) != len(self.x):
            raise ValueError("GP training inputs must be distinct")
        self.chol = _factor(hyper, self.x)
        self.alpha = linalg.cho_solve(self.chol, self.y - hyper.offset)

    @property
    def n(self):
        return len(self.y)

    def predict(self, points):
        h = self.hyper
        ks = sq_exp_kernel(points, self.x, h.sigma_f, h.length_scale)
        mean = h.offset + ks @ self.alpha
        v = linalg.solve_triangular(self.chol[0], ks.T, lower=True)
        var = h.sigma_f**2 - (v**2).sum(axis=0)
        return mean, np.maximum(var, 0.0)

    def __call__(self, points):
        return self.predict(points)[0]


def predict(model: GPModel, x):
    mean, var = model.predict(np.atleast_2d(x))
    if np.ndim(x) == 1:
        return float(mean[0]), float(var[0])
    return mean, var


def fit_hyper(x,
              y,
              length_ref,
              noise_std=0.0,
              grid_size=20,
              max_evals=200,
              warm_start: Optional[GPHyper] = None) -> GPHyper:
    """
    Minimize the marginal likelihood over ``(log sigma_f, log l)``.

    A `grid_size` x `grid_size` log grid over ``sigma_f in [1e-3, 1e3] std(y)``
    and ``l in [1e-2, 1e1] length_ref`` seeds a bounded Nelder-Mead
    refinement. A second refinement starts from `warm_start`, usually the
    previous round's hyperparameters. The candidate with the lowest value
    wins, so the result never loses to the grid or to the warm start.

    Candidates whose covariance needs a nugget above ``1e-10 sigma_f^2`` are
    rejected; their variance floor would hide the data.
    """
    x = np.asarray(x, dtype=float).reshape(-1, 2)
    y = np.asarray(y, dtype=float).reshape(-1)
    if len(y) < 2:
        raise ValueError("fit_hyper needs at least two training points")
    scale = float(np.std(y))
    if np.ptp(y) <= 1e-14 * max(1.0, float(np.abs(y).max())):
        logging.info(f"constant GP data ({y[0]:.6g}), using degenerate model")
        return GPHyper(1e-8, length_ref, noise_std, degenerate=True,
                       offset=float(y[0]))

    def objective(theta):
        try:
            val = nlml(GPHyper(*np.exp(theta), noise_std), x, y,
                       max_nugget=FIT_MAX_NUGGET)
        except (FactorizationFailure, ValueError):
            return np.inf
        return val if np.isfinite(val) else np.inf

    # zero-mean model: sigma_f must reach the size of the targets, not only their spread
    rms = float(np.sqrt(np.mean(y**2)))
    lo = np.log([SIGMA_F_RANGE[0] * scale, LENGTH_RANGE[0] * length_ref])
    hi = np.log([SIGMA_F_RANGE[1] * max(scale, rms), LENGTH_RANGE[1] * length_ref])

    log_sf = np.log(scale) + np.linspace(*np.log(SIGMA_F_RANGE), grid_size)
    log_l = np.log(length_ref) + np.linspace(*np.log(LENGTH_GRID_RANGE), grid_size)
    best, best_val = None, np.inf
    for a in log_sf:
        for b in log_l:
            val = objective((a, b))
            if val < best_val:
                best, best_val = np.array([a, b]), val
    if best is None:
        raise FactorizationFailure("marginal likelihood undefined on the whole grid")

    starts = [best]
    if warm_start is not None and not warm_start.degenerate:
        warm = np.clip(np.log([warm_start.sigma_f, warm_start.length_scale]), lo, hi)
        val = objective(warm)
        if val < best_val:
            best, best_val = warm, val
        starts.append(warm)
    for start in starts:
        res = optimize.minimize(
            lambda t: min(objective(t), 1e300),
            np.clip(start, lo, hi),
            method='Nelder-Mead',
            bounds=list(zip(lo, hi)),
            options={
                'maxfev': max_evals,
                'xatol': 1e-8,
                'fatol': 1e-12
            })
        if np.isfinite(res.fun) and res.fun < best_val:
            best, best_val = res.x, float(res.fun)
    sigma_f, length_scale = np.exp(best)
    return GPHyper(float(sigma_f), float(length_scale), noise_std)


@dataclass
class ActiveState:
    sensors: np.ndarray
    data: np.ndarray
    test_points: np.ndarray
    delta_tol: float
    train: List[int] = field(default_factory=list)
    history: List[dict] = field(default_factory=list)

    @property
    def unused(self):
        mask = np.ones(len(self.sensors), dtype=bool)
        mask[self.train] = False
        return np.flatnonzero(mask)

    def nearest_unused(self, point):
        pool = self.unused
        if not len(pool):
            return None
        dist = np.hypot(*(self.sensors[pool] - point).T)
        return int(pool[np.argmin(dist)])


@dataclass
class ActiveFitResult:
    model: GPModel
    history: List[dict]
    # final training set, every sensor the loop added
    train: List[int]
    sigma_max: float
    exhausted: bool = False
    # round whose model is kept; None means the last one
    model_round: Optional[int] = None

    @property
    def size(self):
        return len(self.train)

    @property
    def model_sigma_max(self):
        if self.model_round is None:
            return self.sigma_max
        return self.history[self.model_round]['sigma_max']

    def to_dict(self):
        return {
            'train': [int(k) for k in self.train],
            'size': self.size,
            'sigma_max': self.sigma_max,
            'exhausted': self.exhausted,
            'model_size': self.model.n,
            'model_sigma_max': self.model_sigma_max,
            'hyper': self.model.hyper.to_dict(),
            'history': self.history,
        }


def active_fit(interface: Segment,
               sensors,
               data,
               test_points,
               delta_tol,
               noise_std=0.0,
               grid_size=20,
               max_evals=200) -> ActiveFitResult:
    """
    Grow a GP training set until the largest predictive variance on the test
    points drops below `delta_tol`.

    Starts from the sensor nearest the interface midpoint; every round adds
    the unused sensor nearest the test point of largest variance and refits
    the hyperparameters, warm-started from the previous round. Ties go to
    the lowest index.

    If the sensor pool runs out first, the result is flagged `exhausted`:
    `train` and `sigma_max` describe the full walk, while `model` is the
    round with the smallest maximum variance (`model_round`).
    """
    sensors = np.asarray(sensors, dtype=float).reshape(-1, 2)
    data = np.asarray(data, dtype=float).reshape(-1)
    test_points = np.asarray(test_points, dtype=float).reshape(-1, 2)
    if not len(sensors) or not len(test_points):
        raise ValueError("active_fit needs sensors and test points")
    state = ActiveState(sensors, data, test_points, delta_tol)
    state.train.append(state.nearest_unused(np.asarray(interface.midpoint)))

    best, hyper = None, None
    while True:
        x, y = sensors[state.train], data[state.train]
        if len(y) == 1:
            hyper = GPHyper(
                max(abs(float(y[0])), 1e-8), interface.length, noise_std)
        else:
            hyper = fit_hyper(x, y, interface.length, noise_std, grid_size,
                              max_evals, warm_start=hyper)
        model = GPModel(hyper, x, y)
        var = model.predict(test_points)[1]
        k = int(np.argmax(var))
        sigma_max = float(var[k])
        state.history.append({
            'sensor': int(state.train[-1]),
            'point': sensors[state.train[-1]].tolist(),
            'n_train': len(state.train),
            'sigma_max': sigma_max,
            'length_scale': hyper.length_scale,
        })
        if best is None or sigma_max < best[1]:
            best = (model, sigma_max, len(state.history) - 1)
        if sigma_max < delta_tol:
            return ActiveFitResult(model, state.history, list(state.train),
                                   sigma_max)
        nxt = state.nearest_unused(test_points[k])
        if nxt is None:
            logging.warning(
                f"sensor pool exhausted on {interface} after {len(state.train)} "
                f"sensors with sigma_max {sigma_max:.3e} >= {delta_tol:.1e}; "
                f"keeping the {best[0].n}-sensor model (sigma_max {best[1]:.3e})")
            return ActiveFitResult(best[0], state.history, list(state.train),
                                   sigma_max, exhausted=True, model_round=best[2])
        state.train.append(nxt)


def interface_table(model: GPModel, interface: Segment, test_points):
    """Fitted interface as ``s, mu, var``; node coordinates trail as ``x, y``."""
    test_points = np.asarray(test_points, dtype=float).reshape(-1, 2)
    mean, var = model.predict(test_points)
    return pd.DataFrame({
        's': interface.arclength(test_points),
        'mu': mean,
        'var': var,
        'x': test_points[:, 0],
        'y': test_points[:, 1],
    })
