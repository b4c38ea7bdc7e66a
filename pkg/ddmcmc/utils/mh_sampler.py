# Copyright 2024-2025 The DD-MCMC Authors. All rights reserved.
import math
import time
from dataclasses import dataclass
from typing import Optional, Protocol, Tuple, runtime_checkable

import numpy as np
import pandas as pd
from tqdm import tqdm

from ..errors import InitOutsideSupport, LengthMismatch

__all__ = [
    'ForwardModel', 'Chain', 'make_rng', 'misfit', 'log_likelihood',
    'run_chain', 'burn_in'
]


@runtime_checkable
class ForwardModel(Protocol):
    """Deterministic map from coefficients to an observation vector."""

    d_in: int

    def __call__(self, xi: np.ndarray) -> np.ndarray:
        ...


def make_rng(seed, stream=0):
    """Independent generator for `stream`, derived from the master seed."""
    return np.random.default_rng(
        np.random.SeedSequence(int(seed), spawn_key=(int(stream),)))


@dataclass
class Chain:
    samples: np.ndarray
    accepted: np.ndarray
    misfits: np.ndarray
    accept_count: int
    beta: float
    seed: int
    stream: int = 0
    n_forward: int = 0
    forward_time: float = 0.0
    name: str = 'chain'

    @property
    def n(self):
        return len(self.samples)

    @property
    def d(self):
        return self.samples.shape[1]

    @property
    def accept_rate(self):
        return self.accept_count / (self.n - 1) if self.n > 1 else 0.0

    def to_frame(self):
        df = pd.DataFrame(
            self.samples,
            columns=[f"xi_{r + 1}" for r in range(self.d)])
        df.insert(0, 'misfit', self.misfits)
        df.insert(0, 'accepted', self.accepted.astype(int))
        df.insert(0, 'iter', np.arange(self.n))
        return df

    @classmethod
    def from_frame(cls, df, beta, seed, stream=0, name='chain', **kwargs):
        xi_cols = [c for c in df.columns if c.startswith('xi_')]
        accepted = df['accepted'].to_numpy().astype(bool)
        return cls(
            samples=df[xi_cols].to_numpy(dtype=float),
            accepted=accepted,
            misfits=df['misfit'].to_numpy(dtype=float),
            accept_count=int(accepted[1:].sum()),
            beta=beta,
            seed=seed,
            stream=stream,
            name=name,
            **kwargs)

    def summary(self):
        return {
            'name': self.name,
            'n': self.n,
            'd': self.d,
            'beta': self.beta,
            'seed': self.seed,
            'stream': self.stream,
            'accept_count': self.accept_count,
            'accept_rate': self.accept_rate,
            'n_forward': self.n_forward,
            'forward_time': self.forward_time,
        }


def misfit(model, xi, data, noise_std):
    pred = np.asarray(model(xi), dtype=float)
    if pred.shape != data.shape:
        raise LengthMismatch(
            f"forward model returned {pred.size} values for {data.size} data")
    r = data - pred
    return float(r @ r) / (2 * noise_std**2)


def log_likelihood(model, xi, data, noise_std) -> float:
    """Unnormalized Gaussian log-likelihood ``-|d - F(xi)|^2 / (2 sigma^2)``."""
    if not noise_std > 0:
        raise ValueError(f"noise_std must be positive, got {noise_std}")
    return -misfit(model, xi, np.asarray(data, dtype=float).reshape(-1),
                   noise_std)


def run_chain(model,
              data,
              noise_std,
              beta,
              n,
              seed,
              prior_box: Tuple[float, float] = (-1.0, 1.0),
              init: Optional[np.ndarray] = None,
              stream=0,
              name='chain',
              progress=False) -> Chain:
    r"""
    Random-walk Metropolis-Hastings over a box-uniform prior.

    Proposals are ``xi + beta * z`` with ``z ~ N(0, I)``. The prior indicator
    is checked before the forward model, so out-of-box proposals are rejected
    without a solve. One normal vector and one uniform are drawn every
    iteration whatever happens, which keeps the random stream aligned.

    Args:
        model (`ForwardModel`):
            Deterministic forward map.
        data (`np.ndarray`):
            Observations.
        noise_std (`float`):
            Observation noise standard deviation.
        beta (`float`):
            Proposal standard deviation per coordinate.
        n (`int`):
            Chain length including the initial state.
        seed (`int`):
            Master seed; the chain draws from stream `stream`.
        prior_box (`tuple[float]`, *optional*, defaults to (-1, 1)):
            Support of every coefficient.
        init (`np.ndarray`, *optional*):
            Initial state, the box centre by default.

    Returns:
        Chain
    """
    if not beta > 0 or n < 2:
        raise ValueError(f"need beta > 0 and n >= 2, got beta={beta}, n={n}")
    if not noise_std > 0:
        raise ValueError(f"noise_std must be positive, got {noise_std}")
    lo, hi = prior_box
    data = np.asarray(data, dtype=float).reshape(-1)
    d = model.d_in
    cur = np.full(d, (lo + hi) / 2) if init is None else np.array(
        init, dtype=float).reshape(-1)
    if cur.shape != (d,):
        raise LengthMismatch(f"init has {cur.size} entries, model expects {d}")
    if ((cur < lo) | (cur > hi)).any():
        raise InitOutsideSupport(f"initial state leaves the prior box {prior_box}")

    rng = make_rng(seed, stream)
    samples = np.empty((n, d))
    misfits = np.empty(n)
    accepted = np.zeros(n, dtype=bool)
    t0 = time.perf_counter()
    eta = misfit(model, cur, data, noise_std)
    n_forward = 1
    samples[0], misfits[0] = cur, eta
    for s in tqdm(range(1, n), desc=name, disable=not progress):
        prop = cur + beta * rng.standard_normal(d)
        u = rng.random()
        if ((prop >= lo) & (prop <= hi)).all():
            eta_prop = misfit(model, prop, data, noise_std)
            n_forward += 1
            if u < math.exp(min(0.0, eta - eta_prop)):
                cur, eta = prop, eta_prop
                accepted[s] = True
        samples[s], misfits[s] = cur, eta
    return Chain(
        samples=samples,
        accepted=accepted,
        misfits=misfits,
        accept_count=int(accepted.sum()),
        beta=float(beta),
        seed=int(seed),
        stream=int(stream),
        n_forward=n_forward,
        forward_time=time.perf_counter() - t0,
        name=name)


def burn_in(chain, fraction=0.1) -> np.ndarray:
    """Drop the first ``floor(fraction * N)`` rows."""
    if not 0 <= fraction < 1:
        raise ValueError(f"burn-in fraction must lie in [0, 1), got {fraction}")
    samples = chain.samples if isinstance(chain, Chain) else np.asarray(chain)
    return samples[int(math.floor(fraction * len(samples))):]
