# Copyright 2024-2025 The DD-MCMC Authors. All rights reserved.
import logging
from dataclasses import dataclass
from functools import cached_property, partial
from typing import Callable, Optional, Union

import numpy as np
from scipy import linalg, optimize

from ..errors import (BasisMismatch, PointOutsideDomain, QuadratureGridMismatch,
                      RootBracketFailure, TruncationOverflow)
from .mesh import Grid2D, Rectangle

__all__ = [
    'CovarianceSpec', 'Modes1D', 'KLBasis', 'FieldSample', 'eigenpairs_1d',
    'build_basis', 'evaluate_field', 'extract_local_coeffs', 'draw_prior'
]

# a smaller trapezoidal Gram eigenvalue means the axis modes alias on the grid
LOWDIN_MIN_EIG = 1e-2


@dataclass(frozen=True)
class CovarianceSpec:
    r"""
    Separable exponential covariance
    ``C(x, y) = sigma^2 exp(-|x1 - y1| / L - |x2 - y2| / L)`` around a mean a0.
    """
    sigma: float = 0.25
    corr_len: float = 2.0
    mean: Union[float, Callable] = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not self.corr_len > 0:
            raise ValueError(f"corr_len must be positive, got {self.corr_len}")

    def mean_at(self, points):
        points = np.atleast_2d(points)
        if callable(self.mean):
            return np.asarray(self.mean(points), dtype=float).reshape(-1)
        return np.full(len(points), float(self.mean))

    def kernel(self, x, y):
        x, y = np.atleast_2d(x), np.atleast_2d(y)
        dist = np.abs(x[:, None, :] - y[None, :, :]).sum(axis=-1)
        return self.sigma**2 * np.exp(-dist / self.corr_len)


@dataclass(frozen=True, eq=False)
class Modes1D:
    """
    Leading eigenpairs of ``exp(-|s - t| / L)`` on ``[x0, x0 + length]``.

    Mode r is ``cos(w_r s)`` (even) or ``sin(w_r s)`` (odd) in the centred
    coordinate ``s = x - x0 - length / 2``, scaled to unit L2 norm.
    """
    corr_len: float
    x0: float
    length: float
    omegas: np.ndarray
    odd: np.ndarray
    eigvals: np.ndarray
    norms: np.ndarray

    def __len__(self):
        return len(self.eigvals)

    def __iter__(self):
        for r, lam in enumerate(self.eigvals):
            yield float(lam), partial(self.mode, r)

    def mode(self, r, x):
        return self.evaluate(x)[:, r]

    def evaluate(self, x):
        s = np.asarray(x, dtype=float).reshape(-1, 1) - (self.x0 + self.length / 2)
        ws = s * self.omegas[None, :]
        return np.where(self.odd[None, :], np.sin(ws), np.cos(ws)) / self.norms


def eigenpairs_1d(corr_len, interval, count) -> Modes1D:
    """
    Solve the exponential-kernel eigenproblem analytically.

    With ``A = length / 2``, ``c = 1 / L`` and ``t = w A`` the r-th root lies
    in ``((r - 1) pi / 2, r pi / 2)``; odd r gives an even mode with
    ``t sin t = c A cos t``, even r an odd mode with ``t cos t = -c A sin t``.
    Eigenvalues are ``2 c / (w^2 + c^2)``.
    """
    if np.ndim(interval) == 0:
        x0, x1 = 0.0, float(interval)
    else:
        x0, x1 = (float(v) for v in interval)
    if count < 1 or not x1 > x0:
        raise ValueError(f"need count >= 1 and a non-empty interval, got "
                         f"{count}, [{x0}, {x1}]")
    half = (x1 - x0) / 2
    ca = half / corr_len

    def even(t):
        return t * np.sin(t) - ca * np.cos(t)

    def odd(t):
        return t * np.cos(t) + ca * np.sin(t)

    thetas = np.empty(count)
    for r in range(1, count + 1):
        fn = even if r % 2 else odd
        lo, hi = (r - 1) * np.pi / 2, r * np.pi / 2
        try:
            thetas[r - 1] = optimize.bisect(
                fn, lo, hi, xtol=1e-13, maxiter=200)
        except (ValueError, RuntimeError) as e:
            raise RootBracketFailure(r, str(e)) from e

    omegas = thetas / half
    c = 1.0 / corr_len
    is_odd = np.arange(count) % 2 == 1
    sign = np.where(is_odd, -1.0, 1.0)
    norms = np.sqrt(half + sign * np.sin(2 * thetas) / (2 * omegas))
    return Modes1D(
        corr_len=float(corr_len),
        x0=x0,
        length=x1 - x0,
        omegas=omegas,
        odd=is_odd,
        eigvals=2 * c / (omegas**2 + c**2),
        norms=norms)


def _lowdin(values, weights):
    gram = values.T @ (weights[:, None] * values)
    w, v = linalg.eigh(gram)
    if w.min() < LOWDIN_MIN_EIG:
        raise QuadratureGridMismatch(
            f"working grid cannot resolve {values.shape[1]} modes "
            f"(smallest Gram eigenvalue {w.min():.2e})")
    return (v / np.sqrt(w)) @ v.T


def _orthonormalize(modes, nodes, count, weights, axis):
    try:
        return _lowdin(modes.evaluate(nodes)[:, :count], weights)
    except QuadratureGridMismatch as e:
        logging.warning(f"keeping analytic {axis}-modes, Gram is not the "
                        f"identity on this grid: {e}")
        return np.eye(count)


@dataclass(frozen=True, eq=False)
class KLBasis:
    spec: CovarianceSpec
    domain: Rectangle
    eigvals: np.ndarray
    index: np.ndarray
    modes_x: Modes1D
    modes_y: Modes1D
    tx: np.ndarray
    ty: np.ndarray
    captured_curve: np.ndarray
    grid: Optional[Grid2D] = None

    @property
    def d(self):
        return len(self.eigvals)

    @property
    def captured(self):
        return float(self.captured_curve[-1])

    @cached_property
    def sqrt_eigvals(self):
        return np.sqrt(self.eigvals)

    def mean(self, points):
        return self.spec.mean_at(points)

    def eigenfunctions(self, points):
        """Eigenfunction values, shape (n_points, d)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        outside = ~self.domain.contains(points)
        if outside.any():
            raise PointOutsideDomain(
                f"{tuple(points[np.argmax(outside)])} is outside {self.domain}")
        mx, my = self.tx.shape[0], self.ty.shape[0]
        fx = self.modes_x.evaluate(points[:, 0])[:, :mx] @ self.tx
        fy = self.modes_y.evaluate(points[:, 1])[:, :my] @ self.ty
        return fx[:, self.index[:, 0]] * fy[:, self.index[:, 1]]

    @cached_property
    def nodal(self):
        if self.grid is None:
            raise QuadratureGridMismatch("basis was built without a working grid")
        return self.eigenfunctions(self.grid.coords)

    @cached_property
    def nodal_mean(self):
        return self.mean(self.grid.coords)

    def gram(self, rule='trapezoid'):
        w = self.grid.weights(rule)
        return self.nodal.T @ (w[:, None] * self.nodal)

    def check_compatible(self, other: 'KLBasis'):
        if self.spec != other.spec:
            raise BasisMismatch(
                f"covariance {other.spec} differs from {self.spec}")

    def summary(self):
        return {
            'domain': self.domain.to_dict(),
            'L': self.spec.corr_len,
            'sigma': self.spec.sigma,
            'd': self.d,
            'eigvals': self.eigvals.tolist(),
            'captured': self.captured,
        }


def build_basis(spec: CovarianceSpec,
                domain: Rectangle,
                delta_kl: float,
                grid: Optional[Grid2D] = None,
                max_terms: int = 2048) -> KLBasis:
    r"""
    Truncated 2D KL basis from products of 1D modes.

    Products are sorted by eigenvalue, ties broken by the (x, y) mode index
    pair, and d is the smallest count capturing more than `delta_kl` of the
    total variance ``|D| sigma^2``. The number of 1D modes per axis doubles
    until every omitted product is provably smaller than the d-th eigenvalue.
    When a working grid is given, each axis is orthonormalized in its
    trapezoidal inner product so the discrete Gram matrix is the identity.
    """
    if not 0 < delta_kl < 1:
        raise ValueError(f"delta_kl must lie in (0, 1), got {delta_kl}")
    if grid is not None and (not np.allclose(grid.x_range, domain.x_range) or
                             not np.allclose(grid.y_range, domain.y_range)):
        raise QuadratureGridMismatch(f"grid {grid} does not cover {domain}")

    var = spec.sigma**2
    total = domain.area * var
    m = 8
    while True:
        mx = eigenpairs_1d(spec.corr_len, domain.x_range, m)
        my = eigenpairs_1d(spec.corr_len, domain.y_range, m)
        ii, jj = np.meshgrid(np.arange(m), np.arange(m), indexing='ij')
        ii, jj = ii.ravel(), jj.ravel()
        lam = var * mx.eigvals[ii] * my.eigvals[jj]
        order = np.lexsort((jj, ii, -lam))
        curve = np.cumsum(lam[order]) / total
        hit = np.flatnonzero(curve > delta_kl)
        bound = var * max(mx.eigvals[0] * my.eigvals[-1],
                          mx.eigvals[-1] * my.eigvals[0])
        if hit.size and lam[order[hit[0]]] >= bound:
            d = int(hit[0]) + 1
            break
        if m > 4 * max_terms:
            raise TruncationOverflow(
                f"no truncation found with {m} modes per axis")
        m *= 2
    if d > max_terms:
        raise TruncationOverflow(f"d={d} exceeds the cap of {max_terms} terms")

    keep = order[:d]
    index = np.column_stack([ii[keep], jj[keep]])
    nx_used, ny_used = index[:, 0].max() + 1, index[:, 1].max() + 1
    tx, ty = np.eye(nx_used), np.eye(ny_used)
    if grid is not None:
        tx = _orthonormalize(mx, grid.xs, nx_used, grid.weights_1d(0), 'x')
        ty = _orthonormalize(my, grid.ys, ny_used, grid.weights_1d(1), 'y')
    logging.debug(f"KL basis on {domain}: d={d}, {m} modes per axis, "
                  f"captured {curve[d - 1]:.4f}")
    return KLBasis(
        spec=spec,
        domain=domain,
        eigvals=lam[keep],
        index=index,
        modes_x=mx,
        modes_y=my,
        tx=tx,
        ty=ty,
        captured_curve=curve[:d],
        grid=grid)


@dataclass(frozen=True, eq=False)
class FieldSample:
    basis: KLBasis
    xi: np.ndarray

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=float).reshape(-1)
        if xi.shape != (self.basis.d,):
            raise BasisMismatch(
                f"{xi.size} coefficients for a basis with d={self.basis.d}")
        object.__setattr__(self, 'xi', xi)

    def __call__(self, points):
        return evaluate_field(self, points)

    @cached_property
    def nodal(self):
        b = self.basis
        return b.nodal_mean + b.nodal @ (b.sqrt_eigvals * self.xi)


def evaluate_field(sample: FieldSample, points) -> np.ndarray:
    b = sample.basis
    return b.mean(points) + b.eigenfunctions(points) @ (b.sqrt_eigvals *
                                                        sample.xi)


def extract_local_coeffs(field, local_basis: KLBasis,
                         grid: Optional[Grid2D] = None) -> np.ndarray:
    """
    Project a field onto a local basis with the trapezoidal rule.

    `field` is a callable on (n, 2) points, a `FieldSample`, or nodal values
    on the quadrature grid (the basis' working grid unless `grid` is given).
    """
    grid = grid or local_basis.grid
    if grid is None:
        raise QuadratureGridMismatch("no quadrature grid for the projection")
    if grid != local_basis.grid and (
            not np.allclose(grid.x_range, local_basis.domain.x_range) or
            not np.allclose(grid.y_range, local_basis.domain.y_range)):
        raise QuadratureGridMismatch(f"{grid} does not cover {local_basis.domain}")
    if callable(field):
        values = np.asarray(field(grid.coords), dtype=float)
    else:
        values = np.asarray(field, dtype=float).reshape(-1)
        if values.shape != (grid.n_nodes,):
            raise QuadratureGridMismatch(
                f"{values.size} nodal values for a grid of {grid.n_nodes} nodes")
    if grid == local_basis.grid:
        psi, a0 = local_basis.nodal, local_basis.nodal_mean
    else:
        psi, a0 = local_basis.eigenfunctions(grid.coords), local_basis.mean(
            grid.coords)
    centred = (values - a0) * grid.weights()
    return (centred @ psi) / local_basis.sqrt_eigvals


def draw_prior(basis: KLBasis, rng: np.random.Generator) -> np.ndarray:
    """Coefficients iid uniform on [-1, 1]."""
    return rng.uniform(-1.0, 1.0, size=basis.d)
