# Copyright 2024-2025 The DD-MCMC Authors. All rights reserved.
import logging
import time
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import integrate

from ..errors import (EdgeOffGrid, NonPositivePermeability, SensorOffGrid,
                      SingularSystem, Unsupported)

try:
    from sksparse import cholmod
    HAS_CHOLMOD = True
except ImportError:
    HAS_CHOLMOD = False

__all__ = [
    'Rectangle', 'Segment', 'Grid2D', 'Dirichlet', 'Neumann', 'BoundarySpec',
    'SourceField', 'FemSolution', 'Trace', 'DiffusionSolver',
    'assemble_and_solve', 'spd_solve', 'observe', 'restrict_solution',
    'sensor_indices'
]

EDGE_ORDER = ('bottom', 'top', 'left', 'right')

# 2x2 Gauss rule on the reference square [-1, 1]^2, local node order
# (-1,-1), (1,-1), (1,1), (-1,1)
_GAUSS = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]
                  ]) / np.sqrt(3.0)
_CORNERS = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])


def _shape(ref):
    """Bilinear shape values and reference gradients at `ref` (q, 2)."""
    xi, eta = ref[:, 0:1], ref[:, 1:2]
    cx, cy = _CORNERS[None, :, 0], _CORNERS[None, :, 1]
    phi = 0.25 * (1 + cx * xi) * (1 + cy * eta)
    dxi = 0.25 * cx * (1 + cy * eta)
    deta = 0.25 * cy * (1 + cx * xi)
    return phi, dxi, deta


@dataclass(frozen=True)
class Segment:
    p0: tuple
    p1: tuple

    def __post_init__(self):
        object.__setattr__(self, 'p0', tuple(float(v) for v in self.p0))
        object.__setattr__(self, 'p1', tuple(float(v) for v in self.p1))

    @property
    def length(self):
        return float(np.hypot(self.p1[0] - self.p0[0], self.p1[1] - self.p0[1]))

    @property
    def midpoint(self):
        return ((self.p0[0] + self.p1[0]) / 2, (self.p0[1] + self.p1[1]) / 2)

    @property
    def is_vertical(self):
        return self.p0[0] == self.p1[0]

    @property
    def is_horizontal(self):
        return self.p0[1] == self.p1[1]

    def arclength(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return np.hypot(points[:, 0] - self.p0[0], points[:, 1] - self.p0[1])

    def contains(self, points, tol=1e-12):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        p0, p1 = np.asarray(self.p0), np.asarray(self.p1)
        d = p1 - p0
        t = (points - p0) @ d / max(d @ d, 1e-300)
        closest = p0 + np.clip(t, 0, 1)[:, None] * d
        return np.hypot(*(points - closest).T) <= tol * max(self.length, 1.0)


@dataclass(frozen=True)
class Rectangle:
    x0: float
    x1: float
    y0: float
    y1: float

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ValueError(f"degenerate rectangle {self}")

    @classmethod
    def from_ranges(cls, x_range, y_range):
        return cls(float(x_range[0]), float(x_range[1]), float(y_range[0]),
                   float(y_range[1]))

    @property
    def width(self):
        return self.x1 - self.x0

    @property
    def height(self):
        return self.y1 - self.y0

    @property
    def area(self):
        return self.width * self.height

    @property
    def x_range(self):
        return (self.x0, self.x1)

    @property
    def y_range(self):
        return (self.y0, self.y1)

    @property
    def edges(self):
        return {
            'bottom': Segment((self.x0, self.y0), (self.x1, self.y0)),
            'top': Segment((self.x0, self.y1), (self.x1, self.y1)),
            'left': Segment((self.x0, self.y0), (self.x0, self.y1)),
            'right': Segment((self.x1, self.y0), (self.x1, self.y1)),
        }

    def contains(self, points, tol=1e-12):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        ex, ey = tol * max(self.width, 1.0), tol * max(self.height, 1.0)
        return ((points[:, 0] >= self.x0 - ex) & (points[:, 0] <= self.x1 + ex)
                & (points[:, 1] >= self.y0 - ey) &
                (points[:, 1] <= self.y1 + ey))

    def to_dict(self):
        return {'x_range': list(self.x_range), 'y_range': list(self.y_range)}


@dataclass(frozen=True)
class Grid2D:
    """
    Uniform tensor grid of bilinear elements.

    Nodes are numbered x fastest: node (i, j) has index ``k = j * nx + i``.
    Element (i, j) has index ``e = j * (nx - 1) + i`` and local node order
    (i, j), (i+1, j), (i+1, j+1), (i, j+1).
    """
    x_range: tuple
    y_range: tuple
    nx: int
    ny: int

    def __post_init__(self):
        object.__setattr__(self, 'x_range', tuple(float(v) for v in self.x_range))
        object.__setattr__(self, 'y_range', tuple(float(v) for v in self.y_range))
        if self.nx < 2 or self.ny < 2:
            raise ValueError(f"grid needs nx, ny >= 2, got {self.nx}x{self.ny}")
        if not (self.hx > 0 and self.hy > 0):
            raise ValueError(f"empty grid extent {self.x_range} x {self.y_range}")

    @classmethod
    def on(cls, rect, nx, ny):
        return cls(rect.x_range, rect.y_range, int(nx), int(ny))

    @property
    def rect(self):
        return Rectangle.from_ranges(self.x_range, self.y_range)

    @property
    def hx(self):
        return (self.x_range[1] - self.x_range[0]) / (self.nx - 1)

    @property
    def hy(self):
        return (self.y_range[1] - self.y_range[0]) / (self.ny - 1)

    @property
    def n_nodes(self):
        return self.nx * self.ny

    @property
    def n_elements(self):
        return (self.nx - 1) * (self.ny - 1)

    @cached_property
    def xs(self):
        return np.linspace(*self.x_range, self.nx)

    @cached_property
    def ys(self):
        return np.linspace(*self.y_range, self.ny)

    @cached_property
    def coords(self):
        X, Y = np.meshgrid(self.xs, self.ys)
        return np.column_stack([X.ravel(), Y.ravel()])

    @cached_property
    def elements(self):
        i, j = np.meshgrid(np.arange(self.nx - 1), np.arange(self.ny - 1))
        k = (j * self.nx + i).ravel()
        return np.column_stack([k, k + 1, k + 1 + self.nx, k + self.nx])

    @cached_property
    def gauss_points(self):
        """Physical 2x2 Gauss points, shape (n_elements, 4, 2)."""
        lower = self.coords[self.elements[:, 0]]
        half = np.array([self.hx, self.hy]) / 2
        return lower[:, None, :] + half * (1 + _GAUSS[None, :, :])

    def weights_1d(self, axis, rule='trapezoid'):
        nodes = self.xs if axis == 0 else self.ys
        eye = np.eye(len(nodes))
        if rule == 'trapezoid':
            return integrate.trapezoid(eye, x=nodes, axis=1)
        if rule == 'simpson':
            return integrate.simpson(eye, x=nodes, axis=1)
        raise Unsupported(f"quadrature rule {rule!r}")

    def weights(self, rule='trapezoid'):
        """Nodal weights of the composite tensor rule."""
        return np.outer(self.weights_1d(1, rule), self.weights_1d(0, rule)).ravel()

    @cached_property
    def trapezoid(self):
        return self.weights('trapezoid')

    def _snap(self, values, origin, h, n, rtol):
        pos = (np.asarray(values, dtype=float) - origin) / h
        idx = np.rint(pos).astype(int)
        tol = rtol + 4 * np.finfo(float).eps * np.maximum(np.abs(pos), 1.0)
        ok = (np.abs(pos - idx) <= tol) & (idx >= 0) & (idx < n)
        return idx, ok

    def locate(self, points, rtol=1e-12):
        """Node index per point, or -1 where the point is not a grid node."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        i, okx = self._snap(points[:, 0], self.x_range[0], self.hx, self.nx, rtol)
        j, oky = self._snap(points[:, 1], self.y_range[0], self.hy, self.ny, rtol)
        return np.where(okx & oky, j * self.nx + i, -1)

    def boundary_nodes(self):
        k = np.arange(self.n_nodes).reshape(self.ny, self.nx)
        return {
            'bottom': k[0, :],
            'top': k[-1, :],
            'left': k[:, 0],
            'right': k[:, -1]
        }

    def edge_nodes(self, edge: Segment, rtol=1e-12):
        """Indices of grid nodes on `edge`, ordered by arclength from `edge.p0`."""
        ends = self.locate([edge.p0, edge.p1], rtol)
        if (ends < 0).any() or not (edge.is_vertical or edge.is_horizontal):
            raise EdgeOffGrid(f"{edge} does not lie on grid lines")
        (i0, j0), (i1, j1) = [(k % self.nx, k // self.nx) for k in ends]
        step_i = 1 if i1 >= i0 else -1
        step_j = 1 if j1 >= j0 else -1
        ii = np.arange(i0, i1 + step_i, step_i)
        jj = np.arange(j0, j1 + step_j, step_j)
        if edge.is_vertical:
            return jj * self.nx + i0
        return j0 * self.nx + ii

    def subgrid(self, rect: Rectangle):
        corners = self.locate([(rect.x0, rect.y0), (rect.x1, rect.y1)])
        if (corners < 0).any():
            raise EdgeOffGrid(f"{rect} is not aligned with the grid")
        (i0, j0), (i1, j1) = [(k % self.nx, k // self.nx) for k in corners]
        return Grid2D(rect.x_range, rect.y_range, i1 - i0 + 1, j1 - j0 + 1)

    def node_map(self, sub: 'Grid2D'):
        """Global node index of every node of the aligned sub-grid `sub`."""
        origin = self.locate([(sub.x_range[0], sub.y_range[0])])[0]
        if origin < 0:
            raise EdgeOffGrid("sub-grid origin is off the grid")
        i0, j0 = origin % self.nx, origin // self.nx
        il, jl = np.meshgrid(np.arange(sub.nx), np.arange(sub.ny))
        return ((jl + j0) * self.nx + (il + i0)).ravel()

    def refine(self, factor):
        factor = int(factor)
        return Grid2D(self.x_range, self.y_range, (self.nx - 1) * factor + 1,
                      (self.ny - 1) * factor + 1)

    def to_dict(self):
        return {
            'x_range': list(self.x_range),
            'y_range': list(self.y_range),
            'nx': self.nx,
            'ny': self.ny
        }


ValueLike = Union[float, np.ndarray, Callable[[np.ndarray], np.ndarray]]


@dataclass(frozen=True)
class Dirichlet:
    # scalar, callable on (n, 2) points, or nodal samples ordered by arclength
    value: ValueLike = 0.0

    def evaluate(self, points):
        if callable(self.value):
            return np.asarray(self.value(points), dtype=float).reshape(-1)
        values = np.asarray(self.value, dtype=float)
        if values.ndim == 0:
            return np.full(len(points), float(values))
        if values.shape != (len(points),):
            raise EdgeOffGrid(
                f"{values.size} Dirichlet samples for {len(points)} edge nodes")
        return values


@dataclass(frozen=True)
class Neumann:
    flux: float = 0.0

    def __post_init__(self):
        if callable(self.flux) or self.flux != 0.0:
            raise Unsupported("only homogeneous Neumann conditions are supported")


@dataclass(frozen=True)
class BoundarySpec:
    """
    Boundary conditions as (segment, condition) pieces.

    Pieces are applied in order; on nodes covered by several pieces a
    Dirichlet condition beats a Neumann one and, among Dirichlet pieces, the
    later piece wins.
    """
    pieces: tuple = field(default_factory=tuple)

    @classmethod
    def from_edges(cls, rect: Rectangle, **conditions):
        missing = set(EDGE_ORDER) - set(conditions)
        if missing:
            raise ValueError(f"boundary conditions missing for {sorted(missing)}")
        edges = rect.edges
        return cls(tuple((edges[name], conditions[name]) for name in EDGE_ORDER))

    @classmethod
    def default(cls, rect: Rectangle):
        """Zero pressure left and right, no flow through top and bottom."""
        return cls.from_edges(
            rect,
            bottom=Neumann(),
            top=Neumann(),
            left=Dirichlet(0.0),
            right=Dirichlet(0.0))

    def with_pieces(self, extra):
        return BoundarySpec(self.pieces + tuple(extra))

    def resolve(self, grid: Grid2D):
        """Constrained node indices and their values on `grid`."""
        boundary = np.unique(np.concatenate(list(grid.boundary_nodes().values())))
        covered = np.zeros(grid.n_nodes, dtype=bool)
        values = {}
        for segment, cond in self.pieces:
            nodes = grid.edge_nodes(segment)
            if not np.isin(nodes, boundary).all():
                raise EdgeOffGrid(f"{segment} is not on the grid boundary")
            covered[nodes] = True
            if isinstance(cond, Dirichlet):
                vals = cond.evaluate(grid.coords[nodes])
                values.update(zip(nodes.tolist(), vals.tolist()))
        if not covered[boundary].all():
            raise EdgeOffGrid(
                f"{int((~covered[boundary]).sum())} boundary nodes have no condition")
        if not values:
            raise SingularSystem("no Dirichlet condition, stiffness is singular")
        idx = np.fromiter(values.keys(), dtype=int)
        order = np.argsort(idx)
        return idx[order], np.fromiter(values.values(), dtype=float)[order]


@dataclass(frozen=True)
class SourceField:
    """Gaussian source ``amplitude * exp(-|x - center|^2 / width^2)``."""
    center: tuple = (1.5, 0.5)
    amplitude: float = 3.0
    width: float = 1.0
    func: Optional[Callable] = None

    def __call__(self, points):
        points = np.asarray(points, dtype=float)
        if self.func is not None:
            values = np.asarray(self.func(points), dtype=float)
        else:
            r2 = ((points - np.asarray(self.center))**2).sum(axis=-1)
            values = self.amplitude * np.exp(-r2 / self.width**2)
        if not np.isfinite(values).all():
            raise ValueError("source is not finite at every quadrature point")
        return values


@dataclass
class FemSolution:
    grid: Grid2D
    u: np.ndarray
    n_elements: int = 0
    solve_time: float = 0.0

    def __call__(self, points):
        return observe(self, points)


@dataclass
class Trace:
    points: np.ndarray
    arclength: np.ndarray
    values: np.ndarray

    def __len__(self):
        return len(self.values)


class DiffusionSolver:

    def __init__(self, grid: Grid2D, bc: BoundarySpec, src: SourceField,
                 rtol=1e-10):
        r"""
        Bilinear FEM solver for ``-div(a grad u) = f`` on a fixed grid.

        Everything that does not depend on the permeability (connectivity,
        Dirichlet data, load vector, reduced index maps) is computed here so
        that `solve` only assembles the stiffness values and factorizes.

        Args:
            grid (`Grid2D`):
                Discretization.
            bc (`BoundarySpec`):
                Boundary conditions; at least one Dirichlet piece.
            src (`SourceField`):
                Right-hand side, sampled at the Gauss points.
            rtol (`float`, *optional*, defaults to 1e-10):
                Relative residual above which a warning is logged.
        """
        self.grid = grid
        self.rtol = rtol

        phi, dxi, deta = _shape(_GAUSS)
        self._phi = phi
        jac = grid.hx * grid.hy / 4
        gx, gy = dxi * 2 / grid.hx, deta * 2 / grid.hy
        # per-Gauss-point element stiffness with unit coefficient
        self._kq = jac * (gx[:, :, None] * gx[:, None, :] +
                          gy[:, :, None] * gy[:, None, :])

        elements = grid.elements
        f_gp = src(grid.gauss_points)
        load = np.zeros(grid.n_nodes)
        np.add.at(load, elements, jac * f_gp @ phi)

        self.dirichlet_nodes, self.dirichlet_values = bc.resolve(grid)
        free = np.ones(grid.n_nodes, dtype=bool)
        free[self.dirichlet_nodes] = False
        self.free_nodes = np.flatnonzero(free)
        fmap = np.full(grid.n_nodes, -1)
        fmap[self.free_nodes] = np.arange(len(self.free_nodes))

        rows = np.repeat(elements, 4, axis=1).ravel()
        cols = np.tile(elements, (1, 4)).ravel()
        self._ff = free[rows] & free[cols]
        self._fd = free[rows] & ~free[cols]
        self._rows_ff, self._cols_ff = fmap[rows[self._ff]], fmap[cols[self._ff]]
        self._rows_fd = fmap[rows[self._fd]]
        ud = np.zeros(grid.n_nodes)
        ud[self.dirichlet_nodes] = self.dirichlet_values
        self._ud_fd = ud[cols[self._fd]]
        self._load = load[self.free_nodes]

    def gauss_values(self, perm):
        grid = self.grid
        if callable(perm):
            values = perm(grid.gauss_points.reshape(-1, 2))
            values = np.asarray(values, dtype=float).reshape(grid.n_elements, 4)
        else:
            values = np.asarray(perm, dtype=float)
            if values.ndim == 0:
                values = np.full((grid.n_elements, 4), float(values))
            elif values.shape == (grid.n_nodes,):
                values = values[grid.elements] @ self._phi.T
            elif values.shape != (grid.n_elements, 4):
                raise ValueError(
                    f"permeability of shape {values.shape} fits neither nodes "
                    f"({grid.n_nodes},) nor Gauss points ({grid.n_elements}, 4)")
        bad = ~(values > 0) | ~np.isfinite(values)
        if bad.any():
            e, q = np.argwhere(bad)[0]
            raise NonPositivePermeability(grid.gauss_points[e, q], values[e, q])
        return values

    def stiffness(self, perm):
        """Reduced (free x free) stiffness and its Dirichlet coupling values."""
        a = self.gauss_values(perm)
        vals = np.einsum('eq,qab->eab', a, self._kq).ravel()
        n = len(self.free_nodes)
        K = sp.coo_matrix((vals[self._ff], (self._rows_ff, self._cols_ff)),
                          shape=(n, n)).tocsc()
        return K, vals[self._fd]

    def solve(self, perm):
        t0 = time.perf_counter()
        grid = self.grid
        K, k_fd = self.stiffness(perm)
        rhs = self._load.copy()
        np.add.at(rhs, self._rows_fd, -k_fd * self._ud_fd)
        if len(self.free_nodes):
            uf = spd_solve(K, rhs)
            scale = np.linalg.norm(rhs)
            if scale > 0:
                res = np.linalg.norm(K @ uf - rhs) / scale
                if res > self.rtol:
                    logging.warning(f"FEM residual {res:.2e} above {self.rtol:.0e}")
        else:
            uf = np.zeros(0)
        u = np.empty(grid.n_nodes)
        u[self.free_nodes] = uf
        u[self.dirichlet_nodes] = self.dirichlet_values
        return FemSolution(
            grid=grid,
            u=u,
            n_elements=grid.n_elements,
            solve_time=time.perf_counter() - t0)


def spd_solve(K, rhs):
    """Solve a sparse SPD system: CHOLMOD when installed, else SuperLU in symmetric mode."""
    if HAS_CHOLMOD:
        return cholmod.cholesky(K)(rhs)
    lu = spla.splu(
        sp.csc_matrix(K),
        permc_spec='MMD_AT_PLUS_A',
        diag_pivot_thresh=0.0,
        options={'SymmetricMode': True})
    return lu.solve(rhs)


def assemble_and_solve(grid: Grid2D, perm, bc: BoundarySpec,
                       src: SourceField) -> FemSolution:
    return DiffusionSolver(grid, bc, src).solve(perm)


def sensor_indices(grid: Grid2D, sensors: Sequence) -> np.ndarray:
    sensors = np.asarray(sensors, dtype=float).reshape(-1, 2)
    idx = grid.locate(sensors)
    if (idx < 0).any():
        raise SensorOffGrid(sensors[np.argmax(idx < 0)])
    return idx


def observe(sol: FemSolution, sensors: Sequence) -> np.ndarray:
    return sol.u[sensor_indices(sol.grid, sensors)]


def restrict_solution(sol: FemSolution, grid: Grid2D, edge: Segment) -> Trace:
    nodes = grid.edge_nodes(edge)
    points = grid.coords[nodes]
    return Trace(points=points, arclength=edge.arclength(points),
                 values=sol.u[nodes])
