# Copyright 2024-2025 The DD-MCMC Authors. All rights reserved.
import time
from typing import Optional

import numpy as np

from ..errors import LengthMismatch
from .field import PositivityGuard
from .kl import KLBasis
from .mesh import DiffusionSolver, FemSolution, sensor_indices

__all__ = ['KLForwardModel']


class KLForwardModel:

    def __init__(self,
                 basis: KLBasis,
                 solver: DiffusionSolver,
                 sensors,
                 guard: Optional[PositivityGuard] = None):
        r"""
        Map KL coefficients to pressure observations.

        The permeability is evaluated straight at the solver's Gauss points
        from the expansion, clamped from below, and handed to the solver.

        Args:
            basis (`KLBasis`):
                Expansion of the permeability on the solver's domain.
            solver (`DiffusionSolver`):
                FEM solver with its boundary data fixed.
            sensors (`np.ndarray`):
                Observation points, all grid nodes, shape (n, 2).
            guard (`PositivityGuard`, *optional*):
                Clamp shared with other models; a private one by default.
        """
        self.basis = basis
        self.solver = solver
        self.sensors = np.asarray(sensors, dtype=float).reshape(-1, 2)
        self.guard = guard or PositivityGuard()
        grid = solver.grid
        self._idx = sensor_indices(grid, self.sensors)
        gauss = grid.gauss_points.reshape(-1, 2)
        self._psi = basis.eigenfunctions(gauss) * basis.sqrt_eigvals[None, :]
        self._a0 = basis.mean(gauss)
        self.n_solves = 0
        self.solve_time = 0.0

    @property
    def d_in(self):
        return self.basis.d

    @property
    def n_obs(self):
        return len(self._idx)

    @property
    def mean_solve_time(self):
        return self.solve_time / self.n_solves if self.n_solves else 0.0

    def permeability(self, xi):
        xi = np.asarray(xi, dtype=float)
        if xi.shape != (self.d_in,):
            raise LengthMismatch(f"{xi.size} coefficients for d={self.d_in}")
        values = self.guard(self._a0 + self._psi @ xi)
        return values.reshape(self.solver.grid.n_elements, 4)

    def solve(self, xi) -> FemSolution:
        t0 = time.perf_counter()
        sol = self.solver.solve(self.permeability(xi))
        self.solve_time += time.perf_counter() - t0
        self.n_solves += 1
        return sol

    def __call__(self, xi):
        return self.solve(xi).u[self._idx]
