# Copyright 2024-2025 The DD-MCMC Authors. All rights reserved.
import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ddmcmc.errors import (EdgeOffGrid, NonPositivePermeability,
                           SensorOffGrid, SingularSystem, Unsupported)
from ddmcmc.modules.field import Partition
from ddmcmc.modules.mesh import (BoundarySpec, DiffusionSolver, Dirichlet,
                                 Grid2D, Neumann, Rectangle, Segment,
                                 SourceField, assemble_and_solve, observe,
                                 restrict_solution, sensor_indices, spd_solve)

ZERO_SOURCE = SourceField(func=lambda p: np.zeros(p.shape[:-1]))


def test_node_and_element_numbering():
    g = Grid2D((0.0, 3.0), (0.0, 1.0), 4, 3)
    assert g.n_nodes == 12 and g.n_elements == 6
    k = 1 * g.nx + 2
    np.testing.assert_allclose(g.coords[k], [2.0, 0.5])
    np.testing.assert_array_equal(g.elements[0], [0, 1, 5, 4])
    assert g.gauss_points.shape == (6, 4, 2)


@pytest.mark.parametrize('rule', ['trapezoid', 'simpson'])
def test_weights_integrate_area(rule):
    g = Grid2D((0.0, 3.0), (0.0, 1.0), 25, 9)
    assert g.weights(rule).sum() == pytest.approx(3.0, rel=1e-12)


def test_locate_and_sensor_indices():
    g = Grid2D((0.0, 3.0), (0.0, 1.0), 25, 9)
    idx = g.locate([(0.125, 0.125), (0.1, 0.125), (3.5, 0.0)])
    assert idx[0] == 1 * 25 + 1
    assert list(idx[1:]) == [-1, -1]
    with pytest.raises(SensorOffGrid):
        sensor_indices(g, [(0.1, 0.125)])


def test_edge_nodes_follow_segment_direction():
    g = Grid2D((0.0, 3.0), (0.0, 1.0), 25, 9)
    up = g.edge_nodes(Segment((1.0, 0.0), (1.0, 1.0)))
    down = g.edge_nodes(Segment((1.0, 1.0), (1.0, 0.0)))
    np.testing.assert_array_equal(up, down[::-1])
    assert np.all(np.diff(g.coords[up, 1]) > 0)
    with pytest.raises(EdgeOffGrid):
        g.edge_nodes(Segment((1.05, 0.0), (1.05, 1.0)))


def test_linear_solution_is_exact():
    rect = Rectangle(0.0, 1.0, 0.0, 1.0)
    g = Grid2D.on(rect, 9, 9)
    bc = BoundarySpec.from_edges(
        rect,
        bottom=Neumann(),
        top=Neumann(),
        left=Dirichlet(0.0),
        right=Dirichlet(1.0))
    sol = assemble_and_solve(g, 1.0, bc, ZERO_SOURCE)
    np.testing.assert_allclose(sol.u, g.coords[:, 0], atol=1e-10)


def _manufactured_error(n):
    rect = Rectangle(0.0, 3.0, 0.0, 1.0)
    g = Grid2D.on(rect, 3 * n + 1, n + 1)
    pi = np.pi

    def perm(p):
        return 1.0 + p[..., 0] / 3

    def f(p):
        x, y = p[..., 0], p[..., 1]
        u = np.sin(pi * x / 3) * np.sin(pi * y)
        ux = pi / 3 * np.cos(pi * x / 3) * np.sin(pi * y)
        lap = -(pi**2 / 9 + pi**2) * u
        return -(ux / 3 + perm(p) * lap)

    bc = BoundarySpec.from_edges(
        rect,
        bottom=Dirichlet(0.0),
        top=Dirichlet(0.0),
        left=Dirichlet(0.0),
        right=Dirichlet(0.0))
    sol = DiffusionSolver(g, bc, SourceField(func=f)).solve(perm)
    x, y = g.coords.T
    err = sol.u - np.sin(pi * x / 3) * np.sin(pi * y)
    return np.sqrt(err @ (g.weights() * err))


def test_manufactured_solution_converges_at_second_order():
    errors = [_manufactured_error(n) for n in (8, 16, 32)]
    orders = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    assert np.all(orders >= 1.9), orders


def test_non_positive_permeability_is_rejected():
    rect = Rectangle(0.0, 1.0, 0.0, 1.0)
    g = Grid2D.on(rect, 5, 5)
    solver = DiffusionSolver(g, BoundarySpec.default(rect), SourceField())
    with pytest.raises(NonPositivePermeability) as info:
        solver.solve(lambda p: 0.5 - p[:, 0])
    assert info.value.value <= 0


def test_boundary_errors():
    rect = Rectangle(0.0, 1.0, 0.0, 1.0)
    g = Grid2D.on(rect, 5, 5)
    neumann_only = BoundarySpec.from_edges(
        rect, bottom=Neumann(), top=Neumann(), left=Neumann(), right=Neumann())
    with pytest.raises(SingularSystem):
        DiffusionSolver(g, neumann_only, SourceField())
    with pytest.raises(Unsupported):
        Neumann(1.0)
    partial = BoundarySpec(((rect.edges['left'], Dirichlet(0.0)),))
    with pytest.raises(EdgeOffGrid):
        DiffusionSolver(g, partial, SourceField())


def test_later_dirichlet_piece_wins():
    rect = Rectangle(0.0, 1.0, 0.0, 1.0)
    g = Grid2D.on(rect, 5, 5)
    bc = BoundarySpec.default(rect).with_pieces([(rect.edges['left'],
                                                  Dirichlet(2.0))])
    sol = assemble_and_solve(g, 1.0, bc, SourceField())
    np.testing.assert_allclose(sol.u[g.boundary_nodes()['left']], 2.0)


def test_exact_interface_local_solves_match_global():
    domain = Rectangle(0.0, 3.0, 0.0, 1.0)
    grid = Grid2D.on(domain, 49, 17)

    def perm(p):
        return 1.0 + 0.3 * np.sin(2 * p[:, 0]) * np.cos(3 * p[:, 1])

    exterior = BoundarySpec.default(domain)
    src = SourceField()
    sol = assemble_and_solve(grid, perm, exterior, src)
    part = Partition.strips(grid, [1.0, 1.0, 1.0])
    traces = {itf.key: Dirichlet(sol) for itf in part.interfaces}
    for i in range(part.M):
        bc = part.local_bc(i, exterior, traces)
        local = assemble_and_solve(part.grids[i], perm, bc, src)
        ref = part.restrict(sol.u, i)
        assert np.abs(local.u - ref).max() <= 1e-9


def test_observe_and_restrict():
    domain = Rectangle(0.0, 3.0, 0.0, 1.0)
    grid = Grid2D.on(domain, 25, 9)
    sol = assemble_and_solve(grid, 1.0, BoundarySpec.default(domain),
                             SourceField())
    pts = grid.coords[[10, 40, 100]]
    np.testing.assert_array_equal(observe(sol, pts), sol.u[[10, 40, 100]])
    np.testing.assert_array_equal(sol(pts), sol.u[[10, 40, 100]])
    trace = restrict_solution(sol, grid, Segment((1.0, 0.0), (1.0, 1.0)))
    assert len(trace) == 9
    np.testing.assert_allclose(trace.arclength, np.linspace(0, 1, 9))
    # left and right edges carry zero pressure
    np.testing.assert_allclose(sol.u[grid.boundary_nodes()['left']], 0.0)
    assert sol.u.max() > 0


def test_spd_solve_matches_general_sparse_solve():
    n = 200
    K = sp.diags([-np.ones(n - 1), 2.5 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1],
                 format='csc')
    rhs = np.sin(np.linspace(0.0, 3.0, n))
    np.testing.assert_allclose(spd_solve(K, rhs), spla.spsolve(K, rhs), atol=1e-10)
