# Copyright 2024-2025 The DD-MCMC Authors. All rights reserved.
import logging
from dataclasses import dataclass, field
from itertools import combinations
from typing import List, Mapping, Optional, Sequence

import numpy as np

from ..errors import BasisMismatch, EdgeOffGrid, EmptySampleSet, Unsupported
from .kl import KLBasis
from .mesh import BoundarySpec, Dirichlet, Grid2D, Rectangle, Segment

__all__ = [
    'Interface', 'Partition', 'LocalSampleSet', 'AssembledSample',
    'StitchedField', 'CouplingMatrix', 'PositivityGuard', 'coupling_matrix',
    'stitch', 'stitched_moments', 'interface_jumps', 'assemble', 'assemble_batch',
    'posterior_moments', 'posterior_moments_kl'
]


@dataclass(frozen=True)
class Interface:
    i: int
    j: int
    segment: Segment

    @property
    def key(self):
        return (self.i, self.j)

    @property
    def name(self):
        return f"{self.i + 1}_{self.j + 1}"


def _shared_segment(a: Rectangle, b: Rectangle):
    for xa, xb in ((a.x1, b.x0), (a.x0, b.x1)):
        if np.isclose(xa, xb):
            lo, hi = max(a.y0, b.y0), min(a.y1, b.y1)
            if hi - lo > 1e-12:
                return Segment((xa, lo), (xa, hi))
    for ya, yb in ((a.y1, b.y0), (a.y0, b.y1)):
        if np.isclose(ya, yb):
            lo, hi = max(a.x0, b.x0), min(a.x1, b.x1)
            if hi - lo > 1e-12:
                return Segment((lo, ya), (hi, ya))
    return None


def _clip(segment: Segment, edge: Segment):
    """Overlap of two collinear axis-aligned segments, or None."""
    if segment.is_vertical and edge.is_vertical and np.isclose(
            segment.p0[0], edge.p0[0]):
        axis = 1
    elif segment.is_horizontal and edge.is_horizontal and np.isclose(
            segment.p0[1], edge.p0[1]):
        axis = 0
    else:
        return None
    lo = max(min(segment.p0[axis], segment.p1[axis]),
             min(edge.p0[axis], edge.p1[axis]))
    hi = min(max(segment.p0[axis], segment.p1[axis]),
             max(edge.p0[axis], edge.p1[axis]))
    if hi - lo <= 1e-12:
        return None
    p0, p1 = list(edge.p0), list(edge.p0)
    p0[axis], p1[axis] = lo, hi
    return Segment(tuple(p0), tuple(p1))


class Partition:

    def __init__(self, grid: Grid2D, rects: Sequence[Rectangle]):
        r"""
        Non-overlapping covering of the grid's rectangle by grid-aligned
        subdomains.

        Args:
            grid (`Grid2D`):
                Global discretization; every subdomain is a sub-grid of it.
            rects (`list[Rectangle]`):
                Subdomains, indexed in the given order.
        """
        self.grid = grid
        self.domain = grid.rect
        self.rects = list(rects)
        if not self.rects:
            raise ValueError("a partition needs at least one subdomain")
        for r in self.rects:
            if not self.domain.contains([(r.x0, r.y0), (r.x1, r.y1)]).all():
                raise ValueError(f"{r} leaves the domain {self.domain}")
        for a, b in combinations(self.rects, 2):
            w = min(a.x1, b.x1) - max(a.x0, b.x0)
            h = min(a.y1, b.y1) - max(a.y0, b.y0)
            if w > 1e-12 and h > 1e-12:
                raise ValueError(f"subdomains {a} and {b} overlap")
        if not np.isclose(sum(r.area for r in self.rects), self.domain.area):
            raise ValueError("subdomains do not cover the domain")

        self.grids = [grid.subgrid(r) for r in self.rects]
        self.node_maps = [grid.node_map(g) for g in self.grids]
        self._local_index = []
        for nodes in self.node_maps:
            inv = np.full(grid.n_nodes, -1)
            inv[nodes] = np.arange(len(nodes))
            self._local_index.append(inv)

        self.interfaces = []
        for i, j in combinations(range(self.M), 2):
            seg = _shared_segment(self.rects[i], self.rects[j])
            if seg is not None:
                grid.edge_nodes(seg)
                self.interfaces.append(Interface(i, j, seg))
        self._couplings = []

    @classmethod
    def strips(cls, grid: Grid2D, widths: Sequence[float]):
        """Vertical strips of the given widths, left to right."""
        edges = grid.x_range[0] + np.concatenate([[0.0], np.cumsum(widths)])
        if not np.isclose(edges[-1], grid.x_range[1]):
            raise ValueError(f"strip widths {list(widths)} do not sum to the "
                             f"domain width {grid.rect.width}")
        edges[-1] = grid.x_range[1]
        return cls(grid, [
            Rectangle(float(edges[k]), float(edges[k + 1]), *grid.y_range)
            for k in range(len(widths))
        ])

    @classmethod
    def from_rectangles(cls, grid: Grid2D, rects):
        return cls(grid, [
            r if isinstance(r, Rectangle) else Rectangle.from_ranges(*r)
            for r in rects
        ])

    @property
    def M(self):
        return len(self.rects)

    def interface(self, i, j):
        for itf in self.interfaces:
            if itf.key == (min(i, j), max(i, j)):
                return itf
        raise KeyError((i, j))

    def neighbours(self, i):
        return [itf for itf in self.interfaces if i in itf.key]

    def owners(self, points):
        """Closure membership, shape (n_points, M)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return np.column_stack([r.contains(points) for r in self.rects])

    def local_nodes(self, i, global_nodes):
        idx = self._local_index[i][np.asarray(global_nodes)]
        if (idx < 0).any():
            raise EdgeOffGrid(f"nodes outside subdomain {i}")
        return idx

    def restrict(self, nodal, i):
        return np.asarray(nodal)[..., self.node_maps[i]]

    def pieces(self, nodal):
        return [self.restrict(nodal, i) for i in range(self.M)]

    def collect(self, pieces):
        """Global nodal field from local pieces; lowest index wins on overlaps."""
        out = np.empty(self.grid.n_nodes)
        for i in reversed(range(self.M)):
            out[self.node_maps[i]] = pieces[i]
        return out

    def inner(self, u, v, rule='trapezoid'):
        """Sum of per-subdomain quadrature inner products."""
        u = u if isinstance(u, (list, tuple)) else self.pieces(u)
        v = v if isinstance(v, (list, tuple)) else self.pieces(v)
        return float(
            sum(ui @ (g.weights(rule) * vi)
                for ui, vi, g in zip(u, v, self.grids)))

    def norm(self, u, rule='trapezoid'):
        return float(np.sqrt(self.inner(u, u, rule)))

    def local_bc(self, i, exterior: BoundarySpec,
                 interface_data: Mapping[tuple, Dirichlet]) -> BoundarySpec:
        """
        Boundary conditions of subdomain i: exterior pieces clipped to its edges,
        then Dirichlet data on each of its interfaces.
        """
        pieces = []
        for edge in self.rects[i].edges.values():
            for seg, cond in exterior.pieces:
                part = _clip(seg, edge)
                if part is None:
                    continue
                if isinstance(cond, Dirichlet) and np.ndim(
                        cond.value) > 0 and not callable(cond.value):
                    raise Unsupported(
                        "nodal Dirichlet samples cannot be split across subdomains")
                pieces.append((part, cond))
        for itf in self.neighbours(i):
            if itf.key not in interface_data:
                continue
            pieces.append((itf.segment, interface_data[itf.key]))
        return BoundarySpec(tuple(pieces))

    def cached_coupling(self, global_basis, local_bases, rule):
        for g, ls, r, c in self._couplings:
            if g is global_basis and r == rule and len(ls) == len(
                    local_bases) and all(a is b for a, b in zip(ls, local_bases)):
                return c
        return None

    def store_coupling(self, coupling):
        self._couplings.append((coupling.global_basis,
                                tuple(coupling.local_bases), coupling.rule,
                                coupling))

    def summary(self):
        return {
            'subdomains': [r.to_dict() for r in self.rects],
            'interfaces': [{
                'pair': [itf.i + 1, itf.j + 1],
                'p0': list(itf.segment.p0),
                'p1': list(itf.segment.p1)
            } for itf in self.interfaces],
        }


@dataclass
class LocalSampleSet:
    bases: List[KLBasis]
    samples: List[np.ndarray]

    def __post_init__(self):
        self.samples = [np.atleast_2d(np.asarray(s, dtype=float)) for s in self.samples]
        if len(self.bases) != len(self.samples):
            raise BasisMismatch(
                f"{len(self.samples)} sample sets for {len(self.bases)} bases")
        counts = {len(s) for s in self.samples}
        if len(counts) > 1:
            raise BasisMismatch(f"subdomains carry different sample counts {counts}")
        for k, (b, s) in enumerate(zip(self.bases, self.samples)):
            if s.shape[1] != b.d:
                raise BasisMismatch(
                    f"subdomain {k}: {s.shape[1]} coefficients for d={b.d}")

    @property
    def n(self):
        return len(self.samples[0]) if self.samples else 0

    def row(self, s):
        return [x[s] for x in self.samples]


@dataclass(frozen=True, eq=False)
class AssembledSample:
    basis: KLBasis
    xi: np.ndarray

    def nodal(self):
        return self.basis.nodal_mean + self.basis.nodal @ (self.basis.sqrt_eigvals *
                                                           self.xi)


@dataclass(eq=False)
class CouplingMatrix:
    """Entries ``<psi~_r^(i), psi_t>`` over D^(i); columns grouped per subdomain."""
    matrix: np.ndarray
    offsets: np.ndarray
    global_basis: KLBasis
    local_bases: list
    rule: str = 'trapezoid'

    def block(self, i):
        return self.matrix[:, self.offsets[i]:self.offsets[i + 1]]

    def weights(self):
        """Linear map from stacked local coefficients to global ones."""
        scale = np.concatenate([b.sqrt_eigvals for b in self.local_bases])
        return self.matrix * scale[None, :] / self.global_basis.sqrt_eigvals[:, None]


def coupling_matrix(partition: Partition,
                    global_basis: KLBasis,
                    local_bases: Sequence[KLBasis],
                    rule='trapezoid') -> CouplingMatrix:
    cached = partition.cached_coupling(global_basis, local_bases, rule)
    if cached is not None:
        return cached
    if len(local_bases) != partition.M:
        raise BasisMismatch(
            f"{len(local_bases)} local bases for {partition.M} subdomains")
    blocks = []
    for i, lb in enumerate(local_bases):
        lb.check_compatible(global_basis)
        if lb.domain != partition.rects[i]:
            raise BasisMismatch(f"local basis {i} lives on {lb.domain}, "
                                f"not {partition.rects[i]}")
        g = partition.grids[i]
        psi_local = lb.nodal if lb.grid == g else lb.eigenfunctions(g.coords)
        if global_basis.grid == partition.grid:
            psi_global = partition.restrict(global_basis.nodal.T, i).T
        else:
            psi_global = global_basis.eigenfunctions(g.coords)
        blocks.append(psi_global.T @ (g.weights(rule)[:, None] * psi_local))
    offsets = np.concatenate([[0], np.cumsum([b.d for b in local_bases])])
    coupling = CouplingMatrix(
        matrix=np.hstack(blocks),
        offsets=offsets,
        global_basis=global_basis,
        local_bases=list(local_bases),
        rule=rule)
    partition.store_coupling(coupling)
    return coupling


@dataclass
class StitchedField:
    pieces: list
    nodal: np.ndarray
    jumps: dict = field(default_factory=dict)

    @property
    def max_jump(self):
        return max(self.jumps.values(), default=0.0)


def _local_fields(local_row, local_bases):
    if len(local_row) != len(local_bases):
        raise BasisMismatch(
            f"{len(local_row)} local rows for {len(local_bases)} bases")
    out = []
    for xi, b in zip(local_row, local_bases):
        xi = np.asarray(xi, dtype=float)
        if xi.shape != (b.d,):
            raise BasisMismatch(f"{xi.size} coefficients for d={b.d}")
        out.append(b.nodal_mean + b.nodal @ (b.sqrt_eigvals * xi))
    return out


def interface_jumps(partition: Partition, pieces):
    jumps = {}
    for itf in partition.interfaces:
        nodes = partition.grid.edge_nodes(itf.segment)
        ui = pieces[itf.i][partition.local_nodes(itf.i, nodes)]
        uj = pieces[itf.j][partition.local_nodes(itf.j, nodes)]
        jumps[itf.key] = float(np.abs(ui - uj).max())
    return jumps


def stitch(local_row, partition: Partition,
           local_bases: Sequence[KLBasis]) -> StitchedField:
    pieces = _local_fields(local_row, local_bases)
    return StitchedField(
        pieces=pieces,
        nodal=partition.collect(pieces),
        jumps=interface_jumps(partition, pieces))


def assemble(local_row, coupling: CouplingMatrix,
             global_basis: Optional[KLBasis] = None) -> AssembledSample:
    global_basis = global_basis or coupling.global_basis
    if global_basis is not coupling.global_basis:
        raise BasisMismatch("coupling was built for a different global basis")
    stacked = np.concatenate([np.asarray(x, dtype=float) for x in local_row])
    if stacked.shape != (coupling.matrix.shape[1],):
        raise BasisMismatch(f"{stacked.size} local coefficients for a coupling "
                            f"with {coupling.matrix.shape[1]} columns")
    return AssembledSample(global_basis, coupling.weights() @ stacked)


def assemble_batch(samples: LocalSampleSet, coupling: CouplingMatrix) -> np.ndarray:
    """Assembled coefficient matrix, one row per paired sample index."""
    stacked = np.hstack(samples.samples)
    return stacked @ coupling.weights().T


def posterior_moments(samples):
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or len(samples) < 2:
        raise EmptySampleSet(f"need at least 2 samples, got {len(samples)}")
    return samples.mean(axis=0), samples.var(axis=0)


def posterior_moments_kl(xi, basis: KLBasis, psi=None):
    """Nodal mean and population variance from coefficient samples."""
    xi = np.asarray(xi, dtype=float)
    if xi.ndim != 2 or len(xi) < 2:
        raise EmptySampleSet(f"need at least 2 samples, got {len(xi)}")
    psi = basis.nodal if psi is None else psi
    scaled = psi * basis.sqrt_eigvals[None, :]
    mean = basis.nodal_mean + scaled @ xi.mean(axis=0)
    cov = np.cov(xi, rowvar=False, bias=True).reshape(basis.d, basis.d)
    var = np.einsum('nd,nd->n', scaled @ cov, scaled)
    return mean, np.maximum(var, 0.0)


def stitched_moments(samples: LocalSampleSet, partition: Partition):
    moments = [posterior_moments_kl(x, b) for x, b in zip(samples.samples, samples.bases)]
    return (partition.collect([m for m, _ in moments]),
            partition.collect([v for _, v in moments]), moments)


class PositivityGuard:
    """Clamp permeability values from below and count the clamped evaluations."""

    def __init__(self, floor=1e-6):
        self.floor = floor
        self.count = 0

    def __call__(self, values):
        low = values < self.floor
        if low.any():
            self.count += 1
            if np.log10(self.count).is_integer():
                logging.warning(
                    f"permeability clamped to {self.floor:g} at {int(low.sum())} "
                    f"points ({self.count} clamped evaluations so far)")
            values = np.maximum(values, self.floor)
        return values
