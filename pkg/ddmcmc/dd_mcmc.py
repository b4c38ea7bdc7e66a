# Copyright 2024-2025 The DD-MCMC Authors. All rights reserved.
import logging
import time
from dataclasses import dataclass, field
from types import SimpleNamespace
from typing import Dict, List, Optional

import numpy as np

from .configs import REFERENCE_COST_RATIO, sensor_lattice, validate_config
from .distributed.pool import ChainTask, run_parallel
from .errors import (ChainFailure, ConfigError, MissingInterfaceModel,
                     SensorOutsideDomain)
from .modules.field import (LocalSampleSet, Partition, PositivityGuard,
                            assemble_batch, coupling_matrix)
from .modules.forward import KLForwardModel
from .modules.gp import ActiveFitResult, GPModel, active_fit
from .modules.kl import CovarianceSpec, KLBasis, build_basis
from .modules.mesh import (BoundarySpec, DiffusionSolver, Dirichlet, Grid2D,
                           Neumann, Rectangle, SourceField)
from .utils.mh_sampler import Chain, burn_in

__all__ = [
    'SensorDataSet', 'LocalProblem', 'DDResult', 'DDMCMC', 'split_data',
    'build_local_models', 'run_dd_mcmc', 'cost_report'
]

CHAIN_STREAM_OFFSET = 10


@dataclass
class SensorDataSet:
    points: np.ndarray
    values: np.ndarray
    clean: Optional[np.ndarray] = None
    index: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if len(self.points) != len(self.values):
            raise ValueError(
                f"{len(self.values)} values for {len(self.points)} sensors")
        if self.index is None:
            self.index = np.arange(len(self.values))

    def __len__(self):
        return len(self.values)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        return SensorDataSet(
            points=self.points[idx],
            values=self.values[idx],
            clean=None if self.clean is None else np.asarray(self.clean)[idx],
            index=self.index[idx])


def split_data(data: SensorDataSet, partition: Partition) -> List[SensorDataSet]:
    """Closure split: a sensor on a shared edge or corner joins every touching subdomain."""
    if not len(data):
        return [data.subset([]) for _ in range(partition.M)]
    outside = ~partition.domain.contains(data.points)
    if outside.any():
        raise SensorOutsideDomain(
            f"sensor {tuple(data.points[np.argmax(outside)])} is outside "
            f"{partition.domain}")
    owners = partition.owners(data.points)
    return [data.subset(np.flatnonzero(owners[:, i])) for i in range(partition.M)]


@dataclass
class LocalProblem:
    index: int
    grid: Grid2D
    basis: KLBasis
    bc: BoundarySpec
    data: SensorDataSet
    model: KLForwardModel
    beta: float = 0.05

    @property
    def name(self):
        return f"dd_{self.index + 1}"


def build_local_models(partition: Partition,
                       cov_spec: CovarianceSpec,
                       delta_kl,
                       interfaces,
                       exterior_bc: BoundarySpec,
                       src: SourceField,
                       data: List[SensorDataSet],
                       bases: Optional[List[KLBasis]] = None,
                       max_terms=2048,
                       guard: Optional[PositivityGuard] = None
                      ) -> List[LocalProblem]:
    """
    One forward model per subdomain, with Dirichlet data on every interface.

    `interfaces` maps an interface key ``(i, j)`` to a fitted `GPModel`, a
    `Dirichlet` condition, or any callable on points (an exact trace, say).
    """
    data_interfaces = {}
    for itf in partition.interfaces:
        value = interfaces.get(itf.key)
        if value is None:
            raise MissingInterfaceModel(
                f"no interface model for subdomains {itf.i + 1} and {itf.j + 1}")
        data_interfaces[itf.key] = value if isinstance(value,
                                                       Dirichlet) else Dirichlet(value)
    problems = []
    for i, rect in enumerate(partition.rects):
        grid = partition.grids[i]
        basis = bases[i] if bases is not None else build_basis(
            cov_spec, rect, delta_kl, grid=grid, max_terms=max_terms)
        bc = partition.local_bc(i, exterior_bc, data_interfaces)
        solver = DiffusionSolver(grid, bc, src)
        model = KLForwardModel(basis, solver, data[i].points, guard=guard)
        problems.append(
            LocalProblem(
                index=i, grid=grid, basis=basis, bc=bc, data=data[i], model=model))
    return problems


@dataclass
class DDResult:
    chains: List[Chain]
    problems: List[LocalProblem]
    interface_fits: Dict[tuple, ActiveFitResult]
    samples: LocalSampleSet
    assembled: np.ndarray
    timings: Dict[str, float] = field(default_factory=dict)

    @property
    def n(self):
        return self.chains[0].n if self.chains else 0


def exterior_boundary(cfg, rect: Rectangle) -> BoundarySpec:
    kinds = {
        name: Dirichlet(0.0) if cfg.boundary[name] == 'dirichlet' else Neumann()
        for name in ('bottom', 'top', 'left', 'right')
    }
    return BoundarySpec.from_edges(rect, **kinds)


class DDMCMC:

    def __init__(self, config, guard: Optional[PositivityGuard] = None):
        r"""
        Domain-decomposed MCMC pipeline on a partitioned rectangle.

        Builds the grid, the boundary data, the global and local KL bases and
        the partition once; `generate` then runs interface fitting, local
        chains and assembly for a given data set.

        Args:
            config (`EasyDict`):
                Validated run config, see `ddmcmc.configs`.
            guard (`PositivityGuard`, *optional*):
                Permeability clamp shared by every forward model.
        """
        validate_config(config)
        self.config = config
        self.guard = guard or PositivityGuard()
        self.rect = Rectangle.from_ranges(config.domain.x_range,
                                          config.domain.y_range)
        self.grid = Grid2D.on(self.rect, config.grid.nx, config.grid.ny)
        self.exterior_bc = exterior_boundary(config, self.rect)
        self.src = SourceField(
            center=tuple(config.source.center),
            amplitude=config.source.amplitude)
        self.cov = CovarianceSpec(
            sigma=config.covariance.sigma,
            corr_len=config.covariance.corr_len,
            mean=config.covariance.mean)
        self.sensors = sensor_lattice(config)
        self.partition = Partition.strips(self.grid, config.partition.widths)

        t0 = time.perf_counter()
        self.global_basis = build_basis(
            self.cov,
            self.rect,
            config.kl.delta_kl,
            grid=self.grid,
            max_terms=config.kl.max_terms)
        self.local_bases = [
            build_basis(
                self.cov,
                rect,
                config.kl.delta_kl,
                grid=g,
                max_terms=config.kl.max_terms)
            for rect, g in zip(self.partition.rects, self.partition.grids)
        ]
        logging.info(
            f"KL bases built in {time.perf_counter() - t0:.2f}s: global d="
            f"{self.global_basis.d}, local d={[b.d for b in self.local_bases]}")

    @property
    def M(self):
        return self.partition.M

    def betas(self):
        local = list(self.config.mcmc.beta_dd_local)
        return local if local else [self.config.mcmc.beta_dd] * self.M

    def gp_noise(self, noise_std):
        return noise_std if self.config.gp.noise == 'obs' else 0.0

    def gp_targets(self, data: SensorDataSet):
        """Interface training values: noise-free sensor values or the noisy data."""
        if self.config.gp.targets == 'noisy':
            return data.values
        if data.clean is None:
            raise ConfigError(
                "gp.targets = 'clean' needs noise-free sensor values; "
                "regenerate the data or set gp.targets = 'noisy'")
        return np.asarray(data.clean, dtype=float)

    def fit_interfaces(self, data: SensorDataSet, noise_std):
        gp = self.config.gp
        targets = self.gp_targets(data)
        fits = {}
        for itf in self.partition.interfaces:
            test = self.grid.coords[self.grid.edge_nodes(itf.segment)]
            fits[itf.key] = active_fit(
                itf.segment,
                data.points,
                targets,
                test,
                gp.delta_tol,
                noise_std=self.gp_noise(noise_std),
                grid_size=gp.grid_size,
                max_evals=gp.max_evals)
            logging.info(
                f"interface {itf.name}: {fits[itf.key].size} training sensors, "
                f"sigma_max {fits[itf.key].sigma_max:.3e}")
        return fits

    def local_problems(self, fits, data: SensorDataSet):
        interfaces = {
            key: fit.model if isinstance(fit, ActiveFitResult) else fit
            for key, fit in fits.items()
        }
        problems = build_local_models(
            self.partition,
            self.cov,
            self.config.kl.delta_kl,
            interfaces,
            self.exterior_bc,
            self.src,
            split_data(data, self.partition),
            bases=self.local_bases,
            guard=self.guard)
        for p, beta in zip(problems, self.betas()):
            p.beta = beta
        return problems

    def run_local_chains(self, problems, noise_std, n, seed, workers=1,
                         progress=False, on_partial=None):
        tasks = {
            p.index: ChainTask(
                model=p.model,
                data=p.data.values,
                noise_std=noise_std,
                beta=p.beta,
                n=n,
                seed=seed,
                stream=CHAIN_STREAM_OFFSET + p.index,
                name=p.name,
                progress=progress) for p in problems
        }
        try:
            results = run_parallel(tasks, workers)
        except ChainFailure as e:
            if on_partial is not None:
                on_partial([chain for chain, _ in e.completed.values()])
            raise
        chains = []
        for p in problems:
            chain, model = results[p.index]
            # worker processes return their own copy with the solve counters
            p.model = model
            chains.append(chain)
        return chains

    def assemble(self, chains, burn=None):
        burn = self.config.mcmc.burn_in if burn is None else burn
        samples = LocalSampleSet(
            bases=self.local_bases, samples=[burn_in(c, burn) for c in chains])
        coupling = coupling_matrix(self.partition, self.global_basis,
                                   self.local_bases)
        return samples, assemble_batch(samples, coupling)

    def generate(self,
                 data: SensorDataSet,
                 noise_std,
                 seed,
                 n=None,
                 workers=1,
                 progress=False,
                 on_partial=None,
                 fits=None) -> DDResult:
        r"""
        Run the domain-decomposed inversion end to end.

        Args:
            data (`SensorDataSet`):
                Global noisy observations.
            noise_std (`float`):
                Observation noise standard deviation.
            seed (`int`):
                Master seed; subdomain i samples from stream 10 + i.
            n (`int`, *optional*):
                Local chain length, `config.mcmc.n_dd` by default.
            workers (`int`, *optional*, defaults to 1):
                Worker processes for the local chains.
            on_partial (`callable`, *optional*):
                Receives the finished chains if another chain fails.
            fits (`dict`, *optional*):
                Interface models to use instead of fitting GPs.

        Returns:
            DDResult
        """
        n = n or self.config.mcmc.n_dd
        timings = {}
        t0 = time.perf_counter()
        if fits is None:
            fits = self.fit_interfaces(data, noise_std)
        timings['interfaces'] = time.perf_counter() - t0

        problems = self.local_problems(fits, data)
        logging.info(f"running {self.M} local chains of length {n} "
                     f"on {workers} worker(s)")
        t0 = time.perf_counter()
        chains = self.run_local_chains(problems, noise_std, n, seed, workers,
                                       progress, on_partial)
        timings['chains'] = time.perf_counter() - t0
        for c in chains:
            logging.info(f"{c.name}: acceptance {c.accept_rate:.2%}")

        t0 = time.perf_counter()
        samples, assembled = self.assemble(chains)
        timings['assembly'] = time.perf_counter() - t0
        return DDResult(
            chains=chains,
            problems=problems,
            interface_fits={
                k: v for k, v in fits.items() if isinstance(v, ActiveFitResult)
            },
            samples=samples,
            assembled=assembled,
            timings=timings)


def run_dd_mcmc(config, data: SensorDataSet, noise_std, seed=None, **kwargs):
    pipeline = DDMCMC(config)
    seed = config.run.seed if seed is None else seed
    return pipeline, pipeline.generate(data, noise_std, seed, **kwargs)


def cost_report(dd: DDResult, global_chain=None,
                global_solve_time: Optional[float] = None):
    """
    Forward-solve counts and costs in local-solve units.

    DD-MCMC costs ``N * M`` local units; G-MCMC costs ``N_g`` global solves,
    converted with both the measured and the reference time ratio.
    `global_chain` is a `Chain` or its `summary()` dict.
    """
    if isinstance(global_chain, dict):
        global_chain = SimpleNamespace(**global_chain)
    n, M = dd.n, len(dd.chains)
    local_solves = sum(p.model.n_solves for p in dd.problems)
    local_time = sum(p.model.solve_time for p in dd.problems)
    t_local = local_time / local_solves if local_solves else 0.0
    report = {
        'M': M,
        'n_dd': n,
        'dd_solves_nominal': n * M,
        'dd_solves_performed': int(sum(c.n_forward for c in dd.chains)),
        'dd_cost_units': n * M,
        'local_solve_time': t_local,
        'reference_ratio': REFERENCE_COST_RATIO,
    }
    report['dd_solves_saved'] = report['dd_solves_nominal'] - report[
        'dd_solves_performed']
    if global_chain is not None:
        report.update({
            'n_g': global_chain.n,
            'g_solves_nominal': global_chain.n,
            'g_solves_performed': int(global_chain.n_forward),
            'g_cost_units_reference': global_chain.n * REFERENCE_COST_RATIO,
        })
        if global_solve_time and t_local > 0:
            ratio = global_solve_time / t_local
            report.update({
                'global_solve_time': global_solve_time,
                'measured_ratio': ratio,
                'g_cost_units_measured': global_chain.n * ratio,
            })
    return report
