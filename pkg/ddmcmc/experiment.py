# Copyright 2024-2025 The DD-MCMC Authors. All rights reserved.
import logging
import os.path as osp
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
import pandas as pd

from .dd_mcmc import (DDMCMC, DDResult, SensorDataSet, build_local_models,
                      cost_report)
from .errors import BasisMismatch, ConfigError
from .modules.field import (PositivityGuard, interface_jumps,
                            posterior_moments_kl, stitched_moments)
from .modules.forward import KLForwardModel
from .modules.gp import interface_table
from .modules.kl import FieldSample, draw_prior, extract_local_coeffs
from .modules.mesh import DiffusionSolver, FemSolution, Grid2D, observe
from .utils.manifest import RunManifest
from .utils.mh_sampler import Chain, burn_in, make_rng, run_chain
from .utils.utils import load_frame, load_json, load_nodal

__all__ = [
    'TruthData', 'GMCMCResult', 'ErrorReport', 'Experiment',
    'relative_error', 'gen_truth_and_data', 'run_gmcmc', 'report'
]

TRUTH_STREAM = 0
NOISE_STREAM = 1
GLOBAL_STREAM = 2


def relative_error(estimate, reference) -> float:
    """Relative discrete 2-norm error over nodal values."""
    estimate = np.asarray(estimate, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if estimate.shape != reference.shape:
        raise ValueError(f"shapes {estimate.shape} and {reference.shape} differ")
    scale = np.linalg.norm(reference)
    if scale == 0:
        raise ValueError("reference field is identically zero")
    return float(np.linalg.norm(estimate - reference) / scale)


@dataclass
class TruthData:
    xi: np.ndarray
    sample: FieldSample
    solution: FemSolution
    data: SensorDataSet
    noise_std: float

    @property
    def nodal(self):
        """Truth permeability on the inversion grid."""
        return self.sample.nodal


def _load_truth_xi(path):
    if path.endswith('.npy'):
        return np.load(path).astype(float).reshape(-1)
    return np.asarray(load_json(path)['xi'], dtype=float)


def gen_truth_and_data(cfg, pipeline: Optional[DDMCMC] = None) -> TruthData:
    """
    Truth permeability, its pressure solution and noisy sensor data.

    The truth is a prior draw on the global basis (stream 0) unless
    `run.truth_file` names coefficients. The forward solve runs on the
    inversion grid refined `run.data_grid_refine` times; noise (stream 1) has
    standard deviation `noise.percent` of the mean absolute clean value.
    """
    pipeline = pipeline or DDMCMC(cfg)
    seed = cfg.run.seed
    basis = pipeline.global_basis
    if cfg.run.truth_file:
        xi = _load_truth_xi(cfg.run.truth_file)
        if xi.shape != (basis.d,):
            raise BasisMismatch(
                f"truth file has {xi.size} coefficients, global d={basis.d}")
        logging.info(f"truth coefficients loaded from {cfg.run.truth_file}")
    else:
        xi = draw_prior(basis, make_rng(seed, TRUTH_STREAM))
    truth = FieldSample(basis, xi)

    refine = int(cfg.run.data_grid_refine)
    data_grid = pipeline.grid.refine(refine) if refine > 1 else pipeline.grid
    guard = PositivityGuard()
    solver = DiffusionSolver(data_grid, pipeline.exterior_bc, pipeline.src)
    sol = solver.solve(lambda pts: guard(truth(pts)))
    clean = observe(sol, pipeline.sensors)

    noise_std = cfg.noise.percent / 100 * float(np.abs(clean).mean())
    noise = make_rng(seed, NOISE_STREAM).standard_normal(len(clean))
    values = clean + noise_std * noise
    logging.info(f"{len(clean)} observations on a {data_grid.nx}x{data_grid.ny} "
                 f"grid, noise std {noise_std:.4e}")
    return TruthData(
        xi=xi,
        sample=truth,
        solution=sol,
        data=SensorDataSet(pipeline.sensors, values, clean=clean),
        noise_std=noise_std)


@dataclass
class GMCMCResult:
    chain: Chain
    model: KLForwardModel
    mean: np.ndarray
    var: np.ndarray
    epsilon: Optional[float] = None

    @property
    def mean_solve_time(self):
        return self.model.mean_solve_time


def run_gmcmc(cfg,
              data: SensorDataSet,
              noise_std,
              pipeline: Optional[DDMCMC] = None,
              truth_nodal=None,
              n=None,
              progress=False) -> GMCMCResult:
    """Single-domain chain on the global basis, on stream 2."""
    pipeline = pipeline or DDMCMC(cfg)
    basis = pipeline.global_basis
    solver = DiffusionSolver(pipeline.grid, pipeline.exterior_bc, pipeline.src)
    model = KLForwardModel(basis, solver, data.points, guard=pipeline.guard)
    chain = run_chain(
        model,
        data.values,
        noise_std,
        cfg.mcmc.beta_g,
        n or cfg.mcmc.n_g,
        cfg.run.seed,
        stream=GLOBAL_STREAM,
        name='global',
        progress=progress)
    logging.info(f"G-MCMC: acceptance {chain.accept_rate:.2%}, "
                 f"mean solve {model.mean_solve_time * 1e3:.2f} ms")
    mean, var = posterior_moments_kl(burn_in(chain, cfg.mcmc.burn_in), basis)
    eps = None if truth_nodal is None else relative_error(mean, truth_nodal)
    return GMCMCResult(chain=chain, model=model, mean=mean, var=var, epsilon=eps)


@dataclass
class ErrorReport:
    epsilon: Optional[float] = None
    epsilon_stitched: Optional[float] = None
    epsilon_assembled: Optional[float] = None
    eps_int: Dict[str, float] = field(default_factory=dict)
    eps_state: Dict[str, float] = field(default_factory=dict)
    acceptance: Dict[str, float] = field(default_factory=dict)
    gp: Dict[str, dict] = field(default_factory=lambda: {
        'sizes': {},
        'sigma_max': {}
    })

    def to_dict(self):
        return {
            'epsilon': self.epsilon,
            'epsilon_stitched': self.epsilon_stitched,
            'epsilon_assembled': self.epsilon_assembled,
            'eps_int': dict(self.eps_int),
            'eps_state': dict(self.eps_state),
            'acceptance': dict(self.acceptance),
            'gp': {k: dict(v) for k, v in self.gp.items()},
        }


def _maybe_error(manifest, name, truth):
    if not manifest.has(name):
        return None
    return relative_error(load_nodal(manifest.path(name)), truth)


def report(manifest: RunManifest) -> ErrorReport:
    """
    Error metrics from the artifacts listed in the run manifest.

    Writes `errors.json` and one misfit trace per chain; raises
    `MissingArtifact` when the truth field is not listed.
    """
    truth = load_nodal(manifest.path('fields_truth.csv'))
    out = ErrorReport(
        epsilon=_maybe_error(manifest, 'fields_gmcmc_mean.csv', truth),
        epsilon_stitched=_maybe_error(manifest, 'fields_stitched_mean.csv',
                                      truth),
        epsilon_assembled=_maybe_error(manifest, 'fields_assembled_mean.csv',
                                       truth))
    if manifest.has('interfaces.json'):
        for name, rec in load_json(manifest.path('interfaces.json')).items():
            out.eps_int[name] = rec['eps_int']
            out.gp['sizes'][name] = rec['size']
            out.gp['sigma_max'][name] = rec['sigma_max']
    if manifest.has('state_errors.json'):
        out.eps_state.update(load_json(manifest.path('state_errors.json')))
    out.acceptance.update(manifest.data['chains'])

    noise_std = load_json(manifest.path('data_meta.json'))['noise_std']
    for name in sorted(manifest.data['chains']):
        df = load_frame(manifest.path(f"chain_{name}.csv"))
        manifest.write_frame(
            f"trace_{name}.csv",
            pd.DataFrame({
                'iter': df['iter'],
                'misfit': df['misfit'],
                'ssr': 2 * noise_std**2 * df['misfit'],
            }))
    manifest.write_json('errors.json', out.to_dict())
    manifest.save()
    if out.epsilon_assembled is not None:
        logging.info(
            f"relative errors: global {out.epsilon}, stitched "
            f"{out.epsilon_stitched}, assembled {out.epsilon_assembled}")
    return out


class Experiment:

    def __init__(self, cfg):
        r"""
        Stage runner for one run directory.

        Each stage reads its inputs through the run manifest, so stages can be
        run one at a time from separate invocations.

        Args:
            cfg (`EasyDict`):
                Validated run config; `run.out_dir` is the run directory.
        """
        self.cfg = cfg
        self._manifest = None
        self._pipeline = None

    @property
    def manifest(self) -> RunManifest:
        if self._manifest is None:
            self._manifest = RunManifest(self.cfg.run.out_dir, self.cfg)
            self._manifest.set_seed('master', self.cfg.run.seed)
        return self._manifest

    @property
    def pipeline(self) -> DDMCMC:
        if self._pipeline is None:
            self._pipeline = DDMCMC(self.cfg)
        return self._pipeline

    def kl_info(self):
        p = self.pipeline
        lines = [f"global: d={p.global_basis.d} on {p.rect}"]
        for i, b in enumerate(p.local_bases):
            lines.append(f"subdomain {i + 1}: d={b.d} on {b.domain}")
        for line in lines:
            print(line)
        return p.global_basis.d, [b.d for b in p.local_bases]

    def gen_data(self) -> TruthData:
        m = self.manifest
        with m.stage('gen-data'):
            td = gen_truth_and_data(self.cfg, self.pipeline)
            grid = self.pipeline.grid
            m.write_json('truth.json', {'xi': td.xi, 'd': len(td.xi)})
            m.write_frame(
                'data.csv',
                pd.DataFrame({
                    'sensor': td.data.index,
                    'x': td.data.points[:, 0],
                    'y': td.data.points[:, 1],
                    'clean': td.data.clean,
                    'value': td.data.values,
                }))
            m.write_json(
                'data_meta.json', {
                    'noise_std': td.noise_std,
                    'noise_percent': self.cfg.noise.percent,
                    'n_sensors': len(td.data),
                    'data_grid': td.solution.grid.to_dict(),
                    'seed': self.cfg.run.seed,
                })
            m.write_nodal('fields_truth.csv', grid, td.nodal)
            m.write_nodal('fields_pressure_truth.csv', td.solution.grid,
                          td.solution.u)
        return td

    def load_data(self):
        m = self.manifest
        df = load_frame(m.path('data.csv'))
        data = SensorDataSet(
            df[['x', 'y']].to_numpy(),
            df['value'].to_numpy(),
            clean=df['clean'].to_numpy(),
            index=df['sensor'].to_numpy())
        return data, load_json(m.path('data_meta.json'))['noise_std']

    def load_truth(self):
        m = self.manifest
        xi = np.asarray(load_json(m.path('truth.json'))['xi'], dtype=float)
        meta = load_json(m.path('data_meta.json'))
        grid = Grid2D(**meta['data_grid'])
        sol = FemSolution(grid, load_nodal(m.path('fields_pressure_truth.csv')))
        return FieldSample(self.pipeline.global_basis, xi), sol

    def gp_fit(self):
        m = self.manifest
        with m.stage('gp-fit'):
            data, noise_std = self.load_data()
            fits = self.pipeline.fit_interfaces(data, noise_std)
            self._write_interfaces(fits)
        return fits

    def _write_interfaces(self, fits):
        m = self.manifest
        p = self.pipeline
        truth_sol = self.load_truth()[1] if m.has('truth.json') else None
        records = {}
        for itf in p.partition.interfaces:
            fit = fits[itf.key]
            test = p.grid.coords[p.grid.edge_nodes(itf.segment)]
            table = interface_table(fit.model, itf.segment, test)
            rec = fit.to_dict()
            rec['eps_int'] = None
            if truth_sol is not None:
                exact = truth_sol(test)
                table['exact'] = exact
                rec['eps_int'] = relative_error(table['mu'].to_numpy(), exact)
            m.write_frame(f"interface_gp_{itf.name}.csv", table)
            m.write_json(f"history_gp_{itf.name}.json", rec)
            records[itf.name] = {
                k: rec[k]
                for k in ('size', 'sigma_max', 'exhausted', 'model_size', 'eps_int')
            }
        m.write_json('interfaces.json', records)

    def run_gmcmc(self) -> GMCMCResult:
        m = self.manifest
        with m.stage('run-gmcmc'):
            data, noise_std = self.load_data()
            truth, _ = self.load_truth()
            res = run_gmcmc(
                self.cfg,
                data,
                noise_std,
                self.pipeline,
                truth_nodal=truth.nodal,
                progress=self.cfg.run.progress)
            m.write_chain(res.chain, mean_solve_time=res.mean_solve_time)
            grid = self.pipeline.grid
            m.write_nodal('fields_gmcmc_mean.csv', grid, res.mean)
            m.write_nodal('fields_gmcmc_var.csv', grid, res.var)
        return res

    def state_errors(self, dd: DDResult, truth: FieldSample, truth_sol):
        """Local solutions under fitted and exact interfaces, both at the truth's local coefficients."""
        p = self.pipeline
        exact = build_local_models(
            p.partition,
            p.cov,
            self.cfg.kl.delta_kl,
            {itf.key: truth_sol for itf in p.partition.interfaces},
            p.exterior_bc,
            p.src,
            [prob.data for prob in dd.problems],
            bases=p.local_bases)
        errors = {}
        for prob, ex in zip(dd.problems, exact):
            xi = extract_local_coeffs(truth, prob.basis)
            u_gp = prob.model.solver.solve(prob.model.permeability(xi)).u
            u_ex = ex.model.solver.solve(ex.model.permeability(xi)).u
            errors[str(prob.index + 1)] = relative_error(u_gp, u_ex)
        return errors

    def run_ddmcmc(self) -> DDResult:
        m = self.manifest
        cfg = self.cfg
        p = self.pipeline
        with m.stage('run-ddmcmc'):
            data, noise_std = self.load_data()
            truth, truth_sol = self.load_truth()
            m.write_json('kl_global.json', p.global_basis.summary())
            for i, b in enumerate(p.local_bases):
                m.write_json(f"kl_local_{i + 1}.json", b.summary())
            m.write_json('partition.json', p.partition.summary())

            def persist(chains):
                for chain in chains:
                    m.write_chain(chain)

            dd = p.generate(
                data,
                noise_std,
                cfg.run.seed,
                workers=cfg.run.workers,
                progress=cfg.run.progress,
                on_partial=persist)
            persist(dd.chains)
            self._write_interfaces(dd.interface_fits)
            m.write_json('state_errors.json', self.state_errors(dd, truth, truth_sol))

            xi = pd.DataFrame(
                dd.assembled, columns=[f"xi_{r + 1}" for r in range(p.global_basis.d)])
            xi.insert(0, 'sample_index', np.arange(len(xi)))
            m.write_frame('assembled_xi.csv', xi)
            mean, var = posterior_moments_kl(dd.assembled, p.global_basis)
            m.write_nodal('fields_assembled_mean.csv', p.grid, mean)
            m.write_nodal('fields_assembled_var.csv', p.grid, var)
            s_mean, s_var, local = stitched_moments(dd.samples, p.partition)
            m.write_nodal('fields_stitched_mean.csv', p.grid, s_mean)
            m.write_nodal('fields_stitched_var.csv', p.grid, s_var)
            for i, (lm, lv) in enumerate(local):
                g = p.partition.grids[i]
                m.write_nodal(f"fields_local_mean_{i + 1}.csv", g, lm)
                m.write_nodal(f"fields_local_var_{i + 1}.csv", g, lv)
            jumps = interface_jumps(p.partition, [lm for lm, _ in local])
            m.write_json('stitched_jumps.json', {
                p.partition.interface(*key).name: value
                for key, value in jumps.items()
            })

            summary = None
            if m.has('summary_chain_global.json'):
                summary = load_json(m.path('summary_chain_global.json'))
            m.write_json(
                'cost.json',
                cost_report(
                    dd, summary,
                    summary.get('mean_solve_time') if summary else None))
        return dd

    def report(self) -> ErrorReport:
        with self.manifest.stage('report'):
            return report(self.manifest)

    def all(self):
        self.gen_data()
        self.gp_fit()
        self.run_gmcmc()
        self.run_ddmcmc()
        return self.report()

    def run(self, command):
        stages = {
            'kl-info': self.kl_info,
            'gen-data': self.gen_data,
            'gp-fit': self.gp_fit,
            'run-gmcmc': self.run_gmcmc,
            'run-ddmcmc': self.run_ddmcmc,
            'report': self.report,
            'all': self.all,
        }
        if command not in stages:
            raise ConfigError(f"unknown subcommand {command!r}")
        logging.info(f"stage {command} in {osp.abspath(self.cfg.run.out_dir)}")
        return stages[command]()
