# Copyright 2024-2025 The DD-MCMC Authors. All rights reserved.
import argparse
import logging
import sys
import warnings

warnings.filterwarnings('ignore', category=RuntimeWarning)

import ddmcmc
from ddmcmc.configs import DDMCMC_CONFIGS, load_config, validate_config
from ddmcmc.errors import ConfigError
from ddmcmc.experiment import Experiment
from ddmcmc.utils.utils import str2bool

SUBCOMMANDS = ('gen-data', 'kl-info', 'gp-fit', 'run-gmcmc', 'run-ddmcmc',
               'report', 'all')


class _UsageError(Exception):
    pass


class _ArgumentParser(argparse.ArgumentParser):

    def error(self, message):
        self.print_help(sys.stderr)
        sys.stderr.write(f"\nerror: {message}\n")
        raise _UsageError(message)


def _parse_args(argv=None):
    parser = _ArgumentParser(
        description="Domain-decomposed MCMC for a 2D permeability inversion")
    parser.add_argument(
        "command",
        type=str,
        choices=SUBCOMMANDS,
        help="The stage to run.")
    parser.add_argument(
        "--config",
        type=str,
        default="tp1",
        help=f"A TOML config or one of the presets {list(DDMCMC_CONFIGS)}.")
    parser.add_argument(
        "--seed",
        type=int,
        default=None,
        help="The master seed, an unsigned 64-bit integer.")
    parser.add_argument(
        "--out",
        type=str,
        default=None,
        help="The run directory.")
    parser.add_argument(
        "--workers",
        type=int,
        default=None,
        help="Worker processes for the local chains.")
    parser.add_argument(
        "--n-dd",
        type=int,
        default=None,
        help="Local chain length, overrides mcmc.n_dd.")
    parser.add_argument(
        "--n-g",
        type=int,
        default=None,
        help="Global chain length, overrides mcmc.n_g.")
    parser.add_argument(
        "--data-grid-refine",
        type=int,
        default=None,
        help="Generate the synthetic data on a grid refined this many times.")
    parser.add_argument(
        "--truth-file",
        type=str,
        default=None,
        help="Truth coefficients as JSON {\"xi\": [...]} or .npy.")
    parser.add_argument(
        "--progress",
        type=str2bool,
        default=None,
        help="Whether to show chain progress bars.")
    return parser.parse_args(argv)


def _validate_args(args):
    cfg = load_config(args.config)
    overrides = {
        ('run', 'seed'): args.seed,
        ('run', 'out_dir'): args.out,
        ('run', 'workers'): args.workers,
        ('run', 'data_grid_refine'): args.data_grid_refine,
        ('run', 'truth_file'): args.truth_file,
        ('run', 'progress'): args.progress,
        ('mcmc', 'n_dd'): args.n_dd,
        ('mcmc', 'n_g'): args.n_g,
    }
    for (section, key), value in overrides.items():
        if value is not None:
            cfg[section][key] = value
    return validate_config(cfg)


def _init_logging():
    logging.basicConfig(
        level=logging.INFO,
        format="[%(asctime)s] %(levelname)s: %(message)s",
        handlers=[logging.StreamHandler(stream=sys.stdout)])


def cli_dispatch(argv=None):
    """Run one subcommand; returns 0 on success, 1 on usage or config errors, 2 otherwise."""
    _init_logging()
    try:
        args = _parse_args(argv)
        cfg = _validate_args(args)
    except (_UsageError, ConfigError) as e:
        logging.error(f"{type(e).__name__}: {e}")
        return 1
    name = getattr(cfg, '__name__', args.config)
    logging.info(f"ddmcmc {ddmcmc.__version__}: {args.command} with {name}")
    try:
        Experiment(cfg).run(args.command)
    except ConfigError as e:
        logging.error(f"ConfigError: {e}")
        return 1
    except Exception as e:
        logging.exception(f"{args.command} failed: {e}")
        return 2
    logging.info("Finished.")
    return 0


if __name__ == "__main__":
    sys.exit(cli_dispatch())
