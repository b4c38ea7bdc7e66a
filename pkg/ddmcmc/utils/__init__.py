from .manifest import RunManifest
from .mh_sampler import Chain, burn_in, make_rng, run_chain

__all__ = ['RunManifest', 'Chain', 'run_chain', 'burn_in', 'make_rng']
