# Copyright 2024-2025 The DD-MCMC Authors. All rights reserved.
import hashlib
import logging
import os
import os.path as osp
import time
from contextlib import contextmanager

import tomli_w
from filelock import FileLock

from ..configs import plain_config
from ..errors import MissingArtifact
from .utils import load_json, save_frame, save_json, save_nodal

__all__ = ['RunManifest', 'config_hash']

MANIFEST = 'manifest.json'


def config_hash(cfg):
    return hashlib.sha256(tomli_w.dumps(plain_config(cfg)).encode()).hexdigest()


class RunManifest:
    """
    Inventory of a run directory.

    Every artifact is written through the manifest, so `manifest.json` lists
    all output files together with seeds, stage timings and acceptance rates.
    A file lock keeps a single writer per directory.
    """

    def __init__(self, out_dir, cfg=None):
        self.out_dir = out_dir
        os.makedirs(out_dir, exist_ok=True)
        self._lock = FileLock(osp.join(out_dir, '.manifest.lock'), timeout=10)
        path = osp.join(out_dir, MANIFEST)
        if osp.exists(path):
            self.data = load_json(path)
        else:
            self.data = {'files': {}, 'stages': {}, 'chains': {}, 'seeds': {}}
        if cfg is not None:
            digest = config_hash(cfg)
            old = self.data.get('config_hash')
            if old is not None and old != digest:
                logging.warning(
                    f"config changed since the last run in {out_dir}; "
                    f"artifacts from earlier stages may be stale")
            self.data['config_hash'] = digest

    def path(self, name):
        rel = self.data['files'].get(name)
        if rel is None:
            raise MissingArtifact(f"{name!r} is not listed in {MANIFEST}")
        full = osp.join(self.out_dir, rel)
        if not osp.exists(full):
            raise MissingArtifact(f"{full} is listed but missing")
        return full

    def has(self, name):
        return name in self.data['files']

    def register(self, name, rel=None):
        self.data['files'][name] = rel or name
        return osp.join(self.out_dir, rel or name)

    def write_json(self, name, obj):
        return save_json(self.register(name), obj)

    def write_frame(self, name, df):
        return save_frame(self.register(name), df)

    def write_nodal(self, name, grid, values):
        return save_nodal(self.register(name), grid, values)

    def write_chain(self, chain, **extra):
        self.write_frame(f"chain_{chain.name}.csv", chain.to_frame())
        self.write_json(f"summary_chain_{chain.name}.json", {
            **chain.summary(),
            **extra
        })
        self.set_chain(chain.name, chain.accept_rate)

    def set_seed(self, name, value):
        self.data['seeds'][name] = int(value)

    def set_chain(self, name, accept_rate):
        self.data['chains'][name] = float(accept_rate)

    @contextmanager
    def stage(self, name):
        record = {'status': 'running'}
        self.data['stages'][name] = record
        self.save()
        t0 = time.perf_counter()
        try:
            yield record
        except BaseException as e:
            record.update(status='failed', error=f"{type(e).__name__}: {e}")
            raise
        else:
            record['status'] = 'done'
        finally:
            record['wall_time'] = time.perf_counter() - t0
            self.save()

    def save(self):
        with self._lock:
            save_json(osp.join(self.out_dir, MANIFEST), self.data)
