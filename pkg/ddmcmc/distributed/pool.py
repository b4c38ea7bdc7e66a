# Copyright 2024-2025 The DD-MCMC Authors. All rights reserved.
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

from ..errors import ChainFailure
from ..utils.mh_sampler import run_chain

__all__ = ['ChainTask', 'run_parallel']


@dataclass
class ChainTask:
    model: Any
    data: np.ndarray
    noise_std: float
    beta: float
    n: int
    seed: int
    stream: int
    name: str
    init: Optional[np.ndarray] = None
    progress: bool = False

    def __call__(self):
        chain = run_chain(
            self.model,
            self.data,
            self.noise_std,
            self.beta,
            self.n,
            self.seed,
            init=self.init,
            stream=self.stream,
            name=self.name,
            progress=self.progress)
        return chain, self.model


def _call(task):
    return task()


def run_parallel(tasks, workers=1):
    """
    Run callables keyed by name, in worker processes when `workers` > 1.

    Results come back in the order of `tasks`. Every task runs to completion;
    if any failed, `ChainFailure` is raised for the first failed key and
    carries the results of all tasks that succeeded.
    """
    keys = list(tasks)
    results, errors = {}, {}
    if workers <= 1 or len(keys) <= 1:
        for key in keys:
            try:
                results[key] = tasks[key]()
            except Exception as e:
                errors[key] = e
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(keys))) as pool:
            futures = {key: pool.submit(_call, tasks[key]) for key in keys}
            for key in keys:
                try:
                    results[key] = futures[key].result()
                except Exception as e:
                    errors[key] = e
    for key in keys:
        if key in errors:
            logging.error(f"task {key!r} failed: {errors[key]!r}")
    if errors:
        first = next(k for k in keys if k in errors)
        raise ChainFailure(first, errors[first], completed=results) from errors[first]
    return {key: results[key] for key in keys}
