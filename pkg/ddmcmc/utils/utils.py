# Copyright 2024-2025 The DD-MCMC Authors. All rights reserved.
import argparse
import json
import os
import os.path as osp

import numpy as np
import pandas as pd

__all__ = [
    'save_nodal', 'load_nodal', 'save_json', 'load_json', 'save_frame',
    'load_frame', 'str2bool'
]


def _ensure_dir(path):
    parent = osp.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)


def save_nodal(path, grid, values):
    """Write a nodal field as ``x,y,value`` rows in grid node order."""
    values = np.asarray(values, dtype=float).reshape(-1)
    if values.shape != (grid.n_nodes,):
        raise ValueError(
            f"{values.size} values for a grid of {grid.n_nodes} nodes")
    df = pd.DataFrame({
        'x': grid.coords[:, 0],
        'y': grid.coords[:, 1],
        'value': values
    })
    return save_frame(path, df)


def load_nodal(path):
    return load_frame(path)['value'].to_numpy(dtype=float)


def save_frame(path, df):
    _ensure_dir(path)
    # repr-style floats round-trip exactly
    df.to_csv(path, index=False, float_format='%.17g')
    return path


def load_frame(path):
    return pd.read_csv(path, float_precision='round_trip')


def _to_builtin(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"{type(obj).__name__} is not JSON serializable")


def save_json(path, obj):
    _ensure_dir(path)
    with open(path, 'w') as f:
        json.dump(obj, f, indent=2, sort_keys=True, default=_to_builtin)
        f.write('\n')
    return path


def load_json(path):
    with open(path) as f:
        return json.load(f)


def str2bool(v):
    """
    Convert a string to a boolean.

    Supported true values: 'yes', 'true', 't', 'y', '1'
    Supported false values: 'no', 'false', 'f', 'n', '0'
    """
    if isinstance(v, bool):
        return v
    v_lower = v.lower()
    if v_lower in ('yes', 'true', 't', 'y', '1'):
        return True
    elif v_lower in ('no', 'false', 'f', 'n', '0'):
        return False
    else:
        raise argparse.ArgumentTypeError('Boolean value expected (True/False)')
