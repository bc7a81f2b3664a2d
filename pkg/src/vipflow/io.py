"""Artifact writers: CSV tables, legacy VTK point snapshots, run snapshots.

All data files are deterministic: fixed float formatting (17 significant
digits, lowercase scientific), no timestamps, and a leading comment header
that names the resolved configuration hash so outputs can be traced to
their exact inputs.
"""

from __future__ import annotations

import os

import numpy as np

from .nodes import TAG_NAMES, NodeSet
from .solver import FlowState

FLOAT_FMT = "%.16e"


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return FLOAT_FMT % value
    return str(value)


def write_csv(path, columns, config_hash="unconfigured", comments=()):
    """Write named columns; scalars broadcast to the common length."""
    names = list(columns)
    arrays = [np.atleast_1d(np.asarray(columns[k])) for k in names]
    length = max(a.shape[0] for a in arrays) if arrays else 0
    arrays = [np.broadcast_to(a, (length,)) for a in arrays]
    with open(path, "w", newline="\n") as f:
        f.write(f"# config {config_hash}\n")
        for line in comments:
            f.write(f"# {line}\n")
        f.write(",".join(names) + "\n")
        for i in range(length):
            f.write(",".join(_fmt(a[i]) for a in arrays) + "\n")
    return path


def write_nodes_csv(path, nodes: NodeSet, config_hash="unconfigured"):
    return write_csv(
        path,
        {
            "x": nodes.positions[:, 0],
            "y": nodes.positions[:, 1],
            "tag": [TAG_NAMES[t] for t in nodes.tags],
            "h": nodes.spacing,
            "rho": nodes.dilation,
        },
        config_hash,
    )


def write_vtk(path, nodes: NodeSet, point_data, config_hash="unconfigured"):
    """Legacy ASCII VTK point cloud with scalar point data."""
    pos = nodes.positions
    with open(path, "w", newline="\n") as f:
        f.write("# vtk DataFile Version 3.0\n")
        f.write(f"config {config_hash}\n")
        f.write("ASCII\nDATASET POLYDATA\n")
        f.write(f"POINTS {len(pos)} double\n")
        for x, y in pos:
            f.write(f"{FLOAT_FMT % x} {FLOAT_FMT % y} 0\n")
        f.write(f"VERTICES {len(pos)} {2 * len(pos)}\n")
        for i in range(len(pos)):
            f.write(f"1 {i}\n")
        f.write(f"POINT_DATA {len(pos)}\n")
        for name, values in point_data.items():
            values = np.asarray(values, dtype=float)
            f.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            for v in values:
                f.write(FLOAT_FMT % v + "\n")
    return path


def save_snapshot(path, state: FlowState, config_hash="unconfigured"):
    """Resumable binary snapshot of the full time-stepper state."""
    payload = {
        "u": state.u,
        "v": state.v,
        "p": state.p,
        "phi": state.phi,
        "t": np.float64(state.t),
        "step": np.int64(state.step),
        "config_hash": np.str_(config_hash),
    }
    if state.conv_prev is not None:
        payload["conv_prev"] = np.asarray(state.conv_prev)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        np.savez(f, **payload)
    os.replace(tmp, path)
    return path


def load_snapshot(path):
    """Returns (FlowState, config_hash)."""
    with np.load(path, allow_pickle=False) as data:
        n = len(data["u"])
        state = FlowState(
            u=data["u"].copy(),
            v=data["v"].copy(),
            p=data["p"].copy(),
            phi=data["phi"].copy(),
            u_star=np.zeros(n),
            v_star=np.zeros(n),
            conv_prev=data["conv_prev"].copy() if "conv_prev" in data else None,
            t=float(data["t"]),
            step=int(data["step"]),
        )
        return state, str(data["config_hash"])
