"""Bundled lid-driven cavity reference data.

Centerline velocity tabulation from Ghia, Ghia & Shin, J. Comput. Phys. 48
(1982), multigrid solutions on a 129x129 grid.  Stations are the 17 grid
lines the original table reports.  Lid speed 1, unit square.
"""

import numpy as np

# u along the vertical line through the cavity center: (y, u)
U_STATIONS = np.array([
    0.0000, 0.0547, 0.0625, 0.0703, 0.1016, 0.1719, 0.2813, 0.4531, 0.5000,
    0.6172, 0.7344, 0.8516, 0.9531, 0.9609, 0.9688, 0.9766, 1.0000,
])

U_RE100 = np.array([
    0.00000, -0.03717, -0.04192, -0.04775, -0.06434, -0.10150, -0.15662,
    -0.21090, -0.20581, -0.13641, 0.00332, 0.23151, 0.68717, 0.73722,
    0.78871, 0.84123, 1.00000,
])

U_RE1000 = np.array([
    0.00000, -0.18109, -0.20196, -0.22220, -0.29730, -0.38289, -0.27805,
    -0.10648, -0.06080, 0.05702, 0.18719, 0.33304, 0.46604, 0.51117,
    0.57492, 0.65928, 1.00000,
])

# v along the horizontal line through the cavity center: (x, v)
V_STATIONS = np.array([
    0.0000, 0.0625, 0.0703, 0.0781, 0.0938, 0.1563, 0.2266, 0.2344, 0.5000,
    0.8047, 0.8594, 0.9063, 0.9453, 0.9531, 0.9609, 0.9688, 1.0000,
])

V_RE100 = np.array([
    0.00000, 0.09233, 0.10091, 0.10890, 0.12317, 0.16077, 0.17507, 0.17527,
    0.05454, -0.24533, -0.22445, -0.16914, -0.10313, -0.08864, -0.07391,
    -0.05906, 0.00000,
])

V_RE1000 = np.array([
    0.00000, 0.27485, 0.29012, 0.30353, 0.32627, 0.37095, 0.33075, 0.32235,
    0.02526, -0.31966, -0.42665, -0.51550, -0.39188, -0.33714, -0.27669,
    -0.21388, 0.00000,
])

TABLES = {100: (U_RE100, V_RE100), 1000: (U_RE1000, V_RE1000)}


def reference(re):
    """(u stations, u values, v stations, v values) for a tabulated Re."""
    re = int(re)
    if re not in TABLES:
        raise ValueError(f"no bundled cavity reference for Re={re}; have {sorted(TABLES)}")
    u_ref, v_ref = TABLES[re]
    return U_STATIONS, u_ref, V_STATIONS, v_ref


def deviation(state, nodes, re, params=None):
    """Max absolute centerline difference from the reference, per component.

    Fields are sampled at the tabulated stations on the mid lines of the
    unit cavity.  Returns (du_max, dv_max) in units of the lid speed.
    """
    from .postproc import sample_fields

    ys, u_ref, xs, v_ref = reference(re)
    u_pts = np.column_stack([np.full_like(ys, 0.5), ys])
    v_pts = np.column_stack([xs, np.full_like(xs, 0.5)])
    u_num = sample_fields(u_pts, nodes, params, state.u)
    v_num = sample_fields(v_pts, nodes, params, state.v)
    return float(np.max(np.abs(u_num - u_ref))), float(np.max(np.abs(v_num - v_ref)))
