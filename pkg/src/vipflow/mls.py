"""Moving least squares approximation on scattered nodes.

A local quadratic fit in scaled coordinates z = (x - xbar) / rho is built
around each evaluation point xbar from the nodes inside the dilation radius
rho, weighted by a compactly supported kernel.  Solving the 6x6 weighted
normal equations once yields, for free, the coefficient rows of the fit
value and of every derivative up to second order:

    basis   [1, zx, zy, zx**2, zx*zy, zy**2]
    d[0,0]  fit value at xbar          (row of coefficients over neighbors)
    d[1,0]  d/dx   = c1 row / rho      d[0,1]  d/dy   = c2 row / rho
    d[2,0]  d2/dx2 = 2 c3 row / rho^2  d[1,1]  d2/dxdy = c4 row / rho^2
    d[0,2]  d2/dy2 = 2 c5 row / rho^2

The kernel is ``(1 - s**((1 - s)**2))**4`` inside the unit ball and zero
outside.  It is kept behind a single function so it can be swapped without
touching the solve.

If the moment matrix is ill conditioned (estimate above 1e12) or the
neighborhood is too thin, the dilation is escalated by a factor 1.3, at most
three times, before giving up.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.spatial import cKDTree

from .nodes import NodeSet

#: (column in the solved coefficient block, multiplicity factor) per derivative
DERIVS = {
    (0, 0): (0, 1.0),
    (1, 0): (1, 1.0),
    (0, 1): (2, 1.0),
    (2, 0): (3, 2.0),
    (1, 1): (4, 1.0),
    (0, 2): (5, 2.0),
}

COND_LIMIT = 1e12
ESCALATION = 1.3
MAX_ESCALATIONS = 3


@dataclass
class MlsParams:
    """Knobs of the local fit.  The basis degree is fixed at two."""

    dilation_factor: float = 2.6
    min_neighbors: int = 9

    def __post_init__(self):
        if self.dilation_factor <= 1.0:
            raise ValueError(f"dilation_factor must exceed 1, got {self.dilation_factor}")
        if self.min_neighbors < 6:
            raise ValueError(
                f"min_neighbors must be at least 6 (quadratic basis), got {self.min_neighbors}"
            )


@dataclass
class ShapeRow:
    """Coefficient rows of one local fit.

    ``coeffs[(a, b)]`` holds the weights over ``ids`` whose dot product with
    nodal values approximates the (a, b) derivative at ``point``.
    """

    point: np.ndarray
    ids: np.ndarray
    rho: float
    coeffs: dict = field(default_factory=dict)


def weight(s):
    """Kernel (1 - s**((1 - s)**2))**4 for s < 1, zero outside."""
    arr = np.asarray(s, dtype=float)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    out = np.zeros_like(arr)
    m = arr < 1.0
    sm = arr[m]
    out[m] = (1.0 - sm ** ((1.0 - sm) ** 2)) ** 4
    return float(out[0]) if scalar else out


def neighbor_query(point, rho, nodes: NodeSet, tree: cKDTree | None = None) -> np.ndarray:
    """Indices of nodes strictly inside the ball of radius rho, ascending."""
    if rho <= 0.0:
        raise ValueError(f"rho must be positive, got {rho}")
    tree = tree if tree is not None else nodes.tree()
    idx = np.asarray(
        sorted(tree.query_ball_point(np.asarray(point, dtype=float), rho)), dtype=np.int64
    )
    if idx.size == 0:
        return idx
    d = np.linalg.norm(nodes.positions[idx] - np.asarray(point, dtype=float), axis=1)
    return idx[d < rho]


def select_dilation(index: int, nodes: NodeSet, params: MlsParams) -> float:
    """Dilation for the node: factor * h, escalated until enough neighbors."""
    h = nodes.spacing[index]
    rho = params.dilation_factor * h
    point = nodes.positions[index]
    for attempt in range(MAX_ESCALATIONS + 1):
        if len(neighbor_query(point, rho, nodes)) >= params.min_neighbors:
            return rho
        rho *= ESCALATION
    raise ValueError(
        f"node {index}: fewer than {params.min_neighbors} neighbors within "
        f"rho={rho / ESCALATION:g} after {MAX_ESCALATIONS} escalations"
    )


def _fit(point, rho, ids, positions):
    """Weighted normal-equation solve; returns (coeff block, cond estimate).

    The coefficient block C is 6 x len(ids); row k holds the coefficient row
    of basis monomial k of the fit.
    """
    z = (positions[ids] - point) / rho
    s = np.hypot(z[:, 0], z[:, 1])
    w = weight(s)
    b = np.column_stack(
        [np.ones(len(ids)), z[:, 0], z[:, 1], z[:, 0] ** 2, z[:, 0] * z[:, 1], z[:, 1] ** 2]
    )
    bw = b * w[:, None]
    m = bw.T @ b
    cond = np.linalg.cond(m)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        return None, cond
    return np.linalg.solve(m, bw.T), cond


def build_shape_row(
    point,
    nodes: NodeSet,
    params: MlsParams,
    derivs=None,
    rho: float | None = None,
) -> ShapeRow:
    """Fit rows at an arbitrary point.

    ``derivs`` selects which derivative rows to keep (default: all six).
    ``rho`` overrides the starting dilation, which otherwise comes from the
    spacing of the nearest node.  On a thin or degenerate neighborhood the
    dilation escalates by 1.3 up to three times, then the build fails.
    """
    point = np.asarray(point, dtype=float)
    if derivs is None:
        derivs = tuple(DERIVS)
    for d in derivs:
        if d not in DERIVS:
            raise ValueError(f"unsupported derivative {d}; quadratic basis stops at order 2")
    tree = nodes.tree()
    if rho is None:
        _, nearest = tree.query(point)
        rho = params.dilation_factor * nodes.spacing[nearest]
    last_err = ""
    for attempt in range(MAX_ESCALATIONS + 1):
        ids = neighbor_query(point, rho, nodes, tree)
        if len(ids) < params.min_neighbors:
            last_err = f"{len(ids)} neighbors < {params.min_neighbors}"
        else:
            c, cond = _fit(point, rho, ids, nodes.positions)
            if c is not None:
                row = ShapeRow(point=point, ids=ids, rho=rho)
                for dkey in derivs:
                    col, fac = DERIVS[dkey]
                    order = dkey[0] + dkey[1]
                    row.coeffs[dkey] = fac / rho**order * c[col]
                return row
            last_err = f"moment matrix condition {cond:.3g} > {COND_LIMIT:g}"
        rho *= ESCALATION
    raise ValueError(
        f"shape row at {tuple(point)} failed after {MAX_ESCALATIONS} dilation "
        f"escalations: {last_err}"
    )


def apply(row: ShapeRow, deriv, values) -> float:
    """Dot the (a, b) coefficient row with nodal values."""
    deriv = tuple(deriv)
    if deriv not in row.coeffs:
        raise ValueError(
            f"shape row at {tuple(row.point)} holds no derivative {deriv}; "
            f"available: {sorted(row.coeffs)}"
        )
    return float(row.coeffs[deriv] @ np.asarray(values, dtype=float)[row.ids])


def build_row_table(
    points,
    nodes: NodeSet,
    params: MlsParams,
    derivs=((0, 0),),
    start_rho=None,
    skip=None,
):
    """Sparse coefficient matrices for many evaluation points at once.

    Returns ``{deriv: csr_matrix of shape (len(points), nodes.n)}``.  Rows
    flagged by ``skip`` are left empty.  ``start_rho`` optionally gives the
    starting dilation per point; the default follows the nearest node.
    """
    points = np.asarray(points, dtype=float)
    npts = len(points)
    derivs = tuple(tuple(d) for d in derivs)
    tree = nodes.tree()
    if start_rho is None:
        _, nearest = tree.query(points)
        start_rho = params.dilation_factor * nodes.spacing[nearest]
    else:
        start_rho = np.asarray(start_rho, dtype=float)

    indptr = np.zeros(npts + 1, dtype=np.int64)
    cols_parts = []
    data_parts = {d: [] for d in derivs}
    ball = tree.query_ball_point(points, start_rho, return_sorted=True)
    positions = nodes.positions
    for i in range(npts):
        if skip is not None and skip[i]:
            indptr[i + 1] = indptr[i]
            continue
        point = points[i]
        rho = start_rho[i]
        ids = np.asarray(ball[i], dtype=np.int64)
        if ids.size:
            dist = np.linalg.norm(positions[ids] - point, axis=1)
            ids = ids[dist < rho]
        c = None
        for attempt in range(MAX_ESCALATIONS + 1):
            if len(ids) >= params.min_neighbors:
                c, cond = _fit(point, rho, ids, positions)
                if c is not None:
                    break
            rho *= ESCALATION
            ids = neighbor_query(point, rho, nodes, tree)
        if c is None:
            raise ValueError(
                f"shape row at {tuple(point)} failed after {MAX_ESCALATIONS} "
                "dilation escalations"
            )
        indptr[i + 1] = indptr[i] + len(ids)
        cols_parts.append(ids)
        for dkey in derivs:
            col, fac = DERIVS[dkey]
            order = dkey[0] + dkey[1]
            data_parts[dkey].append(fac / rho**order * c[col])

    cols = np.concatenate(cols_parts) if cols_parts else np.empty(0, dtype=np.int64)
    out = {}
    for dkey in derivs:
        data = (
            np.concatenate(data_parts[dkey]) if data_parts[dkey] else np.empty(0, dtype=float)
        )
        out[dkey] = csr_matrix((data, cols, indptr), shape=(npts, nodes.n))
    return out


def node_derivative_matrices(nodes: NodeSet, params: MlsParams, derivs=None):
    """Row table evaluated at the nodes themselves, dilation per node."""
    if derivs is None:
        derivs = tuple(DERIVS)
    rho = np.array([select_dilation(i, nodes, params) for i in range(nodes.n)])
    return build_row_table(nodes.positions, nodes, params, derivs=derivs, start_rho=rho)
