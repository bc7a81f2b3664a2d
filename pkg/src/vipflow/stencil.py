"""Virtual staggered stencil around each interior node.

Each interior node gets four off-node interpolation points (east, west,
north, south) at half the local spacing.  Conservative terms are then formed
by plain two-point differences of values interpolated at those points, which
mimics a staggered arrangement on scattered nodes and keeps the pressure
free of odd-even decoupling.

Arms that would leave the fluid domain are pulled back to the boundary; the
difference formulas divide by the actual point separations, so asymmetric
arms need no special casing.  An arm shorter than a tenth of the offset is
refused, that close to a boundary the node placement itself is at fault.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix, diags

from .mls import MlsParams, ShapeRow, apply, build_row_table, build_shape_row
from .nodes import NodeSet

_ARMS = ((1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0))  # e, w, n, s
MIN_ARM_FRACTION = 0.1


@dataclass
class VipStencil:
    """Four interpolation points and their fit rows for one node."""

    node_id: int
    points: np.ndarray  # (4, 2), order e, w, n, s
    sep_x: float  # |x_e - x_w|
    sep_y: float  # |x_n - x_s|
    rows: tuple  # four ShapeRow instances, value row only


def _arm_lengths(position, offset, geometry):
    arms = []
    for dx, dy in _ARMS:
        direction = np.array([dx, dy])
        t = float(offset)
        if geometry is not None:
            t = geometry.arm_limit(position, direction, offset)
        if t < MIN_ARM_FRACTION * offset:
            raise ValueError(
                f"stencil arm along ({dx:g},{dy:g}) collapsed to {t:g} "
                f"(< {MIN_ARM_FRACTION} * offset {offset:g}); node too close to boundary"
            )
        arms.append(t)
    return arms


def build_stencil(
    node_id: int,
    nodes: NodeSet,
    params: MlsParams,
    offset: float | None = None,
) -> VipStencil:
    """Stencil for one node; offset defaults to half the local spacing."""
    position = nodes.positions[node_id]
    if offset is None:
        offset = 0.5 * nodes.spacing[node_id]
    arms = _arm_lengths(position, offset, nodes.geometry)
    pts = np.array([position + t * np.array(a) for t, a in zip(arms, _ARMS)])
    rows = tuple(build_shape_row(p, nodes, params, derivs=((0, 0),)) for p in pts)
    return VipStencil(
        node_id=node_id,
        points=pts,
        sep_x=arms[0] + arms[1],
        sep_y=arms[2] + arms[3],
        rows=rows,
    )


def interp_at_vips(stencil: VipStencil, values) -> np.ndarray:
    """Field interpolated at the four points, order e, w, n, s."""
    return np.array([apply(r, (0, 0), values) for r in stencil.rows])


def convection(stencil: VipStencil, u, v) -> np.ndarray:
    """Divergence form of (u u^T) at the node via the virtual points.

    Values are interpolated first and multiplied after, then differenced:
      x: (u_e^2 - u_w^2)/sep_x + (u_n v_n - u_s v_s)/sep_y
      y: (u_e v_e - u_w v_w)/sep_x + (v_n^2 - v_s^2)/sep_y
    """
    ue, uw, un, us = interp_at_vips(stencil, u)
    ve, vw, vn, vs = interp_at_vips(stencil, v)
    cx = (ue**2 - uw**2) / stencil.sep_x + (un * vn - us * vs) / stencil.sep_y
    cy = (ue * ve - uw * vw) / stencil.sep_x + (vn**2 - vs**2) / stencil.sep_y
    return np.array([cx, cy])


def divergence_star(stencil: VipStencil, u, v) -> float:
    ue, uw, _, _ = interp_at_vips(stencil, u)
    _, _, vn, vs = interp_at_vips(stencil, v)
    return (ue - uw) / stencil.sep_x + (vn - vs) / stencil.sep_y


def gradient_phi(stencil: VipStencil, phi) -> np.ndarray:
    fe, fw, fn, fs = interp_at_vips(stencil, phi)
    return np.array([(fe - fw) / stencil.sep_x, (fn - fs) / stencil.sep_y])


class StencilTable:
    """Vectorised stencils for a whole node set.

    Holds one interpolation matrix per arm direction (rows of non-interior
    nodes are empty) and the derived difference operators

        Dx = diag(1/sep_x) (E - W),   Dy = diag(1/sep_y) (N - S)

    so that ``Dx @ u + Dy @ v`` is the staggered-style divergence and
    ``(Dx @ phi, Dy @ phi)`` the matching gradient at interior nodes.
    """

    def __init__(self, nodes: NodeSet, params: MlsParams, offset_factor=0.5):
        self.nodes = nodes
        n = nodes.n
        interior = np.nonzero(nodes.interior_mask)[0]
        offsets = offset_factor * nodes.spacing
        pts = {a: np.array(nodes.positions) for a in range(4)}
        arm_len = np.zeros((n, 4))
        geometry = nodes.geometry
        for i in interior:
            position = nodes.positions[i]
            arms = _arm_lengths(position, offsets[i], geometry)
            for a, (dx, dy) in enumerate(_ARMS):
                arm_len[i, a] = arms[a]
                pts[a][i] = position + arms[a] * np.array([dx, dy])

        skip = ~nodes.interior_mask
        mats = []
        for a in range(4):
            tab = build_row_table(pts[a], nodes, params, derivs=((0, 0),), skip=skip)
            mats.append(tab[(0, 0)])
        self.interp_e, self.interp_w, self.interp_n, self.interp_s = mats

        sep_x = arm_len[:, 0] + arm_len[:, 1]
        sep_y = arm_len[:, 2] + arm_len[:, 3]
        inv_sx = np.zeros(n)
        inv_sy = np.zeros(n)
        inv_sx[interior] = 1.0 / sep_x[interior]
        inv_sy[interior] = 1.0 / sep_y[interior]
        self.sep_x, self.sep_y = sep_x, sep_y
        self.inv_sx, self.inv_sy = inv_sx, inv_sy
        self.points = pts
        self.dx = (diags(inv_sx) @ (self.interp_e - self.interp_w)).tocsr()
        self.dy = (diags(inv_sy) @ (self.interp_n - self.interp_s)).tocsr()

    def interpolate(self, values):
        """Values at the four arm points, shape (4, n); zeros off interior."""
        return np.stack(
            [
                self.interp_e @ values,
                self.interp_w @ values,
                self.interp_n @ values,
                self.interp_s @ values,
            ]
        )

    def convection(self, u, v):
        """Both components of the conservative convection term, shape (2, n)."""
        ue, uw, un, us = self.interpolate(u)
        ve, vw, vn, vs = self.interpolate(v)
        cx = self.inv_sx * (ue**2 - uw**2) + self.inv_sy * (un * vn - us * vs)
        cy = self.inv_sx * (ue * ve - uw * vw) + self.inv_sy * (vn**2 - vs**2)
        return np.stack([cx, cy])

    def divergence(self, u, v):
        return self.dx @ u + self.dy @ v

    def gradient(self, phi):
        return self.dx @ phi, self.dy @ phi

    def composed_laplacian(self) -> csr_matrix:
        """Divergence of the gradient through the virtual points.

        Exactly Dx @ Dx + Dy @ Dy; used as the pressure-correction operator so
        that the projection annihilates the staggered-style divergence to
        solver precision.
        """
        return (self.dx @ self.dx + self.dy @ self.dy).tocsr()
