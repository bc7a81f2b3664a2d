"""Node generation for the benchmark flow domains.

Generators return a :class:`NodeSet`: scattered node coordinates plus, for
every node, a boundary tag, a local spacing ``h`` and an interpolation
radius ``rho``.  The exact fluid geometry travels with the set
(``NodeSet.geometry``) so downstream consumers can clip interpolation arms
against the true boundary rather than a node-based approximation of it.

Supported domains: rectangle lattices (driven cavity, periodic-free decaying
vortex box), an isosceles wedge cavity with a driven top lid, and a
rectangular channel around a circular or bumpy cylinder with radially graded
node bands.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np
from scipy.spatial import cKDTree

log = logging.getLogger(__name__)

CASES = (
    "taylor-box",
    "square-cavity",
    "triangle-cavity",
    "circular-cylinder",
    "bumpy-cylinder",
)


class Tag(IntEnum):
    INTERIOR = 0
    WALL = 1
    LID = 2
    INLET = 3
    OUTLET = 4
    SLIP = 5
    BODY = 6


TAG_NAMES = {t: t.name.lower() for t in Tag}
NAME_TAGS = {v: k for k, v in TAG_NAMES.items()}

# Corner nodes belong to two sides; the higher-priority side wins.  Dirichlet
# style tags dominate derivative style ones.
_CORNER_PRIORITY = (Tag.LID, Tag.INLET, Tag.WALL, Tag.SLIP, Tag.OUTLET)


def _corner_tag(a: Tag, b: Tag) -> Tag:
    for t in _CORNER_PRIORITY:
        if a == t or b == t:
            return t
    return a


class LinearGeometry:
    """Convex fluid region cut out by half-planes ``a . x <= b``."""

    def __init__(self, halfplanes):
        self.normals = np.asarray([a for a, _ in halfplanes], dtype=float)
        self.offsets = np.asarray([b for _, b in halfplanes], dtype=float)

    def contains(self, pts, tol=1e-12):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        s = pts @ self.normals.T - self.offsets
        return np.all(s <= tol, axis=1)

    def arm_limit(self, origin, direction, t_max):
        """Largest t <= t_max with origin + t*direction still in the region."""
        origin = np.asarray(origin, dtype=float)
        direction = np.asarray(direction, dtype=float)
        t = float(t_max)
        ad = self.normals @ direction
        gap = self.offsets - self.normals @ origin
        for adi, gapi in zip(ad, gap):
            if adi > 1e-14:
                t = min(t, gapi / adi)
        return max(t, 0.0)


def box_geometry(x0, x1, y0, y1) -> LinearGeometry:
    return LinearGeometry(
        [((-1.0, 0.0), -x0), ((1.0, 0.0), x1), ((0.0, -1.0), -y0), ((0.0, 1.0), y1)]
    )


class BumpyBody:
    """Closed boundary curve r(theta) = r0 * (1 + gamma * cos(mb * theta)).

    ``gamma = 0`` recovers the plain circle.  The curve is star shaped for
    gamma < 1, so point-inside tests reduce to a radial comparison.
    """

    def __init__(self, radius=0.5, gamma=0.0, mb=1, center=(0.0, 0.0)):
        if radius <= 0.0:
            raise ValueError(f"body radius must be positive, got {radius}")
        if not 0.0 <= gamma < 1.0:
            raise ValueError(f"bump amplitude gamma must lie in [0, 1), got {gamma}")
        if int(mb) != mb or mb < 1:
            raise ValueError(f"bump count mb must be a positive integer, got {mb}")
        self.radius0 = float(radius)
        self.gamma = float(gamma)
        self.mb = int(mb)
        self.center = np.asarray(center, dtype=float)

    @property
    def max_radius(self):
        return self.radius0 * (1.0 + self.gamma)

    @property
    def min_radius(self):
        return self.radius0 * (1.0 - self.gamma)

    def radius(self, theta):
        return bumpy_radius(theta, self.radius0, self.gamma, self.mb)

    def point(self, theta):
        theta = np.asarray(theta, dtype=float)
        r = self.radius(theta)
        return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1) + self.center

    def tangent(self, theta):
        """d(point)/d(theta), not normalised."""
        theta = np.asarray(theta, dtype=float)
        r = self.radius(theta)
        dr = -self.radius0 * self.gamma * self.mb * np.sin(self.mb * theta)
        tx = dr * np.cos(theta) - r * np.sin(theta)
        ty = dr * np.sin(theta) + r * np.cos(theta)
        return np.stack([tx, ty], axis=-1)

    def unit_normal(self, theta):
        """Unit normal pointing out of the body (into the fluid)."""
        t = self.tangent(theta)
        n = np.stack([t[..., 1], -t[..., 0]], axis=-1)
        return n / np.linalg.norm(n, axis=-1, keepdims=True)

    def radial_excess(self, pts):
        """|p - c| - r(angle(p)); positive outside the body."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float)) - self.center
        rho = np.hypot(pts[:, 0], pts[:, 1])
        ang = np.arctan2(pts[:, 1], pts[:, 0])
        return rho - self.radius(ang)

    def contains(self, pts):
        return self.radial_excess(pts) < 0.0


class CylinderFluidGeometry:
    """Rectangular channel minus a star-shaped body."""

    def __init__(self, box: LinearGeometry, body: BumpyBody):
        self.box = box
        self.body = body

    def contains(self, pts, tol=1e-12):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return self.box.contains(pts, tol) & (self.body.radial_excess(pts) >= -tol)

    def arm_limit(self, origin, direction, t_max):
        t = self.box.arm_limit(origin, direction, t_max)
        if t <= 0.0:
            return 0.0
        origin = np.asarray(origin, dtype=float)
        direction = np.asarray(direction, dtype=float)
        # The excess along the short probe segment is smooth; bracket the first
        # crossing on a fine sampling, then bisect.
        ts = np.linspace(0.0, t, 33)
        ex = self.body.radial_excess(origin + ts[:, None] * direction)
        inside = np.nonzero(ex < 0.0)[0]
        if inside.size == 0:
            return t
        k = inside[0]
        if k == 0:
            return 0.0
        lo, hi = ts[k - 1], ts[k]
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if self.body.radial_excess(origin + mid * direction)[0] >= 0.0:
                lo = mid
            else:
                hi = mid
        return lo


@dataclass
class NodeSet:
    """Scattered nodes plus per-node metadata.

    positions : (n, 2) float array
    tags      : (n,) int array of :class:`Tag` values
    spacing   : (n,) local spacing h
    dilation  : (n,) interpolation radius rho, always > h
    normals   : (n, 2) outward unit normals, zero rows for interior nodes
    geometry  : object with contains / arm_limit, or None
    """

    positions: np.ndarray
    tags: np.ndarray
    spacing: np.ndarray
    dilation: np.ndarray
    normals: np.ndarray | None = None
    geometry: object = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=float)
        self.tags = np.asarray(self.tags, dtype=np.int64)
        self.spacing = np.asarray(self.spacing, dtype=float)
        self.dilation = np.asarray(self.dilation, dtype=float)
        if self.normals is None:
            self.normals = np.zeros_like(self.positions)
        n = len(self.positions)
        if not (len(self.tags) == len(self.spacing) == len(self.dilation) == n):
            raise ValueError("NodeSet arrays disagree on length")
        if np.any(self.dilation <= self.spacing):
            bad = int(np.argmax(self.dilation <= self.spacing))
            raise ValueError(
                f"dilation must exceed spacing at every node; node {bad} has "
                f"rho={self.dilation[bad]:g} <= h={self.spacing[bad]:g}"
            )

    @property
    def n(self) -> int:
        return len(self.positions)

    @property
    def interior_mask(self) -> np.ndarray:
        return self.tags == Tag.INTERIOR

    @property
    def boundary_mask(self) -> np.ndarray:
        return self.tags != Tag.INTERIOR

    def tree(self) -> cKDTree:
        if "tree" not in self.meta:
            self.meta["tree"] = cKDTree(self.positions)
        return self.meta["tree"]


@dataclass
class DomainSpec:
    """Validated description of a benchmark domain."""

    case: str
    extents: tuple = (0.0, 1.0, 0.0, 1.0)
    apex_angle_deg: float = 28.072
    n_base: int = 200
    radius: float = 0.5
    gamma: float = 0.0
    mb: int = 1
    box: tuple = (-8.0, 30.0, -16.0, 16.0)

    def __post_init__(self):
        if self.case not in CASES:
            raise ValueError(f"unknown case {self.case!r}, expected one of {CASES}")
        x0, x1, y0, y1 = self.extents
        if x1 <= x0 or y1 <= y0:
            raise ValueError(f"malformed extents {self.extents}")
        if not 0.0 < self.apex_angle_deg < 90.0:
            raise ValueError(
                f"apex angle must lie strictly between 0 and 90 degrees, got "
                f"{self.apex_angle_deg}"
            )
        if self.radius <= 0.0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if int(self.mb) != self.mb or self.mb < 1:
            raise ValueError(f"mb must be a positive integer, got {self.mb}")
        bx0, bx1, by0, by1 = self.box
        if bx1 <= bx0 or by1 <= by0:
            raise ValueError(f"malformed box {self.box}")

    def body(self) -> BumpyBody:
        gamma = 0.0 if self.case == "circular-cylinder" else self.gamma
        return BumpyBody(self.radius, gamma, self.mb)


def bumpy_radius(theta, r=0.5, gamma=0.1, mb=10):
    """Radial profile r * (1 + gamma * cos(mb * theta)) of the bumpy body."""
    if r <= 0.0:
        raise ValueError(f"r must be positive, got {r}")
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
    if int(mb) != mb or mb < 1:
        raise ValueError(f"mb must be a positive integer, got {mb}")
    theta = np.asarray(theta, dtype=float)
    out = r * (1.0 + gamma * np.cos(mb * theta))
    return float(out) if out.ndim == 0 else out


def _axis_count(span, h, label):
    n = int(round(span / h)) + 1
    if n < 5:
        raise ValueError(
            f"{label}: need at least 5 nodes per direction, spacing {h:g} over "
            f"span {span:g} gives {n}"
        )
    return n


def gen_rectangle_nodes(extents, h, side_tags=None, dilation_factor=2.6) -> NodeSet:
    """Uniform lattice over a rectangle, boundary included.

    Parameters
    ----------
    extents : (x0, x1, y0, y1)
    h : requested lattice spacing; the actual spacing rounds the span to a
        whole number of cells.
    side_tags : optional dict with keys left/right/bottom/top mapping to
        :class:`Tag`; defaults to wall on all four sides.  Corner nodes take
        the higher-priority side tag.
    """
    x0, x1, y0, y1 = (float(v) for v in extents)
    if x1 <= x0 or y1 <= y0:
        raise ValueError(f"malformed extents {extents}")
    if h <= 0.0:
        raise ValueError(f"spacing h must be positive, got {h}")
    nx = _axis_count(x1 - x0, h, "gen_rectangle_nodes")
    ny = _axis_count(y1 - y0, h, "gen_rectangle_nodes")
    hx = (x1 - x0) / (nx - 1)
    hy = (y1 - y0) / (ny - 1)

    tags_by_side = {"left": Tag.WALL, "right": Tag.WALL, "bottom": Tag.WALL, "top": Tag.WALL}
    if side_tags:
        unknown = set(side_tags) - set(tags_by_side)
        if unknown:
            raise ValueError(f"unknown side keys {sorted(unknown)}")
        tags_by_side.update(side_tags)

    xs = x0 + hx * np.arange(nx)
    ys = y0 + hy * np.arange(ny)
    xg, yg = np.meshgrid(xs, ys)
    pos = np.column_stack([xg.ravel(), yg.ravel()])

    tags = np.full(nx * ny, Tag.INTERIOR, dtype=np.int64)
    normals = np.zeros((nx * ny, 2))
    ix = np.tile(np.arange(nx), ny)
    iy = np.repeat(np.arange(ny), nx)
    side_of = {
        "left": ix == 0,
        "right": ix == nx - 1,
        "bottom": iy == 0,
        "top": iy == ny - 1,
    }
    side_normal = {
        "left": (-1.0, 0.0),
        "right": (1.0, 0.0),
        "bottom": (0.0, -1.0),
        "top": (0.0, 1.0),
    }
    for name, mask in side_of.items():
        tags[mask] = tags_by_side[name]
        normals[mask] = side_normal[name]
    for hname in ("bottom", "top"):
        for vname in ("left", "right"):
            corner = side_of[hname] & side_of[vname]
            tags[corner] = _corner_tag(tags_by_side[hname], tags_by_side[vname])
            nrm = np.asarray(side_normal[hname]) + np.asarray(side_normal[vname])
            normals[corner] = nrm / np.linalg.norm(nrm)

    h_local = max(hx, hy)
    spacing = np.full(nx * ny, h_local)
    return NodeSet(
        positions=pos,
        tags=tags,
        spacing=spacing,
        dilation=dilation_factor * spacing,
        normals=normals,
        geometry=box_geometry(x0, x1, y0, y1),
        meta={"nx": nx, "ny": ny, "hx": hx, "hy": hy},
    )


def gen_triangle_nodes(
    apex_angle_deg, n_base, lid_width=1.0, dilation_factor=2.6, min_row_nodes=3
) -> NodeSet:
    """Isosceles wedge cavity, apex down at the origin, driven lid on top.

    Interior nodes sit on one uniform lattice clipped by the wedge; wall
    chains run along the lid, the two slanted sides, and a short horizontal
    cut that truncates the apex tip where fewer than ``min_row_nodes``
    lattice columns fit.  The truncation height lands on a lattice row and
    is recorded in ``meta``.

    Fitting each interior row to the slanted walls instead (stretching the
    row so its end nodes land on the wall) looks natural but is unusable:
    the row-to-row stagger it creates breaks the near-duality of the
    virtual-point divergence and gradient, and the projection then pumps a
    flip-flop mode near the apex with growth around 1.2 per step.
    """
    if not 0.0 < apex_angle_deg < 90.0:
        raise ValueError(
            f"apex angle must lie strictly between 0 and 90 degrees, got {apex_angle_deg}"
        )
    if n_base < 20:
        raise ValueError(f"n_base must be at least 20, got {n_base}")
    if min_row_nodes < 3:
        raise ValueError(f"min_row_nodes must be at least 3, got {min_row_nodes}")
    slope = math.tan(math.radians(apex_angle_deg) / 2.0)
    width = float(lid_width)
    height = width / (2.0 * slope)
    dx = width / (n_base - 1)
    dy = dx
    margin = 0.45 * dx

    pos, tags, spacing = [], [], []
    normals = []
    n_left = np.array([-1.0, -slope]) / math.hypot(1.0, slope)
    n_right = np.array([1.0, -slope]) / math.hypot(1.0, slope)
    n_lid = np.array([0.0, 1.0])

    # interior lattice, top row one dy below the lid, truncated at the apex
    n_rows = int(round(height / dy))
    truncated_at = dy
    for j in range(n_rows, 0, -1):
        y = j * dy
        if y >= height - margin:
            continue
        half = slope * y
        kmax = int(math.floor((half - margin) / dx))
        if 2 * kmax + 1 < min_row_nodes:
            truncated_at = y + dy
            break
        for k in range(-kmax, kmax + 1):
            pos.append((k * dx, y))
            tags.append(Tag.INTERIOR)
            normals.append((0.0, 0.0))
            spacing.append(dx)

    for i, x in enumerate(np.linspace(-width / 2.0, width / 2.0, n_base)):
        pos.append((x, height))
        tags.append(Tag.LID)
        spacing.append(dx)
        if i == 0:
            nv = n_lid + n_left
        elif i == n_base - 1:
            nv = n_lid + n_right
        else:
            nv = n_lid
        normals.append(nv / np.linalg.norm(nv))

    # slanted walls from the lid corners down to the cut, then the cut itself
    for sgn, nrm in ((-1.0, n_left), (1.0, n_right)):
        top = np.array([sgn * width / 2.0, height])
        bot = np.array([sgn * slope * truncated_at, truncated_at])
        nseg = max(2, int(round(np.linalg.norm(top - bot) / dx)))
        for s in np.linspace(0.0, 1.0, nseg + 1)[1:]:
            p = top + s * (bot - top)
            pos.append(tuple(p))
            tags.append(Tag.WALL)
            normals.append(nrm)
            spacing.append(dx)
    kc = int(math.floor((slope * truncated_at - 0.3 * dx) / dx))
    for k in range(-kc, kc + 1):
        pos.append((k * dx, truncated_at))
        tags.append(Tag.WALL)
        normals.append((0.0, -1.0))
        spacing.append(dx)
    # lattice nodes at the cut height duplicate the cut wall; drop them
    pos = np.asarray(pos)
    tags = np.asarray(tags, dtype=np.int64)
    normals_arr = np.asarray(normals, dtype=float)
    spacing = np.asarray(spacing)
    keep = ~((tags == Tag.INTERIOR) & (pos[:, 1] < truncated_at + margin))
    pos, tags, normals_arr, spacing = pos[keep], tags[keep], normals_arr[keep], spacing[keep]
    log.info(
        "wedge apex truncated at y=%.3g (rows below would hold fewer than %d lattice nodes)",
        truncated_at,
        min_row_nodes,
    )
    geometry = LinearGeometry(
        [((0.0, 1.0), height), ((-1.0, -slope), 0.0), ((1.0, -slope), 0.0)]
    )
    return NodeSet(
        positions=pos,
        tags=tags,
        spacing=spacing,
        dilation=dilation_factor * spacing,
        normals=normals_arr,
        geometry=geometry,
        meta={
            "height": height,
            "width": width,
            "dx": dx,
            "dy": dy,
            "truncated_at": truncated_at,
        },
    )


def _resample_polyline(pts, spacing, closed):
    """Points every ``spacing`` of arclength along a polyline."""
    if closed:
        pts = np.vstack([pts, pts[:1]])
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    if total < spacing:
        return np.empty((0, 2))
    if closed:
        count = max(int(round(total / spacing)), 8)
        targets = total * np.arange(count) / count
    else:
        count = int(math.floor(total / spacing)) + 1
        pad = 0.5 * (total - (count - 1) * spacing)
        targets = pad + spacing * np.arange(count)
    x = np.interp(targets, s, pts[:, 0])
    y = np.interp(targets, s, pts[:, 1])
    return np.column_stack([x, y])


def gen_cylinder_domain(
    spec: DomainSpec,
    h_surface,
    growth=1.3,
    h_far=None,
    layers_per_band=4,
    dilation_factor=2.6,
) -> NodeSet:
    """Channel around a circular or bumpy body with graded node bands.

    Nodes sit exactly on the body curve (tagged body), the first fluid layer
    is offset by ``h_surface`` along the outward normal, and successive
    layers coarsen stepwise: bands of ``layers_per_band`` layers share one
    spacing, multiplied by ``growth`` from band to band until it reaches the
    far-field lattice spacing ``h_far``.  The remaining channel is filled by
    a regular lattice whose outer boundary carries inlet / outlet / slip
    tags.  Pairs of nodes closer than 0.2 * h_surface are merged with a
    warning.
    """
    if h_surface <= 0.0:
        raise ValueError(f"h_surface must be positive, got {h_surface}")
    if growth <= 1.0:
        raise ValueError(f"growth must exceed 1, got {growth}")
    if h_far is None:
        h_far = 8.0 * h_surface
    body = spec.body()
    x0, x1, y0, y1 = spec.box

    n_fine = max(4096, 64 * body.mb)
    theta_f = np.linspace(0.0, 2.0 * math.pi, n_fine, endpoint=False)
    surf_fine = body.point(theta_f)
    surf_tree = cKDTree(surf_fine)

    # Body-surface nodes, equal arclength.
    surface_pts = _resample_polyline(surf_fine, h_surface, closed=True)
    m_surface = len(surface_pts)

    pos = [surface_pts]
    tags = [np.full(m_surface, Tag.BODY, dtype=np.int64)]
    spacing = [np.full(m_surface, h_surface)]
    # Outward normals at the surface nodes; domain-outward points into the body.
    ang = np.arctan2(surface_pts[:, 1], surface_pts[:, 0])
    normals = [-body.unit_normal(ang)]

    # Graded layers.  Surface-following offsets until the offset curve is
    # nearly circular, plain circles after that.
    d_circ = (body.max_radius - body.min_radius) + 2.0 * h_surface
    normal_f = body.unit_normal(theta_f)
    d = 0.0
    band = 0
    ring_layers = []
    while True:
        s = h_surface * growth**band
        if s >= h_far:
            break
        for _ in range(layers_per_band):
            d += s
            ring_layers.append((d, s))
        band += 1
    s_last = h_surface * growth ** max(band - 1, 0)
    r_stop = body.max_radius + (ring_layers[-1][0] if ring_layers else 0.0)

    for d, s in ring_layers:
        if d < d_circ:
            offset = surf_fine + d * normal_f
            dist, _ = surf_tree.query(offset)
            keep = (np.abs(dist - d) < 0.25 * d) & (body.radial_excess(offset) > 0.3 * d)
            if np.all(keep):
                ring = _resample_polyline(offset, s, closed=True)
            else:
                ring = []
                idx = np.nonzero(keep)[0]
                if idx.size:
                    # contiguous runs in index space, wrapping across 0
                    breaks = np.nonzero(np.diff(idx) > 1)[0]
                    runs = np.split(idx, breaks + 1)
                    if len(runs) > 1 and runs[0][0] == 0 and runs[-1][-1] == n_fine - 1:
                        runs[0] = np.concatenate([runs[-1], runs[0] + n_fine])
                        runs = runs[:-1]
                    for run in runs:
                        pts = offset[run % n_fine]
                        res = _resample_polyline(pts, s, closed=False)
                        if len(res):
                            ring.append(res)
                ring = np.vstack(ring) if ring else np.empty((0, 2))
        else:
            radius = body.max_radius + d
            count = max(int(round(2.0 * math.pi * radius / s)), 8)
            th = 2.0 * math.pi * np.arange(count) / count
            ring = radius * np.column_stack([np.cos(th), np.sin(th)])
        inside_box = (
            (ring[:, 0] > x0 + 0.5 * s)
            & (ring[:, 0] < x1 - 0.5 * s)
            & (ring[:, 1] > y0 + 0.5 * s)
            & (ring[:, 1] < y1 - 0.5 * s)
        )
        ring = ring[inside_box]
        if len(ring) == 0:
            continue
        pos.append(ring)
        tags.append(np.full(len(ring), Tag.INTERIOR, dtype=np.int64))
        spacing.append(np.full(len(ring), s))
        normals.append(np.zeros((len(ring), 2)))

    # Far-field lattice, with a disk left to the ring region.
    lattice = gen_rectangle_nodes(
        (x0, x1, y0, y1),
        h_far,
        side_tags={"left": Tag.INLET, "right": Tag.OUTLET, "bottom": Tag.SLIP, "top": Tag.SLIP},
        dilation_factor=dilation_factor,
    )
    r_excl = r_stop + 0.5 * (s_last + lattice.meta["hx"])
    keep = np.hypot(lattice.positions[:, 0], lattice.positions[:, 1]) > r_excl
    pos.append(lattice.positions[keep])
    tags.append(lattice.tags[keep])
    spacing.append(lattice.spacing[keep])
    normals.append(lattice.normals[keep])

    pos = np.vstack(pos)
    tags = np.concatenate(tags)
    spacing = np.concatenate(spacing)
    normals = np.vstack(normals)

    # Merge accidental close pairs (band seams).  Boundary-tagged nodes win.
    tree = cKDTree(pos)
    drop = np.zeros(len(pos), dtype=bool)
    merged = 0
    for i, j in sorted(tree.query_pairs(0.2 * float(max(spacing.max(), h_surface)))):
        thr = 0.2 * min(spacing[i], spacing[j])
        if drop[i] or drop[j]:
            continue
        if np.linalg.norm(pos[i] - pos[j]) >= thr:
            continue
        if tags[j] == Tag.INTERIOR:
            drop[j] = True
        elif tags[i] == Tag.INTERIOR:
            drop[i] = True
        else:
            continue  # two boundary nodes, keep both
        merged += 1
    if merged:
        log.warning("merged %d node pairs closer than 0.2 * local h", merged)
        pos, tags, spacing, normals = pos[~drop], tags[~drop], spacing[~drop], normals[~drop]

    return NodeSet(
        positions=pos,
        tags=tags,
        spacing=spacing,
        dilation=dilation_factor * spacing,
        normals=normals,
        geometry=CylinderFluidGeometry(box_geometry(x0, x1, y0, y1), body),
        meta={
            "body": body,
            "h_surface": h_surface,
            "h_far": lattice.meta["hx"],
            "n_surface": m_surface,
            "r_stop": r_stop,
            "merged_pairs": merged,
        },
    )


def min_separation_ratio(nodes: NodeSet) -> float:
    """min over node pairs of distance / min(h_i, h_j); > 0.2 by contract."""
    tree = nodes.tree()
    dist, idx = tree.query(nodes.positions, k=2)
    d = dist[:, 1]
    other = idx[:, 1]
    ratio = d / np.minimum(nodes.spacing, nodes.spacing[other])
    return float(ratio.min())
