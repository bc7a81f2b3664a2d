"""Field diagnostics and benchmark measurements.

Everything here is a pure function of a state snapshot; nothing mutates the
solver.  Sampling off the node set goes through the same local-fit rows the
solver uses, so post-processed quantities carry the discretization's own
accuracy.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .mls import MlsParams, build_row_table, node_derivative_matrices
from .nodes import BumpyBody, NodeSet, Tag
from .solver import SparseOperator, assemble_laplacian, linear_solve

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ForceRecord:
    """Integrated surface forces at one instant, per unit span."""

    t: float
    f_d_pressure: float
    f_d_viscous: float
    f_l: float
    c_d: float
    c_l: float
    norm: str = "standard"
    denom: float = 1.0  # the force scale dividing F to give C

    @property
    def f_d(self):
        return self.f_d_pressure + self.f_d_viscous


@dataclass(frozen=True)
class EddyRecord:
    index: int
    r: float        # center distance from the wedge vertex
    intensity: float  # |u| on the dividing streamline below this eddy
    psi: float      # stream function value at the center


def taylor_exact(x, y, t, variant="corrected"):
    """Decaying-vortex analytic solution at unit viscosity.

    The velocity decays like exp(-2t).  Two pressure variants exist:
    ``corrected`` (-1/4 (cos 2x + cos 2y) e^{-4t}) satisfies the momentum
    equations; ``printed`` (-1/4 (cos 2x + cos y) e^{-4t}) does not and is
    kept only for comparison.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    decay = np.exp(-2.0 * t)
    u = -np.cos(x) * np.sin(y) * decay
    v = np.sin(x) * np.cos(y) * decay
    if variant == "corrected":
        p = -0.25 * (np.cos(2.0 * x) + np.cos(2.0 * y)) * decay**2
    elif variant == "printed":
        p = -0.25 * (np.cos(2.0 * x) + np.cos(y)) * decay**2
    else:
        raise ValueError(f"unknown pressure variant {variant!r}")
    return u, v, p


def error_norms(state, exact, mask=None):
    """Max and root-mean-square nodal errors per variable.

    ``exact`` is an (u, v, p) triple on the same nodes.  ``mask`` restricts
    the norms (pass the interior mask to exclude prescribed boundary rows).
    Pressure is compared as stored; align its gauge first when the reference
    pressure is only defined up to a constant.
    """
    out = {}
    for name, have, want in zip("uvp", (state.u, state.v, state.p), exact):
        d = np.asarray(have) - np.asarray(want)
        if mask is not None:
            d = d[mask]
        out[name] = (float(np.max(np.abs(d))), float(np.sqrt(np.mean(d**2))))
    return out


def convergence_order(errors, params):
    """Least-squares slope of log error against log parameter."""
    errors = np.asarray(errors, dtype=float)
    params = np.asarray(params, dtype=float)
    if len(errors) != len(params) or len(errors) < 3:
        raise ValueError("need at least 3 matching (error, parameter) points")
    if np.any(errors <= 0.0):
        raise ValueError("errors must be positive")
    if np.any(np.diff(params) >= 0.0) or np.any(params <= 0.0):
        raise ValueError("parameters must be positive and strictly decreasing")
    slope = np.polyfit(np.log(params), np.log(errors), 1)[0]
    return float(slope)


def _interp_rows(points, nodes, params, derivs=((0, 0),)):
    return build_row_table(np.atleast_2d(points), nodes, params or MlsParams(), derivs=derivs)


def sample_fields(points, nodes, params, *fields):
    """Interpolate nodal fields at arbitrary points, snapping onto nodes.

    A sample that coincides with a node (within 1e-9 of the local spacing)
    takes the nodal value directly, so prescribed boundary values survive
    sampling exactly; everything else goes through the local fit.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    dist, nearest = nodes.tree().query(points)
    snap = dist < 1e-9 * nodes.spacing[nearest]
    rows = None
    if not snap.all():
        rows = build_row_table(points, nodes, params or MlsParams(), skip=snap)[(0, 0)]
    out = []
    for f in fields:
        f = np.asarray(f, dtype=float)
        vals = rows @ f if rows is not None else np.zeros(len(points))
        vals[snap] = f[nearest[snap]]
        out.append(vals)
    return out[0] if len(out) == 1 else out


def centerline_profiles(state, nodes, params=None, n_samples=129):
    """u along the vertical mid line and v along the horizontal mid line."""
    x0, y0 = nodes.positions.min(axis=0)
    x1, y1 = nodes.positions.max(axis=0)
    xm, ym = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    ys = np.linspace(y0, y1, n_samples)
    xs = np.linspace(x0, x1, n_samples)
    u_line = sample_fields(np.column_stack([np.full(n_samples, xm), ys]), nodes, params, state.u)
    v_line = sample_fields(np.column_stack([xs, np.full(n_samples, ym)]), nodes, params, state.v)
    return {"y": ys, "u": u_line, "x": xs, "v": v_line}


def vorticity(state, rows):
    """Nodal curl from the derivative row tables."""
    return rows[(1, 0)] @ state.v - rows[(0, 1)] @ state.u


def stream_function_operator(nodes, rows, precond="ilu"):
    """Laplacian with zero-Dirichlet rows on every boundary node."""
    from scipy.sparse import diags

    lap = assemble_laplacian(nodes, rows).matrix
    interior = nodes.interior_mask.astype(float)
    mat = (diags(interior) @ lap + diags(1.0 - interior)).tocsr()
    return SparseOperator(mat, "stream-function", zero_rhs_mask=nodes.boundary_mask,
                          preconditioner=precond)


def stream_function(omega, nodes, rows, tol=1e-12, op=None, max_iter=5000):
    """Solve Lap(psi) = -omega with psi = 0 on the whole boundary.

    Valid for the cavity cases, where every boundary segment is a
    streamline.  Tight default tolerance: the wedge eddy sequence decays by
    more than two orders per eddy and sloppy solves bury the small ones.
    """
    if op is None:
        op = stream_function_operator(nodes, rows)
    rhs = -np.asarray(omega, dtype=float).copy()
    rhs[op.zero_rhs_mask] = 0.0
    return linear_solve(op, rhs, tol, max_iter)


def find_moffatt_eddies(psi, u, nodes, params=None, rel_floor=1e-10):
    """Corner eddy centers and intensities along the wedge bisector.

    Walks the bisector from the lid toward the vertex; eddy centers are
    sign-alternating extrema of psi (quadratically refined), r_n their
    distance from the vertex.  The intensity I_n is |u| at the first psi
    zero crossing vertex-side of center n, the dividing streamline between
    eddy n and eddy n+1.  Returns records ordered outermost first.

    The outermost extremum is the lid-driven primary vortex, not part of
    the corner sequence, and is dropped: successive corner eddies follow
    the geometric center-distance and intensity progressions, while the
    primary-to-first-corner ratios depend on the lid and wedge depth.
    """
    height = nodes.meta["height"]
    dy = nodes.meta["dy"]
    lo = nodes.meta.get("truncated_at", 0.0) + 2.0 * dy
    s = np.arange(lo, height - dy, 0.5 * dy)
    pts = np.column_stack([np.zeros_like(s), s])
    rows = _interp_rows(pts, nodes, params)[(0, 0)]
    psi_s = rows @ np.asarray(psi, dtype=float)
    u_s = rows @ np.asarray(u, dtype=float)

    floor = np.max(np.abs(psi_s)) * rel_floor
    records = []
    last_sign = 0
    # indices of interior local extrema, scanned lid -> vertex
    d = np.diff(psi_s)
    for i in range(len(s) - 2, 0, -1):
        if d[i] * d[i - 1] > 0.0 or abs(psi_s[i]) <= floor:
            continue
        sign = 1 if psi_s[i] > 0.0 else -1
        if sign == last_sign:
            continue
        denom = psi_s[i + 1] - 2.0 * psi_s[i] + psi_s[i - 1]
        shift = 0.0
        if denom != 0.0:
            shift = -0.25 * dy * (psi_s[i + 1] - psi_s[i - 1]) / denom
        r_n = s[i] + shift
        # dividing streamline: first sign change of psi below the center
        intensity = np.nan
        for k in range(i - 1, 0, -1):
            if psi_s[k] == 0.0 or psi_s[k] * psi_s[k + 1] < 0.0:
                w = psi_s[k + 1] / (psi_s[k + 1] - psi_s[k])
                intensity = abs((1.0 - w) * u_s[k + 1] + w * u_s[k])
                break
        records.append(
            EddyRecord(len(records), float(r_n), float(intensity), float(psi_s[i]))
        )
        last_sign = sign
    records = [
        EddyRecord(k + 1, rec.r, rec.intensity, rec.psi)
        for k, rec in enumerate(records[1:])
    ]
    if len(records) < 2:
        log.warning("resolved only %d corner eddies; ratios unavailable", len(records))
    ratios = {
        "r": [a.r / b.r for a, b in zip(records, records[1:])],
        "intensity": [
            a.intensity / b.intensity
            for a, b in zip(records, records[1:])
            if np.isfinite(a.intensity) and np.isfinite(b.intensity) and b.intensity > 0.0
        ],
    }
    return records, ratios


class SurfaceProbe:
    """Reusable traction integrator over the exact body curve.

    The interpolation rows at the boundary samples depend only on the node
    set, so they are built once and reused for every force evaluation of a
    run.  Sampling density is at least 16 points per bump.
    """

    def __init__(self, nodes, body: BumpyBody, re, params=None, n_samples=None,
                 norm="standard", u_ref=1.0):
        if n_samples is None:
            n_samples = max(720, 16 * body.mb)
        self.body = body
        self.re = float(re)
        self.norm = norm
        self.u_ref = float(u_ref)
        self.theta = np.linspace(0.0, 2.0 * np.pi, n_samples, endpoint=False)
        self.normal = body.unit_normal(self.theta)
        self.speed = np.linalg.norm(body.tangent(self.theta), axis=-1)
        self.rows = _interp_rows(body.point(self.theta), nodes, params,
                                 derivs=((0, 0), (1, 0), (0, 1)))

    def record(self, state) -> ForceRecord:
        """Integrate -p n + (1/Re) du/dn by the trapezoid rule."""
        nx, ny = self.normal[:, 0], self.normal[:, 1]
        p_s = self.rows[(0, 0)] @ state.p
        dudn = nx * (self.rows[(1, 0)] @ state.u) + ny * (self.rows[(0, 1)] @ state.u)
        dvdn = nx * (self.rows[(1, 0)] @ state.v) + ny * (self.rows[(0, 1)] @ state.v)
        nu = 1.0 / self.re
        dtheta = self.theta[1] - self.theta[0]
        # closed curve, uniform parameter: trapezoid = plain sum
        f_px = float(np.sum(-p_s * nx * self.speed) * dtheta)
        f_vx = float(np.sum(nu * dudn * self.speed) * dtheta)
        f_l = float(np.sum((-p_s * ny + nu * dvdn) * self.speed) * dtheta)
        coeff = drag_coefficients(f_px + f_vx, f_l, norm=self.norm, u_ref=self.u_ref,
                                  diameter=2.0 * self.body.radius0,
                                  radius_max=self.body.max_radius)
        return ForceRecord(float(state.t), f_px, f_vx, f_l,
                           coeff["c_d"], coeff["c_l"], norm=self.norm,
                           denom=coeff["denom"])


def surface_forces(state, nodes, body: BumpyBody, re, params=None, n_samples=None,
                   norm="standard", u_ref=1.0):
    """One-shot traction integral; see :class:`SurfaceProbe`."""
    probe = SurfaceProbe(nodes, body, re, params, n_samples, norm, u_ref)
    return probe.record(state)


def drag_coefficients(f_d, f_l, norm="standard", u_ref=1.0, diameter=1.0, radius_max=0.55):
    """Force nondimensionalization.

    ``standard``: F / (1/2 u^2 D).  ``max-radius``: F / (u^2 R) with R the
    largest body radius, the convention used for the bump-count sweeps.
    """
    if norm == "standard":
        denom = 0.5 * u_ref**2 * diameter
    elif norm == "max-radius":
        denom = u_ref**2 * radius_max
    else:
        raise ValueError(f"unknown drag normalization {norm!r}")
    return {"c_d": f_d / denom, "c_l": f_l / denom, "norm": norm, "denom": denom}


def power_spectrum(times, series, transient_fraction=0.5):
    """Windowed power spectral density of a uniformly sampled history."""
    times = np.asarray(times, dtype=float)
    series = np.asarray(series, dtype=float)
    if len(times) != len(series) or len(times) < 8:
        raise ValueError("need a uniformly sampled history of at least 8 points")
    if not 0.0 <= transient_fraction < 1.0:
        raise ValueError(f"transient_fraction must lie in [0, 1), got {transient_fraction}")
    start = int(len(series) * transient_fraction)
    x = series[start:] - np.mean(series[start:])
    dt = np.diff(times[start:])
    if np.max(np.abs(dt - dt[0])) > 1e-9 * abs(dt[0]):
        raise ValueError("history is not uniformly sampled")
    win = np.hanning(len(x))
    spec = np.abs(np.fft.rfft(x * win)) ** 2
    freqs = np.fft.rfftfreq(len(x), d=dt[0])
    return freqs, spec


def strouhal(times, lift, transient_fraction=0.5, min_peak_ratio=5.0,
             diameter=1.0, u_ref=1.0):
    """Dominant shedding frequency of the lift history, as f D / u.

    Mean removal and a taper window precede the transform; the peak must
    rise at least min_peak_ratio above the median spectral level, and its
    frequency is refined by a parabolic fit through the adjacent bins.
    """
    freqs, spec = power_spectrum(times, lift, transient_fraction)
    body = spec[1:]
    if not np.any(body > 0.0):
        raise ValueError("no periodic shedding: spectrum is empty")
    k = 1 + int(np.argmax(body))
    med = float(np.median(body))
    if med > 0.0 and spec[k] < min_peak_ratio * med:
        raise ValueError(
            f"no periodic shedding: peak/median {spec[k] / med:.2f} below {min_peak_ratio}"
        )
    f = freqs[k]
    if 1 <= k < len(spec) - 1:
        with np.errstate(divide="ignore"):
            la, lb, lc = np.log(spec[k - 1 : k + 2])
        denom = la - 2.0 * lb + lc
        if np.isfinite(denom) and denom != 0.0:
            f += 0.5 * (la - lc) / denom * (freqs[1] - freqs[0])
    return float(f * diameter / u_ref)


def cp_profile(state, nodes, body: BumpyBody, params=None, n_samples=None, u_ref=1.0):
    """Surface pressure coefficient against the curve parameter.

    The reference pressure is the nodal value at the inlet node nearest the
    inlet mid height.
    """
    if n_samples is None:
        n_samples = max(720, 16 * body.mb)
    inlet = np.flatnonzero(nodes.tags == Tag.INLET)
    if inlet.size == 0:
        raise ValueError("no inlet-tagged nodes to take the reference pressure from")
    ys = nodes.positions[inlet, 1]
    ref = inlet[np.argmin(np.abs(ys - 0.5 * (ys.min() + ys.max())))]
    p_inf = state.p[ref]
    theta = np.linspace(0.0, 2.0 * np.pi, n_samples, endpoint=False)
    rows = _interp_rows(body.point(theta), nodes, params)
    p_s = rows[(0, 0)] @ state.p
    return theta, (p_s - p_inf) / (0.5 * u_ref**2)


def kinetic_energy(state):
    return 0.5 * float(np.mean(state.u**2 + state.v**2))


def node_rows(nodes, params=None):
    """Derivative row tables at the nodes (interpolation plus first/second)."""
    return node_derivative_matrices(nodes, params or MlsParams())
