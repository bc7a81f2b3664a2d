"""Incompressible Navier-Stokes time stepper on scattered nodes.

One step advances (u, v) by a pressure-free predictor and a projection:

    A u* = r,   A = (1/dt) I - 1/(2 Re) Lap          (Crank-Nicolson viscous)
    r = (1/dt) u + 1/(2 Re) Lap u - conv(n+1/2)
    Lc phi = (1/dt) div(u*)                          (projection)
    u(n+1) = u* - dt grad(phi)
    p(n+1) = phi - dt/(2 Re) Lap phi                 (pressure recovery)

Convection is two-level extrapolated (single level on the first step).  In
the default form the predictor carries no pressure term at all; phi is the
full pseudo-pressure recomputed from scratch every step and the physical
pressure is recovered from it, never fed back.  The incremental variant
(``predictor="incremental"``) adds the lagged gradient -grad(p) to r and
accumulates p += phi - dt/(2 Re) Lap phi instead.

The two variants trade accuracy against robustness.  Incremental: phi is
O(dt), so the O(dt grad phi) slip that the projection leaves on Dirichlet
boundaries is O(dt^2) and the velocity stays second order in time; but the
lagged gradient closes a feedback loop through the projection, and on
strongly irregular node arrangements (graded cylinder rings, fine wedge
clouds), where the projector is oblique rather than orthogonal, that loop
amplifies: a slowly growing flip-flop mode appears long before any CFL
limit.  Pressure-free: no loop, stable on every cloud tried, but the slip
is O(dt) and the velocity drops to first order in time.  Benchmarks on
regular lattices that need temporal accuracy use the incremental form;
benchmarks on irregular clouds seek steady or statistically steady states
and use the default.

Lap is the local-fit Laplacian row sum; div, grad and Lc all go through the
virtual staggered stencil, with Lc the exact matrix composition of div and
grad.  Because of that composition the corrected velocity satisfies the
staggered-style divergence at interior nodes to solver precision, which the
stepper checks after every step.

Boundary velocities are re-imposed exactly after the predictor, so Dirichlet
nodes carry their prescribed values bit-for-bit.  The pressure variable phi
gets homogeneous normal-derivative rows on the boundary, one pinned
reference node (a boundary node, so no interior divergence equation is
sacrificed) or a zero-Dirichlet outlet where present.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix, diags, identity
from scipy.sparse.linalg import LinearOperator, bicgstab, gmres, spilu, splu

from .mls import MlsParams, node_derivative_matrices
from .nodes import NodeSet, Tag
from .stencil import StencilTable

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Linear solve failed (breakdown, stagnation or non-finite values)."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class ZeroGradient:
    """Per-component boundary condition: suppress one first derivative."""

    axis: tuple  # (1, 0) for d/dx = 0, (0, 1) for d/dy = 0


@dataclass
class BcSpec:
    """Boundary conditions per tag.

    ``velocity[tag] = (u_cond, v_cond)`` where each condition is a constant,
    a callable ``f(x, y, t) -> values`` or a :class:`ZeroGradient`.
    ``phi_dirichlet`` lists tags whose pressure-correction rows become phi=0
    instead of the default homogeneous normal derivative.
    """

    velocity: dict
    phi_dirichlet: tuple = ()


def bc_cavity(lid_speed=1.0) -> BcSpec:
    return BcSpec(velocity={Tag.LID: (lid_speed, 0.0), Tag.WALL: (0.0, 0.0)})


def bc_wedge(lid_speed=1.0) -> BcSpec:
    return bc_cavity(lid_speed)


def bc_cylinder(u_inf=1.0) -> BcSpec:
    dxx = ZeroGradient((1, 0))
    dyy = ZeroGradient((0, 1))
    return BcSpec(
        velocity={
            Tag.INLET: (u_inf, 0.0),
            Tag.BODY: (0.0, 0.0),
            Tag.OUTLET: (dxx, dxx),
            Tag.SLIP: (dyy, 0.0),
        },
        phi_dirichlet=(Tag.OUTLET,),
    )


def bc_profiles(u_fn, v_fn, tags=(Tag.WALL,)) -> BcSpec:
    return BcSpec(velocity={t: (u_fn, v_fn) for t in tags})


@dataclass
class FlowState:
    """Nodal fields plus the lagged convection term."""

    u: np.ndarray
    v: np.ndarray
    p: np.ndarray
    phi: np.ndarray
    u_star: np.ndarray
    v_star: np.ndarray
    conv_prev: np.ndarray | None  # (2, n) or None before the first step
    t: float = 0.0
    step: int = 0

    @classmethod
    def rest(cls, n: int) -> "FlowState":
        z = np.zeros(n)
        return cls(z.copy(), z.copy(), z.copy(), z.copy(), z.copy(), z.copy(), None)

    @classmethod
    def from_velocity(cls, u, v, p=None) -> "FlowState":
        n = len(u)
        p = np.zeros(n) if p is None else np.asarray(p, dtype=float)
        z = np.zeros(n)
        return cls(np.asarray(u, float), np.asarray(v, float), p, z.copy(), z.copy(), z.copy(), None)


@dataclass
class SparseOperator:
    """CSR operator plus boundary-row bookkeeping and a cached preconditioner."""

    matrix: csr_matrix
    kind: str = "generic"
    zero_rhs_mask: np.ndarray | None = None  # rows whose rhs is forced to zero
    dirichlet_mask: np.ndarray | None = None  # rows carrying prescribed values
    pin_index: int | None = None
    preconditioner: str = "ilu"
    method: str = "krylov"  # or "direct": sparse LU, factored once, reused
    last_stats: dict | None = None
    _factor: object = None
    _lu: object = None

    def factor(self):
        if self._factor is None:
            self._factor = _make_preconditioner(self.matrix, self.preconditioner, self.kind)
        return self._factor

    def lu(self):
        if self._lu is None:
            self._lu = splu(self.matrix.tocsc())
        return self._lu


def _make_preconditioner(matrix, name, kind):
    n = matrix.shape[0]
    if name == "none":
        return None
    if name == "ilu":
        try:
            ilu = spilu(matrix.tocsc(), drop_tol=1e-5, fill_factor=10.0)
            return LinearOperator((n, n), ilu.solve)
        except (RuntimeError, MemoryError) as exc:  # singular pivot or too dense
            log.warning("ILU for %s failed (%s); falling back to Jacobi", kind, exc)
            name = "jacobi"
    if name == "jacobi":
        d = matrix.diagonal()
        d = np.where(np.abs(d) > 1e-300, d, 1.0)
        inv = 1.0 / d
        return LinearOperator((n, n), lambda x: inv * x)
    raise ValueError(f"unknown preconditioner {name!r}")


def linear_solve(op: SparseOperator, rhs, tol, max_iter=5000, x0=None) -> np.ndarray:
    """Krylov solve to a relative 2-norm residual of ``tol``.

    BiCGSTAB first; on breakdown or stagnation one restarted GMRES attempt.
    Raises :class:`SolverError` with the final residual on failure or on
    non-finite values.
    """
    b = np.asarray(rhs, dtype=float)
    if not np.all(np.isfinite(b)):
        raise SolverError("right-hand side contains non-finite entries")
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        op.last_stats = {"iterations": 0, "residual": 0.0, "method": "trivial"}
        return np.zeros_like(b)
    if op.method == "direct":
        lu = op.lu()
        x = lu.solve(b)
        res = np.linalg.norm(b - op.matrix @ x) / bnorm
        if res > tol:  # one refinement pass mops up factorisation round-off
            x = x + lu.solve(b - op.matrix @ x)
            res = np.linalg.norm(b - op.matrix @ x) / bnorm
        if not np.all(np.isfinite(x)):
            raise SolverError(f"{op.kind}: non-finite solution", residual=res)
        if res > tol:
            raise SolverError(f"{op.kind}: direct solve residual {res:.3e} above {tol:g}", residual=res)
        op.last_stats = {"iterations": 0, "residual": float(res), "method": "direct"}
        return x
    m = op.factor()
    count = {"n": 0}

    def cb(_):
        count["n"] += 1

    x, info = bicgstab(op.matrix, b, x0=x0, rtol=tol, atol=0.0, maxiter=max_iter, M=m, callback=cb)
    method = "bicgstab"
    res = np.linalg.norm(b - op.matrix @ x) / bnorm if np.all(np.isfinite(x)) else np.inf
    if info != 0 or res > tol:
        x2, info2 = gmres(
            op.matrix, b, x0=x0, rtol=tol, atol=0.0, maxiter=max_iter, restart=80, M=m
        )
        res2 = np.linalg.norm(b - op.matrix @ x2) / bnorm if np.all(np.isfinite(x2)) else np.inf
        if res2 < res:
            x, res, method = x2, res2, "gmres"
    if not np.all(np.isfinite(x)):
        raise SolverError(f"{op.kind}: non-finite solution", residual=res)
    if res > tol:
        raise SolverError(
            f"{op.kind}: no convergence to {tol:g} within {max_iter} iterations "
            f"(residual {res:.3e})",
            residual=res,
        )
    op.last_stats = {"iterations": count["n"], "residual": float(res), "method": method}
    return x


def assemble_laplacian(nodes: NodeSet, rows) -> SparseOperator:
    """Local-fit Laplacian rows at every node, no boundary handling."""
    return SparseOperator(matrix=(rows[(2, 0)] + rows[(0, 2)]).tocsr(), kind="laplacian")


def assemble_helmholtz(dt, re, laplacian: SparseOperator) -> SparseOperator:
    """(1/dt) I - 1/(2 Re) Lap on all rows."""
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    if re <= 0.0:
        raise ValueError(f"re must be positive, got {re}")
    n = laplacian.matrix.shape[0]
    mat = (identity(n, format="csr") / dt - laplacian.matrix / (2.0 * re)).tocsr()
    return SparseOperator(matrix=mat, kind="helmholtz")


def _bc_conditions(nodes: NodeSet, bc: BcSpec):
    """Per-tag condition lookup with validation against the node set."""
    present = {Tag(t) for t in np.unique(nodes.tags) if t != Tag.INTERIOR}
    missing = present - set(bc.velocity)
    if missing:
        raise ValueError(f"no boundary condition for tags {sorted(t.name for t in missing)}")
    return {t: bc.velocity[t] for t in present}


def apply_bcs(op: SparseOperator, nodes: NodeSet, bc: BcSpec, component: str, rows) -> SparseOperator:
    """Replace boundary rows of a Helmholtz operator for one velocity component.

    Dirichlet conditions become identity rows; :class:`ZeroGradient` becomes
    the corresponding first-derivative row of the node's local fit.
    """
    comp = {"u": 0, "v": 1}[component]
    n = nodes.n
    conditions = _bc_conditions(nodes, bc)
    dirichlet = np.zeros(n, dtype=bool)
    zgrad = {}
    for tag, conds in conditions.items():
        cond = conds[comp]
        mask = nodes.tags == tag
        if isinstance(cond, ZeroGradient):
            zgrad.setdefault(cond.axis, np.zeros(n, dtype=bool))
            zgrad[cond.axis] |= mask
        else:
            dirichlet |= mask
    keep = diags(nodes.interior_mask.astype(float))
    mat = keep @ op.matrix + diags(dirichlet.astype(float))
    for axis, mask in zgrad.items():
        mat = mat + diags(mask.astype(float)) @ rows[axis]
    zero_rhs = nodes.boundary_mask & ~dirichlet
    return SparseOperator(
        matrix=mat.tocsr(),
        kind=f"helmholtz-{component}",
        zero_rhs_mask=zero_rhs,
        dirichlet_mask=dirichlet,
        preconditioner=op.preconditioner,
    )


def build_phi_operator(nodes: NodeSet, st: StencilTable, rows, bc: BcSpec, precond="ilu") -> SparseOperator:
    """Pressure-correction operator: composed divergence-of-gradient rows at
    interior nodes, normal-derivative or zero-Dirichlet rows on the boundary,
    and one pinned boundary node when no Dirichlet row fixes the level."""
    n = nodes.n
    lc = st.composed_laplacian()
    keep = diags(nodes.interior_mask.astype(float))
    phi_dir = np.zeros(n, dtype=bool)
    for tag in bc.phi_dirichlet:
        phi_dir |= nodes.tags == tag
    neumann = nodes.boundary_mask & ~phi_dir
    nx, ny = nodes.normals[:, 0], nodes.normals[:, 1]
    mat = (
        keep @ lc
        + diags(phi_dir.astype(float))
        + diags(np.where(neumann, nx, 0.0)) @ rows[(1, 0)]
        + diags(np.where(neumann, ny, 0.0)) @ rows[(0, 1)]
    ).tocsr()
    pin = None
    if not phi_dir.any():
        pin = int(np.nonzero(nodes.boundary_mask)[0][0])
        mat = mat.tolil()
        mat.rows[pin] = [pin]
        mat.data[pin] = [1.0]
        mat = mat.tocsr()
    return SparseOperator(
        matrix=mat,
        kind="pressure-correction",
        zero_rhs_mask=nodes.boundary_mask.copy(),
        pin_index=pin,
        preconditioner=precond,
    )


def boundary_values(nodes: NodeSet, bc: BcSpec, t):
    """Prescribed velocity values at time t; NaN rows where none applies."""
    gu = np.full(nodes.n, np.nan)
    gv = np.full(nodes.n, np.nan)
    x, y = nodes.positions[:, 0], nodes.positions[:, 1]
    for tag, (ucond, vcond) in _bc_conditions(nodes, bc).items():
        mask = nodes.tags == tag
        for arr, cond in ((gu, ucond), (gv, vcond)):
            if isinstance(cond, ZeroGradient):
                continue
            arr[mask] = cond(x[mask], y[mask], t) if callable(cond) else cond
    return gu, gv


def compute_rhs(state: FlowState, disc, dt, re, predictor="pressure_free"):
    """Predictor right-hand side at interior nodes.

    Two-level extrapolated convection (single level on the first step); the
    current convection is stored into ``state.conv_prev`` for the next call.
    The default carries no pressure term (the projection supplies the full
    gradient); ``predictor="incremental"`` subtracts the lagged gradient of
    the accumulated pressure.  See the module docstring for the trade.
    """
    conv = disc.st.convection(state.u, state.v)
    if state.conv_prev is None:
        conv_half = conv
    else:
        conv_half = 1.5 * conv - 0.5 * state.conv_prev
    state.conv_prev = conv
    visc_u = disc.lap.matrix @ state.u
    visc_v = disc.lap.matrix @ state.v
    ru = state.u / dt + visc_u / (2.0 * re) - conv_half[0]
    rv = state.v / dt + visc_v / (2.0 * re) - conv_half[1]
    if predictor == "incremental":
        gpx, gpy = disc.st.gradient(state.p)
        ru -= gpx
        rv -= gpy
    return ru, rv


class Discretization:
    """Derivative row tables and the virtual-point stencil for one node set."""

    def __init__(self, nodes: NodeSet, params: MlsParams | None = None, offset_factor=0.5):
        self.nodes = nodes
        self.params = params or MlsParams()
        self.rows = node_derivative_matrices(nodes, self.params)
        self.st = StencilTable(nodes, self.params, offset_factor=offset_factor)
        self.lap = assemble_laplacian(nodes, self.rows)


class NsSolver:
    """Assembled operators and the time stepper for one configuration."""

    def __init__(
        self,
        nodes: NodeSet,
        bc: BcSpec,
        dt,
        re,
        params: MlsParams | None = None,
        offset_factor=0.5,
        helmholtz_tol=1e-10,
        poisson_tol=1e-8,
        max_iter=5000,
        precond="ilu",
        predictor="pressure_free",
        method="krylov",
        disc: Discretization | None = None,
    ):
        if predictor not in ("pressure_free", "incremental"):
            raise ValueError(f"unknown predictor {predictor!r}")
        if method not in ("krylov", "direct"):
            raise ValueError(f"unknown solve method {method!r}")
        self.nodes = nodes
        self.bc = bc
        self.dt = float(dt)
        self.re = float(re)
        self.helmholtz_tol = helmholtz_tol
        self.poisson_tol = poisson_tol
        self.max_iter = max_iter
        self.predictor = predictor
        self.disc = disc or Discretization(nodes, params, offset_factor)

        helm = assemble_helmholtz(self.dt, self.re, self.disc.lap)
        helm.preconditioner = precond
        self.op_u = apply_bcs(helm, nodes, bc, "u", self.disc.rows)
        self.op_v = apply_bcs(helm, nodes, bc, "v", self.disc.rows)
        if (self.op_u.matrix - self.op_v.matrix).nnz == 0:
            self.op_v = self.op_u  # identical systems share the factorisation
        self.op_phi = build_phi_operator(nodes, self.disc.st, self.disc.rows, bc, precond)
        self.op_u.method = self.op_v.method = self.op_phi.method = method
        self._log_diagonal_dominance()

    def _log_diagonal_dominance(self):
        mat = self.op_u.matrix
        diag = np.abs(mat.diagonal())
        offsum = np.asarray(np.abs(mat).sum(axis=1)).ravel() - diag
        frac = float(np.mean(diag >= offsum))
        log.info("helmholtz rows diagonally dominant: %.1f%%", 100.0 * frac)

    def initial_state(self, u=None, v=None, p=None) -> FlowState:
        n = self.nodes.n
        if u is None:
            state = FlowState.rest(n)
        else:
            state = FlowState.from_velocity(u, v, p)
        gu, gv = boundary_values(self.nodes, self.bc, 0.0)
        mu, mv = ~np.isnan(gu), ~np.isnan(gv)
        state.u[mu] = gu[mu]
        state.v[mv] = gv[mv]
        return state

    def step(self, state: FlowState):
        """One time step; returns (new_state, diagnostics dict)."""
        dt, re = self.dt, self.re
        nodes = self.nodes
        st = self.disc.st
        t_new = (state.step + 1) * dt
        gu, gv = boundary_values(nodes, self.bc, t_new)

        ru, rv = compute_rhs(state, self.disc, dt, re, self.predictor)
        for op, r, g in ((self.op_u, ru, gu), (self.op_v, rv, gv)):
            r[op.zero_rhs_mask] = 0.0
            r[op.dirichlet_mask] = g[op.dirichlet_mask]

        u_star = linear_solve(self.op_u, ru, self.helmholtz_tol, self.max_iter, x0=state.u)
        su = dict(self.op_u.last_stats)
        v_star = linear_solve(self.op_v, rv, self.helmholtz_tol, self.max_iter, x0=state.v)
        sv = dict(self.op_v.last_stats)
        # Exact boundary data before the projection; the projection identity
        # below then holds to solver precision, not just to helmholtz_tol.
        u_star[self.op_u.dirichlet_mask] = gu[self.op_u.dirichlet_mask]
        v_star[self.op_v.dirichlet_mask] = gv[self.op_v.dirichlet_mask]

        rhs_p = st.divergence(u_star, v_star) / dt
        rhs_p[self.op_phi.zero_rhs_mask] = 0.0
        rhs_norm = np.linalg.norm(rhs_p)
        # Post-step divergence is dt * (poisson residual); budget half the
        # allowed 10x so the check passes with margin.
        tol_eff = self.poisson_tol
        if rhs_norm > 0.0:
            tol_eff = min(tol_eff, 5.0 * self.poisson_tol / (dt * rhs_norm))
        tol_eff = max(tol_eff, 1e-13)
        phi = linear_solve(self.op_phi, rhs_p, tol_eff, self.max_iter, x0=state.phi)
        sp = dict(self.op_phi.last_stats)

        gx, gy = st.gradient(phi)
        u_new = u_star - dt * gx
        v_new = v_star - dt * gy

        # dt/(2 Re) * Lap(phi) evaluated through the Poisson equation itself:
        # Lc phi = div(u*)/dt, so the update term is div(u*)/(2 Re).  The
        # wide local-fit Laplacian would add its corner noise to the reported
        # pressure for no benefit.  In the default form p is diagnostic only;
        # in the incremental form it accumulates and feeds the next predictor.
        p_new = phi - (dt / (2.0 * re)) * rhs_p
        if self.predictor == "incremental":
            p_new += state.p

        div = st.divergence(u_new, v_new)
        interior = nodes.interior_mask
        max_div = float(np.max(np.abs(div[interior]))) if interior.any() else 0.0
        du = float(np.max(np.abs(u_new - state.u)))
        dv = float(np.max(np.abs(v_new - state.v)))
        speed = np.hypot(u_new, v_new)
        diag = {
            "step": state.step + 1,
            "t": t_new,
            "max_div": max_div,
            "div_limit": 10.0 * self.poisson_tol,
            "iters_u": su["iterations"],
            "iters_v": sv["iterations"],
            "iters_p": sp["iterations"],
            "res_u": su["residual"],
            "res_v": sv["residual"],
            "res_p": sp["residual"],
            "ke": 0.5 * float(np.mean(speed**2)),
            "max_vel": float(speed.max()),
            "du_dt": max(du, dv) / dt,
        }
        if max_div > diag["div_limit"]:
            imax = int(np.argmax(np.abs(div * interior)))
            log.warning(
                "post-step divergence %.3e exceeds 10 x poisson tol at node %d %s",
                max_div,
                imax,
                tuple(nodes.positions[imax]),
            )
            diag["div_violation"] = True
        new_state = FlowState(
            u=u_new,
            v=v_new,
            p=p_new,
            phi=phi,
            u_star=u_star,
            v_star=v_star,
            conv_prev=state.conv_prev,
            t=t_new,
            step=state.step + 1,
        )
        return new_state, diag
