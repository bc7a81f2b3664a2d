"""Benchmark orchestration: domain build, time march, artifacts.

One run follows the same shape for every case: generate nodes, assemble the
solver, march to the configured end condition while appending diagnostics,
then write the case-specific measurements.  Everything lands in the run's
output directory next to a ``resolved.cfg`` echo whose hash stamps every
data file.
"""

from __future__ import annotations

import dataclasses
import logging
import os
import signal

import numpy as np

from . import ghia, io as vio, postproc
from .config import ConfigError, RunConfig
from .mls import MlsParams
from .nodes import (
    DomainSpec,
    Tag,
    gen_cylinder_domain,
    gen_rectangle_nodes,
    gen_triangle_nodes,
)
from .solver import NsSolver, SolverError, bc_cavity, bc_cylinder, bc_profiles, bc_wedge

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOLVER = 2
EXIT_ACCEPTANCE = 3
EXIT_INTERRUPT = 130

TAYLOR_EXTENTS = (0.0, np.pi, 0.0, np.pi)
CAVITY_EXTENTS = (0.0, 1.0, 0.0, 1.0)

DIAG_COLUMNS = ("step", "t", "max_div", "div_limit", "iters_u", "iters_v",
                "iters_p", "res_u", "res_v", "res_p", "ke", "max_vel", "du_dt")


def resolve_outdir(cfg: RunConfig) -> str:
    """Config outdir, optionally re-rooted by VIPFLOW_OUTDIR."""
    root = os.environ.get("VIPFLOW_OUTDIR")
    out = cfg.outdir
    if root and not os.path.isabs(out):
        out = os.path.join(root, out)
    return out


def mls_params(cfg: RunConfig) -> MlsParams:
    return MlsParams(dilation_factor=cfg.dilation_factor, min_neighbors=cfg.min_neighbors)


def build_domain(cfg: RunConfig):
    """NodeSet and boundary conditions for the configured case."""
    if cfg.case == "taylor-box":
        if cfg.h <= 0.0:
            raise ConfigError("h: taylor-box needs a positive lattice spacing")
        extents = tuple(cfg.extents) or TAYLOR_EXTENTS
        nodes = gen_rectangle_nodes(extents, cfg.h, dilation_factor=cfg.dilation_factor)
        variant = cfg.taylor_variant

        def u_fn(x, y, t):
            return postproc.taylor_exact(x, y, t, variant)[0]

        def v_fn(x, y, t):
            return postproc.taylor_exact(x, y, t, variant)[1]

        return nodes, bc_profiles(u_fn, v_fn)
    if cfg.case == "square-cavity":
        if cfg.h <= 0.0:
            raise ConfigError("h: square-cavity needs a positive lattice spacing")
        extents = tuple(cfg.extents) or CAVITY_EXTENTS
        nodes = gen_rectangle_nodes(extents, cfg.h, side_tags={"top": Tag.LID},
                                    dilation_factor=cfg.dilation_factor)
        return nodes, bc_cavity(cfg.lid_speed)
    if cfg.case == "triangle-cavity":
        nodes = gen_triangle_nodes(cfg.apex_angle_deg, cfg.n_base,
                                   dilation_factor=cfg.dilation_factor)
        return nodes, bc_wedge(cfg.lid_speed)
    if cfg.case in ("circular-cylinder", "bumpy-cylinder"):
        spec = DomainSpec(case=cfg.case, radius=cfg.radius, gamma=cfg.gamma,
                          mb=cfg.mb, box=tuple(cfg.box))
        nodes = gen_cylinder_domain(spec, cfg.h_surface, growth=cfg.growth,
                                    h_far=cfg.h_far or None,
                                    dilation_factor=cfg.dilation_factor)
        return nodes, bc_cylinder()
    raise ConfigError(f"case: no domain builder for {cfg.case!r}")


def make_solver(cfg: RunConfig, nodes, bc) -> NsSolver:
    return NsSolver(
        nodes, bc, cfg.dt, cfg.re,
        params=mls_params(cfg),
        offset_factor=cfg.offset_factor,
        helmholtz_tol=cfg.helmholtz_tol,
        poisson_tol=cfg.poisson_tol,
        max_iter=cfg.max_iter,
        precond=cfg.precond,
        predictor=cfg.predictor,
        method=cfg.method,
    )


class _InterruptFlag:
    """SIGINT raises once, then restores default handling."""

    def __init__(self):
        self.hit = False
        self._old = None

    def __enter__(self):
        def handler(signum, frame):
            self.hit = True
            log.warning("interrupt received, flushing partial outputs")
            signal.signal(signal.SIGINT, self._old)

        try:
            self._old = signal.signal(signal.SIGINT, handler)
        except ValueError:  # not the main thread
            self._old = None
        return self

    def __exit__(self, *exc):
        if self._old is not None:
            signal.signal(signal.SIGINT, self._old)
        return False


class RunResult:
    def __init__(self):
        self.diagnostics = {k: [] for k in DIAG_COLUMNS}
        self.forces = []
        self.status = "incomplete"
        self.state = None
        self.summary = {}

    def append_diag(self, diag):
        for k in DIAG_COLUMNS:
            self.diagnostics[k].append(diag[k])


def march(cfg: RunConfig, solver: NsSolver, state, outdir, cfg_hash,
          res: RunResult | None = None, probe=None) -> RunResult:
    """Advance to the end condition, collecting diagnostics and forces.

    Mutates ``res`` in place so partial diagnostics survive an aborting
    step.  Stops on t_end, the steady criterion max|du|/dt < steady_tol,
    max_steps, or SIGINT (the caller flushes partial outputs and a resume
    snapshot in all cases).  Any step whose staggered divergence exceeds
    ten times the pressure tolerance aborts the run.
    """
    if res is None:
        res = RunResult()
    nodes = solver.nodes
    cfl_warned = False
    with _InterruptFlag() as intr:
        while True:
            if cfg.t_end > 0.0 and state.t >= cfg.t_end - 1e-12 * cfg.dt:
                res.status = "t_end"
                break
            if state.step >= cfg.max_steps:
                res.status = "max_steps"
                break
            state, diag = solver.step(state)
            res.state = state  # keep the last completed step for flushing
            if diag["max_div"] > diag["div_limit"]:
                res.status = "divergence"
                raise SolverError(
                    f"staggered divergence {diag['max_div']:.3e} exceeded "
                    f"{diag['div_limit']:.1e} at step {diag['step']}"
                )
            if state.step % max(cfg.diag_every, 1) == 0:
                res.append_diag(diag)
                cfl = cfg.dt * float(np.max(np.hypot(state.u, state.v) / nodes.spacing))
                if cfl > 0.8 and not cfl_warned:
                    log.warning("CFL number %.2f exceeds 0.8 at step %d", cfl, state.step)
                    cfl_warned = True
            if probe is not None:
                res.forces.append(probe.record(state))
            if cfg.snapshot_every > 0 and state.step % cfg.snapshot_every == 0:
                write_fields(cfg, solver, state, outdir, cfg_hash,
                             name=f"fields_{state.step:08d}.vtk")
                vio.save_snapshot(os.path.join(outdir, "resume.npz"), state, cfg_hash)
            if cfg.steady_tol > 0.0 and diag["du_dt"] < cfg.steady_tol:
                res.status = "steady"
                break
            if intr.hit:
                res.status = "interrupted"
                break
    res.state = state
    return res


def write_fields(cfg, solver, state, outdir, cfg_hash, name="fields_final.vtk"):
    """Legacy VTK point snapshot: velocity, pressure, curl, stream function."""
    nodes = solver.nodes
    data = {"u": state.u, "v": state.v, "p": state.p}
    data["omega"] = postproc.vorticity(state, solver.disc.rows)
    if cfg.case in ("square-cavity", "triangle-cavity"):
        try:
            data["psi"] = postproc.stream_function(data["omega"], nodes, solver.disc.rows)
        except SolverError as exc:
            log.warning("stream function solve failed, omitting psi: %s", exc)
    return vio.write_vtk(os.path.join(outdir, name), nodes, data, cfg_hash)


def _flush(cfg, solver, res, outdir, cfg_hash):
    vio.write_csv(os.path.join(outdir, "diagnostics.csv"), res.diagnostics, cfg_hash)
    if res.forces:
        vio.write_csv(
            os.path.join(outdir, "forces.csv"),
            {
                "t": [f.t for f in res.forces],
                "c_d": [f.c_d for f in res.forces],
                "c_d_pressure": [f.f_d_pressure / f.denom for f in res.forces],
                "c_d_viscous": [f.f_d_viscous / f.denom for f in res.forces],
                "c_l": [f.c_l for f in res.forces],
            },
            cfg_hash,
            comments=(f"normalization {cfg.drag_norm}",),
        )
    if res.state is not None:
        vio.save_snapshot(os.path.join(outdir, "resume.npz"), res.state, cfg_hash)
        write_fields(cfg, solver, res.state, outdir, cfg_hash)


def _summarize(cfg: RunConfig, solver, res: RunResult, outdir, cfg_hash):
    """Case-specific measurements; returns the summary dict."""
    state = res.state
    nodes = solver.nodes
    params = mls_params(cfg)
    summary = {"case": cfg.case, "status": res.status, "steps": state.step,
               "t": state.t, "nodes": nodes.n}
    if res.diagnostics["max_div"]:
        summary["max_div"] = max(res.diagnostics["max_div"])

    if cfg.case == "taylor-box":
        exact = postproc.taylor_exact(nodes.positions[:, 0], nodes.positions[:, 1],
                                      state.t, cfg.taylor_variant)
        interior = nodes.interior_mask
        # gauge-align the pressure: with pure Neumann rows it is defined up
        # to a constant
        p_shift = state.p - np.mean((state.p - exact[2])[interior])
        aligned = dataclasses.replace(state, p=p_shift)
        norms = postproc.error_norms(aligned, exact, interior)
        vio.write_csv(
            os.path.join(outdir, "errors.csv"),
            {
                "variable": list(norms),
                "linf": [norms[k][0] for k in norms],
                "l2": [norms[k][1] for k in norms],
            },
            cfg_hash,
            comments=(f"h {cfg.h!r} dt {cfg.dt!r} t {state.t!r}",),
        )
        summary["err_linf_u"] = norms["u"][0]
        summary["err_l2_u"] = norms["u"][1]

    elif cfg.case == "square-cavity":
        prof = postproc.centerline_profiles(state, nodes, params)
        vio.write_csv(os.path.join(outdir, "centerline_u.csv"),
                      {"y": prof["y"], "u": prof["u"]}, cfg_hash)
        vio.write_csv(os.path.join(outdir, "centerline_v.csv"),
                      {"x": prof["x"], "v": prof["v"]}, cfg_hash)
        if int(cfg.re) in ghia.TABLES:
            du, dv = ghia.deviation(state, nodes, cfg.re, params)
            vio.write_csv(os.path.join(outdir, "reference_deviation.csv"),
                          {"component": ["u", "v"], "max_abs_dev": [du, dv]}, cfg_hash)
            summary["ghia_dev_u"] = du
            summary["ghia_dev_v"] = dv

    elif cfg.case == "triangle-cavity":
        omega = postproc.vorticity(state, solver.disc.rows)
        psi = postproc.stream_function(omega, nodes, solver.disc.rows)
        records, ratios = postproc.find_moffatt_eddies(psi, state.u, nodes, params)
        vio.write_csv(
            os.path.join(outdir, "eddies.csv"),
            {
                "n": [r.index for r in records],
                "r": [r.r for r in records],
                "intensity": [r.intensity for r in records],
                "psi_center": [r.psi for r in records],
                "r_ratio": [ratios["r"][i] if i < len(ratios["r"]) else np.nan
                            for i in range(len(records))],
                "intensity_ratio": [ratios["intensity"][i] if i < len(ratios["intensity"])
                                    else np.nan for i in range(len(records))],
            },
            cfg_hash,
        )
        summary["n_eddies"] = len(records)
        if ratios["r"]:
            summary["r1_r2"] = ratios["r"][0]
        if ratios["intensity"]:
            summary["i1_i2"] = ratios["intensity"][0]

    elif cfg.case in ("circular-cylinder", "bumpy-cylinder"):
        body = nodes.meta["body"]
        theta, cp = postproc.cp_profile(state, nodes, body, params)
        vio.write_csv(os.path.join(outdir, "cp.csv"), {"theta": theta, "cp": cp}, cfg_hash)
        if res.forces:
            last = res.forces[-1]
            summary["c_d"] = last.c_d
            summary["c_l"] = last.c_l
            summary["c_d_pressure"] = last.f_d_pressure / last.denom
            summary["c_d_viscous"] = last.f_d_viscous / last.denom
            times = np.array([f.t for f in res.forces])
            lifts = np.array([f.c_l for f in res.forces])
            if res.status == "t_end" and len(times) > 32:
                try:
                    st = postproc.strouhal(times, lifts, cfg.transient_fraction)
                    freqs, spec = postproc.power_spectrum(times, lifts,
                                                          cfg.transient_fraction)
                    vio.write_csv(os.path.join(outdir, "psd.csv"),
                                  {"f": freqs, "power": spec}, cfg_hash)
                    summary["strouhal"] = st
                    tail = lifts[int(len(lifts) * cfg.transient_fraction):]
                    summary["c_l_amplitude"] = 0.5 * float(tail.max() - tail.min())
                    drags = np.array([f.c_d for f in res.forces])
                    summary["c_d_mean"] = float(
                        np.mean(drags[int(len(drags) * cfg.transient_fraction):]))
                except ValueError as exc:
                    log.info("no shedding frequency: %s", exc)

    vio.write_csv(os.path.join(outdir, "summary.csv"),
                  {"key": list(summary), "value": [summary[k] for k in summary]},
                  cfg_hash)
    return summary


def run_case(cfg: RunConfig, resume=None) -> tuple[int, dict]:
    """Full pipeline for one configuration; returns (exit code, summary)."""
    try:
        cfg.validate()
        outdir = resolve_outdir(cfg)
        os.makedirs(outdir, exist_ok=True)
        cfg_hash = cfg.hash
        with open(os.path.join(outdir, "resolved.cfg"), "w") as f:
            f.write(f"# hash {cfg_hash}\n")
            f.write(cfg.resolved_text())
        if cfg.suite == "spatial":
            return spatial_suite(cfg, outdir, cfg_hash)
        if cfg.suite == "temporal":
            return temporal_suite(cfg, outdir, cfg_hash)

        nodes, bc = build_domain(cfg)
        vio.write_nodes_csv(os.path.join(outdir, "nodes.csv"), nodes, cfg_hash)
        solver = make_solver(cfg, nodes, bc)
        state = _initial_state(cfg, solver, resume, cfg_hash)
        probe = None
        if cfg.case in ("circular-cylinder", "bumpy-cylinder"):
            probe = postproc.SurfaceProbe(nodes, nodes.meta["body"], cfg.re,
                                          mls_params(cfg), norm=cfg.drag_norm)
        res = RunResult()
        try:
            march(cfg, solver, state, outdir, cfg_hash, res, probe)
            res.summary = _summarize(cfg, solver, res, outdir, cfg_hash)
        finally:
            _flush(cfg, solver, res, outdir, cfg_hash)
        log.info("run finished: %s after %d steps (t=%.4g)",
                 res.status, res.state.step, res.state.t)
        if res.status == "interrupted":
            return EXIT_INTERRUPT, res.summary
        return EXIT_OK, res.summary
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG, {"error": str(exc)}
    except SolverError as exc:
        log.error("solver failure in case %s: %s", cfg.case, exc)
        return EXIT_SOLVER, {"error": str(exc)}


def _initial_state(cfg, solver, resume, cfg_hash):
    if resume:
        state, saved_hash = vio.load_snapshot(resume)
        if saved_hash != cfg_hash:
            raise ConfigError(
                f"resume: snapshot hash {saved_hash} does not match config {cfg_hash}"
            )
        log.info("resuming at step %d (t=%.4g)", state.step, state.t)
        return state
    if cfg.case == "taylor-box":
        x, y = solver.nodes.positions[:, 0], solver.nodes.positions[:, 1]
        return solver.initial_state(*postproc.taylor_exact(x, y, 0.0, cfg.taylor_variant))
    return solver.initial_state()


def _taylor_level(cfg: RunConfig, h, dt, outdir, cfg_hash, tag):
    sub = dataclasses.replace(
        cfg, h=h, dt=dt, suite="none", outdir=os.path.join(outdir, tag),
        snapshot_every=0,
    )
    code, summary = run_case(sub)
    if code != EXIT_OK:
        raise SolverError(f"suite level {tag} failed with exit code {code}")
    return summary


def spatial_suite(cfg: RunConfig, outdir, cfg_hash) -> tuple[int, dict]:
    """Refinement study in h at fixed dt; fits the error order."""
    levels = sorted(cfg.h_levels, reverse=True)
    errs = []
    for i, h in enumerate(levels):
        summary = _taylor_level(cfg, h, cfg.dt, outdir, cfg_hash, f"h{i}")
        errs.append(summary["err_linf_u"])
        log.info("spatial level h=%.6g: Linf(u) %.3e", h, errs[-1])
    order = postproc.convergence_order(errs, levels)
    vio.write_csv(os.path.join(outdir, "error_table.csv"),
                  {"h": levels, "linf_u": errs}, cfg_hash,
                  comments=(f"fitted order {order!r}",))
    summary = {"suite": "spatial", "order": order,
               "levels": len(levels), "err_finest": errs[-1]}
    vio.write_csv(os.path.join(outdir, "summary.csv"),
                  {"key": list(summary), "value": [summary[k] for k in summary]},
                  cfg_hash)
    return EXIT_OK, summary


def temporal_suite(cfg: RunConfig, outdir, cfg_hash) -> tuple[int, dict]:
    """Step-size study at fixed h, with spatial-floor detection.

    A reference run at one quarter of the smallest dt measures the spatial
    error floor.  The order is fitted on floor-subtracted errors over the
    levels that exceed three times the floor; with fewer than three such
    levels the two-point slope is reported instead.
    """
    levels = sorted(cfg.dt_levels, reverse=True)
    errs = []
    for i, dt in enumerate(levels):
        summary = _taylor_level(cfg, cfg.h, dt, outdir, cfg_hash, f"dt{i}")
        errs.append(summary["err_linf_u"])
        log.info("temporal level dt=%.6g: Linf(u) %.3e", dt, errs[-1])
    floor_summary = _taylor_level(cfg, cfg.h, levels[-1] / 4.0, outdir, cfg_hash, "floor")
    floor = floor_summary["err_linf_u"]
    log.info("spatial floor estimate: %.3e", floor)

    errs = np.asarray(errs)
    dominant = errs > 3.0 * floor
    fit_err = (errs - floor)[dominant]
    fit_dt = np.asarray(levels)[dominant]
    if len(fit_err) >= 3:
        order = postproc.convergence_order(fit_err, fit_dt)
    elif len(fit_err) == 2:
        order = float(np.log(fit_err[0] / fit_err[1]) / np.log(fit_dt[0] / fit_dt[1]))
        log.warning("only 2 levels above the spatial floor; two-point slope")
    else:
        raise SolverError("temporal suite: all levels sit at the spatial floor; "
                          "refine h or enlarge dt")
    vio.write_csv(os.path.join(outdir, "error_table.csv"),
                  {"dt": levels, "linf_u": list(errs),
                   "above_floor": list(dominant.astype(int))},
                  cfg_hash,
                  comments=(f"fitted order {order!r}", f"spatial floor {floor!r}"))
    summary = {"suite": "temporal", "order": order, "floor": floor,
               "levels_used": int(dominant.sum())}
    vio.write_csv(os.path.join(outdir, "summary.csv"),
                  {"key": list(summary), "value": [summary[k] for k in summary]},
                  cfg_hash)
    return EXIT_OK, summary


def sweep(cfg: RunConfig, param, values) -> tuple[int, dict]:
    """Run the case once per parameter value; aggregate key scalars."""
    base_out = resolve_outdir(cfg)
    os.makedirs(base_out, exist_ok=True)
    names = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    if param not in names:
        log.error("sweep: unknown parameter %r", param)
        return EXIT_CONFIG, {"error": f"unknown parameter {param!r}"}
    rows = []
    for value in values:
        sub = dataclasses.replace(cfg, outdir=os.path.join(cfg.outdir, f"{param}_{value}"))
        try:
            kind = type(getattr(cfg, param))
            setattr(sub, param, kind(value))
            sub.validate()
            code, summary = run_case(sub)
        except (ConfigError, ValueError) as exc:
            code, summary = EXIT_CONFIG, {"error": str(exc)}
        row = {"param": param, "value": value, "exit": code}
        row.update({k: v for k, v in summary.items() if np.isscalar(v)})
        rows.append(row)
        log.info("sweep %s=%s -> exit %d", param, value, code)
    keys = sorted({k for row in rows for k in row}, key=lambda k: (k not in
                  ("param", "value", "exit"), k))
    table = {k: [row.get(k, "") for row in rows] for k in keys}
    vio.write_csv(os.path.join(base_out, "sweep_summary.csv"), table, cfg.hash)
    return EXIT_OK, {"rows": len(rows)}
