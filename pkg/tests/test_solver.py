import math

import numpy as np
import pytest
import scipy.sparse as sp

from vipflow.mls import MlsParams
from vipflow.nodes import Tag, gen_rectangle_nodes
from vipflow.solver import (
    Discretization,
    FlowState,
    NsSolver,
    SolverError,
    SparseOperator,
    assemble_helmholtz,
    assemble_laplacian,
    bc_cavity,
    bc_profiles,
    boundary_values,
    build_phi_operator,
    compute_rhs,
    linear_solve,
)

from oracles import dense_helmholtz, taylor

PI = math.pi


def taylor_bc():
    def u_fn(x, y, t):
        return taylor(x, y, t)[0]

    def v_fn(x, y, t):
        return taylor(x, y, t)[1]

    return bc_profiles(u_fn, v_fn)


def box_nodes(h):
    return gen_rectangle_nodes((0.0, PI, 0.0, PI), h)


def test_mls_laplacian_quadratic_exact():
    nodes = box_nodes(PI / 20)
    disc = Discretization(nodes)
    f = nodes.positions[:, 0] ** 2 + nodes.positions[:, 1] ** 2
    lap = disc.lap.matrix @ f
    assert np.allclose(lap, 4.0, atol=1e-8)


def test_mls_laplacian_trig_second_order():
    # measured away from the walls; one-sided clouds near the boundary drop
    # an order but those rows never enter the masked systems
    errs = []
    hs = [PI / 20, PI / 40]
    for h in hs:
        nodes = box_nodes(h)
        disc = Discretization(nodes)
        x, y = nodes.positions[:, 0], nodes.positions[:, 1]
        deep = (np.minimum(np.minimum(x, PI - x), np.minimum(y, PI - y))
                > 3.0 * h - 1e-12)
        f = np.sin(x) * np.sin(y)
        got = disc.lap.matrix @ f
        errs.append(np.max(np.abs((got + 2.0 * f)[deep])))
    assert errs[1] < errs[0] / 3.0


def test_helmholtz_matches_dense_oracle():
    nodes = gen_rectangle_nodes((0.0, 1.0, 0.0, 1.0), 0.125)
    params = MlsParams()
    dt, re = 1e-2, 5.0
    disc = Discretization(nodes, params)
    op = assemble_helmholtz(dt, re, disc.lap)
    dense = dense_helmholtz(nodes, params, dt, re)
    # entrywise; the dense fit carries lstsq round-off near 1e-9 per row
    assert np.max(np.abs(op.matrix.toarray() - dense)) < 1e-8


def test_rhs_matches_dense_assembly():
    nodes = box_nodes(PI / 10)
    disc = Discretization(nodes)
    dt, re = 1e-3, 2.0
    x, y = nodes.positions[:, 0], nodes.positions[:, 1]
    u, v, p = taylor(x, y, 0.0, re)
    state = FlowState.from_velocity(u.copy(), v.copy(), p.copy())
    ru, rv = compute_rhs(state, disc, dt, re)
    # independent evaluation term by term; the predictor is pressure-free
    conv = disc.st.convection(u, v)
    want_u = u / dt + (disc.lap.matrix @ u) / (2 * re) - conv[0]
    want_v = v / dt + (disc.lap.matrix @ v) / (2 * re) - conv[1]
    assert np.max(np.abs(ru - want_u)) < 1e-12
    assert np.max(np.abs(rv - want_v)) < 1e-12
    # first step uses the single-level convection estimate
    assert state.conv_prev is not None


def test_rhs_extrapolates_convection():
    nodes = box_nodes(PI / 10)
    disc = Discretization(nodes)
    x, y = nodes.positions[:, 0], nodes.positions[:, 1]
    u, v, _ = taylor(x, y, 0.0)
    state = FlowState.from_velocity(u.copy(), v.copy())
    prev = (0.5 * disc.st.convection(u, v)[0], 0.5 * disc.st.convection(u, v)[1])
    state.conv_prev = np.array(prev)
    ru_base = u / 1e-3 + (disc.lap.matrix @ u) / 2.0
    ru, _ = compute_rhs(state, disc, 1e-3, 1.0)
    conv = disc.st.convection(u, v)
    want = ru_base - (1.5 * conv[0] - 0.5 * prev[0])
    assert np.allclose(ru, want, atol=1e-12)


def test_linear_solve_matches_dense_direct():
    rng = np.random.default_rng(5)
    n = 400
    a = sp.random(n, n, density=0.02, random_state=5, format="csr")
    a = a + sp.diags(np.full(n, 4.0))
    b = rng.standard_normal(n)
    op = SparseOperator(matrix=a.tocsr(), kind="test")
    x = linear_solve(op, b, 1e-12, max_iter=2000)
    dense = np.linalg.solve(a.toarray(), b)
    assert np.max(np.abs(x - dense)) < 1e-8


def test_linear_solve_zero_rhs_shortcut():
    a = sp.identity(10, format="csr")
    op = SparseOperator(matrix=a, kind="test")
    x = linear_solve(op, np.zeros(10), 1e-10)
    assert np.array_equal(x, np.zeros(10))
    assert op.last_stats["method"] == "trivial"


def test_linear_solve_raises_on_singular_without_pin():
    # all-Neumann pressure operator is singular; the pin removes the null space
    nodes = box_nodes(PI / 10)
    disc = Discretization(nodes)
    rng = np.random.default_rng(2)
    rhs = rng.standard_normal(nodes.n)
    lc = disc.st.composed_laplacian().tolil()
    # keep interior rows only, giving hard zero rows on the boundary: singular
    for i in np.nonzero(nodes.boundary_mask)[0]:
        lc.rows[i] = [int(i)]
        lc.data[i] = [0.0]
    op = SparseOperator(matrix=lc.tocsr(), kind="singular", preconditioner="none")
    with pytest.raises(SolverError):
        linear_solve(op, rhs, 1e-10, max_iter=200)


def test_phi_operator_pin_and_masks():
    nodes = box_nodes(PI / 10)
    disc = Discretization(nodes)
    op = build_phi_operator(nodes, disc.st, disc.rows, bc_cavity())
    assert op.pin_index is not None
    assert nodes.boundary_mask[op.pin_index]
    row = op.matrix.getrow(op.pin_index)
    assert row.nnz == 1 and row.data[0] == 1.0
    assert np.array_equal(op.zero_rhs_mask, nodes.boundary_mask)
    # interior rows are exactly the composed product rows
    lc = disc.st.composed_laplacian()
    i = int(np.nonzero(nodes.interior_mask)[0][17])
    assert np.allclose((op.matrix - lc)[i].toarray(), 0.0)


def test_boundary_values_profiles():
    nodes = box_nodes(PI / 10)
    bc = taylor_bc()
    gu, gv = boundary_values(nodes, bc, 0.3)
    bnd = nodes.boundary_mask
    x, y = nodes.positions[:, 0], nodes.positions[:, 1]
    ue, ve, _ = taylor(x, y, 0.3)
    assert np.allclose(gu[bnd], ue[bnd])
    assert np.allclose(gv[bnd], ve[bnd])
    assert np.all(np.isnan(gu[~bnd]))


def test_rest_state_zero_is_fixed_point():
    nodes = gen_rectangle_nodes((0.0, 1.0, 0.0, 1.0), 0.1)
    solver = NsSolver(nodes, bc_cavity(lid_speed=0.0), 0.01, 10.0)
    state = solver.initial_state()
    state, diag = solver.step(state)
    assert np.max(np.abs(state.u)) == 0.0
    assert np.max(np.abs(state.v)) == 0.0
    assert diag["max_div"] == 0.0


def test_taylor_one_step_accuracy():
    h, dt, re = PI / 40, 1e-4, 1.0
    nodes = box_nodes(h)
    solver = NsSolver(nodes, taylor_bc(), dt, re)
    x, y = nodes.positions[:, 0], nodes.positions[:, 1]
    u0, v0, p0 = taylor(x, y, 0.0, re)
    state = solver.initial_state(u0, v0, p0)
    state, _ = solver.step(state)
    ue, ve, _ = taylor(x, y, dt, re)
    err = max(np.max(np.abs(state.u - ue)), np.max(np.abs(state.v - ve)))
    assert err < 5.0 * (h**2 + dt**2)


def test_divergence_bound_streak():
    nodes = box_nodes(PI / 20)
    solver = NsSolver(nodes, taylor_bc(), 5e-3, 1.0)
    x, y = nodes.positions[:, 0], nodes.positions[:, 1]
    state = solver.initial_state(*taylor(x, y, 0.0))
    for _ in range(25):
        state, diag = solver.step(state)
        assert diag["max_div"] <= 10.0 * solver.poisson_tol


def test_boundary_carried_exactly():
    nodes = box_nodes(PI / 20)
    dt = 2e-3
    solver = NsSolver(nodes, taylor_bc(), dt, 1.0)
    x, y = nodes.positions[:, 0], nodes.positions[:, 1]
    state = solver.initial_state(*taylor(x, y, 0.0))
    for _ in range(5):
        state, _ = solver.step(state)
    bnd = nodes.boundary_mask
    gu, gv = boundary_values(nodes, solver.bc, state.t)
    assert np.array_equal(state.u[bnd], gu[bnd])
    assert np.array_equal(state.v[bnd], gv[bnd])


def test_taylor_energy_decays():
    nodes = box_nodes(PI / 20)
    solver = NsSolver(nodes, taylor_bc(), 2e-3, 1.0)
    x, y = nodes.positions[:, 0], nodes.positions[:, 1]
    state = solver.initial_state(*taylor(x, y, 0.0))
    ke = [0.5 * float(np.mean(state.u**2 + state.v**2))]
    for _ in range(20):
        state, diag = solver.step(state)
        ke.append(diag["ke"])
    ke = np.array(ke)
    # decaying vortex: kinetic energy must not grow beyond round-off slack
    assert np.all(ke[1:] <= ke[:-1] * (1.0 + 1e-3))
    assert ke[-1] < ke[0]


def test_step_bitwise_reproducible():
    nodes = box_nodes(PI / 20)
    x, y = nodes.positions[:, 0], nodes.positions[:, 1]

    def run():
        solver = NsSolver(nodes, taylor_bc(), 1e-3, 1.0)
        state = solver.initial_state(*taylor(x, y, 0.0))
        for _ in range(5):
            state, _ = solver.step(state)
        return state

    a, b = run(), run()
    assert np.array_equal(a.u, b.u)
    assert np.array_equal(a.v, b.v)
    assert np.array_equal(a.p, b.p)


def test_phi_settles_at_steady_state():
    # phi is recomputed from scratch every step; once the flow is steady it
    # must stop changing, and the recovered pressure stays bounded
    nodes = gen_rectangle_nodes((0.0, 1.0, 0.0, 1.0), 1.0 / 16,
                                side_tags={"top": Tag.LID})
    solver = NsSolver(nodes, bc_cavity(), 0.02, 100.0)
    state = solver.initial_state()
    for _ in range(599):
        state, _ = solver.step(state)
    phi_before = state.phi.copy()
    state, diag = solver.step(state)
    dphi_rms = float(np.sqrt(np.mean((state.phi - phi_before) ** 2)))
    assert dphi_rms < 1e-5
    assert diag["du_dt"] < 1e-2
    assert float(np.max(np.abs(state.p))) < 5.0


def test_solver_rejects_bad_arguments():
    nodes = box_nodes(PI / 10)
    with pytest.raises(ValueError, match="dt"):
        NsSolver(nodes, bc_cavity(), -0.1, 1.0)
    with pytest.raises(ValueError, match="re"):
        NsSolver(nodes, bc_cavity(), 0.1, 0.0)


def test_bc_validation_requires_covering_tags():
    nodes = gen_rectangle_nodes((0.0, 1.0, 0.0, 1.0), 0.2,
                                side_tags={"top": Tag.LID})
    bc = bc_profiles(lambda x, y, t: x, lambda x, y, t: y, tags=(Tag.WALL,))
    with pytest.raises((KeyError, ValueError)):
        NsSolver(nodes, bc, 0.1, 1.0)
