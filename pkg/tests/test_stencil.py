import math

import numpy as np
import pytest

from vipflow.mls import MlsParams
from vipflow.nodes import Tag, gen_rectangle_nodes, gen_triangle_nodes
from vipflow.stencil import StencilTable, build_stencil, convection, divergence_star, gradient_phi

from oracles import taylor, taylor_convection

PI = math.pi


def box_nodes(h, extent=PI):
    return gen_rectangle_nodes((0.0, extent, 0.0, extent), h)


def center_index(nodes):
    target = nodes.positions.mean(axis=0)
    return int(np.argmin(np.linalg.norm(nodes.positions - target, axis=1)))


def test_stencil_points_symmetric_in_interior():
    nodes = box_nodes(PI / 10)
    i = center_index(nodes)
    st = build_stencil(i, nodes, MlsParams())
    p = nodes.positions[i]
    off = 0.5 * nodes.spacing[i]
    want = np.array([p + (off, 0), p - (off, 0), p + (0, off), p - (0, off)])
    assert np.allclose(st.points, want)
    assert st.sep_x == pytest.approx(2 * off)
    assert st.sep_y == pytest.approx(2 * off)


def test_arm_pullback_near_boundary():
    nodes = box_nodes(PI / 10)
    # first interior node adjacent to the corner: full arms still fit, the
    # geometry only clips arms that would cross the boundary
    inter = np.nonzero(nodes.interior_mask)[0]
    i = inter[0]
    st = build_stencil(i, nodes, MlsParams())
    assert st.sep_x > 0 and st.sep_y > 0
    # force a clip: offset larger than the wall distance
    h = nodes.spacing[i]
    big = build_stencil(i, nodes, MlsParams(), offset=1.5 * h)
    assert big.points[:, 0].min() >= 0.0
    assert big.points[:, 1].min() >= 0.0
    # west and south arms stop at the wall, east and north run free
    assert big.sep_x == pytest.approx(2.5 * h)
    assert big.sep_y == pytest.approx(2.5 * h)


def test_constant_field_annihilated():
    # scaled tolerance: rows are O(1/h), a constant contracts to round-off
    nodes = box_nodes(0.1, 1.0)
    table = StencilTable(nodes, MlsParams())
    ones = np.ones(nodes.n)
    zeros = np.zeros(nodes.n)
    div = table.divergence(ones, ones)
    gx, gy = table.gradient(ones)
    conv = table.convection(ones, zeros)
    h = nodes.spacing.min()
    tol = 1e-12 / h
    assert np.max(np.abs(div)) < tol
    assert np.max(np.abs(gx)) < tol and np.max(np.abs(gy)) < tol
    assert np.max(np.abs(conv[0])) < tol and np.max(np.abs(conv[1])) < tol


def test_linear_divergence_free_field():
    # u = x, v = -y: conservative x-term d(u^2)/dx + d(uv)/dy = 2x - x = x
    nodes = box_nodes(PI / 20)
    table = StencilTable(nodes, MlsParams())
    x, y = nodes.positions[:, 0], nodes.positions[:, 1]
    conv = table.convection(x, -y)
    inter = nodes.interior_mask
    assert np.allclose(conv[0][inter], x[inter], atol=1e-9)
    assert np.allclose(conv[1][inter], y[inter], atol=1e-9)
    div = table.divergence(x, -y)
    assert np.max(np.abs(div[inter])) < 1e-9


def test_quadratic_divergence():
    # (x^2, 0) has divergence 2x; one-point check with symmetric arms
    nodes = box_nodes(PI / 40)
    i = center_index(nodes)
    st = build_stencil(i, nodes, MlsParams())
    x = nodes.positions[:, 0]
    got = divergence_star(st, x**2, np.zeros(nodes.n))
    x0 = nodes.positions[i, 0]
    assert got == pytest.approx(2.0 * x0, abs=1e-8)


def test_gradient_cos2x():
    nodes = box_nodes(PI / 40)
    pos = nodes.positions
    i = int(np.argmin(np.linalg.norm(pos - (PI / 4.0, PI / 2.0), axis=1)))
    st = build_stencil(i, nodes, MlsParams())
    phi = np.cos(2.0 * pos[:, 0])
    g = gradient_phi(st, phi)
    x0 = pos[i, 0]
    h = nodes.spacing[i]
    assert abs(g[0] - (-2.0 * math.sin(2.0 * x0))) < 4.0 * h**2
    assert abs(g[1]) < 4.0 * h**2


def test_convection_matches_analytic_taylor():
    nodes = box_nodes(PI / 40)
    x, y = nodes.positions[:, 0], nodes.positions[:, 1]
    u, v, _ = taylor(x, y, 0.0)
    table = StencilTable(nodes, MlsParams())
    conv = table.convection(u, v)
    cx, cy = taylor_convection(x, y)
    inter = nodes.interior_mask
    err = max(np.max(np.abs(conv[0][inter] - cx[inter])),
              np.max(np.abs(conv[1][inter] - cy[inter])))
    assert err < 0.01


def test_operators_second_order():
    hs = [PI / 10, PI / 20, PI / 40, PI / 80]
    errs_div, errs_grad, errs_conv = [], [], []
    for h in hs:
        nodes = box_nodes(h)
        x, y = nodes.positions[:, 0], nodes.positions[:, 1]
        inter = nodes.interior_mask
        table = StencilTable(nodes, MlsParams())
        u, v, _ = taylor(x, y, 0.0)
        div = table.divergence(u, v)  # exact divergence is zero
        errs_div.append(np.max(np.abs(div[inter])))
        phi = np.cos(2.0 * x) * np.cos(y)
        gx, gy = table.gradient(phi)
        ex = -2.0 * np.sin(2.0 * x) * np.cos(y)
        ey = -np.cos(2.0 * x) * np.sin(y)
        errs_grad.append(max(np.max(np.abs((gx - ex)[inter])),
                             np.max(np.abs((gy - ey)[inter]))))
        conv = table.convection(u, v)
        cx, cy = taylor_convection(x, y)
        errs_conv.append(max(np.max(np.abs((conv[0] - cx)[inter])),
                             np.max(np.abs((conv[1] - cy)[inter]))))
    log_h = np.log(hs)
    for errs in (errs_div, errs_grad, errs_conv):
        slope = np.polyfit(log_h, np.log(errs), 1)[0]
        assert slope >= 1.8, (slope, errs)


def test_composed_laplacian_is_exact_product():
    nodes = box_nodes(PI / 10)
    table = StencilTable(nodes, MlsParams())
    lc = table.composed_laplacian()
    want = table.dx @ table.dx + table.dy @ table.dy
    assert abs(lc - want).max() == 0.0


def test_divergence_of_gradient_identity():
    # projection identity: div(grad(phi)) == composed_laplacian @ phi exactly
    nodes = box_nodes(PI / 20)
    rng = np.random.default_rng(0)
    phi = rng.standard_normal(nodes.n)
    table = StencilTable(nodes, MlsParams())
    gx, gy = table.gradient(phi)
    lhs = table.divergence(gx, gy)
    rhs = table.composed_laplacian() @ phi
    assert np.max(np.abs(lhs - rhs)) < 1e-12 * max(1.0, np.max(np.abs(rhs)))


def test_gradient_zero_rows_on_boundary():
    # boundary corrections must not touch prescribed boundary values
    nodes = box_nodes(PI / 20)
    rng = np.random.default_rng(1)
    phi = rng.standard_normal(nodes.n)
    gx, gy = StencilTable(nodes, MlsParams()).gradient(phi)
    bnd = nodes.boundary_mask
    assert np.all(gx[bnd] == 0.0)
    assert np.all(gy[bnd] == 0.0)


def test_checkerboard_not_annihilated():
    # the plain wide-row gradient is blind to odd-even modes; the virtual
    # point gradient must see them, that is its reason to exist
    nodes = box_nodes(0.1, 1.0)
    k = np.round(nodes.positions / 0.1).astype(int)
    checker = ((k[:, 0] + k[:, 1]) % 2 * 2 - 1).astype(float)
    table = StencilTable(nodes, MlsParams())
    gx, gy = table.gradient(checker)
    inter = nodes.interior_mask
    response = np.hypot(gx, gy)[inter].max()
    assert response > 1.0  # O(1/h) response, not machine-zero


def test_stencil_table_on_wedge():
    nodes = gen_triangle_nodes(28.072, 40)
    table = StencilTable(nodes, MlsParams())
    ones = np.ones(nodes.n)
    div = table.divergence(ones, ones)
    inter = nodes.interior_mask
    assert np.max(np.abs(div[inter])) < 1e-9
