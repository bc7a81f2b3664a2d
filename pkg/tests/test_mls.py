import math

import numpy as np
import pytest

from vipflow.mls import (
    DERIVS,
    MlsParams,
    ShapeRow,
    apply,
    build_row_table,
    build_shape_row,
    neighbor_query,
    node_derivative_matrices,
    weight,
)
from vipflow.nodes import NodeSet, Tag, gen_rectangle_nodes

from oracles import brute_neighbors, dense_wls_rows


def lattice(h, nx=11, ny=11, jitter=0.0, seed=None):
    xs = np.arange(nx) * h
    ys = np.arange(ny) * h
    pos = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1).reshape(-1, 2)
    if jitter:
        rng = np.random.default_rng(seed)
        pos = pos + rng.uniform(-jitter * h, jitter * h, pos.shape)
    n = len(pos)
    return NodeSet(pos, np.zeros(n, dtype=np.int64), np.full(n, h), np.full(n, 2.6 * h))


def test_weight_kernel_limits():
    assert weight(0.0) == pytest.approx(1.0)
    assert weight(1.0) == 0.0
    assert weight(1.5) == 0.0
    s = np.linspace(0.0, 0.999, 200)
    w = weight(s)
    assert np.all(np.diff(w) <= 1e-12)  # monotone decreasing
    assert np.all(w >= 0.0)


def test_neighbor_query_matches_brute_force():
    rng = np.random.default_rng(42)
    pos = rng.uniform(0.0, 1.0, (500, 2))
    nodes = NodeSet(pos, np.zeros(500, dtype=np.int64), np.full(500, 0.05),
                    np.full(500, 0.13))
    for _ in range(20):
        point = rng.uniform(0.0, 1.0, 2)
        rho = rng.uniform(0.05, 0.3)
        got = neighbor_query(point, rho, nodes)
        want = brute_neighbors(point, rho, pos)
        assert np.array_equal(got, want)


def test_shape_row_reproduces_quadratics():
    # exactness on the basis monomials is the defining property of the fit
    nodes = lattice(0.1)
    point = np.array([0.512, 0.488])
    row = build_shape_row(point, nodes, MlsParams())
    x, y = nodes.positions[:, 0], nodes.positions[:, 1]
    for (a, b) in DERIVS:
        for (i, j) in DERIVS:
            got = apply(row, (a, b), x**i * y**j)
            ii, jj = i - a, j - b
            if ii < 0 or jj < 0:
                want = 0.0
            else:
                want = (math.factorial(i) // math.factorial(ii)) * (
                    math.factorial(j) // math.factorial(jj)
                ) * point[0] ** ii * point[1] ** jj
            assert got == pytest.approx(want, abs=1e-9)


def test_shape_row_matches_dense_oracle():
    nodes = lattice(0.1, jitter=0.2, seed=7)
    rng = np.random.default_rng(3)
    for _ in range(25):
        point = rng.uniform(0.15, 0.85, 2)
        row = build_shape_row(point, nodes, MlsParams())
        oracle = dense_wls_rows(point, row.ids, nodes.positions, row.rho)
        for deriv in DERIVS:
            assert np.max(np.abs(row.coeffs[deriv] - oracle[deriv])) < 1e-9


def test_interpolation_error_third_order():
    # smooth-field interpolation at off-node points improves like h^3
    errs = []
    hs = [math.pi / 10, math.pi / 20, math.pi / 40]
    for h in hs:
        n = int(round(math.pi / h)) + 1
        nodes = lattice(h, n, n)
        f = np.sin(nodes.positions[:, 0]) * np.sin(nodes.positions[:, 1])
        rng = np.random.default_rng(11)
        worst = 0.0
        for _ in range(40):
            point = rng.uniform(0.3, math.pi - 0.3, 2)
            row = build_shape_row(point, nodes, MlsParams())
            got = apply(row, (0, 0), f)
            worst = max(worst, abs(got - math.sin(point[0]) * math.sin(point[1])))
        errs.append(worst)
    order = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert order > 2.5


def test_second_derivative_second_order():
    # deriv (2, 0) of sin x sin y at a lattice interior point
    errs = []
    hs = [math.pi / 20, math.pi / 40, math.pi / 80]
    for h in hs:
        n = int(round(math.pi / h)) + 1
        nodes = lattice(h, n, n)
        f = np.sin(nodes.positions[:, 0]) * np.sin(nodes.positions[:, 1])
        i = (n // 2) * n + n // 2
        point = nodes.positions[i]
        row = build_shape_row(point, nodes, MlsParams())
        got = apply(row, (2, 0), f)
        want = -math.sin(point[0]) * math.sin(point[1])
        errs.append(abs(got - want) + 1e-16)
    order = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert order > 1.8


def test_escalation_on_sparse_neighborhood():
    # a corner point sees a quarter disc; the dilation must grow to feed it
    nodes = lattice(0.1, 6, 6)
    params = MlsParams(min_neighbors=12)
    row = build_shape_row(np.array([0.0, 0.0]), nodes, params)
    assert len(row.ids) >= 12
    assert row.rho > 2.6 * 0.1  # escalated at least once


def test_build_fails_beyond_escalation_budget():
    pos = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0],
                    [0.5, 0.5], [0.25, 0.75]])
    nodes = NodeSet(pos, np.zeros(6, dtype=np.int64), np.full(6, 1.0),
                    np.full(6, 1.1))
    with pytest.raises(ValueError, match="escalation"):
        build_shape_row(np.array([0.5, 0.4]), nodes, MlsParams(), rho=0.01)


def test_degenerate_collinear_neighborhood_rejected():
    # collinear nodes cannot support a quadratic in two variables
    pos = np.column_stack([np.linspace(0.0, 1.0, 12), np.zeros(12)])
    nodes = NodeSet(pos, np.zeros(12, dtype=np.int64), np.full(12, 0.09),
                    np.full(12, 0.25))
    with pytest.raises(ValueError):
        build_shape_row(np.array([0.5, 0.0]), nodes, MlsParams())


def test_apply_rejects_missing_derivative():
    nodes = lattice(0.1)
    row = build_shape_row(np.array([0.5, 0.5]), nodes, MlsParams(), derivs=((0, 0),))
    with pytest.raises(ValueError, match="no derivative"):
        apply(row, (2, 0), np.zeros(nodes.n))


def test_unsupported_derivative_rejected():
    nodes = lattice(0.1)
    with pytest.raises(ValueError, match="order 2"):
        build_shape_row(np.array([0.5, 0.5]), nodes, MlsParams(), derivs=((3, 0),))


def test_row_table_matches_single_rows():
    nodes = lattice(0.1, jitter=0.15, seed=5)
    pts = np.array([[0.31, 0.42], [0.55, 0.61], [0.72, 0.28]])
    table = build_row_table(pts, nodes, MlsParams(), derivs=((0, 0), (1, 0)))
    f = np.cos(nodes.positions[:, 0]) + nodes.positions[:, 1] ** 2
    for k, p in enumerate(pts):
        row = build_shape_row(p, nodes, MlsParams())
        for deriv in ((0, 0), (1, 0)):
            got = table[deriv][k] @ f
            assert got == pytest.approx(apply(row, deriv, f), abs=1e-12)


def test_node_matrices_shape_and_locality():
    nodes = gen_rectangle_nodes((0.0, 1.0, 0.0, 1.0), 0.1)
    mats = node_derivative_matrices(nodes, MlsParams(), derivs=((1, 0),))
    m = mats[(1, 0)]
    assert m.shape == (nodes.n, nodes.n)
    # each row draws on a bounded neighborhood, not the whole cloud
    counts = np.diff(m.indptr)
    assert counts.max() < 60
    assert counts.min() >= MlsParams().min_neighbors


def test_params_validation():
    with pytest.raises(ValueError, match="dilation_factor"):
        MlsParams(dilation_factor=0.9)
    with pytest.raises(ValueError, match="min_neighbors"):
        MlsParams(min_neighbors=4)


def test_shape_row_deterministic():
    nodes = lattice(0.07, jitter=0.2, seed=9)
    point = np.array([0.33, 0.37])
    a = build_shape_row(point, nodes, MlsParams())
    b = build_shape_row(point, nodes, MlsParams())
    for deriv in DERIVS:
        assert np.array_equal(a.coeffs[deriv], b.coeffs[deriv])
