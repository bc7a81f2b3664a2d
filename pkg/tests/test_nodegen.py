import math

import numpy as np
import pytest

from vipflow.nodes import (
    BumpyBody,
    DomainSpec,
    NodeSet,
    Tag,
    gen_cylinder_domain,
    gen_rectangle_nodes,
    gen_triangle_nodes,
)


def test_rectangle_lattice_counts_and_tags():
    nodes = gen_rectangle_nodes((0.0, 1.0, 0.0, 1.0), 0.25)
    assert nodes.n == 25
    # 16 boundary, 9 interior on a 5x5 lattice
    assert int(nodes.boundary_mask.sum()) == 16
    assert int(nodes.interior_mask.sum()) == 9
    assert np.all(nodes.spacing == 0.25)


def test_rectangle_side_tags_and_normals():
    nodes = gen_rectangle_nodes(
        (0.0, 1.0, 0.0, 1.0), 0.25, side_tags={"top": Tag.LID}
    )
    top = nodes.positions[:, 1] == 1.0
    assert np.all(nodes.tags[top & (nodes.positions[:, 0] > 0)
                             & (nodes.positions[:, 0] < 1)] == Tag.LID)
    left = (nodes.positions[:, 0] == 0.0) & (nodes.positions[:, 1] > 0.0) \
        & (nodes.positions[:, 1] < 1.0)
    assert np.allclose(nodes.normals[left], [-1.0, 0.0])


def test_rectangle_spacing_rounds_to_span():
    # 0.23 does not divide 1.0; span is honored and h adjusted
    nodes = gen_rectangle_nodes((0.0, 1.0, 0.0, 1.0), 0.23)
    assert nodes.positions[:, 0].max() == 1.0
    assert np.allclose(nodes.spacing, 0.25)


def test_rectangle_too_coarse_rejected():
    with pytest.raises(ValueError, match="at least 5"):
        gen_rectangle_nodes((0.0, 1.0, 0.0, 1.0), 0.5)


def test_nodeset_validates_dilation():
    pos = np.zeros((3, 2))
    with pytest.raises(ValueError, match="dilation"):
        NodeSet(pos, np.zeros(3, dtype=np.int64), np.ones(3), np.ones(3))


def test_triangle_geometry():
    nodes = gen_triangle_nodes(28.072, 40)
    meta = nodes.meta
    slope = math.tan(math.radians(28.072) / 2.0)
    assert meta["height"] == pytest.approx(0.5 / slope)
    # every node inside or on the wedge
    x, y = nodes.positions[:, 0], nodes.positions[:, 1]
    assert np.all(y <= meta["height"] + 1e-12)
    assert np.all(np.abs(x) <= slope * y + 1e-9)
    # truncation: no nodes below the recorded cut
    assert np.all(y >= meta["truncated_at"] - 1e-12)
    lid = nodes.tags == Tag.LID
    assert np.all(nodes.positions[lid, 1] == meta["height"])
    assert lid.sum() == 40


def test_triangle_interior_is_uniform_lattice():
    # interior nodes share one spacing and sit on integer lattice positions
    nodes = gen_triangle_nodes(28.072, 50)
    dx = nodes.meta["dx"]
    inter = nodes.interior_mask
    pos = nodes.positions[inter]
    assert np.all(nodes.spacing[inter] == dx)
    k = pos / dx
    assert np.allclose(k, np.round(k), atol=1e-9)


def test_triangle_boundary_normals_outward():
    nodes = gen_triangle_nodes(30.0, 40)
    bnd = nodes.boundary_mask
    # outward normal points away from the centroid of the wedge
    centroid = nodes.positions[nodes.interior_mask].mean(axis=0)
    rel = nodes.positions[bnd] - centroid
    dots = np.einsum("ij,ij->i", rel, nodes.normals[bnd])
    assert np.all(dots > 0.0)
    assert np.allclose(np.linalg.norm(nodes.normals[bnd], axis=1), 1.0)


def test_triangle_rejects_bad_inputs():
    with pytest.raises(ValueError, match="apex angle"):
        gen_triangle_nodes(95.0, 40)
    with pytest.raises(ValueError, match="n_base"):
        gen_triangle_nodes(28.0, 10)


def test_bumpy_body_radius_and_normal():
    body = BumpyBody(0.5, 0.1, 10)
    theta = np.linspace(0.0, 2.0 * math.pi, 64, endpoint=False)
    r = body.radius(theta)
    assert r.max() == pytest.approx(0.55)
    assert r.min() == pytest.approx(0.45)
    assert body.max_radius == pytest.approx(0.55)
    # unit normals, outward: moving along +normal leaves the body
    n = body.unit_normal(theta)
    assert np.allclose(np.linalg.norm(n, axis=1), 1.0)
    pts = body.point(theta)
    assert not np.any(body.contains(pts + 1e-6 * n))
    assert np.all(body.contains(pts - 1e-6 * n))


def test_smooth_body_is_circle():
    spec = DomainSpec(case="circular-cylinder", gamma=0.3)
    body = spec.body()
    assert body.gamma == 0.0
    theta = np.linspace(0.0, 2.0 * math.pi, 32)
    assert np.allclose(body.radius(theta), 0.5)


def test_cylinder_domain_structure():
    spec = DomainSpec(case="circular-cylinder")
    nodes = gen_cylinder_domain(spec, h_surface=0.1)
    tags = nodes.tags
    assert (tags == Tag.BODY).any()
    assert (tags == Tag.INLET).any()
    assert (tags == Tag.OUTLET).any()
    assert (tags == Tag.SLIP).any()
    # body nodes sit exactly on the curve
    body = spec.body()
    on = nodes.positions[tags == Tag.BODY]
    theta = np.arctan2(on[:, 1], on[:, 0])
    assert np.allclose(np.hypot(on[:, 0], on[:, 1]), body.radius(theta), atol=1e-12)
    # no fluid node inside the body
    fluid = tags != Tag.BODY
    assert not np.any(body.contains(nodes.positions[fluid]))
    # inlet on the left edge of the box
    x0 = spec.box[0]
    assert np.allclose(nodes.positions[tags == Tag.INLET, 0], x0)


def test_cylinder_grading_monotone_outward():
    spec = DomainSpec(case="circular-cylinder")
    nodes = gen_cylinder_domain(spec, h_surface=0.1, growth=1.3)
    r = np.hypot(nodes.positions[:, 0], nodes.positions[:, 1])
    near = nodes.spacing[r < 1.0]
    far = nodes.spacing[r > 6.0]
    assert near.max() <= far.min() + 1e-12
    assert near.min() == pytest.approx(0.1, rel=0.2)


def test_bumpy_domain_resolves_bumps():
    spec = DomainSpec(case="bumpy-cylinder", gamma=0.1, mb=20)
    nodes = gen_cylinder_domain(spec, h_surface=0.03)
    on = nodes.positions[nodes.tags == Tag.BODY]
    # at least 8 body nodes per bump
    assert len(on) >= 8 * 20


def test_min_separation_positive():
    for build in (
        lambda: gen_rectangle_nodes((0.0, 1.0, 0.0, 1.0), 0.1),
        lambda: gen_triangle_nodes(28.072, 40),
        lambda: gen_cylinder_domain(DomainSpec(case="circular-cylinder"), 0.1),
    ):
        nodes = build()
        tree = nodes.tree()
        d, _ = tree.query(nodes.positions, k=2)
        ratio = d[:, 1] / nodes.spacing
        assert ratio.min() > 0.3
