import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aderdg.geometry import (
    GeometryError,
    MovingMesh,
    SliverDescriptor,
    SpacetimePolygon,
    boundary_normal_sum,
    build_control_volume,
    integrate_polygon,
    interface_normal,
    make_slivers,
    signed_area,
    sliver_polygon,
)

UNIT_SQUARE = SpacetimePolygon([[0, 0], [1, 0], [1, 1], [0, 1]])


def _two_cell_mesh(velocity=0.0, dt=1.0):
    nodes = np.array([-1.0, 0.0, 1.0])
    return MovingMesh(nodes, nodes + velocity * dt, dt, periodic=False)


def test_mesh_rejects_inverted_nodes():
    with pytest.raises(GeometryError):
        MovingMesh(np.array([0.0, 1.0, 0.5]), np.array([0.0, 1.0, 2.0]), 0.1)
    with pytest.raises(GeometryError):
        MovingMesh(np.array([0.0, 1.0]), np.array([0.0, 1.0]), 0.0)


def test_static_rectangle():
    mesh = MovingMesh.uniform(0.0, 2.0, 4, 0.3)
    poly = build_control_volume(mesh, 1)
    assert np.array_equal(poly.vertices, [[0.5, 0.0], [1.0, 0.0], [1.0, 0.3], [0.5, 0.3]])
    assert poly.area == pytest.approx(0.15, abs=1e-16)


def test_zero_delta_sliver_is_classical():
    mesh = _two_cell_mesh()
    d = SliverDescriptor(1, 0.0, 0.0)
    for i in (0, 1):
        assert np.array_equal(build_control_volume(mesh, i, [d]).vertices, build_control_volume(mesh, i).vertices)
    assert make_slivers(mesh, "interior", 0.0) == []
    assert sliver_polygon(mesh, d).area == 0.0


def test_pentagon_right_of_sliver():
    mesh = _two_cell_mesh()
    d = SliverDescriptor(1, 0.2, 0.4)
    poly = build_control_volume(mesh, 1, [d])
    assert np.allclose(poly.vertices, [[0, 0], [1, 0], [1, 1], [0, 1], [0.2, 0.5]], atol=1e-15)
    left = build_control_volume(mesh, 0, [d])
    assert np.allclose(left.vertices, [[-1, 0], [0, 0], [-0.2, 0.5], [0, 1], [-1, 1]], atol=1e-15)


def test_rhombus_sliver():
    mesh = _two_cell_mesh()
    poly = sliver_polygon(mesh, SliverDescriptor(1, 0.2, 0.4))
    assert np.allclose(poly.vertices, [[0, 0], [0.2, 0.5], [0, 1], [-0.2, 0.5]], atol=1e-15)
    assert poly.area == pytest.approx(0.2, abs=1e-15)
    assert integrate_polygon(lambda x, t: np.ones_like(x), poly, 2) == pytest.approx(0.2, abs=1e-15)


def test_normal_examples():
    rect = UNIT_SQUARE
    right = interface_normal(((1, 0), (1, 1)), rect)
    assert right.normal == pytest.approx((1.0, 0.0))
    bottom = interface_normal(((0, 0), (1, 0)), rect)
    assert bottom.normal == pytest.approx((0.0, -1.0))
    mesh = _two_cell_mesh()
    sliver = sliver_polygon(mesh, SliverDescriptor(1, 0.2, 0.4))
    face = interface_normal(((0.2, 0.5), (0.0, 1.0)), sliver)
    expect = np.array([0.5, 0.2]) / np.hypot(0.5, 0.2)
    assert np.allclose(face.normal, expect, atol=1e-15)
    assert face.length == pytest.approx(np.hypot(0.5, 0.2))
    with pytest.raises(GeometryError):
        interface_normal(((0, 0), (0, 0)), SpacetimePolygon([[0, 0], [0, 0], [1, 1]]))


def test_grid_velocity_of_moving_face():
    mesh = MovingMesh.uniform(0.0, 1.0, 2, 0.5, velocity=0.4)
    poly = build_control_volume(mesh, 0)
    face = interface_normal((tuple(poly.vertices[1]), tuple(poly.vertices[2])), poly)
    assert face.grid_velocity == pytest.approx(0.4)
    assert np.hypot(*face.normal) == pytest.approx(1.0, abs=1e-15)


def test_integrate_polygon_examples():
    assert integrate_polygon(lambda x, t: np.ones_like(x), UNIT_SQUARE, 1) == pytest.approx(1.0, abs=1e-15)
    assert integrate_polygon(lambda x, t: x * t, UNIT_SQUARE, 2) == pytest.approx(0.25, abs=1e-15)


def test_self_intersecting_polygon_rejected():
    bowtie = SpacetimePolygon([[0, 0], [1, 1], [1, 0], [0, 1]])
    with pytest.raises(GeometryError):
        integrate_polygon(lambda x, t: np.ones_like(x), bowtie, 1)


def test_delta_bounds():
    with pytest.raises(GeometryError):
        SliverDescriptor(1, 0.6, 1.0)
    with pytest.raises(GeometryError):
        make_slivers(MovingMesh.uniform(0, 1, 5, 0.1), "every-other", 0.2)


@st.composite
def moving_meshes(draw):
    ne = draw(st.integers(2, 6))
    dx_old = np.array(draw(st.lists(st.floats(0.3, 2.0), min_size=ne, max_size=ne)))
    shift = np.array(draw(st.lists(st.floats(-0.1, 0.1), min_size=ne + 1, max_size=ne + 1)))
    x0 = np.concatenate([[0.0], np.cumsum(dx_old)])
    dt = draw(st.floats(0.05, 2.0))
    return MovingMesh(x0, x0 + shift, dt, periodic=False)


DELTAS = st.one_of(st.just(0.0), st.floats(1e-3, 0.5))


@given(moving_meshes(), DELTAS, st.sampled_from(["interior", "every-other"]))
def test_slivers_only_redistribute_area(mesh, delta, pattern):
    slivers = make_slivers(mesh, pattern, delta)
    total = sum(build_control_volume(mesh, i, slivers).area for i in range(mesh.n_elements))
    total += sum(sliver_polygon(mesh, d).area for d in slivers)
    classical = sum(build_control_volume(mesh, i).area for i in range(mesh.n_elements))
    assert abs(total - classical) <= 1e-14 * max(1.0, classical)
    for d in slivers:
        assert sliver_polygon(mesh, d).area > 0 or delta == 0
        j = d.interface_index
        pair = build_control_volume(mesh, j - 1, slivers).area + build_control_volume(mesh, j, slivers).area
        pair += sliver_polygon(mesh, d).area
        ref = build_control_volume(mesh, j - 1).area + build_control_volume(mesh, j).area
        neighbours = [s for s in slivers if s.interface_index in (j - 1, j + 1)]
        if not neighbours:
            assert abs(pair - ref) <= 1e-14 * max(1.0, ref)


@given(moving_meshes(), DELTAS)
def test_normal_sums_vanish(mesh, delta):
    slivers = make_slivers(mesh, "interior", delta)
    polys = [build_control_volume(mesh, i, slivers) for i in range(mesh.n_elements)]
    polys += [sliver_polygon(mesh, d) for d in slivers if d.width > 0]
    for p in polys:
        assert np.abs(boundary_normal_sum(p)).max() <= 1e-14 * max(1.0, np.abs(p.vertices).max())
        assert signed_area(p.vertices) > 0


@given(moving_meshes(), DELTAS, st.integers(0, 4), st.integers(0, 4))
def test_polygon_quadrature_exact_for_monomials(mesh, delta, a, b):
    slivers = make_slivers(mesh, "interior", delta)
    poly = build_control_volume(mesh, 0, slivers)
    # divergence theorem: int x^a t^b = boundary integral of x^{a+1} t^b / (a+1) n_x
    v = poly.vertices
    ref = 0.0
    g, w = np.polynomial.legendre.leggauss(8)
    for k in range(len(v)):
        p, q = v[k], v[(k + 1) % len(v)]
        pts = 0.5 * (1 - g)[:, None] * p + 0.5 * (1 + g)[:, None] * q
        ref += 0.5 * np.dot(w, pts[:, 0] ** (a + 1) * pts[:, 1] ** b) / (a + 1) * (q[1] - p[1])
    got = integrate_polygon(lambda x, t: x**a * t**b, poly, a + b)
    assert got == pytest.approx(ref, rel=1e-12, abs=1e-12)
