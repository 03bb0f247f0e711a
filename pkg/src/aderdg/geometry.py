"""Moving 1D meshes, spacetime control volumes, sliver elements and normals.

A time slab ``[t^n, t^n + dt]`` is described by two node arrays.  Control
volumes are polygons in the ``(x, t)`` plane, stored counter-clockwise.  A
sliver replaces a lateral interface by a rhombus that has zero width at both
time levels and half-width ``delta * dx`` at mid-step.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .refbasis import gauss_rule


class GeometryError(ValueError):
    """Invalid or degenerate spacetime geometry."""


@dataclass(frozen=True)
class MovingMesh:
    nodes_old: np.ndarray
    nodes_new: np.ndarray
    dt: float
    periodic: bool = True
    t0: float = 0.0

    def __post_init__(self):
        old = np.array(self.nodes_old, dtype=float)
        new = np.array(self.nodes_new, dtype=float)
        if old.ndim != 1 or old.shape != new.shape or old.size < 2:
            raise GeometryError("node arrays must be 1D, equal length and >= 2 long")
        if not self.dt > 0:
            raise GeometryError(f"time step must be positive, got {self.dt}")
        if np.any(np.diff(old) <= 0) or np.any(np.diff(new) <= 0):
            raise GeometryError("mesh nodes must be strictly increasing at both time levels")
        if self.periodic and not np.isclose(old[-1] - old[0], new[-1] - new[0], rtol=1e-12, atol=0):
            raise GeometryError("periodic mesh must keep its period over the step")
        old.flags.writeable = False
        new.flags.writeable = False
        object.__setattr__(self, "nodes_old", old)
        object.__setattr__(self, "nodes_new", new)
        object.__setattr__(self, "dt", float(self.dt))

    @classmethod
    def uniform(cls, x_left, x_right, n_elements, dt, velocity=0.0, periodic=True, t0=0.0):
        nodes = np.linspace(x_left, x_right, n_elements + 1)
        return cls(nodes, nodes + velocity * dt, dt, periodic, t0)

    @property
    def n_elements(self) -> int:
        return self.nodes_old.size - 1

    @property
    def lengths_old(self) -> np.ndarray:
        return np.diff(self.nodes_old)

    @property
    def lengths_new(self) -> np.ndarray:
        return np.diff(self.nodes_new)

    @property
    def period(self) -> float:
        return float(self.nodes_old[-1] - self.nodes_old[0])

    @property
    def t1(self) -> float:
        return self.t0 + self.dt

    @property
    def is_static(self) -> bool:
        return bool(np.array_equal(self.nodes_old, self.nodes_new))

    def advanced(self, nodes_next: np.ndarray | None = None, dt: float | None = None) -> "MovingMesh":
        """The next slab, starting from this slab's final nodes."""
        dt = self.dt if dt is None else dt
        if nodes_next is None:
            nodes_next = self.nodes_new + (self.nodes_new - self.nodes_old) * (dt / self.dt)
        return MovingMesh(self.nodes_new, nodes_next, dt, self.periodic, self.t1)


class SliverPattern(enum.Enum):
    NONE = "none"
    EVERY_OTHER = "every-other"
    INTERIOR = "interior"


@dataclass(frozen=True)
class SliverDescriptor:
    """Sliver on node ``interface_index`` (between cells ``index - 1`` and ``index``)."""

    interface_index: int
    delta: float
    width: float

    def __post_init__(self):
        if not 0.0 <= self.delta <= 0.5:
            raise GeometryError(f"sliver delta must lie in [0, 0.5], got {self.delta}")
        if self.width < 0:
            raise GeometryError("sliver width must be non-negative")


def make_slivers(mesh: MovingMesh, pattern: SliverPattern | str, delta: float) -> list[SliverDescriptor]:
    """Sliver descriptors for a placement pattern.

    The absolute width is ``2 * delta * min(dx_left, dx_right)`` at ``t^n``.
    Slivers never sit on the outer (or periodic wrap-around) node, and
    ``delta == 0`` produces no slivers at all.
    """
    pattern = SliverPattern(pattern)
    if not 0.0 <= delta <= 0.5:
        raise GeometryError(f"sliver delta must lie in [0, 0.5], got {delta}")
    if pattern is SliverPattern.NONE or delta == 0.0:
        return []
    ne = mesh.n_elements
    if pattern is SliverPattern.EVERY_OTHER:
        if mesh.periodic and ne % 2:
            raise GeometryError("every-other slivers on a periodic mesh need an even element count")
        nodes = range(1, ne, 2)
    else:
        nodes = range(1, ne)
    dx = mesh.lengths_old
    return [SliverDescriptor(j, delta, 2.0 * delta * min(dx[j - 1], dx[j])) for j in nodes]


@dataclass(frozen=True)
class SpacetimePolygon:
    vertices: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float).reshape(-1, 2)
        v.flags.writeable = False
        object.__setattr__(self, "vertices", v)

    @property
    def area(self) -> float:
        return signed_area(self.vertices)

    def edges(self) -> list[tuple[np.ndarray, np.ndarray]]:
        v = self.vertices
        return [(v[k], v[(k + 1) % len(v)]) for k in range(len(v))]

    def validate(self):
        if self.area <= 0:
            raise GeometryError("polygon must be counter-clockwise with positive area")
        if _self_intersects(self.vertices):
            raise GeometryError("polygon is self-intersecting")
        return self


def signed_area(vertices: np.ndarray) -> float:
    x, t = vertices[:, 0], vertices[:, 1]
    return 0.5 * float(np.dot(x, np.roll(t, -1)) - np.dot(np.roll(x, -1), t))


def _cross(a, b):
    return a[0] * b[1] - a[1] * b[0]


def _segments_cross(p1, p2, q1, q2) -> bool:
    d1 = _cross(p2 - p1, q1 - p1)
    d2 = _cross(p2 - p1, q2 - p1)
    d3 = _cross(q2 - q1, p1 - q1)
    d4 = _cross(q2 - q1, p2 - q1)
    return d1 * d2 < 0 and d3 * d4 < 0


def _self_intersects(v: np.ndarray) -> bool:
    n = len(v)
    for i in range(n):
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            if _segments_cross(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]):
                return True
    return False


# --- sliver and control-volume construction --------------------------------


def _node(mesh: MovingMesh, j: int) -> tuple[float, float]:
    return float(mesh.nodes_old[j]), float(mesh.nodes_new[j])


def sliver_vertices(mesh: MovingMesh, d: SliverDescriptor) -> np.ndarray:
    """Bottom, right-mid, top, left-mid vertices of a sliver (counter-clockwise)."""
    xo, xn = _node(mesh, d.interface_index)
    tm = mesh.t0 + 0.5 * mesh.dt
    mid = 0.5 * (xo + xn)
    half = 0.5 * d.width
    return np.array(
        [
            [xo, mesh.t0],
            [mid + half, tm],
            [xn, mesh.t1],
            [mid - half, tm],
        ]
    )


def sliver_polygon(mesh: MovingMesh, d: SliverDescriptor) -> SpacetimePolygon:
    return SpacetimePolygon(sliver_vertices(mesh, d))


def _sliver_map(slivers) -> dict[int, SliverDescriptor]:
    out = {}
    for d in slivers or ():
        if d.interface_index in out:
            raise GeometryError(f"two slivers on node {d.interface_index}")
        out[d.interface_index] = d
    return out


def build_control_volume(mesh: MovingMesh, i: int, slivers=None) -> SpacetimePolygon:
    """Spacetime control volume swept by element ``i``.

    A sliver on the left node adds that sliver's right mid-vertex to the left
    boundary, a sliver on the right node adds its left mid-vertex.
    """
    ne = mesh.n_elements
    if not 0 <= i < ne:
        raise IndexError(f"element index {i} outside [0, {ne})")
    smap = _sliver_map(slivers)
    xlo, xln = _node(mesh, i)
    xro, xrn = _node(mesh, i + 1)
    if xro - xlo <= 0 or xrn - xln <= 0:
        raise GeometryError(f"element {i} is inverted")
    t0, t1 = mesh.t0, mesh.t1
    verts = [[xlo, t0], [xro, t0]]
    right = smap.get(i + 1)
    if right is not None and right.width > 0:
        verts.append(sliver_vertices(mesh, right)[3].tolist())
    verts += [[xrn, t1], [xln, t1]]
    left = smap.get(i)
    if left is not None and left.width > 0:
        verts.append(sliver_vertices(mesh, left)[1].tolist())
    poly = SpacetimePolygon(np.array(verts))
    if poly.area <= 0:
        raise GeometryError(f"control volume {i} has non-positive area")
    return poly


# --- interfaces and normals --------------------------------------------------


@dataclass(frozen=True)
class Interface:
    endpoints: tuple[tuple[float, float], tuple[float, float]]
    normal: tuple[float, float]
    length: float

    @property
    def grid_velocity(self) -> float:
        nx, nt = self.normal
        if nx == 0.0:
            return float("inf")
        return -nt / abs(nx)


def edge_normal(p0, p1) -> tuple[np.ndarray, float]:
    """Unit normal on the right of the directed segment ``p0 -> p1`` and its length."""
    d = np.asarray(p1, float) - np.asarray(p0, float)
    length = float(np.hypot(d[0], d[1]))
    if length == 0.0:
        raise GeometryError("zero-length face")
    return np.array([d[1], -d[0]]) / length, length


def interface_normal(face, owner: SpacetimePolygon) -> Interface:
    """Outward unit normal of ``owner`` on the edge with the given endpoints."""
    a = np.asarray(face[0], float)
    b = np.asarray(face[1], float)
    for p, q in owner.edges():
        if np.allclose(p, a) and np.allclose(q, b) or np.allclose(p, b) and np.allclose(q, a):
            n, length = edge_normal(p, q)
            return Interface((tuple(a), tuple(b)), (float(n[0]), float(n[1])), length)
    raise GeometryError("face is not an edge of the owning polygon")


def boundary_normal_sum(poly: SpacetimePolygon) -> np.ndarray:
    """Sum of length-weighted outward normals; zero for any closed polygon."""
    total = np.zeros(2)
    for p, q in poly.edges():
        n, length = edge_normal(p, q)
        total += n * length
    return total


# --- polygon quadrature ------------------------------------------------------


@lru_cache(maxsize=None)
def _collapsed_rule(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    r = gauss_rule(n)
    u, v = np.meshgrid(r.nodes, r.nodes, indexing="ij")
    w = np.outer(r.weights, r.weights) * u
    return u.ravel(), v.ravel(), w.ravel()


def triangle_quadrature(a, b, c, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed-quad rule on triangle ``abc``; weights carry the orientation sign."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    c = np.asarray(c, float)
    u, v, w = _collapsed_rule(n)
    e1 = b - a
    e2 = c - b
    pts = a + u[:, None] * e1 + (u * v)[:, None] * e2
    return pts, w * _cross(e1, e2)


def polygon_quadrature(poly: SpacetimePolygon, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Fan triangulation from the first vertex with ``n x n`` collapsed rules.

    Exact for polynomials of total degree ``<= 2 n - 2``.  Triangles of a
    non-convex fan get negative weights, which keeps polynomial integrals exact.
    """
    v = poly.vertices
    pts, wts = [], []
    for k in range(1, len(v) - 1):
        p, w = triangle_quadrature(v[0], v[k], v[k + 1], n)
        pts.append(p)
        wts.append(w)
    return np.concatenate(pts), np.concatenate(wts)


def integrate_polygon(f, poly: SpacetimePolygon, order: int) -> float:
    """Integral of ``f(x, t)`` over a simple polygon, exact up to total degree ``order``."""
    if _self_intersects(poly.vertices):
        raise GeometryError("polygon is self-intersecting")
    n = max(1, (int(order) + 3) // 2)
    pts, w = polygon_quadrature(poly, n)
    return float(np.dot(w, f(pts[:, 0], pts[:, 1])))


def segment_quadrature(p0, p1, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss points along a segment and weights scaled by its length."""
    r = gauss_rule(n)
    p0 = np.asarray(p0, float)
    p1 = np.asarray(p1, float)
    pts = p0 + r.nodes[:, None] * (p1 - p0)
    return pts, r.weights * float(np.hypot(*(p1 - p0)))


@dataclass
class SlabLayout:
    """Polygons and lateral segments of one time slab, in volume numbering.

    Volumes ``0..Ne-1`` are cells, ``Ne..Ne+Ns-1`` slivers.  Each lateral
    segment is oriented upwards with its unit normal pointing from ``left`` to
    ``right``; ``-1`` marks a boundary ghost.  ``shift_left``/``shift_right``
    are added to ``x`` before evaluating the corresponding volume's basis
    (periodic wrap-around).
    """

    mesh: MovingMesh
    slivers: list[SliverDescriptor]
    polygons: list[SpacetimePolygon]
    segments: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    shift_left: list[float] = field(default_factory=list)
    shift_right: list[float] = field(default_factory=list)

    @property
    def n_cells(self) -> int:
        return self.mesh.n_elements

    @property
    def n_slivers(self) -> int:
        return len(self.slivers)


def slab_layout(mesh: MovingMesh, slivers=None) -> SlabLayout:
    slivers = [d for d in (slivers or []) if d.width > 0]
    smap = _sliver_map(slivers)
    ne = mesh.n_elements
    for j in smap:
        if not 1 <= j <= ne - 1:
            raise GeometryError(f"slivers must sit on interior nodes, got node {j}")
    sidx = {d.interface_index: ne + k for k, d in enumerate(slivers)}
    polys = [build_control_volume(mesh, i, slivers).validate() for i in range(ne)]
    polys += [sliver_polygon(mesh, d) for d in slivers]
    lay = SlabLayout(mesh, slivers, polys)

    def add(p0, p1, left, right, shl=0.0, shr=0.0):
        lay.segments.append((np.asarray(p0, float), np.asarray(p1, float)))
        lay.left.append(left)
        lay.right.append(right)
        lay.shift_left.append(shl)
        lay.shift_right.append(shr)

    t0, t1 = mesh.t0, mesh.t1
    for j in range(0, ne + 1):
        xo, xn = _node(mesh, j)
        bottom, top = (xo, t0), (xn, t1)
        if j == 0:
            if not mesh.periodic:
                add(bottom, top, -1, 0)
            continue
        if j == ne:
            if mesh.periodic:
                add(bottom, top, ne - 1, 0, 0.0, -mesh.period)
            else:
                add(bottom, top, ne - 1, -1)
            continue
        if j in smap:
            v = sliver_vertices(mesh, smap[j])
            s = sidx[j]
            add(v[0], v[3], j - 1, s)
            add(v[3], v[2], j - 1, s)
            add(v[0], v[1], s, j)
            add(v[1], v[2], s, j)
        else:
            add(bottom, top, j - 1, j)
    return lay
