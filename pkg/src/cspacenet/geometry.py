"""
Exact 2-D primitives and distance/collision predicates.

Two code paths live here:

* scalar functions on small immutable value types, used for per-configuration
  queries (``robot.collision_status``) and as the reference implementation;
* broadcasting numpy kernels (``*_many``) used by the C-space rasterizer.

All shapes are closed sets: touching counts as collision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence, Union

import numpy as np


class Point2(NamedTuple):
    x: float
    y: float


class Segment2(NamedTuple):
    a: Point2
    b: Point2


def _finite(*values: float) -> bool:
    return all(math.isfinite(v) for v in values)


@dataclass(frozen=True)
class Capsule2:
    """A segment swept by a disk of radius ``half_width``."""

    axis: Segment2
    half_width: float

    def __post_init__(self):
        if not self.half_width >= 0.0:
            raise ValueError(f"half_width must be >= 0, got {self.half_width}")


@dataclass(frozen=True)
class Circle2:
    center: Point2
    radius: float

    def __post_init__(self):
        if not self.radius > 0.0 or not _finite(self.radius, *self.center):
            raise ValueError(f"invalid circle: center={self.center}, radius={self.radius}")


@dataclass(frozen=True)
class ConvexPolygon2:
    """Strictly convex polygon with counterclockwise vertices."""

    vertices: tuple[Point2, ...]

    def __post_init__(self):
        verts = tuple(Point2(float(x), float(y)) for x, y in self.vertices)
        object.__setattr__(self, "vertices", verts)
        n = len(verts)
        if n < 3:
            raise ValueError(f"polygon needs >= 3 vertices, got {n}")
        if not all(_finite(*v) for v in verts):
            raise ValueError("polygon vertices must be finite")
        if len(set(verts)) != n:
            raise ValueError("polygon has repeated vertices")
        for i in range(n):
            if _cross(verts[i], verts[(i + 1) % n], verts[(i + 2) % n]) <= 0.0:
                raise ValueError("polygon must be strictly convex and counterclockwise")

    @property
    def edges(self) -> list[Segment2]:
        v = self.vertices
        return [Segment2(v[i], v[(i + 1) % len(v)]) for i in range(len(v))]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.vertices, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class DiskSet:
    """Union of equal disks, e.g. one per black pixel of a workspace image."""

    centers: np.ndarray  # (M, 2)
    radius: float

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=np.float64).reshape(-1, 2)
        object.__setattr__(self, "centers", c)
        if not self.radius > 0.0:
            raise ValueError("radius must be positive")


Shape = Union[Circle2, ConvexPolygon2]


# ---------------------------------------------------------------------------
# scalar predicates


def _cross(o: Point2, a: Point2, b: Point2) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def point_distance(p: Point2, q: Point2) -> float:
    return math.hypot(p[0] - q[0], p[1] - q[1])


def point_segment_distance(p: Point2, s: Segment2) -> float:
    (ax, ay), (bx, by) = s
    dx, dy = bx - ax, by - ay
    den = dx * dx + dy * dy
    if den == 0.0:
        return math.hypot(p[0] - ax, p[1] - ay)
    t = ((p[0] - ax) * dx + (p[1] - ay) * dy) / den
    t = min(1.0, max(0.0, t))
    return math.hypot(p[0] - (ax + t * dx), p[1] - (ay + t * dy))


def _on_segment(p: Point2, s: Segment2) -> bool:
    # p is known collinear with s
    (ax, ay), (bx, by) = s
    return min(ax, bx) <= p[0] <= max(ax, bx) and min(ay, by) <= p[1] <= max(ay, by)


def segments_intersect(s1: Segment2, s2: Segment2) -> bool:
    p1, p2 = s1
    p3, p4 = s2
    d1 = _cross(p3, p4, p1)
    d2 = _cross(p3, p4, p2)
    d3 = _cross(p1, p2, p3)
    d4 = _cross(p1, p2, p4)
    if ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and (
        (d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)
    ):
        return True
    return (
        (d1 == 0 and _on_segment(p1, s2))
        or (d2 == 0 and _on_segment(p2, s2))
        or (d3 == 0 and _on_segment(p3, s1))
        or (d4 == 0 and _on_segment(p4, s1))
    )


def segment_segment_distance(s1: Segment2, s2: Segment2) -> float:
    if segments_intersect(s1, s2):
        return 0.0
    return min(
        point_segment_distance(s1.a, s2),
        point_segment_distance(s1.b, s2),
        point_segment_distance(s2.a, s1),
        point_segment_distance(s2.b, s1),
    )


def point_in_polygon(p: Point2, g: ConvexPolygon2) -> bool:
    """Closed containment test for a counterclockwise convex polygon."""
    v = g.vertices
    n = len(v)
    return all(_cross(v[i], v[(i + 1) % n], p) >= 0.0 for i in range(n))


def point_polygon_distance(p: Point2, g: ConvexPolygon2) -> float:
    """Distance from ``p`` to the closed polygon region (0 inside)."""
    if point_in_polygon(p, g):
        return 0.0
    return min(point_segment_distance(p, e) for e in g.edges)


def segment_polygon_distance(s: Segment2, g: ConvexPolygon2) -> float:
    """Distance from a segment to the closed polygon region."""
    if point_in_polygon(s.a, g) or point_in_polygon(s.b, g):
        return 0.0
    return min(segment_segment_distance(s, e) for e in g.edges)


def polygon_polygon_distance(g1: ConvexPolygon2, g2: ConvexPolygon2) -> float:
    if any(point_in_polygon(v, g2) for v in g1.vertices):
        return 0.0
    if any(point_in_polygon(v, g1) for v in g2.vertices):
        return 0.0
    return min(segment_segment_distance(e1, e2) for e1 in g1.edges for e2 in g2.edges)


def shape_distance(a: Shape, b: Shape) -> float:
    """Distance between two closed shapes (0 when they overlap or touch)."""
    if isinstance(a, Circle2) and isinstance(b, Circle2):
        return max(0.0, point_distance(a.center, b.center) - a.radius - b.radius)
    if isinstance(a, Circle2):
        return max(0.0, point_polygon_distance(a.center, b) - a.radius)
    if isinstance(b, Circle2):
        return max(0.0, point_polygon_distance(b.center, a) - b.radius)
    return polygon_polygon_distance(a, b)


def capsule_circle_collides(c: Capsule2, o: Circle2) -> bool:
    return point_segment_distance(o.center, c.axis) <= c.half_width + o.radius


def capsule_polygon_collides(c: Capsule2, g: ConvexPolygon2) -> bool:
    return segment_polygon_distance(c.axis, g) <= c.half_width


def capsule_capsule_collides(c1: Capsule2, c2: Capsule2) -> bool:
    return segment_segment_distance(c1.axis, c2.axis) <= c1.half_width + c2.half_width


def capsule_shape_collides(c: Capsule2, shape) -> bool:
    if isinstance(shape, Circle2):
        return capsule_circle_collides(c, shape)
    if isinstance(shape, DiskSet):
        return any(point_segment_distance(Point2(x, y), c.axis) <= c.half_width + shape.radius
                   for x, y in shape.centers)
    return capsule_polygon_collides(c, shape)


def polygon_centroid(g: ConvexPolygon2) -> Point2:
    """Area centroid (shoelace)."""
    v = g.vertices
    n = len(v)
    a2 = cx = cy = 0.0
    for i in range(n):
        x0, y0 = v[i]
        x1, y1 = v[(i + 1) % n]
        w = x0 * y1 - x1 * y0
        a2 += w
        cx += (x0 + x1) * w
        cy += (y0 + y1) * w
    return Point2(cx / (3.0 * a2), cy / (3.0 * a2))


def transform_polygon(g: ConvexPolygon2, rotation: float, translation: Point2) -> ConvexPolygon2:
    """Rotate ``g`` about its centroid by ``rotation`` radians, then translate."""
    cx, cy = polygon_centroid(g)
    c, s = math.cos(rotation), math.sin(rotation)
    tx, ty = translation
    verts = []
    for x, y in g.vertices:
        dx, dy = x - cx, y - cy
        verts.append(Point2(cx + c * dx - s * dy + tx, cy + s * dx + c * dy + ty))
    return ConvexPolygon2(tuple(verts))


def regular_polygon(n: int, side: float, center: Point2 = Point2(0.0, 0.0),
                    rotation: float = 0.0) -> ConvexPolygon2:
    """Regular ``n``-gon with the given side length.

    With ``rotation=0`` a square is axis-aligned and a triangle has a
    horizontal bottom edge.
    """
    circumradius = side / (2.0 * math.sin(math.pi / n))
    start = -math.pi / 2.0 - math.pi / n
    verts = []
    for k in range(n):
        ang = start + 2.0 * math.pi * k / n + rotation
        verts.append(Point2(center[0] + circumradius * math.cos(ang),
                            center[1] + circumradius * math.sin(ang)))
    return ConvexPolygon2(tuple(verts))


def bounding_radius(shape: Shape) -> float:
    """Radius of the smallest centroid-centered disk containing ``shape``."""
    if isinstance(shape, Circle2):
        return shape.radius
    c = polygon_centroid(shape)
    return max(point_distance(c, v) for v in shape.vertices)


def shape_center(shape: Shape) -> Point2:
    return shape.center if isinstance(shape, Circle2) else polygon_centroid(shape)


# ---------------------------------------------------------------------------
# broadcasting kernels
#
# Segments are given as four coordinate arrays (ax, ay, bx, by) that broadcast
# against each other and against the query arrays.


def points_segments_distance_many(px, py, ax, ay, bx, by) -> np.ndarray:
    dx = bx - ax
    dy = by - ay
    den = dx * dx + dy * dy
    safe = np.where(den == 0.0, 1.0, den)
    t = ((px - ax) * dx + (py - ay) * dy) / safe
    t = np.where(den == 0.0, 0.0, np.clip(t, 0.0, 1.0))
    return np.hypot(px - (ax + t * dx), py - (ay + t * dy))


def _cross_many(ox, oy, ax, ay, bx, by):
    return (ax - ox) * (by - oy) - (ay - oy) * (bx - ox)


def _between(v, lo, hi):
    return (np.minimum(lo, hi) <= v) & (v <= np.maximum(lo, hi))


def segments_intersect_many(s1, s2) -> np.ndarray:
    ax, ay, bx, by = s1
    cx, cy, dx, dy = s2
    d1 = _cross_many(cx, cy, dx, dy, ax, ay)
    d2 = _cross_many(cx, cy, dx, dy, bx, by)
    d3 = _cross_many(ax, ay, bx, by, cx, cy)
    d4 = _cross_many(ax, ay, bx, by, dx, dy)
    proper = (((d1 > 0) & (d2 < 0)) | ((d1 < 0) & (d2 > 0))) & (
        ((d3 > 0) & (d4 < 0)) | ((d3 < 0) & (d4 > 0))
    )
    touch = (
        ((d1 == 0) & _between(ax, cx, dx) & _between(ay, cy, dy))
        | ((d2 == 0) & _between(bx, cx, dx) & _between(by, cy, dy))
        | ((d3 == 0) & _between(cx, ax, bx) & _between(cy, ay, by))
        | ((d4 == 0) & _between(dx, ax, bx) & _between(dy, ay, by))
    )
    return proper | touch


def segments_segments_distance_many(s1, s2) -> np.ndarray:
    ax, ay, bx, by = s1
    cx, cy, dx, dy = s2
    d = np.minimum(
        np.minimum(
            points_segments_distance_many(ax, ay, cx, cy, dx, dy),
            points_segments_distance_many(bx, by, cx, cy, dx, dy),
        ),
        np.minimum(
            points_segments_distance_many(cx, cy, ax, ay, bx, by),
            points_segments_distance_many(dx, dy, ax, ay, bx, by),
        ),
    )
    return np.where(segments_intersect_many(s1, s2), 0.0, d)


def points_in_polygon_many(px, py, g: ConvexPolygon2) -> np.ndarray:
    v = g.vertices
    n = len(v)
    inside = np.ones(np.broadcast(px, py).shape, dtype=bool)
    for i in range(n):
        (x0, y0), (x1, y1) = v[i], v[(i + 1) % n]
        inside &= _cross_many(x0, y0, x1, y1, px, py) >= 0.0
    return inside


def segments_polygon_distance_many(s, g: ConvexPolygon2) -> np.ndarray:
    ax, ay, bx, by = s
    d = None
    for (x0, y0), (x1, y1) in g.edges:
        e = segments_segments_distance_many(s, (x0, y0, x1, y1))
        d = e if d is None else np.minimum(d, e)
    inside = points_in_polygon_many(ax, ay, g) | points_in_polygon_many(bx, by, g)
    return np.where(inside, 0.0, d)


def segments_shape_collide_many(s, half_width: float, shape) -> np.ndarray:
    """Capsules (segments ``s`` with ``half_width``) vs one obstacle."""
    ax, ay, bx, by = s
    if isinstance(shape, Circle2):
        cx, cy = shape.center
        return points_segments_distance_many(cx, cy, ax, ay, bx, by) <= half_width + shape.radius
    if isinstance(shape, DiskSet):
        hit = np.zeros(np.broadcast(ax, ay, bx, by).shape, dtype=bool)
        reach = half_width + shape.radius
        seg = tuple(np.asarray(v)[..., None] for v in s)
        for start in range(0, len(shape.centers), 2048):
            c = shape.centers[start:start + 2048]
            d = points_segments_distance_many(c[:, 0], c[:, 1], *seg)
            hit |= (d <= reach).any(axis=-1)
        return hit
    return segments_polygon_distance_many(s, shape) <= half_width


def shapes_cover_points_many(px, py, shapes: Sequence[Shape]) -> np.ndarray:
    """Boolean mask of points covered by any of ``shapes`` (closed)."""
    mask = np.zeros(np.broadcast(px, py).shape, dtype=bool)
    for shape in shapes:
        if isinstance(shape, Circle2):
            cx, cy = shape.center
            mask |= (px - cx) ** 2 + (py - cy) ** 2 <= shape.radius ** 2
        else:
            mask |= points_in_polygon_many(px, py, shape)
    return mask
