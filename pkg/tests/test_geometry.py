import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import _oracles as oracle
from cspacenet.geometry import (
    Capsule2,
    Circle2,
    ConvexPolygon2,
    DiskSet,
    Point2,
    Segment2,
    capsule_capsule_collides,
    capsule_circle_collides,
    capsule_polygon_collides,
    capsule_shape_collides,
    point_in_polygon,
    point_polygon_distance,
    point_segment_distance,
    points_segments_distance_many,
    polygon_centroid,
    polygon_polygon_distance,
    regular_polygon,
    segment_polygon_distance,
    segment_segment_distance,
    segments_polygon_distance_many,
    segments_segments_distance_many,
    shape_distance,
    transform_polygon,
)

P = Point2
UNIT_X = Segment2(P(0, 0), P(1, 0))


def square(x0, y0, x1, y1):
    return ConvexPolygon2((P(x0, y0), P(x1, y0), P(x1, y1), P(x0, y1)))


coord = st.floats(-2.0, 2.0, allow_nan=False)
points = st.builds(P, coord, coord)
segments = st.builds(Segment2, points, points)


@st.composite
def rigid_motions(draw):
    return draw(st.floats(0, 2 * math.pi)), draw(coord), draw(coord)


def move(p, motion):
    th, tx, ty = motion
    c, s = math.cos(th), math.sin(th)
    return P(c * p[0] - s * p[1] + tx, s * p[0] + c * p[1] + ty)


# --- point_segment_distance


@pytest.mark.parametrize("p, s, expected", [
    (P(2, 0), UNIT_X, 1.0),
    (P(0.5, 0.3), UNIT_X, 0.3),
    (P(3, 4), Segment2(P(0, 0), P(0, 0)), 5.0),
])
def test_point_segment_distance_examples(p, s, expected):
    assert point_segment_distance(p, s) == pytest.approx(expected, abs=1e-12)


# --- segment_segment_distance


def test_segment_segment_examples():
    assert segment_segment_distance(UNIT_X, Segment2(P(0, 1), P(1, 1))) == pytest.approx(1.0)
    assert segment_segment_distance(Segment2(P(0, 0), P(1, 1)), Segment2(P(0, 1), P(1, 0))) == 0.0
    # frozen from the brute-force oracle
    s2 = Segment2(P(2, 1), P(3, 1))
    ref = float(oracle.segment_segment((0, 0, 1, 0), (2, 1, 3, 1)))
    assert ref == pytest.approx(math.sqrt(2), abs=1e-7)
    assert segment_segment_distance(UNIT_X, s2) == pytest.approx(1.4142135623730951, abs=1e-12)


def test_collinear_overlap_and_touching():
    assert segment_segment_distance(UNIT_X, Segment2(P(0.5, 0), P(2, 0))) == 0.0
    assert segment_segment_distance(UNIT_X, Segment2(P(1, 0), P(2, 5))) == 0.0
    assert segment_segment_distance(UNIT_X, Segment2(P(1.5, 0), P(2, 0))) == pytest.approx(0.5)


@settings(max_examples=300, deadline=None)
@given(segments, segments)
def test_segment_distance_symmetric(s1, s2):
    assert segment_segment_distance(s1, s2) == segment_segment_distance(s2, s1)


@settings(max_examples=200, deadline=None)
@given(segments, segments)
def test_segment_distance_matches_oracle(s1, s2):
    ref = float(oracle.segment_segment((*s1.a, *s1.b), (*s2.a, *s2.b)))
    assert segment_segment_distance(s1, s2) == pytest.approx(ref, abs=1e-6)


# --- capsule predicates


def test_capsule_circle_examples():
    cap = Capsule2(UNIT_X, 0.02)
    assert not capsule_circle_collides(cap, Circle2(P(1.5, 0), 0.4))
    assert capsule_circle_collides(cap, Circle2(P(0.5, 0.3), 0.3))
    assert capsule_circle_collides(cap, Circle2(P(0.25, 0.0), 1e-9))
    # boundary is closed
    assert capsule_circle_collides(Capsule2(UNIT_X, 0.25), Circle2(P(0.5, 0.5), 0.25))


@settings(max_examples=200, deadline=None)
@given(segments, st.floats(0, 0.5), points, st.floats(0.01, 1.0), st.floats(0.0, 1.0))
def test_capsule_circle_monotone_in_radius(axis, hw, c, r, shrink):
    cap = Capsule2(axis, hw)
    if not capsule_circle_collides(cap, Circle2(c, r)):
        assert not capsule_circle_collides(cap, Circle2(c, max(r * shrink, 1e-12)))


def test_capsule_polygon_examples():
    cap = Capsule2(UNIT_X, 0.02)
    assert not capsule_polygon_collides(cap, square(2, 0, 3, 1))
    assert capsule_polygon_collides(Capsule2(Segment2(P(-1, 0.5), P(2, 0.5)), 0.0), square(0, 0, 1, 1))
    # axis entirely inside
    assert capsule_polygon_collides(Capsule2(Segment2(P(0.2, 0.2), P(0.3, 0.3)), 0.0), square(0, 0, 1, 1))
    sq = square(0, 0.52, 1, 1.5)
    ref = float(oracle.segment_polygon((0.0, 0.0, 1.0, 0.0), np.array(sq.vertices)))
    assert ref == pytest.approx(0.52, abs=1e-7)
    assert not capsule_polygon_collides(Capsule2(UNIT_X, 0.5), sq)
    assert capsule_polygon_collides(Capsule2(UNIT_X, 0.52), sq)


@settings(max_examples=150, deadline=None)
@given(segments, st.floats(0, 0.4), points, st.floats(0.05, 1.0), rigid_motions())
def test_rigid_invariance(axis, hw, c, r, motion):
    cap = Capsule2(axis, hw)
    circle = Circle2(c, r)
    poly = regular_polygon(5, r, c, 0.3)
    other = Capsule2(Segment2(c, P(c.x + r, c.y - r)), hw)

    def moved_cap(k):
        return Capsule2(Segment2(move(k.axis.a, motion), move(k.axis.b, motion)), k.half_width)

    mcap = moved_cap(cap)
    mcircle = Circle2(move(c, motion), r)
    mpoly = ConvexPolygon2(tuple(move(v, motion) for v in poly.vertices))
    margin = 1e-9

    d = point_segment_distance(c, axis) - (hw + r)
    if abs(d) > margin:
        assert capsule_circle_collides(cap, circle) == capsule_circle_collides(mcap, mcircle)
    d = segment_polygon_distance(axis, poly) - hw
    if abs(d) > margin:
        assert capsule_polygon_collides(cap, poly) == capsule_polygon_collides(mcap, mpoly)
    d = segment_segment_distance(axis, other.axis) - 2 * hw
    if abs(d) > margin:
        assert capsule_capsule_collides(cap, other) == capsule_capsule_collides(mcap, moved_cap(other))


def test_disk_set_matches_individual_circles():
    rng = np.random.default_rng(3)
    centers = rng.uniform(0, 1, (20, 2))
    ds = DiskSet(centers, 0.03)
    for _ in range(50):
        a, b = rng.uniform(0, 1, (2, 2))
        cap = Capsule2(Segment2(P(*a), P(*b)), 0.01)
        expected = any(capsule_circle_collides(cap, Circle2(P(*c), 0.03)) for c in centers)
        assert capsule_shape_collides(cap, ds) == expected


# --- polygons


def test_polygon_validation():
    with pytest.raises(ValueError):
        ConvexPolygon2((P(0, 0), P(1, 0)))
    with pytest.raises(ValueError):  # clockwise
        ConvexPolygon2((P(0, 0), P(0, 1), P(1, 1), P(1, 0)))
    with pytest.raises(ValueError):  # collinear vertex, not strictly convex
        ConvexPolygon2((P(0, 0), P(0.5, 0), P(1, 0), P(1, 1)))
    with pytest.raises(ValueError):
        Circle2(P(0, 0), 0.0)
    with pytest.raises(ValueError):
        Capsule2(UNIT_X, -0.1)


def test_transform_identity():
    tri = regular_polygon(3, 0.14, P(0.3, 0.4))
    out = transform_polygon(tri, 0.0, P(0, 0))
    assert np.allclose(out.as_array(), tri.as_array(), atol=1e-15)


def test_square_quarter_turn_is_same_vertex_set():
    sq = square(0.2, 0.2, 0.4, 0.4)
    out = transform_polygon(sq, math.pi / 2, P(0, 0))
    a = sorted(map(tuple, np.round(sq.as_array(), 12)))
    b = sorted(map(tuple, np.round(out.as_array(), 12)))
    assert a == b


def test_triangle_half_turn_is_point_reflection():
    tri = ConvexPolygon2((P(0, 0), P(3, 0), P(0, 3)))
    # centroid (1, 1): reflection p -> 2c - p, computed by hand
    expected = {(2.0, 2.0), (-1.0, 2.0), (2.0, -1.0)}
    out = transform_polygon(tri, math.pi, P(0, 0))
    assert {tuple(np.round(v, 12)) for v in out.vertices} == expected
    assert polygon_centroid(out) == pytest.approx(P(1, 1), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(3, 8), st.floats(0.01, 1), st.floats(-10, 10), points)
def test_transform_preserves_convexity_and_centroid_shift(n, side, rot, t):
    g = regular_polygon(n, side, P(0.5, 0.5))
    out = transform_polygon(g, rot, t)  # constructor re-validates CCW convexity
    c0, c1 = polygon_centroid(g), polygon_centroid(out)
    assert c1.x == pytest.approx(c0.x + t.x, abs=1e-9)
    assert c1.y == pytest.approx(c0.y + t.y, abs=1e-9)


def test_point_polygon_and_shape_distances():
    sq = square(0, 0, 1, 1)
    assert point_in_polygon(P(1, 1), sq)  # closed
    assert point_polygon_distance(P(2, 1), sq) == pytest.approx(1.0)
    assert polygon_polygon_distance(sq, square(1.5, 0, 2, 1)) == pytest.approx(0.5)
    assert polygon_polygon_distance(sq, square(0.5, 0.5, 2, 2)) == 0.0
    assert shape_distance(Circle2(P(3, 0.5), 1.0), sq) == pytest.approx(1.0)
    assert shape_distance(Circle2(P(0, 0), 1.0), Circle2(P(3, 0), 1.0)) == pytest.approx(1.0)


def test_polygon_distance_matches_shapely():
    shapely = pytest.importorskip("shapely.geometry")
    rng = np.random.default_rng(7)
    for _ in range(200):
        g1 = regular_polygon(int(rng.integers(3, 7)), rng.uniform(0.05, 0.3), P(*rng.uniform(0, 1, 2)),
                             rng.uniform(0, 6.3))
        g2 = regular_polygon(int(rng.integers(3, 7)), rng.uniform(0.05, 0.3), P(*rng.uniform(0, 1, 2)),
                             rng.uniform(0, 6.3))
        ref = shapely.Polygon(g1.vertices).distance(shapely.Polygon(g2.vertices))
        assert polygon_polygon_distance(g1, g2) == pytest.approx(ref, abs=1e-9)


# --- vectorized kernels agree with the scalar path


def test_vectorized_kernels_match_scalar():
    rng = np.random.default_rng(11)
    a = rng.uniform(-1, 2, (500, 4))
    b = rng.uniform(-1, 2, (500, 4))
    p = rng.uniform(-1, 2, (500, 2))
    # a few degenerate segments
    a[:10, 2:] = a[:10, :2]
    d_ps = points_segments_distance_many(p[:, 0], p[:, 1], *a.T)
    d_ss = segments_segments_distance_many(tuple(a.T), tuple(b.T))
    g = regular_polygon(5, 0.7, P(0.5, 0.5), 0.2)
    d_sp = segments_polygon_distance_many(tuple(a.T), g)
    for i in range(500):
        s1 = Segment2(P(*a[i, :2]), P(*a[i, 2:]))
        s2 = Segment2(P(*b[i, :2]), P(*b[i, 2:]))
        assert d_ps[i] == pytest.approx(point_segment_distance(P(*p[i]), s1), abs=1e-12)
        assert d_ss[i] == pytest.approx(segment_segment_distance(s1, s2), abs=1e-12)
        assert d_sp[i] == pytest.approx(segment_polygon_distance(s1, g), abs=1e-12)
