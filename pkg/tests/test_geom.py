import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xbdpatch.errors import MalformedWkt, MultiPolygonUnsupported
from xbdpatch.geom import PolygonRing, bounding_box, centroid, parse_wkt_polygon, signed_area, to_wkt

from oracles import raster_centroid, star_polygon

SQUARE = PolygonRing(((0, 0), (10, 0), (10, 10), (0, 10)))
L_SHAPE = PolygonRing(((0, 0), (4, 0), (4, 2), (2, 2), (2, 4), (0, 4)))
# frozen from raster_centroid(L_SHAPE.vertices) at 1e-3 px cells
L_SHAPE_CENTROID = (1.6666666666666667, 1.6666666666666667)


def test_parse_square_closed():
    ring = parse_wkt_polygon("POLYGON ((0 0, 10 0, 10 10, 0 10, 0 0))")
    assert len(ring) == 5
    assert ring.vertices[0] == ring.vertices[-1]


def test_parse_rectangle_bbox():
    ring = parse_wkt_polygon("POLYGON ((2.5 3.5, 7.5 3.5, 7.5 8.5, 2.5 8.5, 2.5 3.5))")
    assert bounding_box(ring) == (2.5, 3.5, 7.5, 8.5)


@pytest.mark.parametrize("text", [
    "POLYGON ((0 0, 10 0))",
    "POLYGON ((0 0, 10 0, 0 0, 10 0))",
    "POLYGON ((0 0, 10 0, 10 10, 0 10, 0 0)",
    "POLYGON ((0 0, 10 zero, 10 10, 0 0))",
    "POLYGON (0 0, 1 0, 1 1, 0 0)",
    "LINESTRING (0 0, 1 1)",
    "POLYGON EMPTY",
    "",
])
def test_parse_rejects_malformed(text):
    with pytest.raises(MalformedWkt):
        parse_wkt_polygon(text)


def test_parse_rejects_multipolygon():
    with pytest.raises(MultiPolygonUnsupported):
        parse_wkt_polygon("MULTIPOLYGON (((0 0, 1 0, 1 1, 0 0)))")


def test_parse_case_insensitive_and_ignores_holes():
    ring = parse_wkt_polygon("polygon((0 0,10 0,10 10,0 10,0 0),(2 2,3 2,3 3,2 2))")
    assert ring.vertices == SQUARE.vertices


def test_parse_open_ring_is_closed():
    ring = parse_wkt_polygon("POLYGON ((0 0, 10 0, 10 10))")
    assert ring.vertices == ((0, 0), (10, 0), (10, 10), (0, 0))


def test_parse_scientific_and_negative():
    ring = parse_wkt_polygon("POLYGON ((-1.5e1 2, 3E0 -4.25, .5 1, -1.5e1 2))")
    assert ring.vertices[:3] == ((-15.0, 2.0), (3.0, -4.25), (0.5, 1.0))


def test_ring_rejects_non_finite():
    with pytest.raises(ValueError):
        PolygonRing(((0, 0), (1, float("nan")), (1, 1)))


def test_centroid_square():
    assert centroid(SQUARE) == (5.0, 5.0)


def test_centroid_l_shape_matches_raster_oracle():
    cx, cy = centroid(L_SHAPE)
    assert abs(cx - L_SHAPE_CENTROID[0]) < 0.01
    assert abs(cy - L_SHAPE_CENTROID[1]) < 0.01


def test_centroid_collinear_falls_back_to_vertex_mean():
    assert centroid(PolygonRing(((0, 0), (1, 1), (2, 2)))) == (1.0, 1.0)


def test_centroid_area_not_vertex_mean():
    # extra vertices along one edge pull the vertex mean but not the area centroid
    dense = PolygonRing(((0, 0), (1, 0), (2, 0), (3, 0), (4, 0), (4, 4), (0, 4)))
    assert centroid(dense) == pytest.approx((2.0, 2.0), abs=1e-12)


def test_bounding_box_cases():
    assert bounding_box(SQUARE) == (0, 0, 10, 10)
    assert bounding_box(PolygonRing(((3, 4), (3, 4), (3, 4)))) == (3, 4, 3, 4)


def test_signed_area_orientation():
    assert signed_area(SQUARE) == 100.0
    assert signed_area(SQUARE.reversed()) == -100.0


coords = st.floats(min_value=-1e4, max_value=1e4, allow_nan=False, allow_infinity=False)
rings = st.lists(st.tuples(coords, coords), min_size=3, max_size=12, unique=True).map(
    lambda pts: PolygonRing(tuple(pts)))


@given(rings, st.integers(0, 11))
def test_centroid_orientation_and_start_independent(ring, shift):
    pts = list(ring.open_vertices())
    shift %= len(pts)
    rotated = PolygonRing(tuple(pts[shift:] + pts[:shift]))
    assert centroid(ring.reversed()) == centroid(ring)
    assert centroid(rotated) == centroid(ring)


@settings(max_examples=200)
@given(st.integers(0, 2 ** 32 - 1), st.floats(-500, 500), st.floats(-500, 500))
def test_centroid_translation(seed, dx, dy):
    ring = PolygonRing(tuple(star_polygon(np.random.default_rng(seed))))
    cx, cy = centroid(ring)
    tx, ty = centroid(ring.translated(dx, dy))
    assert math.isclose(tx, cx + dx, abs_tol=1e-9)
    assert math.isclose(ty, cy + dy, abs_tol=1e-9)


@settings(max_examples=200)
@given(st.integers(0, 2 ** 32 - 1))
def test_centroid_inside_bbox(seed):
    rng = np.random.default_rng(seed)
    ring = PolygonRing(tuple(star_polygon(rng, r_min=0.5)))
    x0, y0, x1, y1 = bounding_box(ring)
    cx, cy = centroid(ring)
    assert x0 <= cx <= x1 and y0 <= cy <= y1


@given(rings)
def test_wkt_round_trip(ring):
    if len(set(ring.open_vertices())) < 3:
        return
    again = parse_wkt_polygon(to_wkt(ring))
    assert again.vertices == ring.vertices
    assert parse_wkt_polygon(to_wkt(again)).vertices == ring.vertices


def test_star_polygons_match_raster_oracle():
    rng = np.random.default_rng(99)
    for _ in range(10):
        pts = star_polygon(rng)
        got = centroid(PolygonRing(tuple(pts)))
        want = raster_centroid(pts)
        assert abs(got[0] - want[0]) < 0.01 and abs(got[1] - want[1]) < 0.01
