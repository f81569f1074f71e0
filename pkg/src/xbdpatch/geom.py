"""Polygon rings in pixel space: WKT parsing, area centroid and bounding box."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple

import numpy as np

from .errors import MalformedWkt, MultiPolygonUnsupported

Point = Tuple[float, float]

# Below this |signed area| the ring is treated as degenerate and the centroid
# falls back to the plain vertex mean.
DEGENERATE_AREA = 1e-9
CENTROID_METHOD = "area"

_NUMBER = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_PAIR_RE = re.compile(rf"^\s*({_NUMBER})\s+({_NUMBER})(?:\s+{_NUMBER})?\s*$")
_HEAD_RE = re.compile(r"^\s*([A-Za-z]+)\s*(.*)$", re.DOTALL)


@dataclass(frozen=True)
class PolygonRing:
    """Closed vertex ring. The last vertex always repeats the first."""

    vertices: Tuple[Point, ...]

    def __post_init__(self):
        verts = tuple((float(x), float(y)) for x, y in self.vertices)
        if len(verts) < 3:
            raise ValueError("a ring needs at least 3 vertices")
        for x, y in verts:
            if not (math.isfinite(x) and math.isfinite(y)):
                raise ValueError(f"non-finite coordinate ({x}, {y})")
        if verts[0] != verts[-1]:
            verts = verts + (verts[0],)
        object.__setattr__(self, "vertices", verts)

    @classmethod
    def from_points(cls, points: Iterable[Sequence[float]]) -> "PolygonRing":
        return cls(tuple((p[0], p[1]) for p in points))

    def __len__(self):
        return len(self.vertices)

    def open_vertices(self) -> Tuple[Point, ...]:
        return self.vertices[:-1]

    def reversed(self) -> "PolygonRing":
        return PolygonRing(self.vertices[::-1])

    def translated(self, dx: float, dy: float) -> "PolygonRing":
        return PolygonRing(tuple((x + dx, y + dy) for x, y in self.vertices))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.vertices, dtype=np.float64)


def _split_top_level(body: str) -> list:
    """Split ``(a), (b)`` into the contents of each top-level group."""
    groups, depth, start = [], 0, None
    for i, ch in enumerate(body):
        if ch == "(":
            depth += 1
            if depth == 1:
                start = i + 1
            elif depth > 1:
                raise MalformedWkt("unexpected nesting inside polygon ring list")
        elif ch == ")":
            depth -= 1
            if depth < 0:
                raise MalformedWkt("unbalanced parentheses")
            groups.append(body[start:i])
        elif depth == 0 and ch not in " \t\r\n,":
            raise MalformedWkt(f"unexpected character {ch!r} between rings")
    if depth != 0:
        raise MalformedWkt("unbalanced parentheses")
    return groups


def parse_wkt_polygon(text: str) -> PolygonRing:
    """Parse ``POLYGON ((x y, ...), ...)`` and return the outer ring.

    Interior rings are accepted and dropped. A trailing Z/M ordinate on each
    vertex is tolerated and ignored.
    """
    m = _HEAD_RE.match(text or "")
    if not m:
        raise MalformedWkt(f"not a WKT polygon: {text[:40]!r}")
    keyword, rest = m.group(1).upper(), m.group(2).strip()
    if keyword == "MULTIPOLYGON":
        raise MultiPolygonUnsupported("MULTIPOLYGON is not supported")
    if keyword != "POLYGON":
        raise MalformedWkt(f"expected POLYGON, got {keyword}")
    if not (rest.startswith("(") and rest.endswith(")")):
        raise MalformedWkt("polygon body must be parenthesised")
    rings = _split_top_level(rest[1:-1])
    if not rings:
        raise MalformedWkt("polygon has no rings")

    points = []
    for token in rings[0].split(","):
        pm = _PAIR_RE.match(token)
        if not pm:
            raise MalformedWkt(f"bad coordinate {token.strip()!r}")
        points.append((float(pm.group(1)), float(pm.group(2))))
    if len(set(points)) < 3:
        raise MalformedWkt("ring has fewer than 3 distinct vertices")
    try:
        return PolygonRing(tuple(points))
    except ValueError as exc:
        raise MalformedWkt(str(exc)) from None


def _fmt(v: float) -> str:
    return str(int(v)) if v.is_integer() and abs(v) < 1e15 else repr(v)


def to_wkt(ring: PolygonRing) -> str:
    return "POLYGON ((" + ", ".join(f"{_fmt(x)} {_fmt(y)}" for x, y in ring.vertices) + "))"


def signed_area(ring: PolygonRing) -> float:
    v = ring.as_array()
    x, y = v[:-1, 0], v[:-1, 1]
    x2, y2 = v[1:, 0], v[1:, 1]
    return math.fsum(x * y2 - x2 * y) / 2.0


def centroid(ring: PolygonRing) -> Point:
    """Area centroid by the shoelace formula.

    Every partial sum goes through ``math.fsum`` so the result is independent
    of vertex order and starting point, bit for bit.
    """
    v = ring.as_array()
    x, y = v[:-1, 0], v[:-1, 1]
    x2, y2 = v[1:, 0], v[1:, 1]
    cross = x * y2 - x2 * y
    area2 = math.fsum(cross)
    if abs(area2) / 2.0 < DEGENERATE_AREA:
        return math.fsum(x) / len(x), math.fsum(y) / len(y)
    cx = math.fsum((x + x2) * cross) / (3.0 * area2)
    cy = math.fsum((y + y2) * cross) / (3.0 * area2)
    return cx, cy


def bounding_box(ring: PolygonRing) -> Tuple[float, float, float, float]:
    xs = [p[0] for p in ring.vertices]
    ys = [p[1] for p in ring.vertices]
    return min(xs), min(ys), max(xs), max(ys)
