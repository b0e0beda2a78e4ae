"""Planar geometry value types.

All coordinates are projected meters. Values are immutable once built and
expose their vertices as read-only numpy arrays for the clipping routines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence, Tuple

import numpy as np

from errors import InvalidGeometryError

BUFFER_VERTICES = 64


@dataclass(frozen=True)
class Point:
    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise InvalidGeometryError(f"Non-finite coordinates ({self.x}, {self.y})")

    def distance_to(self, other: "Point") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def translated(self, dx: float, dy: float) -> "Point":
        return Point(self.x + dx, self.y + dy)


def _as_array(points: Sequence[Point]) -> np.ndarray:
    arr = np.array([[p.x, p.y] for p in points], dtype=float).reshape(-1, 2)
    arr.setflags(write=False)
    return arr


def signed_ring_area(coords: np.ndarray) -> float:
    """Shoelace area of a ring given as an (m, 2) array, closed or open."""
    if len(coords) < 3:
        return 0.0
    x = coords[:, 0]
    y = coords[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _validate_ring(coords: np.ndarray, label: str) -> None:
    if len(coords) < 4:
        raise InvalidGeometryError(f"{label} needs at least 4 vertices, got {len(coords)}")
    if not np.array_equal(coords[0], coords[-1]):
        raise InvalidGeometryError(f"{label} is not closed")
    if not np.all(np.isfinite(coords)):
        raise InvalidGeometryError(f"{label} has non-finite coordinates")
    if signed_ring_area(coords[:-1]) == 0.0:
        raise InvalidGeometryError(f"{label} is degenerate (zero area)")


@dataclass(frozen=True)
class Polygon:
    """Polygon with a counter-clockwise outer ring and clockwise holes."""

    outer_ring: Tuple[Point, ...]
    holes: Tuple[Tuple[Point, ...], ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        _validate_ring(self.outer_array, "outer ring")
        if signed_ring_area(self.outer_array[:-1]) <= 0:
            raise InvalidGeometryError("outer ring must be counter-clockwise")
        for i, hole in enumerate(self.hole_arrays):
            _validate_ring(hole, f"hole {i}")
            if signed_ring_area(hole[:-1]) >= 0:
                raise InvalidGeometryError(f"hole {i} must be clockwise")

    @classmethod
    def from_coords(
        cls,
        outer: Iterable[Sequence[float]],
        holes: Iterable[Iterable[Sequence[float]]] = (),
        orient: bool = True,
    ) -> "Polygon":
        """Build a polygon from raw coordinate sequences.

        Rings are closed when the last vertex differs from the first; with
        ``orient`` they are re-wound to the required orientation.
        """

        def ring(seq: Iterable[Sequence[float]], ccw: bool) -> Tuple[Point, ...]:
            pts = [Point(float(x), float(y)) for x, y in seq]
            if pts and pts[0] != pts[-1]:
                pts.append(pts[0])
            if orient and len(pts) >= 4:
                area = signed_ring_area(_as_array(pts[:-1]))
                if (area > 0) != ccw and area != 0:
                    pts = pts[::-1]
            return tuple(pts)

        return cls(ring(outer, True), tuple(ring(h, False) for h in holes))

    @cached_property
    def outer_array(self) -> np.ndarray:
        return _as_array(self.outer_ring)

    @cached_property
    def hole_arrays(self) -> Tuple[np.ndarray, ...]:
        return tuple(_as_array(h) for h in self.holes)

    @cached_property
    def bounds(self) -> Tuple[float, float, float, float]:
        arr = self.outer_array
        return (float(arr[:, 0].min()), float(arr[:, 1].min()), float(arr[:, 0].max()), float(arr[:, 1].max()))

    def rings(self) -> Tuple[np.ndarray, ...]:
        """Outer ring followed by holes, each closed."""
        return (self.outer_array,) + self.hole_arrays

    def translated(self, dx: float, dy: float) -> "Polygon":
        return Polygon(
            tuple(p.translated(dx, dy) for p in self.outer_ring),
            tuple(tuple(p.translated(dx, dy) for p in h) for h in self.holes),
        )


@dataclass(frozen=True)
class Polyline:
    vertices: Tuple[Point, ...]

    def __post_init__(self) -> None:
        if len(self.vertices) < 2:
            raise InvalidGeometryError("polyline needs at least 2 vertices")
        for a, b in zip(self.vertices[:-1], self.vertices[1:]):
            if a == b:
                raise InvalidGeometryError(f"repeated consecutive vertex ({a.x}, {a.y})")

    @classmethod
    def from_coords(cls, coords: Iterable[Sequence[float]]) -> "Polyline":
        pts = []
        for x, y in coords:
            p = Point(float(x), float(y))
            if not pts or pts[-1] != p:
                pts.append(p)
        return cls(tuple(pts))

    @cached_property
    def array(self) -> np.ndarray:
        return _as_array(self.vertices)

    @cached_property
    def bounds(self) -> Tuple[float, float, float, float]:
        arr = self.array
        return (float(arr[:, 0].min()), float(arr[:, 1].min()), float(arr[:, 0].max()), float(arr[:, 1].max()))

    def length(self) -> float:
        return float(np.hypot(*np.diff(self.array, axis=0).T).sum())

    def translated(self, dx: float, dy: float) -> "Polyline":
        return Polyline(tuple(p.translated(dx, dy) for p in self.vertices))


@dataclass(frozen=True)
class Buffer:
    """Regular-polygon approximation of the disc of ``radius_m`` around ``center``."""

    center: Point
    radius_m: float
    ring: Polygon

    @classmethod
    def around(cls, center: Point, radius_m: float, n_vertices: int = BUFFER_VERTICES) -> "Buffer":
        if not radius_m > 0:
            raise InvalidGeometryError(f"buffer radius must be positive, got {radius_m}")
        angles = 2.0 * np.pi * np.arange(n_vertices) / n_vertices
        xs = center.x + radius_m * np.cos(angles)
        ys = center.y + radius_m * np.sin(angles)
        pts = tuple(Point(float(x), float(y)) for x, y in zip(xs, ys))
        return cls(center, float(radius_m), Polygon(pts + (pts[0],)))

    @property
    def n_vertices(self) -> int:
        return len(self.ring.outer_ring) - 1

    @cached_property
    def area(self) -> float:
        return polygon_area(self.ring)

    @property
    def inradius(self) -> float:
        return self.radius_m * math.cos(math.pi / self.n_vertices)

    @property
    def bounds(self) -> Tuple[float, float, float, float]:
        return self.ring.bounds


def polygon_area(p: Polygon) -> float:
    """Outer-ring area minus hole areas, in square meters."""
    outer = signed_ring_area(p.outer_array[:-1])
    holes = sum(abs(signed_ring_area(h[:-1])) for h in p.hole_arrays)
    if outer <= 0:
        raise InvalidGeometryError("degenerate outer ring")
    return max(outer - holes, 0.0)


def is_convex(p: Polygon) -> bool:
    """True when the outer ring turns left (or goes straight) at every vertex."""
    if p.holes:
        return False
    ring = p.outer_array[:-1]
    edges = np.roll(ring, -1, axis=0) - ring
    nxt = np.roll(edges, -1, axis=0)
    cross = edges[:, 0] * nxt[:, 1] - edges[:, 1] * nxt[:, 0]
    scale = float(np.abs(edges).max()) ** 2
    return bool(np.all(cross >= -1e-12 * scale))
