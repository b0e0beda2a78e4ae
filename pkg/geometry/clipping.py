"""Clipping of polygons and polylines against a convex buffer."""

from __future__ import annotations

from typing import List, Tuple

import numpy as np

from errors import ContractViolationError
from geometry.primitives import Buffer, Polygon, Polyline, is_convex, polygon_area, signed_ring_area


def _bbox_disjoint(a: Tuple[float, float, float, float], b: Tuple[float, float, float, float]) -> bool:
    return a[2] < b[0] or b[2] < a[0] or a[3] < b[1] or b[3] < a[1]


def _require_convex(clip: Buffer) -> None:
    if not is_convex(clip.ring):
        raise ContractViolationError("clip polygon must be convex")


def _clip_edges(clip: Buffer) -> Tuple[np.ndarray, np.ndarray]:
    """Start points and direction vectors of the counter-clockwise clip edges."""
    ring = clip.ring.outer_array
    return ring[:-1], np.diff(ring, axis=0)


def clip_ring(ring: np.ndarray, clip: Buffer) -> np.ndarray:
    """Sutherland-Hodgman clip of one closed ring against the convex buffer.

    Returns the open vertex list of the clipped ring (possibly empty). The
    winding of the input ring is preserved.
    """
    pts = ring[:-1]
    starts, dirs = _clip_edges(clip)
    for a, e in zip(starts, dirs):
        if len(pts) == 0:
            break
        side = e[0] * (pts[:, 1] - a[1]) - e[1] * (pts[:, 0] - a[0])
        inside = side >= 0
        if inside.all():
            continue
        if not inside.any():
            return np.empty((0, 2))
        out: List[np.ndarray] = []
        prev, prev_side, prev_in = pts[-1], side[-1], inside[-1]
        for cur, cur_side, cur_in in zip(pts, side, inside):
            if cur_in != prev_in:
                t = prev_side / (prev_side - cur_side)
                out.append(prev + t * (cur - prev))
            if cur_in:
                out.append(cur)
            prev, prev_side, prev_in = cur, cur_side, cur_in
        pts = np.array(out).reshape(-1, 2)
    return pts


def intersection_area(subject: Polygon, clip: Buffer) -> float:
    """Area of ``subject`` inside the buffer, in square meters."""
    _require_convex(clip)
    if _bbox_disjoint(subject.bounds, clip.bounds):
        return 0.0
    total = 0.0
    for ring in subject.rings():
        clipped = clip_ring(ring, clip)
        total += signed_ring_area(clipped)
    upper = min(polygon_area(subject), clip.area)
    return float(min(max(total, 0.0), upper))


def _segment_parameters(line: Polyline, clip: Buffer) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cyrus-Beck entry/exit parameters for every segment of ``line``.

    Returns ``(t_enter, t_exit, seg_lengths)``; a segment is inside the clip
    on ``[t_enter, t_exit]`` when ``t_enter < t_exit``.
    """
    verts = line.array
    p0 = verts[:-1]
    d = np.diff(verts, axis=0)
    starts, dirs = _clip_edges(clip)
    # inward normals of a counter-clockwise ring
    normals = np.column_stack([-dirs[:, 1], dirs[:, 0]])
    num = np.einsum("mek,ek->me", p0[:, None, :] - starts[None, :, :], normals)
    den = d @ normals.T
    with np.errstate(divide="ignore", invalid="ignore"):
        t = -num / den
    entering = den > 0
    exiting = den < 0
    parallel_out = (den == 0) & (num < 0)
    t_enter = np.where(entering, t, -np.inf).max(axis=1)
    t_exit = np.where(exiting, t, np.inf).min(axis=1)
    t_enter = np.maximum(t_enter, 0.0)
    t_exit = np.minimum(t_exit, 1.0)
    blocked = parallel_out.any(axis=1)
    t_exit = np.where(blocked, t_enter, t_exit)
    return t_enter, t_exit, np.hypot(d[:, 0], d[:, 1])


def polyline_length_in(line: Polyline, clip: Buffer) -> float:
    """Total length of ``line`` inside the buffer, in meters."""
    _require_convex(clip)
    if _bbox_disjoint(line.bounds, clip.bounds):
        return 0.0
    t_enter, t_exit, lengths = _segment_parameters(line, clip)
    inside = np.clip(t_exit - t_enter, 0.0, 1.0)
    return float(np.dot(inside, lengths))


def polyline_length_outside(line: Polyline, clip: Buffer) -> float:
    """Length of the pieces of ``line`` that lie outside the buffer."""
    _require_convex(clip)
    if _bbox_disjoint(line.bounds, clip.bounds):
        return line.length()
    t_enter, t_exit, lengths = _segment_parameters(line, clip)
    hit = t_exit > t_enter
    head = np.where(hit, t_enter, 1.0)
    tail = np.where(hit, 1.0 - t_exit, 0.0)
    return float(np.dot(head + tail, lengths))
