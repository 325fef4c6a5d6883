"""Planar lumen/obstacle environments and tip contact projection.

Environments are 2.5D: lumen centerlines and wall polylines live in the
horizontal z=0 plane (every experiment is table-top); the vertical
dimension matters only inside a lumen's circular cross-section and for
suspension height.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def _as_polyline(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
        raise ValueError("polyline must be an (N>=2, 2) array of xy points")
    return pts


def _cross2(a, b) -> float:
    return float(a[0] * b[1] - a[1] * b[0])


def _segments_intersect(p, q, r, s) -> bool:
    """Proper intersection test for segments pq and rs (shared endpoints ok)."""
    d1 = _cross2(q - p, r - p)
    d2 = _cross2(q - p, s - p)
    d3 = _cross2(s - r, p - r)
    d4 = _cross2(s - r, q - r)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


def _self_intersects(pts: np.ndarray) -> bool:
    n = len(pts) - 1
    for i in range(n):
        for j in range(i + 2, n):
            if i == 0 and j == n - 1 and np.allclose(pts[0], pts[-1]):
                continue  # closed loop closure
            if _segments_intersect(pts[i], pts[i + 1], pts[j], pts[j + 1]):
                return True
    return False


@dataclass(frozen=True)
class LumenSegment:
    """Tube around a planar centerline polyline."""

    centerline: np.ndarray
    inner_diameter: float

    def __post_init__(self):
        pts = _as_polyline(self.centerline)
        if self.inner_diameter <= 0:
            raise ValueError("inner diameter must be positive")
        if _self_intersects(pts):
            raise ValueError("lumen centerline self-intersects")
        object.__setattr__(self, "centerline", pts)
        seglen = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if np.any(seglen <= 0):
            raise ValueError("degenerate centerline segment")
        object.__setattr__(self, "_cumlen",
                           np.concatenate([[0.0], np.cumsum(seglen)]))

    @property
    def length(self) -> float:
        return float(self._cumlen[-1])

    def point_at(self, s: float) -> np.ndarray:
        """3D centerline point at arc length s (clamped), z = 0."""
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self._cumlen, s, side="right") - 1)
        i = min(i, len(self.centerline) - 2)
        seg = self.centerline[i + 1] - self.centerline[i]
        seg_len = self._cumlen[i + 1] - self._cumlen[i]
        frac = (s - self._cumlen[i]) / seg_len
        xy = self.centerline[i] + frac * seg
        return np.array([xy[0], xy[1], 0.0])

    def tangent_at(self, s: float) -> np.ndarray:
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self._cumlen, s, side="right") - 1)
        i = min(i, len(self.centerline) - 2)
        seg = self.centerline[i + 1] - self.centerline[i]
        t = seg / np.linalg.norm(seg)
        return np.array([t[0], t[1], 0.0])

    def nearest(self, point3: np.ndarray) -> tuple[float, float]:
        """(arc length of nearest axis point, 3D distance to the axis)."""
        p = np.asarray(point3, dtype=float)
        best_s, best_d = 0.0, math.inf
        for i in range(len(self.centerline) - 1):
            a = np.array([*self.centerline[i], 0.0])
            b = np.array([*self.centerline[i + 1], 0.0])
            ab = b - a
            tt = float(np.clip((p - a) @ ab / (ab @ ab), 0.0, 1.0))
            q = a + tt * ab
            d = float(np.linalg.norm(p - q))
            if d < best_d:
                best_d = d
                best_s = float(self._cumlen[i] + tt * np.linalg.norm(ab))
        return best_s, best_d


@dataclass(frozen=True)
class Target:
    label: str
    position: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position",
                           np.asarray(self.position, dtype=float).reshape(3))


@dataclass(frozen=True)
class Environment:
    """Lumen segments, free wall polylines and labeled target points."""

    segments: tuple[LumenSegment, ...] = ()
    obstacles: tuple[np.ndarray, ...] = ()
    targets: tuple[Target, ...] = ()

    def __post_init__(self):
        obs = tuple(_as_polyline(o) for o in self.obstacles)
        for o in obs:
            if _self_intersects(o):
                raise ValueError("obstacle polyline self-intersects")
        object.__setattr__(self, "segments", tuple(self.segments))
        object.__setattr__(self, "obstacles", obs)
        object.__setattr__(self, "targets", tuple(self.targets))

    @property
    def empty(self) -> bool:
        return not self.segments and not self.obstacles

    def validate_vine(self, vine_diameter: float):
        for seg in self.segments:
            if seg.inner_diameter <= vine_diameter:
                raise ValueError(
                    f"lumen inner diameter {seg.inner_diameter} not "
                    f"traversable by a {vine_diameter} vine")

    def to_dict(self) -> dict:
        return {
            "segments": [{"centerline": seg.centerline.tolist(),
                          "inner_diameter": seg.inner_diameter}
                         for seg in self.segments],
            "obstacles": [o.tolist() for o in self.obstacles],
            "targets": [{"label": t.label, "position": t.position.tolist()}
                        for t in self.targets],
        }


def _obstacle_distance(point3: np.ndarray, poly: np.ndarray):
    """Horizontal distance to a wall polyline and the outward direction."""
    p = np.array([point3[0], point3[1]])
    best_d, best_dir = math.inf, np.zeros(2)
    for i in range(len(poly) - 1):
        a, b = poly[i], poly[i + 1]
        ab = b - a
        tt = float(np.clip((p - a) @ ab / (ab @ ab), 0.0, 1.0))
        q = a + tt * ab
        d = float(np.linalg.norm(p - q))
        if d < best_d:
            best_d = d
            best_dir = (p - q) / d if d > 1e-12 else np.zeros(2)
    return best_d, best_dir


def contact_project(tip_position, tip_radius: float, env: Environment):
    """Clamp the tip capsule inside the environment.

    Returns (projected position, contact flag, wall gap).  Inside a lumen
    the gap is the clearance between the capsule surface and the tube
    wall; outside every lumen, the clearance to the nearest obstacle
    wall.  Free space reports an infinite gap.  Penetration beyond the
    wall is projected back to gap zero (tolerance 1e-6 m).
    """
    p = np.asarray(tip_position, dtype=float).copy()
    if env.empty:
        return p, False, math.inf

    gap = math.inf
    contact = False

    best = None  # (axis distance margin, segment, s, d)
    for seg in env.segments:
        s, d = seg.nearest(p)
        inner = seg.inner_diameter / 2.0 - tip_radius
        if best is None or d - inner < best[0]:
            best = (d - inner, seg, s, d)
    if best is not None:
        _, seg, s, d = best
        inner = seg.inner_diameter / 2.0 - tip_radius
        if d > inner:
            axis_pt = seg.point_at(s)
            if d > 1e-12:
                p = axis_pt + (p - axis_pt) * (inner / d)
            contact = True
            gap = 0.0
        else:
            gap = inner - d

    for poly in env.obstacles:
        d, out_dir = _obstacle_distance(p, poly)
        clearance = d - tip_radius
        if clearance < 0.0:
            p[0] += out_dir[0] * (-clearance)
            p[1] += out_dir[1] * (-clearance)
            contact = True
            gap = 0.0
        else:
            gap = min(gap, clearance)

    return p, contact, gap
