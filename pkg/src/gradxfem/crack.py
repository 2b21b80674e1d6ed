"""Polyline crack geometry and its level-set pair (phi, psi)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return np.sign((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))

    return (
        orient(p1, p2, q1) * orient(p1, p2, q2) < 0
        and orient(q1, q2, p1) * orient(q1, q2, p2) < 0
    )


@dataclass(frozen=True)
class CrackGeometry:
    """Crack as an open polyline; the last vertex is the tip.

    The normal is the tip tangent rotated by +90 degrees, so for a crack
    running in +x the positive side is +y.
    """

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise ValueError("crack needs at least two 2D points")
        seg = np.diff(pts, axis=0)
        if np.any(np.hypot(seg[:, 0], seg[:, 1]) == 0):
            raise ValueError("crack has a zero-length segment")
        for i in range(len(seg)):
            for j in range(i + 2, len(seg)):
                if _segments_cross(pts[i], pts[i + 1], pts[j], pts[j + 1]):
                    raise ValueError("crack polyline intersects itself")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def straight(cls, mouth, tip) -> "CrackGeometry":
        return cls(np.array([mouth, tip], dtype=float))

    @property
    def tip(self) -> np.ndarray:
        return self.points[-1]

    @property
    def mouth(self) -> np.ndarray:
        return self.points[0]

    @property
    def tangent(self) -> np.ndarray:
        d = self.points[-1] - self.points[-2]
        return d / np.hypot(*d)

    @property
    def normal(self) -> np.ndarray:
        t = self.tangent
        return np.array([-t[1], t[0]])


def _nearest_on_crack(points, crack: CrackGeometry):
    """Nearest crack point, its distance and the owning segment normal for each point."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    a = crack.points[:-1]
    d = np.diff(crack.points, axis=0)
    L2 = np.sum(d * d, axis=1)
    s = np.einsum("psi,si->ps", p[:, None, :] - a[None], d) / L2
    s = np.clip(s, 0.0, 1.0)
    foot = a[None] + s[..., None] * d[None]
    dist = np.linalg.norm(p[:, None, :] - foot, axis=2)
    k = np.argmin(dist, axis=1)
    rows = np.arange(len(p))
    seg_n = np.column_stack([-d[:, 1], d[:, 0]]) / np.sqrt(L2)[:, None]
    return foot[rows, k], dist[rows, k], seg_n[k]


def tangential_coordinate(points, crack: CrackGeometry) -> np.ndarray:
    """psi = t . (x - tip): negative behind the tip, zero on the tip normal line."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    return (p - crack.tip) @ crack.tangent


def signed_distance(points, crack: CrackGeometry) -> np.ndarray:
    """Normal level set phi.

    Behind the tip (psi <= 0) this is the distance to the nearest crack point
    signed by the local normal. Ahead of the tip it is the tip-normal
    projection n . (x - tip), which keeps phi = 0 on the extended crack line.
    """
    p = np.atleast_2d(np.asarray(points, dtype=float))
    foot, dist, n = _nearest_on_crack(p, crack)
    side = np.einsum("pi,pi->p", p - foot, n)
    phi = np.where(side >= 0, dist, -dist)
    ahead = tangential_coordinate(p, crack) > 0
    phi[ahead] = (p[ahead] - crack.tip) @ crack.normal
    return phi


def polar_at_tip(points, crack: CrackGeometry):
    """Crack-tip polar coordinates (r, theta) with theta = atan2(phi, psi)."""
    phi = signed_distance(points, crack)
    psi = tangential_coordinate(points, crack)
    return np.hypot(phi, psi), np.arctan2(phi, psi)
