"""Small 2D geometry kernel: predicates, angles, segment intersection."""

from __future__ import annotations

import math

import numpy as np

TWO_PI = 2.0 * math.pi
HALF_PI = 0.5 * math.pi
QUARTER_PI = 0.25 * math.pi

# Bias used when rounding half-quarter turning angles (e.g. regular octagon
# corners sit exactly on the 45 degree tie); ties round away from zero.
_TIE_BIAS = 1e-9


def cross2(ux, uy, vx, vy):
    return ux * vy - uy * vx


def orient(a, b, c) -> float:
    """Twice the signed area of triangle (a, b, c)."""
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def principal_angle(a: float) -> float:
    """Map an angle to (-pi, pi]."""
    a = math.fmod(a, TWO_PI)
    if a <= -math.pi:
        a += TWO_PI
    elif a > math.pi:
        a -= TWO_PI
    return a


def fold_quarter(a: float) -> float:
    """Fold an angle difference into [-pi/4, pi/4), modulo quarter turns."""
    a = math.fmod(a, HALF_PI)
    if a < -QUARTER_PI:
        a += HALF_PI
    elif a >= QUARTER_PI:
        a -= HALF_PI
    return a


def round_quarters(turning: float) -> int:
    """Quarter turns absorbed at a boundary vertex, ties away from zero."""
    x = turning / HALF_PI
    if x >= 0.0:
        return int(math.floor(x + 0.5 + _TIE_BIAS))
    return -int(math.floor(-x + 0.5 + _TIE_BIAS))


def polygon_area(points: np.ndarray) -> float:
    x = points[:, 0]
    y = points[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def polygon_centroid(points: np.ndarray) -> np.ndarray:
    x = points[:, 0]
    y = points[:, 1]
    xn = np.roll(x, -1)
    yn = np.roll(y, -1)
    w = x * yn - xn * y
    area = 0.5 * float(np.sum(w))
    if abs(area) < 1e-300:
        return points.mean(axis=0)
    cx = float(np.sum((x + xn) * w)) / (6.0 * area)
    cy = float(np.sum((y + yn) * w)) / (6.0 * area)
    return np.array([cx, cy])


def point_in_polygon(p, points: np.ndarray) -> bool:
    """Winding-number containment test; points on the boundary count as in."""
    x, y = float(p[0]), float(p[1])
    wn = 0
    n = len(points)
    for i in range(n):
        ax, ay = points[i]
        bx, by = points[(i + 1) % n]
        if ay <= y:
            if by > y and cross2(bx - ax, by - ay, x - ax, y - ay) > 0:
                wn += 1
        elif by <= y and cross2(bx - ax, by - ay, x - ax, y - ay) < 0:
            wn -= 1
    return wn != 0


def points_in_polygon(pts: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Vectorized winding-number test for an array of query points."""
    x = pts[:, 0][:, None]
    y = pts[:, 1][:, None]
    ax = poly[:, 0][None, :]
    ay = poly[:, 1][None, :]
    bx = np.roll(poly[:, 0], -1)[None, :]
    by = np.roll(poly[:, 1], -1)[None, :]
    side = (bx - ax) * (y - ay) - (by - ay) * (x - ax)
    up = (ay <= y) & (by > y) & (side > 0)
    dn = (ay > y) & (by <= y) & (side < 0)
    wn = up.sum(axis=1) - dn.sum(axis=1)
    return wn != 0


def segment_intersection(p0, p1, q0, q1, eps: float = 1e-14):
    """Intersection of segments [p0,p1] and [q0,q1].

    Returns (t, s, point) with t, s in [0, 1] the parameters along each
    segment, or None if they do not intersect. Collinear overlaps return the
    first touching point along p.
    """
    rx, ry = p1[0] - p0[0], p1[1] - p0[1]
    sx, sy = q1[0] - q0[0], q1[1] - q0[1]
    denom = cross2(rx, ry, sx, sy)
    qpx, qpy = q0[0] - p0[0], q0[1] - p0[1]
    scale = max(abs(rx), abs(ry), abs(sx), abs(sy), 1e-300)
    if abs(denom) <= eps * scale * scale:
        if abs(cross2(qpx, qpy, rx, ry)) > eps * scale * scale:
            return None
        rr = rx * rx + ry * ry
        if rr <= 0.0:
            return None
        t0 = (qpx * rx + qpy * ry) / rr
        t1 = t0 + (sx * rx + sy * ry) / rr
        lo, hi = min(t0, t1), max(t0, t1)
        if hi < 0.0 or lo > 1.0:
            return None
        t = min(max(lo, 0.0), 1.0)
        pt = (p0[0] + t * rx, p0[1] + t * ry)
        s = 0.0 if abs(sx) + abs(sy) == 0 else ((pt[0] - q0[0]) * sx + (pt[1] - q0[1]) * sy) / (sx * sx + sy * sy)
        return t, min(max(s, 0.0), 1.0), pt
    t = cross2(qpx, qpy, sx, sy) / denom
    s = cross2(qpx, qpy, rx, ry) / denom
    tol = 1e-12
    if -tol <= t <= 1.0 + tol and -tol <= s <= 1.0 + tol:
        t = min(max(t, 0.0), 1.0)
        s = min(max(s, 0.0), 1.0)
        return t, s, (p0[0] + t * rx, p0[1] + t * ry)
    return None


def polyline_length(points: np.ndarray) -> float:
    return float(np.sum(np.hypot(np.diff(points[:, 0]), np.diff(points[:, 1]))))


def polyline_cumlen(points: np.ndarray) -> np.ndarray:
    seg = np.hypot(np.diff(points[:, 0]), np.diff(points[:, 1]))
    return np.concatenate([[0.0], np.cumsum(seg)])


def polyline_point_at(points: np.ndarray, s: float) -> np.ndarray:
    """Point at arc length s along a polyline (clamped to its extent)."""
    cum = polyline_cumlen(points)
    s = min(max(s, 0.0), cum[-1])
    i = int(np.searchsorted(cum, s, side="right")) - 1
    i = min(max(i, 0), len(points) - 2)
    ds = cum[i + 1] - cum[i]
    t = 0.0 if ds <= 0 else (s - cum[i]) / ds
    return points[i] * (1.0 - t) + points[i + 1] * t


def hausdorff_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric Hausdorff distance between two polylines (vertex sampling)."""

    def one_sided(p, q):
        d = np.hypot(p[:, 0][:, None] - q[:, 0][None, :], p[:, 1][:, None] - q[:, 1][None, :])
        return float(d.min(axis=1).max())

    return max(one_sided(a, b), one_sided(b, a))


def discrete_curvature(points: np.ndarray) -> float:
    """Total absolute turning along a polyline; ranking metric for dedup."""
    if len(points) < 3:
        return 0.0
    d = np.diff(points, axis=0)
    ang = np.arctan2(d[:, 1], d[:, 0])
    turn = np.diff(ang)
    turn = (turn + math.pi) % TWO_PI - math.pi
    return float(np.abs(turn).sum())
