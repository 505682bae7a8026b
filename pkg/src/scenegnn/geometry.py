"""Small planar geometry helpers: oriented boxes, convex clipping, segments."""

from __future__ import annotations

import math

import numpy as np


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = math.fmod(a + math.pi, 2.0 * math.pi)
    if w <= 0.0:
        w += 2.0 * math.pi
    return w - math.pi


def box_corners(x: float, y: float, heading: float, length: float, width: float) -> np.ndarray:
    """Counter-clockwise corners of an oriented rectangle, shape (4, 2)."""
    c, s = math.cos(heading), math.sin(heading)
    hl, hw = length / 2.0, width / 2.0
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([x, y])


def polygon_area(poly: np.ndarray) -> float:
    """Signed shoelace area (positive for counter-clockwise vertices)."""
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def clip_convex(subject: np.ndarray, clipper: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of ``subject`` by the convex CCW ``clipper``."""
    out = [tuple(p) for p in subject]
    n = len(clipper)
    for k in range(n):
        if not out:
            break
        ax, ay = clipper[k]
        bx, by = clipper[(k + 1) % n]
        ex, ey = bx - ax, by - ay
        inp = out
        out = []

        def side(p):
            return ex * (p[1] - ay) - ey * (p[0] - ax)

        prev = inp[-1]
        sp = side(prev)
        for cur in inp:
            sc = side(cur)
            if sc >= 0.0:
                if sp < 0.0:
                    out.append(_lerp(prev, cur, sp, sc))
                out.append(cur)
            elif sp >= 0.0:
                out.append(_lerp(prev, cur, sp, sc))
            prev, sp = cur, sc
    return np.array(out, dtype=float).reshape(-1, 2)


def _lerp(p, q, sp, sq):
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def segment_intersection(p1, p2, q1, q2, eps: float = 1e-12):
    """Intersection of segments p1p2 and q1q2 as ``(t, u)`` parameters, or None.

    Collinear overlaps are reported at the first overlapping point along p.
    """
    p1, p2, q1, q2 = (np.asarray(v, dtype=float) for v in (p1, p2, q1, q2))
    r = p2 - p1
    s = q2 - q1
    denom = r[0] * s[1] - r[1] * s[0]
    qp = q1 - p1
    if abs(denom) <= eps * max(np.dot(r, r), np.dot(s, s), 1.0):
        if abs(qp[0] * r[1] - qp[1] * r[0]) > 1e-9 * max(np.linalg.norm(r), 1.0):
            return None
        rr = float(np.dot(r, r))
        t0 = float(np.dot(qp, r)) / rr
        t1 = t0 + float(np.dot(s, r)) / rr
        lo, hi = max(min(t0, t1), 0.0), min(max(t0, t1), 1.0)
        if lo > hi:
            return None
        point = p1 + lo * r
        u = float(np.dot(point - q1, s) / np.dot(s, s))
        return lo, u
    t = (qp[0] * s[1] - qp[1] * s[0]) / denom
    u = (qp[0] * r[1] - qp[1] * r[0]) / denom
    tol = 1e-12
    if -tol <= t <= 1.0 + tol and -tol <= u <= 1.0 + tol:
        return min(max(t, 0.0), 1.0), min(max(u, 0.0), 1.0)
    return None
