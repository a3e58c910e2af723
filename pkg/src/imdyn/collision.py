"""Narrowphase contact geometry for circles, convex polygon pieces, and segments.

All functions are pure and work on plain float tuples; the dynamics module
owns body bookkeeping and decides which pairs to test. Contact normals point
from participant A to participant B; for body-boundary contacts A is always
the boundary, so a floor below a falling body yields a normal pushing the
body back up.

Convex pieces are vertex lists in positive-shoelace order (see primitives);
their outward edge normal for edge a->b is (ey, -ex)/|e|.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

Vec = tuple[float, float]


@dataclass(slots=True)
class ContactPoint:
    point: Vec
    normal: Vec  # unit, A -> B
    penetration: float


def _sub(a: Vec, b: Vec) -> Vec:
    return (a[0] - b[0], a[1] - b[1])


def _dot(a: Vec, b: Vec) -> float:
    return a[0] * b[0] + a[1] * b[1]


def _cross(a: Vec, b: Vec) -> float:
    return a[0] * b[1] - a[1] * b[0]


def _norm(a: Vec) -> float:
    return math.hypot(a[0], a[1])


def circle_circle(c1: Vec, r1: float, c2: Vec, r2: float) -> ContactPoint | None:
    """Contact between two circles; normal from circle 1 to circle 2."""
    d = _sub(c2, c1)
    dist = _norm(d)
    pen = r1 + r2 - dist
    if pen <= 0:
        return None
    if dist > 1e-12:
        n = (d[0] / dist, d[1] / dist)
    else:
        n = (1.0, 0.0)  # concentric; any direction is as wrong as any other
    point = (c1[0] + n[0] * (r1 - pen * 0.5), c1[1] + n[1] * (r1 - pen * 0.5))
    return ContactPoint(point=point, normal=n, penetration=pen)


def _edge_normals(piece: list[Vec]) -> list[Vec]:
    out = []
    n = len(piece)
    for i in range(n):
        ax, ay = piece[i]
        bx, by = piece[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        ln = math.hypot(ex, ey)
        out.append((ey / ln, -ex / ln))
    return out


def circle_piece(center: Vec, radius: float, piece: list[Vec]) -> ContactPoint | None:
    """Contact between one convex piece and a circle; normal piece -> circle."""
    n_verts = len(piece)
    best_sep = -math.inf
    best_i = 0
    normals = _edge_normals(piece)
    for i in range(n_verts):
        sep = _dot(normals[i], _sub(center, piece[i]))
        if sep > best_sep:
            best_sep = sep
            best_i = i
    if best_sep > radius:
        return None
    if best_sep <= 0.0:
        # center inside the piece: push out along the least-buried face
        n = normals[best_i]
        pen = radius - best_sep
        point = (center[0] - n[0] * radius, center[1] - n[1] * radius)
        return ContactPoint(point=point, normal=n, penetration=pen)
    a = piece[best_i]
    b = piece[(best_i + 1) % n_verts]
    ab = _sub(b, a)
    t = _dot(_sub(center, a), ab) / _dot(ab, ab)
    t = min(max(t, 0.0), 1.0)
    closest = (a[0] + ab[0] * t, a[1] + ab[1] * t)
    d = _sub(center, closest)
    dist = _norm(d)
    if dist >= radius:
        return None
    if dist > 1e-12:
        n = (d[0] / dist, d[1] / dist)
    else:
        n = normals[best_i]
    return ContactPoint(point=closest, normal=n, penetration=radius - dist)


def circle_polygon(center: Vec, radius: float, pieces: list[list[Vec]]) -> ContactPoint | None:
    """Deepest contact against a union of convex pieces; normal polygon -> circle."""
    best: ContactPoint | None = None
    for piece in pieces:
        c = circle_piece(center, radius, piece)
        if c is not None and (best is None or c.penetration > best.penetration):
            best = c
    return best


def _best_face(P: list[Vec], Q: list[Vec]) -> tuple[float, int]:
    """Max over P's faces of the min separation of Q's vertices; SAT query."""
    best_sep = -math.inf
    best_i = 0
    normals = _edge_normals(P)
    for i in range(len(P)):
        n = normals[i]
        v = P[i]
        sep = min(_dot(n, _sub(q, v)) for q in Q)
        if sep > best_sep:
            best_sep = sep
            best_i = i
    return best_sep, best_i


def _clip_segment(p0: Vec, p1: Vec, normal: Vec, offset: float) -> list[Vec]:
    """Keep the part of segment [p0, p1] with normal . p >= offset."""
    d0 = _dot(normal, p0) - offset
    d1 = _dot(normal, p1) - offset
    out: list[Vec] = []
    if d0 >= 0:
        out.append(p0)
    if d1 >= 0:
        out.append(p1)
    if d0 * d1 < 0:
        t = d0 / (d0 - d1)
        out.append((p0[0] + t * (p1[0] - p0[0]), p0[1] + t * (p1[1] - p0[1])))
    return out


def piece_piece(A: list[Vec], B: list[Vec]) -> list[ContactPoint]:
    """SAT + reference-face clipping between two convex pieces.

    Returns up to two contact points with normals from A to B, so a face-on
    resting contact keeps both corners and does not rock.
    """
    sep_a, face_a = _best_face(A, B)
    if sep_a > 0:
        return []
    sep_b, face_b = _best_face(B, A)
    if sep_b > 0:
        return []

    # reference shape owns the face of least penetration; slight preference
    # for A keeps the choice deterministic when the two are numerically tied
    if sep_b > sep_a + 1e-9:
        ref, inc, ref_face, flip = B, A, face_b, True
    else:
        ref, inc, ref_face, flip = A, B, face_a, False

    ref_normals = _edge_normals(ref)
    n = ref_normals[ref_face]
    r0 = ref[ref_face]
    r1 = ref[(ref_face + 1) % len(ref)]

    inc_normals = _edge_normals(inc)
    inc_face = min(range(len(inc)), key=lambda j: _dot(n, inc_normals[j]))
    i0 = inc[inc_face]
    i1 = inc[(inc_face + 1) % len(inc)]

    tangent = _sub(r1, r0)
    t_len = _norm(tangent)
    tangent = (tangent[0] / t_len, tangent[1] / t_len)

    pts = _clip_segment(i0, i1, tangent, _dot(tangent, r0))
    if len(pts) < 2:
        return []
    neg_t = (-tangent[0], -tangent[1])
    pts = _clip_segment(pts[0], pts[1], neg_t, _dot(neg_t, r1))
    if len(pts) < 2:
        return []

    out: list[ContactPoint] = []
    for p in pts:
        depth = -(_dot(n, p) - _dot(n, r0))
        if depth >= 0:
            normal = (-n[0], -n[1]) if flip else n
            out.append(ContactPoint(point=p, normal=normal, penetration=depth))
    return out


def polygon_polygon(pieces_a: list[list[Vec]], pieces_b: list[list[Vec]]) -> list[ContactPoint]:
    out: list[ContactPoint] = []
    for A in pieces_a:
        for B in pieces_b:
            out.extend(piece_piece(A, B))
    return _dedupe(out)


def circle_segment(center: Vec, radius: float, p0: Vec, p1: Vec) -> ContactPoint | None:
    """Circle against a boundary segment; normal segment -> circle."""
    ab = _sub(p1, p0)
    t = _dot(_sub(center, p0), ab) / _dot(ab, ab)
    t = min(max(t, 0.0), 1.0)
    closest = (p0[0] + ab[0] * t, p0[1] + ab[1] * t)
    d = _sub(center, closest)
    dist = _norm(d)
    if dist >= radius:
        return None
    if dist > 1e-12:
        n = (d[0] / dist, d[1] / dist)
    else:
        ln = _norm(ab)
        n = (-ab[1] / ln, ab[0] / ln)
    return ContactPoint(point=closest, normal=n, penetration=radius - dist)


def polygon_segment(pieces: list[list[Vec]], p0: Vec, p1: Vec, com: Vec) -> list[ContactPoint]:
    """Polygon vertices that crossed a boundary segment; normal segment -> body.

    The segment is treated as one-sided: its normal faces the body's center
    of mass, so a body resting on a floor is pushed back up rather than
    through. Vertices outside the segment's span are ignored.
    """
    ab = _sub(p1, p0)
    length = _norm(ab)
    tangent = (ab[0] / length, ab[1] / length)
    n = (-tangent[1], tangent[0])
    if _dot(n, _sub(com, p0)) < 0:
        n = (-n[0], -n[1])
    out: list[ContactPoint] = []
    for piece in pieces:
        for v in piece:
            depth = -_dot(n, _sub(v, p0))
            if depth <= 0:
                continue
            t = _dot(tangent, _sub(v, p0))
            if t < 0 or t > length:
                continue
            out.append(ContactPoint(point=v, normal=n, penetration=depth))
    return _dedupe(out)


def _dedupe(contacts: list[ContactPoint]) -> list[ContactPoint]:
    """Welded pieces share vertices; keep one contact per distinct point."""
    seen: dict[tuple[int, int], ContactPoint] = {}
    for c in contacts:
        key = (round(c.point[0] * 1024), round(c.point[1] * 1024))
        prev = seen.get(key)
        if prev is None or c.penetration > prev.penetration:
            seen[key] = c
    return list(seen.values())


def bounding_radius(pieces: list[list[Vec]]) -> float:
    """Radius about the origin that encloses every piece vertex."""
    best = 0.0
    for piece in pieces:
        for v in piece:
            r = _norm(v)
            if r > best:
                best = r
    return best
