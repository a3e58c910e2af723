"""Fit collision primitives (circle or convex-decomposed polygon) to binary masks.

The polygon path runs: corner-lattice contour trace -> Douglas-Peucker
simplification -> ear-clipping triangulation -> convex merging. Tracing walks
the crack between filled and empty pixels, so vertices land on the integer
corner lattice and the untouched contour rasterizes back to the exact mask.

Orientation convention: vertex rings are ordered so the shoelace signed area
is positive in (x, y) coordinates as stored. With +y pointing down this looks
clockwise on screen; all area/inertia formulas below assume this sign.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateMask, MultiComponentMask, ShapeError, ValidationError

CIRCLE_IOU_THRESHOLD = 0.85
POLYGON_IOU_FLOOR = 0.95
DEFAULT_TOLERANCE = 2.0


@dataclass(slots=True)
class Primitive:
    kind: str  # "circle" | "polygon"
    center: np.ndarray | None = None
    radius: float | None = None
    vertices: np.ndarray | None = None  # outer ring, (n, 2)
    pieces: list[np.ndarray] = field(default_factory=list)  # convex, positive area


@dataclass(slots=True)
class MassProperties:
    mass: float
    inertia: float  # about center_of_mass, scalar
    center_of_mass: np.ndarray


def circle_primitive(center, radius: float) -> Primitive:
    if radius <= 0:
        raise ValidationError("radius", "must be > 0")
    return Primitive(kind="circle", center=np.asarray(center, dtype=float), radius=float(radius))


def polygon_primitive(vertices: np.ndarray, pieces: list[np.ndarray]) -> Primitive:
    vertices = np.asarray(vertices, dtype=float)
    if vertices.shape[0] < 3:
        raise ValidationError("vertices", "polygon needs >= 3 vertices")
    return Primitive(kind="polygon", vertices=vertices, pieces=[np.asarray(p, dtype=float) for p in pieces])


# ------------------------------------------------------------------ mask basics


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two boolean rasters."""
    if a.shape != b.shape:
        raise ShapeError(f"mask shapes differ: {a.shape} vs {b.shape}")
    a = a.astype(bool)
    b = b.astype(bool)
    union = int(np.count_nonzero(a | b))
    if union == 0:
        raise DegenerateMask("IoU of two empty masks is undefined")
    inter = int(np.count_nonzero(a & b))
    return inter / union


def mask_centroid(mask: np.ndarray) -> np.ndarray:
    """Mean of occupied pixel centers, (x, y)."""
    ys, xs = np.nonzero(mask)
    if xs.size == 0:
        raise DegenerateMask("empty mask has no centroid")
    return np.array([xs.mean() + 0.5, ys.mean() + 0.5])


def fit_circle(mask: np.ndarray) -> tuple[np.ndarray, float]:
    """Equal-area circle: center at the mask centroid, radius = sqrt(area/pi)."""
    center = mask_centroid(mask)
    area = int(np.count_nonzero(mask))
    return center, float(np.sqrt(area / np.pi))


def _count_components(mask: np.ndarray) -> int:
    """4-connected component count via vectorized flood fill."""
    remaining = mask.astype(bool).copy()
    count = 0
    while remaining.any():
        count += 1
        seed = int(np.argmax(remaining))
        filled = np.zeros_like(remaining)
        filled.flat[seed] = True
        while True:
            grown = filled
            for _ in range(4):  # a few growth rounds per convergence check
                g = grown.copy()
                g[1:, :] |= grown[:-1, :]
                g[:-1, :] |= grown[1:, :]
                g[:, 1:] |= grown[:, :-1]
                g[:, :-1] |= grown[:, 1:]
                grown = g & remaining
            if np.array_equal(grown, filled):
                break
            filled = grown
        remaining &= ~filled
    return count


# ------------------------------------------------------------------ contour trace


def _boundary_loops(mask: np.ndarray) -> list[np.ndarray]:
    """All closed boundary loops of the mask on the pixel-corner lattice.

    Returns integer (n, 2) rings; outer boundaries come out with positive
    shoelace area, holes negative.
    """
    h, w = mask.shape
    padded = np.zeros((h + 2, w + 2), dtype=bool)
    padded[1:-1, 1:-1] = mask

    edges: list[tuple[tuple[int, int], tuple[int, int]]] = []
    ys, xs = np.nonzero(mask & ~padded[:-2, 1:-1])  # empty above -> top edge, +x
    edges += [((x, y), (x + 1, y)) for y, x in zip(ys.tolist(), xs.tolist())]
    ys, xs = np.nonzero(mask & ~padded[1:-1, 2:])  # empty right -> right edge, +y
    edges += [((x + 1, y), (x + 1, y + 1)) for y, x in zip(ys.tolist(), xs.tolist())]
    ys, xs = np.nonzero(mask & ~padded[2:, 1:-1])  # empty below -> bottom edge, -x
    edges += [((x + 1, y + 1), (x, y + 1)) for y, x in zip(ys.tolist(), xs.tolist())]
    ys, xs = np.nonzero(mask & ~padded[1:-1, :-2])  # empty left -> left edge, -y
    edges += [((x, y + 1), (x, y)) for y, x in zip(ys.tolist(), xs.tolist())]

    outgoing: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for start, end in edges:
        outgoing.setdefault(start, []).append(end)

    consumed: set[tuple[tuple[int, int], tuple[int, int]]] = set()
    loops: list[np.ndarray] = []
    for start, end in edges:
        if (start, end) in consumed:
            continue
        loop = [start]
        cur, nxt = start, end
        consumed.add((cur, nxt))
        while nxt != start:
            loop.append(nxt)
            candidates = [e for e in outgoing.get(nxt, []) if (nxt, e) not in consumed]
            if not candidates:
                raise AssertionError("open boundary chain; mask edges inconsistent")
            if len(candidates) == 1:
                chosen = candidates[0]
            else:
                # corner where two diagonal pixels touch: take the left turn so
                # each loop stays on one side of the pinch
                din = (nxt[0] - cur[0], nxt[1] - cur[1])
                chosen = max(candidates, key=lambda e: din[0] * (e[1] - nxt[1]) - din[1] * (e[0] - nxt[0]))
            consumed.add((nxt, chosen))
            cur, nxt = nxt, chosen
        loops.append(np.array(loop, dtype=float))
    return loops


def _signed_area(ring: np.ndarray) -> float:
    x, y = ring[:, 0], ring[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


# ------------------------------------------------------------------ simplification


def _point_segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.linalg.norm(points - a, axis=1)
    t = np.clip((points - a) @ ab / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.linalg.norm(points - proj, axis=1)


def _douglas_peucker(points: np.ndarray, tolerance: float) -> np.ndarray:
    """Simplify an open chain; endpoints always kept."""
    keep = np.zeros(len(points), dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, len(points) - 1)]
    while stack:
        i, j = stack.pop()
        if j <= i + 1:
            continue
        d = _point_segment_distance(points[i + 1 : j], points[i], points[j])
        k = int(np.argmax(d))
        if d[k] > tolerance:
            keep[i + 1 + k] = True
            stack.append((i, i + 1 + k))
            stack.append((i + 1 + k, j))
    return points[keep]


def _simplify_ring(ring: np.ndarray, tolerance: float) -> np.ndarray:
    if tolerance <= 0 or len(ring) <= 4:
        return _drop_collinear(ring)
    far = int(np.argmax(np.linalg.norm(ring - ring[0], axis=1)))
    if far == 0:
        return _drop_collinear(ring)
    first = _douglas_peucker(ring[: far + 1], tolerance)
    closed = np.vstack([ring[far:], ring[:1]])
    second = _douglas_peucker(closed, tolerance)
    out = np.vstack([first[:-1], second[:-1]])
    return _drop_collinear(out)


def _drop_collinear(ring: np.ndarray, eps: float = 1e-9) -> np.ndarray:
    if len(ring) < 3:
        return ring
    keep = []
    n = len(ring)
    for i in range(n):
        a, b, c = ring[i - 1], ring[i], ring[(i + 1) % n]
        cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
        if abs(cross) > eps or not np.allclose(a, c):
            if not np.allclose(a, b):
                keep.append(i)
    return ring[keep] if len(keep) >= 3 else ring


# ------------------------------------------------------------------ decomposition


def _triangulate(ring: np.ndarray) -> list[tuple[int, int, int]]:
    """Ear-clip a simple positive-area ring into index triangles."""
    n = len(ring)
    if n < 3:
        raise ValidationError("vertices", "cannot triangulate fewer than 3 vertices")
    indices = list(range(n))
    triangles: list[tuple[int, int, int]] = []

    def cross_at(ia: int, ib: int, ic: int) -> float:
        a, b, c = ring[ia], ring[ib], ring[ic]
        return (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])

    def any_point_inside(ia: int, ib: int, ic: int) -> bool:
        a, b, c = ring[ia], ring[ib], ring[ic]
        for ip in indices:
            if ip in (ia, ib, ic):
                continue
            p = ring[ip]
            d1 = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
            d2 = (c[0] - b[0]) * (p[1] - b[1]) - (c[1] - b[1]) * (p[0] - b[0])
            d3 = (a[0] - c[0]) * (p[1] - c[1]) - (a[1] - c[1]) * (p[0] - c[0])
            if d1 > 1e-12 and d2 > 1e-12 and d3 > 1e-12:
                return True
        return False

    guard = 0
    while len(indices) > 3:
        guard += 1
        if guard > 10 * n * n:
            raise AssertionError("ear clipping failed to converge")
        clipped = False
        for pos in range(len(indices)):
            ia = indices[pos - 1]
            ib = indices[pos]
            ic = indices[(pos + 1) % len(indices)]
            if cross_at(ia, ib, ic) <= 1e-12:
                continue  # reflex or collinear corner, not an ear
            if any_point_inside(ia, ib, ic):
                continue
            triangles.append((ia, ib, ic))
            indices.pop(pos)
            clipped = True
            break
        if not clipped:
            # numerically stuck: drop the flattest corner and carry on
            flattest = min(
                range(len(indices)),
                key=lambda pos: abs(
                    cross_at(indices[pos - 1], indices[pos], indices[(pos + 1) % len(indices)])
                ),
            )
            indices.pop(flattest)
            if len(indices) < 3:
                break
    if len(indices) == 3:
        triangles.append(tuple(indices))
    return triangles


def _merge_convex(ring: np.ndarray, triangles: list[tuple[int, int, int]]) -> list[np.ndarray]:
    """Greedy Hertel-Mehlhorn: merge triangles across diagonals while convex."""
    pieces: list[list[int]] = [list(t) for t in triangles]

    def is_convex(cycle: list[int]) -> bool:
        m = len(cycle)
        for i in range(m):
            a, b, c = ring[cycle[i - 1]], ring[cycle[i]], ring[cycle[(i + 1) % m]]
            if (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]) < -1e-9:
                return False
        return True

    merged = True
    while merged:
        merged = False
        edge_owner: dict[tuple[int, int], int] = {}
        for pi, cycle in enumerate(pieces):
            for i in range(len(cycle)):
                edge_owner[(cycle[i], cycle[(i + 1) % len(cycle)])] = pi
        for (u, v), pi in sorted(edge_owner.items()):
            pj = edge_owner.get((v, u))
            if pj is None or pj == pi:
                continue
            a, b = pieces[pi], pieces[pj]
            iu = a.index(u)
            # splice b's interior path (after u, before v) into a's u->v edge
            jv = b.index(v)
            path = [b[(jv + k) % len(b)] for k in range(2, len(b))]
            candidate = a[: iu + 1] + path + a[iu + 1 :]
            if len(set(candidate)) != len(candidate):
                continue
            if is_convex(candidate):
                pieces[pi] = candidate
                pieces[pj] = []
                pieces = [p for p in pieces if p]
                merged = True
                break
    return [ring[np.array(cycle)] for cycle in pieces]


# ------------------------------------------------------------------ rasterization


def rasterize(primitive: Primitive, shape: tuple[int, int]) -> np.ndarray:
    """Pixel-center inclusion test of the primitive on an (H, W) grid."""
    h, w = shape
    cy, cx = np.mgrid[0:h, 0:w]
    px = cx + 0.5
    py = cy + 0.5
    if primitive.kind == "circle":
        dx = px - primitive.center[0]
        dy = py - primitive.center[1]
        return dx * dx + dy * dy <= primitive.radius * primitive.radius
    out = np.zeros(shape, dtype=bool)
    for piece in primitive.pieces:
        inside = np.ones(shape, dtype=bool)
        n = len(piece)
        for i in range(n):
            ax, ay = piece[i]
            bx, by = piece[(i + 1) % n]
            inside &= (bx - ax) * (py - ay) - (by - ay) * (px - ax) >= 0
            if not inside.any():
                break
        out |= inside
    return out


# ------------------------------------------------------------------ fitting


def extract_polygon(mask: np.ndarray, tolerance: float = DEFAULT_TOLERANCE) -> Primitive:
    """Trace, simplify, and convex-decompose the mask contour.

    Retries with shrinking tolerance until the rasterized pieces cover the
    mask with IoU >= 0.95; the untouched trace is exact, so hole-free masks
    always terminate.
    """
    mask = mask.astype(bool)
    if not mask.any():
        raise DegenerateMask("cannot extract a polygon from an empty mask")
    n_comp = _count_components(mask)
    if n_comp != 1:
        raise MultiComponentMask(n_comp)

    loops = [lp for lp in _boundary_loops(mask) if _signed_area(lp) > 0]
    loops.sort(key=_signed_area, reverse=True)

    tol = tolerance
    best: tuple[float, Primitive] | None = None
    while True:
        pieces: list[np.ndarray] = []
        outer: np.ndarray | None = None
        for lp in loops:
            ring = _simplify_ring(lp, tol)
            if len(ring) < 3:
                continue
            if _signed_area(ring) <= 0:
                continue
            if outer is None:
                outer = ring
            tris = _triangulate(ring)
            pieces.extend(_merge_convex(ring, tris))
        if outer is not None and pieces:
            prim = polygon_primitive(outer, pieces)
            iou = mask_iou(rasterize(prim, mask.shape), mask)
            if iou >= POLYGON_IOU_FLOOR:
                return prim
            if best is None or iou > best[0]:
                best = (iou, prim)
        if tol <= 0:
            break
        tol = tol / 2 if tol / 2 >= 0.25 else 0.0
    assert best is not None
    return best[1]


def choose_primitive(mask: np.ndarray, tolerance: float = DEFAULT_TOLERANCE) -> Primitive:
    """Circle when the equal-area circle covers the mask well, else polygon."""
    mask = mask.astype(bool)
    center, radius = fit_circle(mask)  # raises DegenerateMask on empty
    circle = circle_primitive(center, radius)
    if mask_iou(rasterize(circle, mask.shape), mask) >= CIRCLE_IOU_THRESHOLD:
        return circle
    return extract_polygon(mask, tolerance)


# ------------------------------------------------------------------ mass properties


def _piece_moments(piece: np.ndarray) -> tuple[float, np.ndarray, float]:
    """(area, centroid, second polar moment about the origin) of a convex piece."""
    x = piece[:, 0]
    y = piece[:, 1]
    x1 = np.roll(x, -1)
    y1 = np.roll(y, -1)
    cross = x * y1 - x1 * y
    area = 0.5 * float(cross.sum())
    cx = float(((x + x1) * cross).sum() / (6.0 * area))
    cy = float(((y + y1) * cross).sum() / (6.0 * area))
    j_origin = float((cross * (x * x + x * x1 + x1 * x1 + y * y + y * y1 + y1 * y1)).sum()) / 12.0
    return area, np.array([cx, cy]), j_origin


def mass_properties(primitive: Primitive, mass: float) -> MassProperties:
    """Scalar inertia about the center of mass for a uniform-density primitive."""
    if mass <= 0:
        raise ValidationError("mass", "must be > 0")
    if primitive.kind == "circle":
        inertia = 0.5 * mass * primitive.radius**2
        return MassProperties(mass=mass, inertia=inertia, center_of_mass=primitive.center.copy())
    total_area = 0.0
    weighted_c = np.zeros(2)
    j_origin = 0.0
    for piece in primitive.pieces:
        a, c, j = _piece_moments(piece)
        total_area += a
        weighted_c += a * c
        j_origin += j
    if total_area <= 0:
        raise ValidationError("vertices", "polygon pieces have non-positive area")
    com = weighted_c / total_area
    density = mass / total_area
    inertia = density * (j_origin - total_area * float(com @ com))
    return MassProperties(mass=mass, inertia=float(inertia), center_of_mass=com)


def scale_primitive(primitive: Primitive, s: float) -> Primitive:
    """Uniformly scale about the raster origin (used for px -> cm conversion)."""
    if primitive.kind == "circle":
        return circle_primitive(primitive.center * s, primitive.radius * s)
    return polygon_primitive(primitive.vertices * s, [p * s for p in primitive.pieces])


def translate_primitive(primitive: Primitive, delta) -> Primitive:
    delta = np.asarray(delta, dtype=float)
    if primitive.kind == "circle":
        return circle_primitive(primitive.center + delta, primitive.radius)
    return polygon_primitive(primitive.vertices + delta, [p + delta for p in primitive.pieces])


# ------------------------------------------------------------------ debug overlay


def overlay(primitive: Primitive, mask: np.ndarray) -> np.ndarray:
    """Primitive outline drawn over the mask, for eyeballing fits."""
    h, w = mask.shape
    img = np.zeros((h, w, 3), dtype=np.uint8)
    img[mask] = (90, 90, 90)
    pink = np.array((255, 105, 180), dtype=np.uint8)

    def draw_segment(a, b):
        length = max(int(np.ceil(np.linalg.norm(b - a) * 2)), 1)
        ts = np.linspace(0.0, 1.0, length + 1)
        pts = a[None, :] + ts[:, None] * (b - a)[None, :]
        xs = np.clip(pts[:, 0].astype(int), 0, w - 1)
        ys = np.clip(pts[:, 1].astype(int), 0, h - 1)
        img[ys, xs] = pink

    if primitive.kind == "circle":
        ts = np.linspace(0.0, 2 * np.pi, max(int(primitive.radius * 8), 32))
        xs = primitive.center[0] + primitive.radius * np.cos(ts)
        ys = primitive.center[1] + primitive.radius * np.sin(ts)
        for ax, ay in zip(np.clip(xs.astype(int), 0, w - 1), np.clip(ys.astype(int), 0, h - 1)):
            img[ay, ax] = pink
    else:
        for piece in primitive.pieces:
            for i in range(len(piece)):
                draw_segment(piece[i], piece[(i + 1) % len(piece)])
    return img
