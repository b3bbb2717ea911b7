"""Deterministic synthetic masks and brute-force reference computations.

Shapes are defined analytically (mostly in polar form about a centre) so
that lobe counts, notch counts and areas are known by construction. The
``oracle_*`` helpers are deliberately naive; they exist for tests and must
not be used on the feature-extraction path.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .dataset import scan_dataset
from .errors import SpecOutOfCanvas
from .imgproc import MaskImage

KINDS = ("disk", "ellipse", "rect", "star", "rosette", "plus")

# Divisible by 2n for n = 3..8 so tips and notches are sampled exactly.
POLAR_SAMPLES = 3360
MARGIN = 2


@dataclass(frozen=True)
class ShapeSpec:
    """Parameters for one synthetic shape.

    ``radius`` is the disk/star outer radius, the rosette lobe-centre radius,
    or the plus-sign half span. ``axes`` holds the ellipse semi-axes or the
    rectangle's full width and height. ``depth`` is the star notch depth as a
    fraction of the radius; ``lobe_radius`` the rosette lobe circle radius;
    ``arm`` the plus-sign arm width. ``rotation`` turns the shape from +x
    toward +y (clockwise on screen). With ``seed`` set, the centre is
    jittered by up to half a pixel.
    """

    kind: str
    radius: float = 40.0
    axes: tuple = (40.0, 20.0)
    lobes: int = 5
    depth: float = 0.5
    lobe_radius: float = 10.0
    arm: float = 20.0
    rotation: float = 0.0
    canvas: tuple = (128, 128)
    center: Optional[tuple] = None
    seed: Optional[int] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown shape kind {self.kind!r}")
        if self.kind in ("star", "rosette") and self.lobes < 3:
            raise ValueError("stars and rosettes need at least 3 lobes")
        if not 0.0 <= self.depth <= 1.0:
            raise ValueError("depth must lie in [0, 1]")

    def resolved_center(self) -> tuple:
        w, h = self.canvas
        cx, cy = self.center if self.center is not None else (w / 2, h / 2)
        if self.seed is not None:
            jx, jy = np.random.default_rng(self.seed).uniform(-0.5, 0.5, size=2)
            cx, cy = cx + jx, cy + jy
        return float(cx), float(cy)


def _polar(theta: np.ndarray, r: np.ndarray) -> np.ndarray:
    return np.column_stack([r * np.cos(theta), r * np.sin(theta)])


def _triangle_wave(theta: np.ndarray, n: int) -> np.ndarray:
    """0 at the tips (multiples of 2*pi/n), 1 midway between them."""
    phase = (theta * n / (2 * math.pi)) % 1.0
    return 1.0 - np.abs(1.0 - 2.0 * phase)


def rosette_radius(theta: np.ndarray, n: int, ring: float, lobe: float) -> np.ndarray:
    """Outer radius of the union of ``n`` lobe disks centred on a ring.

    A hub disk reaching exactly the inner crossing of neighbouring lobes
    plugs the central hole without touching the notches.
    """
    half = math.pi / n
    inner = ring * math.cos(half) - math.sqrt(max(lobe**2 - (ring * math.sin(half)) ** 2, 0.0))
    r = np.full_like(theta, max(inner, 0.0), dtype=float)
    for j in range(n):
        alpha = theta - 2 * math.pi * j / n
        s = ring * np.sin(alpha)
        reach = ring * np.cos(alpha) + np.sqrt(np.clip(lobe**2 - s**2, 0, None))
        inside = (np.abs(s) <= lobe) & (reach > 0)
        r = np.where(inside, np.maximum(r, reach), r)
    return r


def rosette_ring(n: int, lobe: float, overlap: float = 0.9) -> float:
    """Lobe-centre distance at which neighbouring lobes overlap by ``overlap``.

    ``overlap`` is half the centre spacing over the lobe radius: 1 makes
    neighbours tangent, smaller values merge them and flatten the notches.
    """
    return overlap * lobe / math.sin(math.pi / n)


def boundary(spec: ShapeSpec) -> np.ndarray:
    """Closed boundary polygon ``(m, 2)`` in canvas coordinates.

    Pixel ``(col, row)`` has its centre at ``(col + 0.5, row + 0.5)``.
    """
    theta = np.arange(POLAR_SAMPLES) * (2 * math.pi / POLAR_SAMPLES)
    k = spec.kind
    if k == "disk":
        local = _polar(theta, np.full_like(theta, spec.radius))
    elif k == "star":
        r = spec.radius * (1.0 - spec.depth * _triangle_wave(theta, spec.lobes))
        local = _polar(theta, r)
    elif k == "rosette":
        local = _polar(theta, rosette_radius(theta, spec.lobes, spec.radius, spec.lobe_radius))
    elif k == "ellipse":
        a, b = spec.axes
        local = np.column_stack([a * np.cos(theta), b * np.sin(theta)])
    elif k == "rect":
        w, h = spec.axes
        local = np.array([(-w / 2, -h / 2), (w / 2, -h / 2), (w / 2, h / 2), (-w / 2, h / 2)])
    elif k == "plus":
        s, a = spec.radius, spec.arm / 2
        local = np.array(
            [
                (a, -a), (s, -a), (s, a), (a, a), (a, s), (-a, s),
                (-a, a), (-s, a), (-s, -a), (-a, -a), (-a, -s), (a, -s),
            ]
        )
    else:  # pragma: no cover - guarded in ShapeSpec
        raise ValueError(k)
    t = math.radians(spec.rotation)
    rot = np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
    return local @ rot.T + np.array(spec.resolved_center())


def fill_polygon(poly: np.ndarray, width: int, height: int) -> np.ndarray:
    """Even-odd scanline fill sampled at pixel centres."""
    out = np.zeros((height, width), dtype=np.uint8)
    p0 = poly
    p1 = np.roll(poly, -1, axis=0)
    for row in range(height):
        y = row + 0.5
        cond = ((p0[:, 1] <= y) & (p1[:, 1] > y)) | ((p1[:, 1] <= y) & (p0[:, 1] > y))
        if not cond.any():
            continue
        a, b = p0[cond], p1[cond]
        xs = np.sort(a[:, 0] + (y - a[:, 1]) * (b[:, 0] - a[:, 0]) / (b[:, 1] - a[:, 1]))
        for xl, xr in zip(xs[::2], xs[1::2]):
            c0 = max(math.ceil(xl - 0.5), 0)
            c1 = min(math.ceil(xr - 0.5), width)
            if c1 > c0:
                out[row, c0:c1] = 1
    return out


def render(spec: ShapeSpec) -> MaskImage:
    poly = boundary(spec)
    w, h = spec.canvas
    lo, hi = poly.min(axis=0), poly.max(axis=0)
    if lo[0] < MARGIN or lo[1] < MARGIN or hi[0] > w - MARGIN or hi[1] > h - MARGIN:
        raise SpecOutOfCanvas(f"{spec.kind} spans {lo}..{hi}, canvas {w}x{h} with margin {MARGIN}")
    return MaskImage(fill_polygon(poly, w, h))


def analytic_area(spec: ShapeSpec) -> float:
    """Exact area of the continuous shape (rosette via its sampled polygon)."""
    k = spec.kind
    if k == "disk":
        return math.pi * spec.radius**2
    if k == "ellipse":
        return math.pi * spec.axes[0] * spec.axes[1]
    if k == "rect":
        return spec.axes[0] * spec.axes[1]
    if k == "plus":
        s, a = spec.radius, spec.arm
        return 2 * (2 * s) * a - a * a
    if k == "star":
        # integrate r^2/2 over one half-lobe, where r is linear in theta
        r0, r1 = spec.radius, spec.radius * (1 - spec.depth)
        half = math.pi / spec.lobes
        return 2 * spec.lobes * half * (r0 * r0 + r0 * r1 + r1 * r1) / 6
    poly = boundary(replace(spec, rotation=0.0, seed=None))
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y)))


def analytic_concave_count(spec: ShapeSpec) -> int:
    if spec.kind in ("star", "rosette"):
        return spec.lobes if (spec.kind == "rosette" or spec.depth > 0) else 0
    if spec.kind == "plus":
        return 4
    return 0


# ---------------------------------------------------------------------------
# oracles


def oracle_pixel_area(mask: MaskImage) -> int:
    total = 0
    for row in mask.pixels.tolist():
        for v in row:
            total += 1 if v else 0
    return total


def oracle_perimeter(points) -> float:
    """Step-length sum around a closed chain, one step at a time."""
    pts = [tuple(p) for p in np.asarray(points, dtype=float).tolist()]
    steps = []
    for i in range(len(pts)):
        (x0, y0), (x1, y1) = pts[i], pts[(i + 1) % len(pts)]
        steps.append(math.sqrt((x1 - x0) ** 2 + (y1 - y0) ** 2))
    return math.fsum(steps)


def oracle_hull(points) -> set:
    """Hull vertex set by the all-pairs supporting-line test, O(n^3).

    Only the leftmost and rightmost point of each row can be a vertex, so the
    test runs on those.
    """
    rows = {}
    for x, y in set(tuple(p) for p in np.asarray(points, dtype=float).tolist()):
        lo, hi = rows.get(y, (x, x))
        rows[y] = (min(lo, x), max(hi, x))
    pts = sorted({(x, y) for y, ends in rows.items() for x in ends})
    if len(pts) <= 2:
        return set(pts)
    verts = set()
    for i, a in enumerate(pts):
        for j, b in enumerate(pts):
            if i == j:
                continue
            ok = True
            for c in pts:
                if c == a or c == b:
                    continue
                cr = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
                if cr < 0:
                    ok = False
                    break
                if cr == 0:
                    t = (c[0] - a[0]) * (b[0] - a[0]) + (c[1] - a[1]) * (b[1] - a[1])
                    if not 0 < t < (b[0] - a[0]) ** 2 + (b[1] - a[1]) ** 2:
                        ok = False
                        break
            if ok:
                verts.add(a)
                verts.add(b)
    return verts


def oracle_corner_scan(vertices) -> tuple:
    """Classify the corners of an exact polygon by turn direction.

    Returns ``(convex, concave)`` counts for a polygon with positive
    shoelace orientation; straight vertices are ignored.
    """
    v = [tuple(p) for p in np.asarray(vertices, dtype=float).tolist()]
    area2 = sum(v[i][0] * v[(i + 1) % len(v)][1] - v[(i + 1) % len(v)][0] * v[i][1] for i in range(len(v)))
    sign = 1 if area2 > 0 else -1
    convex = concave = 0
    for i in range(len(v)):
        a, b, c = v[i - 1], v[i], v[(i + 1) % len(v)]
        cr = sign * ((b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]))
        if cr > 1e-12:
            convex += 1
        elif cr < -1e-12:
            concave += 1
    return convex, concave


def oracle_components(mask: MaskImage, connectivity: int = 8) -> list:
    """Connected components by breadth-first flood fill, in row-major discovery order."""
    img = mask.pixels
    h, w = img.shape
    seen = np.zeros_like(img, dtype=bool)
    nbrs = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    if connectivity == 8:
        nbrs += [(-1, -1), (-1, 1), (1, -1), (1, 1)]
    comps = []
    for r in range(h):
        for c in range(w):
            if img[r, c] and not seen[r, c]:
                seen[r, c] = True
                q, comp = deque([(r, c)]), []
                while q:
                    y, x = q.popleft()
                    comp.append((y, x))
                    for dy, dx in nbrs:
                        yy, xx = y + dy, x + dx
                        if 0 <= yy < h and 0 <= xx < w and img[yy, xx] and not seen[yy, xx]:
                            seen[yy, xx] = True
                            q.append((yy, xx))
                comps.append(comp)
    return comps


# ---------------------------------------------------------------------------
# corpus

CLASS_DIRS = ("normal", "benign", "malignant")


def _benign_spec(rng: np.random.Generator, canvas: tuple) -> ShapeSpec:
    a = rng.uniform(35, 70)
    b = a * rng.uniform(0.45, 0.95)
    return ShapeSpec(
        "ellipse",
        axes=(float(a), float(b)),
        rotation=float(rng.uniform(0, 180)),
        canvas=canvas,
        seed=int(rng.integers(2**31)),
    )


def _malignant_spec(rng: np.random.Generator, canvas: tuple) -> ShapeSpec:
    return ShapeSpec(
        "star",
        radius=float(rng.uniform(60, 95)),
        lobes=int(rng.integers(5, 9)),
        depth=float(rng.uniform(0.4, 0.55)),
        rotation=float(rng.uniform(0, 360)),
        canvas=canvas,
        seed=int(rng.integers(2**31)),
    )


def _normal_mask(rng: np.random.Generator, canvas: tuple) -> np.ndarray:
    w, h = canvas
    m = np.zeros((h, w), dtype=np.uint8)
    # half the normals carry a one- or two-pixel speck
    if rng.random() < 0.5:
        r, c = int(rng.integers(10, h - 10)), int(rng.integers(10, w - 10))
        m[r, c] = 1
        if rng.random() < 0.5:
            m[r, c + 1] = 1
    return m


def _texture(mask: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    base = rng.integers(20, 90, size=mask.shape).astype(np.int16)
    return np.clip(base - 40 * mask, 0, 255).astype(np.uint8)


def synth_corpus(root, per_class: int, seed: int, canvas: tuple = (256, 256)) -> tuple:
    """Write a BUSI-shaped corpus under ``root``; returns ``(index, {id: class})``.

    Benign-like samples are smooth ellipses, malignant-like ones are deep
    stars, normals are empty or one/two-pixel masks.
    """
    if per_class < 2:
        raise ValueError("per_class must be at least 2")
    root = Path(root)
    rng = np.random.Generator(np.random.PCG64(seed))
    labels = {}
    for cls in CLASS_DIRS:
        d = root / cls
        d.mkdir(parents=True, exist_ok=True)
        for i in range(1, per_class + 1):
            sid = f"{cls} ({i})"
            if cls == "normal":
                m = _normal_mask(rng, canvas)
            else:
                spec = _benign_spec(rng, canvas) if cls == "benign" else _malignant_spec(rng, canvas)
                m = render(spec).pixels
            Image.fromarray(_texture(m, rng), mode="L").save(d / f"{sid}.png")
            Image.fromarray(m * 255, mode="L").save(d / f"{sid}_mask.png")
            labels[sid] = cls
    return scan_dataset(root), labels
