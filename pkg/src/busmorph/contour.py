"""Boundary tracing and planar polygon primitives.

Points are ``(x, y)`` with ``x`` the column and ``y`` the row (y grows
downward). Every closed polygon produced here is oriented so that the
shoelace sum ``sum(x_i * y_{i+1} - x_{i+1} * y_i)`` is non-negative.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import EmptyMask
from .imgproc import MaskImage

log = logging.getLogger(__name__)

# Moore neighbourhood, clockwise on screen starting at west.
_OFFSETS = np.array(
    [(-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1)], dtype=int
)
_OFFSET_INDEX = {tuple(o): i for i, o in enumerate(_OFFSETS.tolist())}


@dataclass(frozen=True)
class Contour:
    points: np.ndarray  # (n, 2) array of (x, y)
    degenerate: bool = False

    def __len__(self):
        return len(self.points)

    @classmethod
    def from_points(cls, pts) -> "Contour":
        arr = np.asarray(pts, dtype=float).reshape(-1, 2)
        return cls(arr, degenerate=len(arr) < 3)


@dataclass(frozen=True)
class BoundingRect:
    x: int
    y: int
    width: int
    height: int

    @property
    def area(self) -> int:
        return self.width * self.height


@dataclass(frozen=True)
class MinAreaRect:
    center: tuple
    width: float
    height: float
    angle: float  # degrees, direction of the ``width`` side from +x toward +y

    @property
    def area(self) -> float:
        return self.width * self.height


def trace_contour(mask: MaskImage) -> Contour:
    """Outer boundary of the component containing the first foreground pixel.

    Moore-neighbour tracing with Jacob's stopping criterion: the walk ends
    when the start pixel is re-entered from the same backtrack direction it
    was first left with, or when the first move out of the start repeats. Callers wanting the largest component should run
    :func:`busmorph.imgproc.largest_component` first.
    """
    img = mask.pixels
    fg = np.flatnonzero(img)
    if fg.size == 0:
        raise EmptyMask("mask has no foreground pixels")
    h, w = img.shape
    sy, sx = divmod(int(fg[0]), w)
    padded = np.zeros((h + 2, w + 2), dtype=bool)
    padded[1:-1, 1:-1] = img.astype(bool)

    def on(x, y):
        return padded[y + 1, x + 1]

    start = (sx, sy)
    # Row-major first pixel: its west neighbour is background.
    start_back = 0
    pts = [start]
    first_move = None
    cur, back = start, start_back
    limit = 4 * img.size + 8
    for _ in range(limit):
        nxt = None
        for step in range(1, 9):
            d = (back + step) % 8
            nx, ny = cur[0] + _OFFSETS[d][0], cur[1] + _OFFSETS[d][1]
            if on(nx, ny):
                nxt = (nx, ny)
                prev = (back + step - 1) % 8
                break
        if nxt is None:
            # isolated pixel
            return Contour(np.array([start], dtype=float), degenerate=True)
        # backtrack for the new pixel: the last background cell examined,
        # expressed relative to the new pixel
        bx = cur[0] + _OFFSETS[prev][0] - nxt[0]
        by = cur[1] + _OFFSETS[prev][1] - nxt[1]
        new_back = _OFFSET_INDEX[(bx, by)]
        if nxt == start and new_back == start_back:
            break
        # thin shapes can re-enter the start from another side forever;
        # repeating the very first move also closes the loop
        if cur == start and len(pts) > 1 and (nxt, new_back) == first_move:
            pts.pop()
            break
        if len(pts) == 1:
            first_move = (nxt, new_back)
        pts.append(nxt)
        cur, back = nxt, new_back
    else:  # pragma: no cover - guard against a tracing bug
        raise RuntimeError("contour tracing did not terminate")

    arr = np.array(pts, dtype=float)
    if signed_area(arr) < 0:
        arr = np.concatenate([arr[:1], arr[:0:-1]])
    return Contour(arr, degenerate=len(arr) < 3)


def signed_area(points: np.ndarray) -> float:
    p = np.asarray(points, dtype=float)
    if len(p) < 3:
        return 0.0
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_area(c: Contour) -> float:
    if len(c) < 3:
        log.warning("degenerate contour with %d points: area taken as 0", len(c))
        return 0.0
    return abs(signed_area(c.points))


def polygon_perimeter(c: Contour) -> float:
    p = c.points
    if len(p) < 2:
        log.warning("degenerate contour with %d points: perimeter taken as 0", len(p))
        return 0.0
    d = np.diff(np.vstack([p, p[:1]]), axis=0)
    # correctly rounded sum, independent of summation order
    return math.fsum(np.hypot(d[:, 0], d[:, 1]).tolist())


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(c: Contour) -> Contour:
    """Andrew's monotone chain; collinear boundary points are dropped."""
    pts = sorted(set(map(tuple, np.asarray(c.points, dtype=float).tolist())))
    if len(pts) <= 2:
        return Contour(np.array(pts, dtype=float).reshape(-1, 2), degenerate=True)

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = np.array(lower[:-1] + upper[:-1], dtype=float)
    # monotone chain yields positive shoelace orientation already
    return Contour(hull, degenerate=len(hull) < 3)


def bounding_rect(c: Contour) -> BoundingRect:
    """Pixel-inclusive axis-aligned bounds (a single row has height 1)."""
    p = np.asarray(c.points)
    x0, y0 = np.floor(p.min(axis=0)).astype(int)
    x1, y1 = np.ceil(p.max(axis=0)).astype(int)
    return BoundingRect(int(x0), int(y0), int(x1 - x0 + 1), int(y1 - y0 + 1))


def min_area_rect(c: Contour) -> MinAreaRect:
    """Minimum-area enclosing rectangle by rotating calipers over hull edges."""
    hull = convex_hull(c).points
    if len(hull) == 1:
        x, y = hull[0]
        return MinAreaRect((float(x), float(y)), 0.0, 0.0, 0.0)
    if len(hull) == 2:
        (x0, y0), (x1, y1) = hull
        return MinAreaRect(
            ((x0 + x1) / 2, (y0 + y1) / 2),
            float(math.hypot(x1 - x0, y1 - y0)),
            0.0,
            _norm_angle(math.degrees(math.atan2(y1 - y0, x1 - x0))),
        )
    best = None
    edges = np.roll(hull, -1, axis=0) - hull
    for e in edges:
        length = math.hypot(e[0], e[1])
        if length == 0:
            continue
        u = e / length
        v = np.array([-u[1], u[0]])
        pu, pv = hull @ u, hull @ v
        area = (pu.max() - pu.min()) * (pv.max() - pv.min())
        if best is None or area < best[0] - 1e-12:
            best = (area, u, v, pu.min(), pu.max(), pv.min(), pv.max())
    _, u, v, a0, a1, b0, b1 = best
    center = u * (a0 + a1) / 2 + v * (b0 + b1) / 2
    angle = _norm_angle(math.degrees(math.atan2(u[1], u[0])))
    return MinAreaRect((float(center[0]), float(center[1])), float(a1 - a0), float(b1 - b0), angle)


def _norm_angle(deg: float) -> float:
    """Fold a line direction into ``[0, 90)``; rectangles are 90-degree symmetric."""
    a = deg % 90.0
    return 0.0 if math.isclose(a, 90.0) else a


def smooth_polygon(points: np.ndarray, half_window: int = 1, passes: int = 1) -> np.ndarray:
    """Circular moving average of a closed polygon's vertices."""
    p = np.asarray(points, dtype=float)
    if len(p) < 2 * half_window + 1 or half_window == 0:
        return p.copy()
    for _ in range(passes):
        acc = np.zeros_like(p)
        for s in range(-half_window, half_window + 1):
            acc += np.roll(p, s, axis=0)
        p = acc / (2 * half_window + 1)
    return p


def draw_overlay(mask: MaskImage, contour: Contour, hull: Optional[Contour] = None):
    """RGB uint8 image: mask in dark gray, contour in green, hull in red."""
    img = np.repeat((mask.pixels * 60).astype(np.uint8)[..., None], 3, axis=2)
    if hull is not None and len(hull) >= 2:
        for x, y in _polyline_pixels(hull.points, closed=True):
            if 0 <= y < img.shape[0] and 0 <= x < img.shape[1]:
                img[y, x] = (255, 0, 0)
    for x, y in np.round(contour.points).astype(int):
        img[y, x] = (0, 255, 0)
    return img


def _polyline_pixels(points, closed=True):
    p = np.asarray(points, dtype=float)
    if closed:
        p = np.vstack([p, p[:1]])
    out = []
    for a, b in zip(p[:-1], p[1:]):
        n = int(max(abs(b - a).max(), 1))
        t = np.linspace(0, 1, n + 1)
        seg = np.round(a + (b - a) * t[:, None]).astype(int)
        out.extend(map(tuple, seg))
    return out
