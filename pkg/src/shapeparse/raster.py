"""Scanline polygon rasterization, shared by structure learning and
evaluation so both sides of an IOU agree on the fill rule."""

from __future__ import annotations

import math

import numpy as np

from .errors import ValidationError

# label values painted into part masks; higher precedence painted last
PART_VALUES = {"head": 1, "neck": 2, "torso": 3}
PART_PAINT_ORDER = ("torso", "neck", "head")


def polygon_area(polygon) -> float:
    """Signed shoelace area; positive means clockwise in image coordinates
    (y axis pointing down)."""
    pts = np.asarray(polygon, dtype=float)
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def fill_polygon(polygon, height: int, width: int) -> np.ndarray:
    """Even-odd scanline fill against pixel centers at integer coordinates.

    Half-open on both axes (a pixel at exactly the right/bottom boundary is
    outside), so axis-aligned integer boxes fill to their exact area.
    """
    pts = [(float(x), float(y)) for x, y in polygon]
    if len(pts) < 3:
        raise ValidationError(f"polygon needs at least 3 vertices, got {len(pts)}")
    mask = np.zeros((height, width), dtype=bool)
    ys = [p[1] for p in pts]
    y_min = max(0, int(math.ceil(min(ys))))
    y_max = min(height - 1, int(math.floor(max(ys))))
    n = len(pts)
    for iy in range(y_min, y_max + 1):
        xs = []
        for i in range(n):
            x1, y1 = pts[i]
            x2, y2 = pts[(i + 1) % n]
            if y1 == y2:
                continue
            if (y1 <= iy < y2) or (y2 <= iy < y1):
                t = (iy - y1) / (y2 - y1)
                xs.append(x1 + t * (x2 - x1))
        xs.sort()
        for k in range(0, len(xs) - 1, 2):
            lo = int(math.ceil(xs[k]))
            hi = int(math.ceil(xs[k + 1])) - 1
            if hi < 0 or lo > width - 1:
                continue
            mask[iy, max(0, lo) : min(width - 1, hi) + 1] = True
    return mask


def rasterize_parts(parts, height: int, width: int) -> np.ndarray:
    """Paint labeled part polygons into an integer mask (0 = background).

    ``parts`` maps label -> polygon.  Overlaps resolve by fixed precedence:
    head over neck over torso.
    """
    out = np.zeros((height, width), dtype=np.int8)
    for label in PART_PAINT_ORDER:
        if label not in parts:
            continue
        value = PART_VALUES[label]
        out[fill_polygon(parts[label], height, width)] = value
    extra = set(parts) - set(PART_PAINT_ORDER)
    if extra:
        raise ValidationError(f"unsupported part labels: {sorted(extra)}")
    return out


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    union = int(np.logical_or(a, b).sum())
    if union == 0:
        raise ValidationError("IOU undefined: both masks are empty")
    inter = int(np.logical_and(a, b).sum())
    return inter / union
