"""Built-in synthetic quadruped-ish shapes (head / neck / torso in three
poses), used to bootstrap models and datasets without any external data."""

from __future__ import annotations

import math

import numpy as np

from .errors import ValidationError
from .shapemodel import MixtureModel, WeightVector
from .structlearn import PartAnnotation, learn_structure

_DESIGN_SIZE = 96

DEFAULT_COUNTS = {"head": 8, "neck": 8, "torso": 16}


def _octagon(cx, cy, r):
    return [
        [cx + r * math.cos(a), cy + r * math.sin(a)]
        for a in np.linspace(0.0, 2.0 * math.pi, 8, endpoint=False)
    ]


def _ellipse(cx, cy, rx, ry, n=12):
    return [
        [cx + rx * math.cos(a), cy + ry * math.sin(a)]
        for a in np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
    ]


def base_part_polygons(pose: int) -> dict[str, list]:
    """Part polygons of one pose, in the 96x96 design frame."""
    if pose == 0:  # head raised
        return {
            "head": _octagon(70, 26, 14),
            "neck": [[50, 48], [62, 30], [76, 36], [60, 58]],
            "torso": _ellipse(38, 60, 27, 17),
        }
    if pose == 1:  # head forward
        return {
            "head": _octagon(75, 44, 14),
            "neck": [[52, 44], [70, 36], [72, 54], [54, 62]],
            "torso": _ellipse(36, 56, 26, 18),
        }
    if pose == 2:  # head lowered
        return {
            "head": _octagon(70, 72, 14),
            "neck": [[50, 52], [64, 56], [68, 74], [52, 68]],
            "torso": _ellipse(36, 48, 26, 17),
        }
    raise ValidationError(f"no pose {pose}; 3 poses are defined")


def _deform_parts(parts: dict, rng, amount: float, grid: int) -> dict:
    """Joint affine wobble around the shape centroid plus per-part jitter."""
    all_pts = np.concatenate([np.asarray(p, dtype=float) for p in parts.values()])
    center = all_pts.mean(axis=0)
    angle = rng.uniform(-0.6, 0.6) * amount
    sx = 1.0 + rng.uniform(-1.0, 1.0) * amount
    sy = 1.0 + rng.uniform(-1.0, 1.0) * amount
    ca, sa = math.cos(angle), math.sin(angle)
    mat = np.array([[ca * sx, -sa * sy], [sa * sx, ca * sy]])
    out = {}
    for label, poly in parts.items():
        pts = (np.asarray(poly, dtype=float) - center) @ mat.T + center
        pts = pts + rng.uniform(-6.0, 6.0, 2) * amount
        out[label] = np.clip(pts, 2.0, grid - 3.0).tolist()
    return out


def make_demo_annotations(
    count: int,
    grid: int = 96,
    deform: float = 0.0,
    seed: int = 0,
    poses: int = 3,
) -> list[PartAnnotation]:
    """``count`` annotations cycling through the poses; ``deform`` > 0 adds a
    seeded shape wobble so clustering has real variability to discover."""
    rng = np.random.default_rng(seed)
    scale = grid / _DESIGN_SIZE
    out = []
    for i in range(count):
        parts = base_part_polygons(i % poses)
        parts = {
            label: [[x * scale, y * scale] for x, y in poly] for label, poly in parts.items()
        }
        if deform > 0:
            parts = _deform_parts(parts, rng, deform, grid)
        out.append(
            PartAnnotation(instance_id=f"demo_{i:03d}", width=grid, height=grid, parts=parts)
        )
    return out


def make_demo_model(
    mixtures: int = 3,
    grid: int = 96,
    seed: int = 0,
    counts: dict[str, int] | None = None,
    channels: int = 2,
) -> tuple[MixtureModel, WeightVector]:
    """Structure-learn a model from the built-in shapes: one mixture per
    generated annotation."""
    if mixtures < 1:
        raise ValidationError("need at least one mixture")
    deform = 0.0 if mixtures <= 3 else 0.12
    annotations = make_demo_annotations(mixtures, grid=grid, deform=deform, seed=seed)
    model, weights, _ = learn_structure(
        annotations,
        k=mixtures,
        counts=dict(counts or DEFAULT_COUNTS),
        grid_size=grid,
        seed=seed,
        channels=channels,
    )
    return model, weights
