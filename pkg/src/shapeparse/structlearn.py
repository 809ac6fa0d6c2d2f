"""Structure learning: cluster part-annotated shapes, sample boundary
landmarks, match them to edgelet types, and compose mixture trees."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import SchemaError, ValidationError
from .raster import PART_VALUES, polygon_area, rasterize_parts
from .shapemodel import (
    CompNode,
    CompTree,
    LeafType,
    MixtureModel,
    WeightVector,
    default_weights,
    mean_shape,
    orientation_vector,
    quantize_orientation,
    validate_tree,
)

ANNOTATION_VERSION = 1


@dataclass
class PartAnnotation:
    instance_id: str
    width: int
    height: int
    parts: dict[str, list]  # label -> closed polygon [[x, y], ...]


@dataclass
class LabeledMask:
    labels: np.ndarray  # int grid, 0 background / 1 head / 2 neck / 3 torso

    @property
    def shape(self):
        return self.labels.shape

    def object_mask(self) -> np.ndarray:
        return self.labels > 0

    def part_mask(self, label: str) -> np.ndarray:
        return self.labels == PART_VALUES[label]


def load_annotations(path) -> list[PartAnnotation]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: parse error at byte offset {e.pos}: {e.msg}") from e
    except OSError as e:
        raise SchemaError(f"{path}: {e}") from e
    images = doc.get("images") if isinstance(doc, dict) else None
    if not isinstance(images, list) or not images:
        raise SchemaError(f"{path}: 'images' must be a non-empty list")
    out = []
    for i, img in enumerate(images):
        where = f"{path}: images[{i}]"
        if not isinstance(img, dict):
            raise SchemaError(f"{where}: expected an object")
        for key in ("id", "width", "height", "parts"):
            if key not in img:
                raise SchemaError(f"{where}: missing '{key}'")
        parts = {}
        for j, part in enumerate(img["parts"]):
            pw = f"{where}.parts[{j}]"
            if not isinstance(part, dict) or "label" not in part or "polygon" not in part:
                raise SchemaError(f"{pw}: needs 'label' and 'polygon'")
            poly = part["polygon"]
            if not isinstance(poly, list) or len(poly) < 3:
                raise SchemaError(f"{pw}.polygon: needs at least 3 vertices")
            parts[part["label"]] = [[float(p[0]), float(p[1])] for p in poly]
        out.append(
            PartAnnotation(
                instance_id=str(img["id"]),
                width=int(img["width"]),
                height=int(img["height"]),
                parts=parts,
            )
        )
    return out


def annotations_to_dict(annotations: list[PartAnnotation]) -> dict:
    return {
        "version": ANNOTATION_VERSION,
        "images": [
            {
                "id": a.instance_id,
                "width": a.width,
                "height": a.height,
                "parts": [
                    {"label": label, "polygon": [[float(x), float(y)] for x, y in poly]}
                    for label, poly in a.parts.items()
                ],
            }
            for a in annotations
        ],
    }


def rasterize_annotation(ann: PartAnnotation, grid_size: int) -> LabeledMask:
    """Resize by the maximal side length, then scanline-fill each part."""
    longest = max(ann.width, ann.height)
    if longest <= 0:
        raise ValidationError(f"annotation {ann.instance_id}: empty image extent")
    scale = grid_size / longest
    th = max(1, round(ann.height * scale))
    tw = max(1, round(ann.width * scale))
    scaled = {
        label: [(x * scale, y * scale) for x, y in poly] for label, poly in ann.parts.items()
    }
    return LabeledMask(rasterize_parts(scaled, th, tw))


def mask_distance(a: LabeledMask, b: LabeledMask) -> float:
    """Fraction of disagreeing labels over the labeled union, with the two
    grids centered on a common canvas."""
    la, lb = a.labels, b.labels
    height = max(la.shape[0], lb.shape[0])
    width = max(la.shape[1], lb.shape[1])
    ca = np.zeros((height, width), dtype=la.dtype)
    cb = np.zeros((height, width), dtype=lb.dtype)
    oy, ox = (height - la.shape[0]) // 2, (width - la.shape[1]) // 2
    ca[oy : oy + la.shape[0], ox : ox + la.shape[1]] = la
    oy, ox = (height - lb.shape[0]) // 2, (width - lb.shape[1]) // 2
    cb[oy : oy + lb.shape[0], ox : ox + lb.shape[1]] = lb
    union = int(((ca != 0) | (cb != 0)).sum())
    if union == 0:
        return 0.0
    return int((ca != cb).sum()) / union


def k_medoids(masks: list[LabeledMask], k: int, seed: int, max_iter: int = 100):
    """PAM-style alternation on the pairwise mask distance.

    Returns (medoid_indices, assignments, objective_history); the objective
    (sum of distances to the assigned medoid) never increases.
    """
    n = len(masks)
    if k < 1 or k > n:
        raise ValidationError(f"k={k} must be between 1 and the number of masks ({n})")
    dist = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            dist[i, j] = dist[j, i] = mask_distance(masks[i], masks[j])
    rng = np.random.default_rng(seed)
    medoids = sorted(int(i) for i in rng.choice(n, size=k, replace=False))
    history = []
    for _ in range(max_iter):
        assign = np.argmin(dist[:, medoids], axis=1)
        # duplicate masks can starve a medoid; re-seed it from the farthest point
        for ki in range(k):
            if not (assign == ki).any():
                gaps = dist[np.arange(n), [medoids[a] for a in assign]]
                gaps = gaps.copy()
                gaps[medoids] = -1.0
                medoids[ki] = int(np.argmax(gaps))
                assign = np.argmin(dist[:, medoids], axis=1)
        history.append(float(dist[np.arange(n), [medoids[a] for a in assign]].sum()))
        new_medoids = []
        for ki in range(k):
            members = np.nonzero(assign == ki)[0]
            costs = dist[np.ix_(members, members)].sum(axis=0)
            new_medoids.append(int(members[int(np.argmin(costs))]))
        new_medoids = sorted(new_medoids)
        if new_medoids == medoids:
            break
        medoids = new_medoids
    assign = np.argmin(dist[:, medoids], axis=1)
    history.append(float(dist[np.arange(n), [medoids[a] for a in assign]].sum()))
    return medoids, assign, history


_TRACE_OFFSETS = ((-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1))


def trace_boundary(mask: np.ndarray) -> np.ndarray:
    """Closed 8-connected boundary of the region's first component, as an
    (n, 2) array of (x, y) pixel coordinates in clockwise screen order."""
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise ValidationError("cannot trace an empty region")
    sy = int(ys.min())
    sx = int(xs[ys == sy].min())
    h, w = mask.shape

    def fg(x, y):
        return 0 <= x < w and 0 <= y < h and mask[y, x]

    start = (sx, sy)
    if not any(fg(sx + dx, sy + dy) for dx, dy in _TRACE_OFFSETS):
        return np.array([start], dtype=float)
    boundary = [start]
    prev_dir = 0  # came from the west of the topmost-leftmost pixel
    cur = start
    first_move = None
    while True:
        found = None
        for step in range(8):
            d = (prev_dir + 1 + step) % 8
            dx, dy = _TRACE_OFFSETS[d]
            if fg(cur[0] + dx, cur[1] + dy):
                found = d
                break
        nxt = (cur[0] + _TRACE_OFFSETS[found][0], cur[1] + _TRACE_OFFSETS[found][1])
        if first_move is None:
            first_move = (cur, nxt)
        elif (cur, nxt) == first_move:
            break
        if nxt != boundary[-1]:
            boundary.append(nxt)
        prev_dir = (found + 4) % 8  # direction back to where we came from
        cur = nxt
        if len(boundary) > 4 * mask.size:
            raise ValidationError("boundary tracing failed to close")
    if len(boundary) > 1 and boundary[-1] == boundary[0]:
        boundary.pop()
    return np.array(boundary, dtype=float)


def _closed_arclengths(points: np.ndarray) -> tuple[np.ndarray, float]:
    diffs = np.roll(points, -1, axis=0) - points
    seg = np.hypot(diffs[:, 0], diffs[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    return cum, float(cum[-1])


def _point_at_arc(points: np.ndarray, cum: np.ndarray, s: float) -> np.ndarray:
    total = cum[-1]
    s = s % total
    i = int(np.searchsorted(cum, s, side="right")) - 1
    i = min(i, len(points) - 1)
    seg_len = cum[i + 1] - cum[i]
    a = points[i]
    b = points[(i + 1) % len(points)]
    if seg_len == 0:
        return a.copy()
    t = (s - cum[i]) / seg_len
    return a + t * (b - a)


def orient_boundary(points: np.ndarray) -> np.ndarray:
    """Rotate so the min-y (then min-x) vertex comes first and the traversal
    runs clockwise in image coordinates."""
    pts = np.asarray(points, dtype=float)
    if len(pts) < 3:
        raise ValidationError("boundary needs at least 3 points")
    order = np.lexsort((pts[:, 0], pts[:, 1]))
    start = int(order[0])
    pts = np.roll(pts, -start, axis=0)
    if polygon_area(pts) < 0:
        pts = np.concatenate([pts[:1], pts[1:][::-1]])
    return pts


def sample_landmarks(boundary, count: int) -> np.ndarray:
    """Arc-length-uniform samples along a closed boundary, starting at the
    min-y/min-x vertex and running clockwise."""
    pts = orient_boundary(np.asarray(boundary, dtype=float))
    if len(pts) < count:
        raise ValidationError(f"boundary has {len(pts)} points, fewer than {count} landmarks")
    cum, total = _closed_arclengths(pts)
    if total <= 0:
        raise ValidationError("boundary has zero perimeter")
    step = total / count
    return np.array([_point_at_arc(pts, cum, k * step) for k in range(count)])


def _nearest_arc_position(points: np.ndarray, cum: np.ndarray, p: np.ndarray):
    """(arc position, distance) of the closest point on the closed polyline."""
    best_s, best_d = 0.0, math.inf
    n = len(points)
    for i in range(n):
        a = points[i]
        b = points[(i + 1) % n]
        ab = b - a
        denom = float(ab @ ab)
        t = 0.0 if denom == 0 else float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
        q = a + t * ab
        d = float(np.hypot(*(p - q)))
        if d < best_d:
            best_d = d
            best_s = cum[i] + t * (cum[i + 1] - cum[i])
    return best_s, best_d


def match_leaf_types(
    landmarks: np.ndarray,
    mask: LabeledMask,
    part_label: str,
    tangent_window: float = 2.0,
    probe_distance: float = 1.5,
) -> list[LeafType]:
    """Orientation from the boundary tangent (quantized to the 8 bins),
    polarity from which side of the quantized normal sits inside the object."""
    region = mask.part_mask(part_label)
    boundary = orient_boundary(trace_boundary(region))
    cum, total = _closed_arclengths(boundary)
    obj = mask.object_mask()
    h, w = obj.shape
    out = []
    for lm in np.asarray(landmarks, dtype=float):
        s, d = _nearest_arc_position(boundary, cum, lm)
        if d > 1.0 + 1e-9:
            raise ValidationError(f"landmark {lm.tolist()} lies {d:.2f}px off the part boundary")
        ahead = _point_at_arc(boundary, cum, s + tangent_window)
        behind = _point_at_arc(boundary, cum, s - tangent_window)
        tx, ty = ahead - behind
        if tx == 0 and ty == 0:
            raise ValidationError(f"landmark {lm.tolist()}: degenerate tangent window")
        orientation = quantize_orientation(math.atan2(ty, tx))
        ux, uy = orientation_vector(orientation)
        nx, ny = -uy, ux  # +normal: the cross-positive side of the edgelet

        def inside(px, py):
            ix = int(math.floor(px + 0.5))
            iy = int(math.floor(py + 0.5))
            return 0 <= ix < w and 0 <= iy < h and obj[iy, ix]

        plus = inside(lm[0] + probe_distance * nx, lm[1] + probe_distance * ny)
        minus = inside(lm[0] - probe_distance * nx, lm[1] - probe_distance * ny)
        if plus and minus:
            polarity = 2
        elif plus:
            polarity = 0
        elif minus:
            polarity = 1
        else:
            raise ValidationError(f"landmark {lm.tolist()}: no object on either side")
        out.append(LeafType(orientation, polarity))
    return out


def compose_tree(parts: list[tuple[str, np.ndarray, list[LeafType]]]) -> CompTree:
    """Pair adjacent landmarks level-by-level within each part, then compose
    the part roots, smallest subtrees first (stable in schema order)."""
    if not parts:
        raise ValidationError("cannot compose an empty part list")
    nodes: dict[int, CompNode] = {}
    positions: dict[int, np.ndarray] = {}
    counter = iter(range(1, 10**9))

    def make_parent(a: int, b: int, level: int) -> int:
        nid = next(counter)
        nodes[nid] = CompNode(nid, level, children=(a, b), delta=positions[b] - positions[a])
        positions[nid] = (positions[a] + positions[b]) / 2.0
        return nid

    part_roots = []
    for schema_idx, (label, landmarks, leaf_types) in enumerate(parts):
        landmarks = np.asarray(landmarks, dtype=float)
        m = len(landmarks)
        if m < 1 or m & (m - 1):
            raise ValidationError(f"part '{label}': landmark count {m} is not a power of two")
        if len(leaf_types) != m:
            raise ValidationError(f"part '{label}': {len(leaf_types)} leaf types for {m} landmarks")
        level_ids = []
        for lm, lt in zip(landmarks, leaf_types):
            nid = next(counter)
            nodes[nid] = CompNode(nid, 1, leaf_type=lt)
            positions[nid] = np.array(lm, dtype=float)
            level_ids.append(nid)
        level = 1
        while len(level_ids) > 1:
            level += 1
            level_ids = [
                make_parent(level_ids[i], level_ids[i + 1], level)
                for i in range(0, len(level_ids), 2)
            ]
        root = level_ids[0]
        nodes[root].part_label = label
        part_roots.append((nodes[root].level, schema_idx, root))

    part_roots.sort()
    acc = part_roots[0][2]
    for _, _, nxt in part_roots[1:]:
        level = max(nodes[acc].level, nodes[nxt].level) + 1
        acc = make_parent(acc, nxt, level)
    return CompTree(nodes, acc)


def default_square_side(grid_size: int) -> int:
    side = max(3, round(grid_size * 11 / 160))
    return side if side % 2 == 1 else side + 1


def learn_structure(
    annotations: list[PartAnnotation],
    k: int,
    counts: dict[str, int],
    grid_size: int = 160,
    seed: int = 0,
    channels: int = 2,
    square_side: int | None = None,
) -> tuple[MixtureModel, WeightVector, dict]:
    """Cluster -> sample -> match -> compose; one mixture per medoid."""
    if not annotations:
        raise ValidationError("no annotations given")
    for label in counts:
        if label not in PART_VALUES:
            raise ValidationError(f"unsupported part label '{label}' in landmark counts")
    masks = [rasterize_annotation(a, grid_size) for a in annotations]
    medoids, assignments, history = k_medoids(masks, k, seed)
    mixtures = []
    for mi in medoids:
        mask = masks[mi]
        parts = []
        for label, count in counts.items():
            region = mask.part_mask(label)
            if not region.any():
                raise ValidationError(
                    f"annotation {annotations[mi].instance_id}: part '{label}' rasterized empty"
                )
            boundary = trace_boundary(region)
            landmarks = sample_landmarks(boundary, count)
            leaf_types = match_leaf_types(landmarks, mask, label)
            parts.append((label, landmarks, leaf_types))
        tree = compose_tree(parts)
        for node in tree.nodes.values():
            if node.part_label == "head":
                node.part_score_channel = 0
        violations = validate_tree(tree)
        if violations:
            raise ValidationError(
                f"annotation {annotations[mi].instance_id}: composed tree invalid: "
                + "; ".join(violations[:3])
            )
        mixtures.append(tree)
    model = MixtureModel(
        mixtures=mixtures,
        landmark_counts=dict(counts),
        grid_size=grid_size,
        channels=channels,
        square_side=square_side if square_side is not None else default_square_side(grid_size),
    )
    info = {
        "medoids": medoids,
        "assignments": assignments.tolist(),
        "objectiveHistory": history,
    }
    return model, default_weights(channels), info


def mixture_mean_polygons(tree: CompTree, root_pos=(0.0, 0.0)) -> dict[str, np.ndarray]:
    """Per-part polygons of the deformation-free shape (landmark order)."""
    coords = mean_shape(tree, root_pos)
    labels = tree.leaf_part_labels()
    out: dict[str, list] = {}
    for (x, y), label in zip(coords, labels):
        out.setdefault(label, []).append((float(x), float(y)))
    return {label: np.array(poly) for label, poly in out.items()}
