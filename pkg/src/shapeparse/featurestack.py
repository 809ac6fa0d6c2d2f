"""Evidence grids (edge / appearance / part channels), the unary features
evaluated on them, and a synthetic generator that stands in for the external
edge, labeling and part detectors."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import SchemaError, ValidationError
from .raster import fill_polygon
from .shapemodel import (
    ORIENTATIONS,
    CompNode,
    LeafType,
    MixtureModel,
    WeightVector,
    orientation_vector,
    quantize_orientation,
)
from .structlearn import mixture_mean_polygons

FMAP_MAGIC = b"FMAP"
FMAP_VERSION = 1
STACK_VERSION = 1

_INF = math.inf


class BorderError(ValidationError):
    """Feature window would leave the grid; callers substitute +inf."""


@dataclass
class FeatureStack:
    edge: np.ndarray  # (8, H, W) per-orientation boundary confidence
    app: np.ndarray  # (C, H, W) per-class labeling confidence
    part: np.ndarray  # (P, H, W) part detector scores
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.edge = np.asarray(self.edge, dtype=float)
        self.app = np.asarray(self.app, dtype=float)
        self.part = np.asarray(self.part, dtype=float)
        if self.edge.ndim != 3 or self.edge.shape[0] != ORIENTATIONS:
            raise ValidationError("edge channels must have shape (8, H, W)")
        shape = self.edge.shape[1:]
        if self.app.ndim != 3 or self.app.shape[1:] != shape:
            raise ValidationError("appearance channels must share the edge grid size")
        if self.part.ndim != 3 or self.part.shape[1:] != shape:
            raise ValidationError("part channels must share the edge grid size")
        for name, arr in (("edge", self.edge), ("app", self.app), ("part", self.part)):
            if not np.isfinite(arr).all():
                raise ValidationError(f"{name} channels must be finite")

    @property
    def height(self) -> int:
        return self.edge.shape[1]

    @property
    def width(self) -> int:
        return self.edge.shape[2]

    @property
    def channels(self) -> int:
        return self.app.shape[0]

    @property
    def part_channels(self) -> int:
        return self.part.shape[0]


def side_masks(orientation: int, square_side: int) -> tuple[np.ndarray, np.ndarray]:
    """Boolean masks splitting the square window along the edgelet line.

    The plus side is where the cross product of the orientation vector with
    the pixel offset is >= 0; pixels on the line belong to the plus side.
    """
    if square_side % 2 == 0 or square_side < 1:
        raise ValidationError("square side must be a positive odd integer")
    m = square_side // 2
    ux, uy = orientation_vector(orientation)
    offs = np.arange(-m, m + 1)
    dxg, dyg = np.meshgrid(offs, offs)
    cross = ux * dyg - uy * dxg
    cross[np.abs(cross) < 1e-9] = 0.0
    plus = cross >= 0
    return plus, ~plus


def edge_feature(stack: FeatureStack, leaf_type: LeafType, pos) -> float:
    x, y = int(pos[0]), int(pos[1])
    if not (0 <= x < stack.width and 0 <= y < stack.height):
        raise ValidationError(f"position {(x, y)} outside the grid")
    return float(stack.edge[leaf_type.orientation, y, x])


def appearance_feature(
    stack: FeatureStack, leaf_type: LeafType, pos, square_side: int
) -> np.ndarray:
    """Object-side then non-object-side per-channel means of the square
    window, split by the leaf's oriented line (length 2C)."""
    x, y = int(pos[0]), int(pos[1])
    m = square_side // 2
    if x - m < 0 or y - m < 0 or x + m >= stack.width or y + m >= stack.height:
        raise BorderError(f"window of side {square_side} at {(x, y)} leaves the grid")
    window = stack.app[:, y - m : y + m + 1, x - m : x + m + 1]
    c = stack.channels
    out = np.zeros(2 * c)
    if leaf_type.polarity == 2:
        out[:c] = window.mean(axis=(1, 2))
        return out
    plus, minus = side_masks(leaf_type.orientation, square_side)
    mean_plus = window[:, plus].mean(axis=1)
    mean_minus = window[:, minus].mean(axis=1)
    if leaf_type.polarity == 0:
        out[:c] = mean_plus
        out[c:] = mean_minus
    else:
        out[:c] = mean_minus
        out[c:] = mean_plus
    return out


def _feature_tensors(stack: FeatureStack, square_side: int):
    """Window sums per orientation/side/channel at every position, cached on
    the stack (weight-independent, so training reuses them each round)."""
    key = ("tensors", square_side)
    cached = stack._cache.get(key)
    if cached is not None:
        return cached
    c = stack.channels
    h, w = stack.height, stack.width
    sums = np.zeros((ORIENTATIONS, 2, c, h, w))
    counts = np.zeros((ORIENTATIONS, 2))
    for o in range(ORIENTATIONS):
        plus, minus = side_masks(o, square_side)
        counts[o, 0] = plus.sum()
        counts[o, 1] = minus.sum()
        for ci in range(c):
            sums[o, 0, ci] = ndimage.correlate(
                stack.app[ci], plus.astype(float), mode="constant", cval=0.0
            )
            sums[o, 1, ci] = ndimage.correlate(
                stack.app[ci], minus.astype(float), mode="constant", cval=0.0
            )
    stack._cache[key] = (sums, counts)
    return sums, counts


def build_leaf_unaries(
    stack: FeatureStack, weights: WeightVector, square_side: int
) -> np.ndarray:
    """(24, H, W) field of w_edge*edge + w_app.appearance per leaf type,
    +inf on the border margin where the window would clip."""
    c = stack.channels
    if weights.channels != c:
        raise ValidationError(
            f"weights carry {weights.channels} appearance channels, stack has {c}"
        )
    h, w = stack.height, stack.width
    m = square_side // 2
    sums, counts = _feature_tensors(stack, square_side)
    w_obj = weights.w_app[:c]
    w_non = weights.w_app[c:]
    out = np.empty((ORIENTATIONS * 3, h, w))
    for o in range(ORIENTATIONS):
        edge_term = weights.w_edge * stack.edge[o]
        mean_plus = sums[o, 0] / counts[o, 0]
        mean_minus = sums[o, 1] / counts[o, 1]
        full = (sums[o, 0] + sums[o, 1]) / (counts[o, 0] + counts[o, 1])
        app0 = np.tensordot(w_obj, mean_plus, axes=(0, 0)) + np.tensordot(
            w_non, mean_minus, axes=(0, 0)
        )
        app1 = np.tensordot(w_obj, mean_minus, axes=(0, 0)) + np.tensordot(
            w_non, mean_plus, axes=(0, 0)
        )
        app2 = np.tensordot(w_obj, full, axes=(0, 0))
        out[o * 3 + 0] = edge_term + app0
        out[o * 3 + 1] = edge_term + app1
        out[o * 3 + 2] = edge_term + app2
    if m > 0:
        out[:, :m, :] = _INF
        out[:, -m:, :] = _INF
        out[:, :, :m] = _INF
        out[:, :, -m:] = _INF
    return out


def part_unary(stack: FeatureStack, weights: WeightVector, node: CompNode) -> np.ndarray:
    if node.part_score_channel is None:
        raise ValidationError(f"node {node.node_id} has no part score channel")
    ch = node.part_score_channel
    if ch >= stack.part_channels:
        raise ValidationError(
            f"node {node.node_id} wants part channel {ch}, stack has {stack.part_channels}"
        )
    return weights.w_part * stack.part[ch]


# ---------------------------------------------------------------------------
# FMAP binary grid files and stack manifests


def write_fmap(path, data: np.ndarray):
    arr = np.ascontiguousarray(np.asarray(data), dtype="<f4")
    if arr.ndim != 3:
        raise ValidationError("FMAP data must be (channels, height, width)")
    c, h, w = arr.shape
    with open(path, "wb") as f:
        f.write(FMAP_MAGIC)
        f.write(struct.pack("<IIII", FMAP_VERSION, w, h, c))
        f.write(arr.tobytes())


def read_fmap(path) -> np.ndarray:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise SchemaError(f"{path}: {e}") from e
    if blob[:4] != FMAP_MAGIC:
        raise SchemaError(f"{path}: bad magic bytes at offset 0, expected 'FMAP'")
    if len(blob) < 20:
        raise SchemaError(f"{path}: truncated header ({len(blob)} bytes)")
    version, w, h, c = struct.unpack("<IIII", blob[4:20])
    if version != FMAP_VERSION:
        raise SchemaError(f"{path}: unknown FMAP version {version}")
    expected = 20 + 4 * c * h * w
    if len(blob) != expected:
        raise SchemaError(f"{path}: expected {expected} bytes, found {len(blob)}")
    data = np.frombuffer(blob, dtype="<f4", offset=20).reshape(c, h, w)
    return data.astype(float)


def save_stack(stack: FeatureStack, directory, prefix: str = "") -> str:
    """Write the three FMAP files plus the manifest; returns the manifest path."""
    import os

    names = {
        "edge": f"{prefix}edge.fmap",
        "app": f"{prefix}app.fmap",
        "part": f"{prefix}part.fmap",
    }
    write_fmap(os.path.join(directory, names["edge"]), stack.edge)
    write_fmap(os.path.join(directory, names["app"]), stack.app)
    write_fmap(os.path.join(directory, names["part"]), stack.part)
    manifest = {
        "version": STACK_VERSION,
        "edge": names["edge"],
        "app": names["app"],
        "part": names["part"],
        "channels": stack.channels,
        "partChannels": stack.part_channels,
    }
    path = os.path.join(directory, f"{prefix}stack.json")
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_stack(manifest_path) -> FeatureStack:
    import os

    try:
        with open(manifest_path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise SchemaError(f"{manifest_path}: parse error at byte offset {e.pos}: {e.msg}") from e
    except OSError as e:
        raise SchemaError(f"{manifest_path}: {e}") from e
    if not isinstance(doc, dict) or doc.get("version") != STACK_VERSION:
        raise SchemaError(f"{manifest_path}: unknown stack manifest version")
    base = os.path.dirname(os.path.abspath(manifest_path))
    arrays = {}
    for key in ("edge", "app", "part"):
        rel = doc.get(key)
        if not isinstance(rel, str):
            raise SchemaError(f"{manifest_path}: missing '{key}' file reference")
        arrays[key] = read_fmap(os.path.join(base, rel))
    stack = FeatureStack(arrays["edge"], arrays["app"], arrays["part"])
    if doc.get("channels") != stack.channels:
        raise SchemaError(
            f"{manifest_path}: channels={doc.get('channels')} but app file has {stack.channels}"
        )
    if doc.get("partChannels") != stack.part_channels:
        raise SchemaError(
            f"{manifest_path}: partChannels={doc.get('partChannels')} "
            f"but part file has {stack.part_channels}"
        )
    return stack


# ---------------------------------------------------------------------------
# Synthetic evidence


def _draw_polygon_edges(edge: np.ndarray, polygon: np.ndarray):
    """Unit responses on boundary pixels, in the channel matching each
    segment's quantized orientation."""
    h, w = edge.shape[1:]
    n = len(polygon)
    for i in range(n):
        p = polygon[i]
        q = polygon[(i + 1) % n]
        dx, dy = q[0] - p[0], q[1] - p[1]
        length = math.hypot(dx, dy)
        if length == 0:
            continue
        o = quantize_orientation(math.atan2(dy, dx))
        steps = max(2, int(math.ceil(length * 2)) + 1)
        for t in np.linspace(0.0, 1.0, steps):
            x = int(math.floor(p[0] + t * dx + 0.5))
            y = int(math.floor(p[1] + t * dy + 0.5))
            if 0 <= x < w and 0 <= y < h:
                edge[o, y, x] = 1.0


def render_stack(
    part_polygons: dict[str, np.ndarray],
    width: int,
    height: int,
    channels: int = 2,
    part_channels: int = 1,
    head_blob_sigma: float = 2.5,
    noise_level: float = 0.0,
    seed=0,
) -> FeatureStack:
    """Deterministic evidence for a shape given by its part polygons: edge
    responses along part boundaries, object/background scores inside/outside,
    and a blob on the head centroid in part channel 0."""
    if channels < 2:
        raise ValidationError("synthetic stacks need at least 2 appearance channels")
    for label, poly in part_polygons.items():
        pts = np.asarray(poly, dtype=float)
        if (
            pts[:, 0].min() < 0
            or pts[:, 1].min() < 0
            or pts[:, 0].max() > width - 1
            or pts[:, 1].max() > height - 1
        ):
            raise ValidationError(f"part '{label}' exceeds the {width}x{height} grid")
    edge = np.zeros((ORIENTATIONS, height, width))
    for poly in part_polygons.values():
        _draw_polygon_edges(edge, np.asarray(poly, dtype=float))
    inside = np.zeros((height, width), dtype=bool)
    for poly in part_polygons.values():
        inside |= fill_polygon(poly, height, width)
    app = np.zeros((channels, height, width))
    app[0] = inside.astype(float)
    app[1] = 1.0 - app[0]
    part = np.zeros((part_channels, height, width))
    if "head" in part_polygons and part_channels > 0:
        cx, cy = np.asarray(part_polygons["head"], dtype=float).mean(axis=0)
        xs = np.arange(width) - cx
        ys = np.arange(height) - cy
        d2 = ys[:, None] ** 2 + xs[None, :] ** 2
        part[0] = np.exp(-d2 / (2.0 * head_blob_sigma**2))
    if noise_level > 0:
        rng = np.random.default_rng(seed)
        edge = edge + rng.normal(0.0, noise_level, edge.shape)
        app = app + rng.normal(0.0, noise_level, app.shape)
        part = part + rng.normal(0.0, noise_level, part.shape)
    return FeatureStack(edge, app, part)


def synth_stack(
    model: MixtureModel,
    mixture_index: int,
    root_pos,
    noise_level: float = 0.0,
    seed=0,
) -> tuple[FeatureStack, dict]:
    """Render the mixture's mean shape at root_pos; returns the stack and the
    ground truth (landmarks, part polygons, source mixture)."""
    if not 0 <= mixture_index < len(model.mixtures):
        raise ValidationError(f"mixture index {mixture_index} out of range")
    tree = model.mixtures[mixture_index]
    polys = mixture_mean_polygons(tree, root_pos)
    size = model.grid_size
    stack = render_stack(
        polys,
        width=size,
        height=size,
        channels=model.channels,
        noise_level=noise_level,
        seed=seed,
    )
    from .shapemodel import mean_shape

    coords = mean_shape(tree, root_pos)
    truth = {
        "mixtureIndex": mixture_index,
        "rootPosition": [float(root_pos[0]), float(root_pos[1])],
        "landmarks": [[float(x), float(y)] for x, y in coords],
        "parts": [
            {"label": label, "polygon": [[float(x), float(y)] for x, y in poly]}
            for label, poly in polys.items()
        ],
        "width": size,
        "height": size,
    }
    return stack, truth


def noise_stack(
    width: int,
    height: int,
    channels: int = 2,
    part_channels: int = 1,
    sigma: float = 0.5,
    seed=0,
) -> FeatureStack:
    """Pure-noise evidence, the negative class for training."""
    rng = np.random.default_rng(seed)
    return FeatureStack(
        rng.normal(0.0, sigma, (ORIENTATIONS, height, width)),
        rng.normal(0.0, sigma, (channels, height, width)),
        rng.normal(0.0, sigma, (part_channels, height, width)),
    )
