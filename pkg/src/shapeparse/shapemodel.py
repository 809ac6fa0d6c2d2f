"""Model types for the mixture of compositional trees, plus (de)serialization.

A tree composes parts out of exactly two subparts per level; leaves are
oriented edgelets typed by 8 orientations x 3 polarities.  Geometry lives in
the per-node ``delta`` (position of the second child relative to the first);
a parent sits at the average of its children.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import SchemaError, ValidationError

ORIENTATIONS = 8
POLARITIES = 3
LEAF_TYPE_COUNT = ORIENTATIONS * POLARITIES
ORIENTATION_STEP = math.pi / ORIENTATIONS

MODEL_VERSION = 1


def quantize_orientation(theta: float) -> int:
    """Nearest of the 8 bin centers k*pi/8; exact boundary ties take the
    lower bin index."""
    t = theta % math.pi
    b = math.ceil(t / ORIENTATION_STEP - 0.5)
    return b % ORIENTATIONS


def orientation_vector(orientation: int) -> tuple[float, float]:
    ang = orientation * ORIENTATION_STEP
    return math.cos(ang), math.sin(ang)


@dataclass(frozen=True)
class LeafType:
    orientation: int  # 0..7, bin centers k*pi/8
    polarity: int  # 0: object on +normal side, 1: -normal side, 2: both

    def __post_init__(self):
        if not 0 <= self.orientation < ORIENTATIONS:
            raise ValidationError(f"orientation {self.orientation} out of range")
        if not 0 <= self.polarity < POLARITIES:
            raise ValidationError(f"polarity {self.polarity} out of range")

    @property
    def index(self) -> int:
        return self.orientation * POLARITIES + self.polarity


@dataclass
class CompNode:
    node_id: int
    level: int
    children: tuple[int, int] | None = None
    delta: np.ndarray | None = None  # second child minus first, real-valued
    leaf_type: LeafType | None = None
    part_label: str | None = None
    part_score_channel: int | None = None

    def __post_init__(self):
        if self.delta is not None:
            self.delta = np.asarray(self.delta, dtype=float)

    @property
    def is_leaf(self) -> bool:
        return self.level == 1


@dataclass
class CompTree:
    nodes: dict[int, CompNode]
    root_id: int

    @property
    def root(self) -> CompNode:
        return self.nodes[self.root_id]

    @property
    def levels(self) -> int:
        return self.root.level

    def bottom_up(self):
        """Children before parents (post-order from the root)."""
        out = []

        def visit(nid):
            node = self.nodes[nid]
            if node.children is not None:
                visit(node.children[0])
                visit(node.children[1])
            out.append(node)

        visit(self.root_id)
        return out

    def leaves_in_order(self) -> list[CompNode]:
        return [n for n in self.bottom_up() if n.is_leaf]

    def leaf_part_labels(self) -> list[str | None]:
        """Per-leaf part label inherited from the nearest labeled ancestor."""
        labels = {}

        def visit(nid, current):
            node = self.nodes[nid]
            label = node.part_label if node.part_label is not None else current
            if node.children is None:
                labels[nid] = label
            else:
                visit(node.children[0], label)
                visit(node.children[1], label)

        visit(self.root_id, None)
        return [labels[n.node_id] for n in self.leaves_in_order()]


@dataclass
class WeightVector:
    """Shared parameters: deformation pair, edge scalar, 2C appearance, part."""

    w_def: np.ndarray
    w_edge: float
    w_app: np.ndarray
    w_part: float

    def __post_init__(self):
        self.w_def = np.asarray(self.w_def, dtype=float)
        self.w_app = np.asarray(self.w_app, dtype=float)
        if self.w_def.shape != (2,):
            raise ValidationError("w_def must be a 2-vector")
        if self.w_def.min() < 0:
            raise ValidationError("deformation weights must be non-negative")
        if self.w_app.ndim != 1 or self.w_app.size % 2 != 0:
            raise ValidationError("w_app must have length 2C")

    @property
    def channels(self) -> int:
        return self.w_app.size // 2

    def copy(self) -> "WeightVector":
        return WeightVector(self.w_def.copy(), self.w_edge, self.w_app.copy(), self.w_part)


@dataclass
class MixtureModel:
    mixtures: list[CompTree]
    landmark_counts: dict[str, int]
    grid_size: int = 160
    channels: int = 2
    square_side: int = 11

    def __post_init__(self):
        if not self.mixtures:
            raise ValidationError("model must contain at least one mixture")
        if self.square_side % 2 == 0 or self.square_side < 1:
            raise ValidationError("square_side must be a positive odd integer")


def validate_tree(tree: CompTree) -> list[str]:
    """Structural violations as data; an empty list means the tree is valid."""
    out = []
    nodes = tree.nodes
    if tree.root_id not in nodes:
        return [f"root {tree.root_id}: missing node"]
    seen_children = {}
    for nid, node in nodes.items():
        if node.node_id != nid:
            out.append(f"node {nid}: id field mismatch")
        if node.level < 1:
            out.append(f"node {nid}: level must be >= 1")
        if node.is_leaf:
            if node.children is not None:
                out.append(f"node {nid}: leaf must not have children")
            if node.leaf_type is None:
                out.append(f"node {nid}: leaf requires a leaf type")
            if node.delta is not None:
                out.append(f"node {nid}: leaf must not carry a delta")
        else:
            if node.leaf_type is not None:
                out.append(f"node {nid}: non-leaf must not carry a leaf type")
            if node.children is None or len(node.children) != 2:
                out.append(f"node {nid}: non-leaf must have exactly two children")
            else:
                if len(set(node.children)) != 2:
                    out.append(f"node {nid}: children must be distinct")
                for cid in node.children:
                    child = nodes.get(cid)
                    if child is None:
                        out.append(f"node {nid}: child {cid} missing")
                        continue
                    if child.level != node.level - 1:
                        out.append(
                            f"node {nid}: child {cid} at level {child.level}, "
                            f"expected {node.level - 1}"
                        )
                    seen_children.setdefault(cid, []).append(nid)
            if node.delta is None or node.delta.shape != (2,) or not np.isfinite(node.delta).all():
                out.append(f"node {nid}: non-leaf requires a finite 2-vector delta")
        if node.part_score_channel is not None and node.part_score_channel < 0:
            out.append(f"node {nid}: part score channel must be >= 0")
    for cid, parents in seen_children.items():
        if len(parents) > 1:
            out.append(f"node {cid}: referenced by multiple parents {sorted(parents)}")
    roots = [nid for nid in nodes if nid not in seen_children]
    if roots != [tree.root_id] and sorted(roots) != [tree.root_id]:
        out.append(f"root {tree.root_id}: unreachable nodes or extra roots {sorted(roots)}")
    levels = tree.root.level
    n_leaves = sum(1 for n in nodes.values() if n.is_leaf)
    if not out:
        if n_leaves != 2 ** (levels - 1):
            out.append(f"tree: {n_leaves} leaves, expected {2 ** (levels - 1)} for {levels} levels")
        if len(nodes) != 2**levels - 1:
            out.append(f"tree: {len(nodes)} nodes, expected {2 ** levels - 1} for {levels} levels")
    return out


def mean_shape(tree: CompTree, root_pos=(0.0, 0.0)) -> np.ndarray:
    """Leaf coordinates of the deformation-free shape with the root at
    ``root_pos``: first child at S - delta/2, second at S + delta/2."""
    violations = validate_tree(tree)
    if violations:
        raise ValidationError("invalid tree: " + "; ".join(violations[:3]))
    coords = {}

    def place(nid, pos):
        node = tree.nodes[nid]
        if node.children is None:
            coords[nid] = pos
            return
        half = node.delta / 2.0
        place(node.children[0], pos - half)
        place(node.children[1], pos + half)

    place(tree.root_id, np.asarray(root_pos, dtype=float))
    return np.array([coords[n.node_id] for n in tree.leaves_in_order()])


def recompose(tree: CompTree, leaf_coords: np.ndarray) -> np.ndarray:
    """Average leaf coordinates pairwise up the tree; returns the root
    position (the exact inverse of mean_shape in real arithmetic)."""
    leaf_iter = iter(np.asarray(leaf_coords, dtype=float))

    def ascend(nid):
        node = tree.nodes[nid]
        if node.children is None:
            return next(leaf_iter)
        a = ascend(node.children[0])
        b = ascend(node.children[1])
        return (a + b) / 2.0

    return ascend(tree.root_id)


def _node_to_dict(node: CompNode) -> dict:
    d: dict = {"id": node.node_id, "level": node.level}
    if node.children is not None:
        d["children"] = list(node.children)
    if node.delta is not None:
        d["delta"] = [float(node.delta[0]), float(node.delta[1])]
    if node.leaf_type is not None:
        d["leafType"] = {
            "orientation": node.leaf_type.orientation,
            "polarity": node.leaf_type.polarity,
        }
    if node.part_label is not None:
        d["partLabel"] = node.part_label
    if node.part_score_channel is not None:
        d["partScoreChannel"] = node.part_score_channel
    return d


def model_to_dict(model: MixtureModel, weights: WeightVector) -> dict:
    return {
        "version": MODEL_VERSION,
        "gridSize": model.grid_size,
        "channels": model.channels,
        "squareSide": model.square_side,
        "landmarkCounts": dict(model.landmark_counts),
        "weights": {
            "wDef": [float(w) for w in weights.w_def],
            "wEdge": float(weights.w_edge),
            "wApp": [float(w) for w in weights.w_app],
            "wPart": float(weights.w_part),
        },
        "mixtures": [
            {"nodes": [_node_to_dict(tree.nodes[nid]) for nid in sorted(tree.nodes)]}
            for tree in model.mixtures
        ],
    }


def serialize_model(model: MixtureModel, weights: WeightVector) -> str:
    if weights.channels != model.channels:
        raise SchemaError(
            f"weights.wApp has {weights.channels} channels, model declares {model.channels}"
        )
    return json.dumps(model_to_dict(model, weights), indent=2, sort_keys=True) + "\n"


def _expect(cond, where, what):
    if not cond:
        raise SchemaError(f"{where}: {what}")


def _node_from_dict(d: dict, where: str) -> CompNode:
    _expect(isinstance(d, dict), where, "expected an object")
    _expect(isinstance(d.get("id"), int), where, "missing integer 'id'")
    _expect(isinstance(d.get("level"), int), where, "missing integer 'level'")
    children = d.get("children")
    if children is not None:
        _expect(
            isinstance(children, list) and len(children) == 2 and all(isinstance(c, int) for c in children),
            where,
            "'children' must be two node ids",
        )
        children = (children[0], children[1])
    delta = d.get("delta")
    if delta is not None:
        _expect(
            isinstance(delta, list) and len(delta) == 2 and all(isinstance(v, (int, float)) for v in delta),
            where,
            "'delta' must be two numbers",
        )
        delta = np.array(delta, dtype=float)
    lt = d.get("leafType")
    leaf_type = None
    if lt is not None:
        _expect(isinstance(lt, dict), where, "'leafType' must be an object")
        _expect(isinstance(lt.get("orientation"), int), where, "leafType.orientation must be an integer")
        _expect(isinstance(lt.get("polarity"), int), where, "leafType.polarity must be an integer")
        try:
            leaf_type = LeafType(lt["orientation"], lt["polarity"])
        except ValidationError as e:
            raise SchemaError(f"{where}: {e}") from e
    label = d.get("partLabel")
    if label is not None:
        _expect(isinstance(label, str), where, "'partLabel' must be a string")
    channel = d.get("partScoreChannel")
    if channel is not None:
        _expect(isinstance(channel, int) and channel >= 0, where, "'partScoreChannel' must be >= 0")
    return CompNode(
        node_id=d["id"],
        level=d["level"],
        children=children,
        delta=delta,
        leaf_type=leaf_type,
        part_label=label,
        part_score_channel=channel,
    )


def model_from_dict(doc: dict) -> tuple[MixtureModel, WeightVector]:
    _expect(isinstance(doc, dict), "document", "expected a JSON object")
    version = doc.get("version")
    if version != MODEL_VERSION:
        raise SchemaError(f"version: unknown model version {version!r}, expected {MODEL_VERSION}")
    _expect(isinstance(doc.get("gridSize"), int) and doc["gridSize"] > 0, "gridSize", "must be a positive integer")
    _expect(isinstance(doc.get("channels"), int) and doc["channels"] > 0, "channels", "must be a positive integer")
    square = doc.get("squareSide")
    _expect(isinstance(square, int) and square > 0 and square % 2 == 1, "squareSide", "must be a positive odd integer")
    counts = doc.get("landmarkCounts")
    _expect(
        isinstance(counts, dict) and all(isinstance(v, int) and v > 0 for v in counts.values()),
        "landmarkCounts",
        "must map part labels to positive integers",
    )
    wd = doc.get("weights")
    _expect(isinstance(wd, dict), "weights", "missing weights object")
    for key in ("wDef", "wEdge", "wApp", "wPart"):
        _expect(key in wd, f"weights.{key}", "missing field")
    _expect(
        isinstance(wd["wDef"], list) and len(wd["wDef"]) == 2,
        "weights.wDef",
        "must be two numbers",
    )
    _expect(isinstance(wd["wApp"], list), "weights.wApp", "must be a list")
    try:
        weights = WeightVector(
            np.array(wd["wDef"], dtype=float),
            float(wd["wEdge"]),
            np.array(wd["wApp"], dtype=float),
            float(wd["wPart"]),
        )
    except (TypeError, ValueError, ValidationError) as e:
        raise SchemaError(f"weights: {e}") from e
    if weights.channels != doc["channels"]:
        raise SchemaError(
            f"weights.wApp: length {2 * weights.channels} does not match 2*channels={2 * doc['channels']}"
        )
    mixtures_doc = doc.get("mixtures")
    _expect(isinstance(mixtures_doc, list), "mixtures", "must be a list")
    if not mixtures_doc:
        raise SchemaError("mixtures: at least one mixture is required")
    mixtures = []
    for mi, mdoc in enumerate(mixtures_doc):
        where = f"mixtures[{mi}]"
        _expect(isinstance(mdoc, dict) and isinstance(mdoc.get("nodes"), list), where, "must carry a node list")
        nodes = {}
        for ni, nd in enumerate(mdoc["nodes"]):
            node = _node_from_dict(nd, f"{where}.nodes[{ni}]")
            if node.node_id in nodes:
                raise SchemaError(f"{where}.nodes[{ni}]: duplicate node id {node.node_id}")
            nodes[node.node_id] = node
        if not nodes:
            raise SchemaError(f"{where}: empty node list")
        root_id = max(nodes.values(), key=lambda n: (n.level, -n.node_id)).node_id
        tree = CompTree(nodes, root_id)
        violations = validate_tree(tree)
        if violations:
            raise SchemaError(f"{where}: " + "; ".join(violations[:5]))
        mixtures.append(tree)
    leaf_counts = {len(m.leaves_in_order()) for m in mixtures}
    if len(leaf_counts) > 1:
        raise SchemaError("mixtures: all mixtures must share identical leaf counts")
    model = MixtureModel(
        mixtures=mixtures,
        landmark_counts=dict(counts),
        grid_size=doc["gridSize"],
        channels=doc["channels"],
        square_side=square,
    )
    return model, weights


def deserialize_model(text: str) -> tuple[MixtureModel, WeightVector]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError(f"model document parse error at byte offset {e.pos}: {e.msg}") from e
    return model_from_dict(doc)


def save_model(path, model: MixtureModel, weights: WeightVector):
    with open(path, "w", encoding="utf-8") as f:
        f.write(serialize_model(model, weights))


def load_model(path) -> tuple[MixtureModel, WeightVector]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise SchemaError(f"{path}: {e}") from e
    try:
        return deserialize_model(text)
    except SchemaError as e:
        raise SchemaError(f"{path}: {e}") from e


def default_weights(channels: int) -> WeightVector:
    """Edge-driven starting point for training; appearance and part terms
    come in once the latent assignments are informative."""
    return WeightVector(
        w_def=np.array([0.01, 0.01]),
        w_edge=1.0,
        w_app=np.zeros(2 * channels),
        w_part=0.0,
    )
