"""MAP parsing of mixture models: bottom-up tables with the separable
two-stage composition, top-down recovery, mixture selection, and the exact
quadratic reference parser."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleParseError, ValidationError
from .featurestack import FeatureStack, build_leaf_unaries, part_unary
from .gridmath import INFEASIBLE, pairwise_min_2d
from .raster import polygon_area
from .shapemodel import CompTree, MixtureModel, WeightVector

_INF = math.inf

EXACT_CAP_DEFAULT = 4096


@dataclass
class ParseResult:
    mixture_index: int
    total_energy: float
    root_position: tuple[int, int]
    node_positions: dict[int, tuple[int, int]]
    landmarks: list[tuple[int, int]]
    parts: dict[str, list[tuple[int, int]]]
    per_mixture_energies: list[float] = field(default_factory=list)

    @property
    def score(self) -> float:
        return -self.total_energy

    def to_dict(self) -> dict:
        return {
            "mixtureIndex": self.mixture_index,
            "energy": float(self.total_energy),
            "perMixtureEnergies": [float(e) for e in self.per_mixture_energies],
            "parts": [
                {"label": label, "polygon": [[int(x), int(y)] for x, y in poly]}
                for label, poly in self.parts.items()
            ],
            "landmarks": [[int(x), int(y)] for x, y in self.landmarks],
        }


def compose_step(e1, e2, delta, w_def, part_grid=None):
    """One approximate composition: pick S1 against e1 plus deformation only,
    then charge e2 at the mirrored position 2S - S1 (may be +inf)."""
    e1 = np.asarray(e1, dtype=float)
    e2 = np.asarray(e2, dtype=float)
    if e1.shape != e2.shape:
        raise ValidationError(f"child grids differ: {e1.shape} vs {e2.shape}")
    vals, ax, ay = pairwise_min_2d(e1, w_def[0], w_def[1], delta[0], delta[1])
    h, w = e1.shape
    ys, xs = np.mgrid[0:h, 0:w]
    feas = ay != INFEASIBLE
    s2x = np.where(feas, 2 * xs - ax, 0)
    s2y = np.where(feas, 2 * ys - ay, 0)
    out = np.where(feas, vals + e2[s2y, s2x], _INF)
    if part_grid is not None:
        out = out + part_grid
    return out, ax, ay


def _compose_exact(e1, e2, delta, w_def):
    """Joint min over both children positions; quadratic in the grid size.

    Deliberately a plain double scan: this is the reference the approximation
    is measured against.
    """
    h, w = e1.shape
    wx, wy = float(w_def[0]), float(w_def[1])
    half_dx = float(delta[0]) / 2.0
    half_dy = float(delta[1]) / 2.0
    xs = np.arange(w, dtype=float)
    ysr = np.arange(h, dtype=float)
    defx = (4.0 * wx * (xs[:, None] - xs[None, :] - half_dx) ** 2).tolist()
    defy = (4.0 * wy * (ysr[:, None] - ysr[None, :] - half_dy) ** 2).tolist()
    e1l = e1.tolist()
    e2l = e2.tolist()
    out = np.full((h, w), _INF)
    bx = np.full((h, w), INFEASIBLE, dtype=np.int64)
    by = np.full((h, w), INFEASIBLE, dtype=np.int64)
    for y in range(h):
        y1_lo = max(0, 2 * y - (h - 1))
        y1_hi = min(h - 1, 2 * y)
        defy_row = defy[y]
        for x in range(w):
            x1_lo = max(0, 2 * x - (w - 1))
            x1_hi = min(w - 1, 2 * x)
            defx_row = defx[x]
            best = _INF
            best_x = -1
            best_y = -1
            xx = 2 * x
            for y1 in range(y1_lo, y1_hi + 1):
                e1_row = e1l[y1]
                e2_row = e2l[2 * y - y1]
                dy_cost = defy_row[y1]
                for x1 in range(x1_lo, x1_hi + 1):
                    v = dy_cost + defx_row[x1] + e1_row[x1] + e2_row[xx - x1]
                    if v < best:
                        best = v
                        best_x = x1
                        best_y = y1
            if best < _INF:
                out[y, x] = best
                bx[y, x] = best_x
                by[y, x] = best_y
    return out, bx, by


def _build_tables(tree, leaf_unary, part_for_node, w_def, exact):
    tables = {}
    back = {}
    for node in tree.bottom_up():
        if node.is_leaf:
            tables[node.node_id] = leaf_unary(node)
            continue
        c1, c2 = node.children
        if exact:
            e_grid, bx, by = _compose_exact(tables[c1], tables[c2], node.delta, w_def)
            part = part_for_node(node)
            if part is not None:
                e_grid = e_grid + part
        else:
            e_grid, bx, by = compose_step(
                tables[c1], tables[c2], node.delta, w_def, part_grid=part_for_node(node)
            )
        tables[node.node_id] = e_grid
        back[node.node_id] = (bx, by)
    return tables, back


def _top_down(tree, tables, back):
    root_table = tables[tree.root_id]
    flat = int(np.argmin(root_table))
    h, w = root_table.shape
    ry, rx = divmod(flat, w)
    if root_table[ry, rx] == _INF:
        raise InfeasibleParseError("no feasible placement of the shape on this grid")
    positions = {}

    def descend(nid, x, y):
        positions[nid] = (int(x), int(y))
        node = tree.nodes[nid]
        if node.children is None:
            return
        bx, by = back[nid]
        x1, y1 = int(bx[y, x]), int(by[y, x])
        descend(node.children[0], x1, y1)
        descend(node.children[1], 2 * x - x1, 2 * y - y1)

    descend(tree.root_id, rx, ry)
    return (int(rx), int(ry)), positions


def evaluate_configuration(tree, positions, leaf_unary, part_for_node, w_def):
    """Direct energy of a configuration: leaf unaries plus deformation and
    part terms; the DP total must agree with this."""
    total = 0.0
    wx, wy = float(w_def[0]), float(w_def[1])
    for node in tree.bottom_up():
        x, y = positions[node.node_id]
        if node.is_leaf:
            total += float(leaf_unary(node)[y, x])
            continue
        c1, c2 = node.children
        x1, y1 = positions[c1]
        x2, y2 = positions[c2]
        dx = x2 - x1 - node.delta[0]
        dy = y2 - y1 - node.delta[1]
        total += wx * dx * dx + wy * dy * dy
        part = part_for_node(node)
        if part is not None:
            total += float(part[y, x])
    return total


def _assemble(tree, mixture_index, positions, root_pos, energy, per_mixture):
    leaves = tree.leaves_in_order()
    labels = tree.leaf_part_labels()
    landmarks = [positions[n.node_id] for n in leaves]
    parts: dict[str, list] = {}
    for (x, y), label in zip(landmarks, labels):
        if label is not None:
            parts.setdefault(label, []).append((x, y))
    return ParseResult(
        mixture_index=mixture_index,
        total_energy=energy,
        root_position=root_pos,
        node_positions=positions,
        landmarks=landmarks,
        parts=parts,
        per_mixture_energies=per_mixture,
    )


def parse_fields(
    tree: CompTree,
    leaf_fields: dict[int, np.ndarray],
    w_def,
    part_fields: dict[int, np.ndarray] | None = None,
    exact: bool = False,
    mixture_index: int = 0,
) -> ParseResult:
    """Parse with explicit per-leaf unary grids (the bench harness path)."""

    def leaf_unary(node):
        return leaf_fields[node.node_id]

    def part_for_node(node):
        if part_fields is None:
            return None
        return part_fields.get(node.node_id)

    tables, back = _build_tables(tree, leaf_unary, part_for_node, w_def, exact)
    root_pos, positions = _top_down(tree, tables, back)
    energy = evaluate_configuration(tree, positions, leaf_unary, part_for_node, w_def)
    return _assemble(tree, mixture_index, positions, root_pos, energy, [energy])


def exact_parse_fields(tree, leaf_fields, w_def, part_fields=None, cap=EXACT_CAP_DEFAULT):
    any_field = next(iter(leaf_fields.values()))
    cells = any_field.shape[0] * any_field.shape[1]
    if cells > cap:
        raise ValidationError(
            f"grid has {cells} cells, above the exact-parse cap {cap}; "
            "use the approximate parser for grids this large"
        )
    return parse_fields(tree, leaf_fields, w_def, part_fields, exact=True)


def _stack_leaf_unary(fields):
    def leaf_unary(node):
        return fields[node.leaf_type.index]

    return leaf_unary


def _stack_part_fn(stack, weights):
    cache = {}

    def part_for_node(node):
        if node.part_score_channel is None:
            return None
        key = node.part_score_channel
        if key not in cache:
            cache[key] = weights.w_part * stack.part[key]
        return cache[key]

    return part_for_node


def _parse_stack_tree(tree, stack, weights, fields, mixture_index, exact=False, cap=None):
    if exact:
        cells = stack.height * stack.width
        if cells > cap:
            raise ValidationError(
                f"grid has {cells} cells, above the exact-parse cap {cap}; "
                "use parse_one_mixture for grids this large"
            )
    leaf_unary = _stack_leaf_unary(fields)
    part_for_node = _stack_part_fn(stack, weights)
    tables, back = _build_tables(tree, leaf_unary, part_for_node, weights.w_def, exact)
    root_pos, positions = _top_down(tree, tables, back)
    energy = evaluate_configuration(tree, positions, leaf_unary, part_for_node, weights.w_def)
    return _assemble(tree, mixture_index, positions, root_pos, energy, [energy])


def parse_one_mixture(
    tree: CompTree,
    stack: FeatureStack,
    weights: WeightVector,
    square_side: int = 11,
) -> ParseResult:
    fields = build_leaf_unaries(stack, weights, square_side)
    return _parse_stack_tree(tree, stack, weights, fields, 0)


def exact_parse(
    tree: CompTree,
    stack: FeatureStack,
    weights: WeightVector,
    square_side: int = 11,
    cap: int = EXACT_CAP_DEFAULT,
) -> ParseResult:
    fields = build_leaf_unaries(stack, weights, square_side)
    return _parse_stack_tree(tree, stack, weights, fields, 0, exact=True, cap=cap)


def parse(model: MixtureModel, stack: FeatureStack, weights: WeightVector) -> ParseResult:
    """Parse every mixture and keep the minimum-energy one (ties go to the
    lowest mixture index)."""
    fields = build_leaf_unaries(stack, weights, model.square_side)
    best = None
    energies = []
    for mi, tree in enumerate(model.mixtures):
        try:
            result = _parse_stack_tree(tree, stack, weights, fields, mi)
        except InfeasibleParseError:
            energies.append(_INF)
            continue
        energies.append(result.total_energy)
        if best is None or result.total_energy < best.total_energy:
            best = result
    if best is None:
        raise InfeasibleParseError("every mixture is infeasible on this grid")
    best.per_mixture_energies = energies
    return best


def landmarks_to_polygons(result: ParseResult) -> list[dict]:
    """One closed polygon per part, in stored landmark order; zero-area
    polygons are emitted but flagged."""
    out = []
    for label, poly in result.parts.items():
        if len(poly) < 3:
            raise ValidationError(f"part '{label}' has {len(poly)} landmarks, need >= 3")
        area = abs(polygon_area(poly))
        out.append(
            {
                "label": label,
                "polygon": [[int(x), int(y)] for x, y in poly],
                "degenerate": area < 1e-9,
            }
        )
    return out
