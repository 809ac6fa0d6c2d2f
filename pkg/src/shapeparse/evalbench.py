"""IOU evaluation, approximation-error measurement, and complexity
benchmarking of the approximate vs. exact parsers."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.optimize import linear_sum_assignment

from .errors import ValidationError
from .featurestack import FeatureStack, build_leaf_unaries
from .gridmath import op_counter
from .inference import (
    EXACT_CAP_DEFAULT,
    exact_parse_fields,
    landmarks_to_polygons,
    parse,
    parse_fields,
    _parse_stack_tree,
)
from .raster import fill_polygon, mask_iou
from .shapemodel import CompNode, CompTree, LeafType, MixtureModel, WeightVector

PART_ROW_ORDER = ("head", "neck", "torso", "neck+torso")


def iou(poly_a, poly_b, grid_size: int) -> float:
    """Rasterized intersection-over-union on a square grid."""
    a = fill_polygon(poly_a, grid_size, grid_size)
    b = fill_polygon(poly_b, grid_size, grid_size)
    return mask_iou(a, b)


def _union_mask(polys, height, width):
    out = np.zeros((height, width), dtype=bool)
    for poly in polys:
        out |= fill_polygon(poly, height, width)
    return out


def mixture_accuracy(true_idx: list[int], pred_idx: list[int], n_pred: int) -> float:
    """Best one-to-one matching of predicted mixtures to source mixtures
    (learned mixture order is arbitrary relative to the generator's)."""
    n_true = max(true_idx) + 1
    size = max(n_true, n_pred)
    confusion = np.zeros((size, size))
    for t, p in zip(true_idx, pred_idx):
        confusion[p, t] += 1
    rows, cols = linear_sum_assignment(-confusion)
    return float(confusion[rows, cols].sum()) / len(true_idx)


def eval_dataset(model: MixtureModel, weights: WeightVector, instances: list[dict]) -> dict:
    """Per-part mean IOU table over (stack, truth) instances, plus mixture
    identification accuracy and landmark displacement when the truth has
    them."""
    if not instances:
        raise ValidationError("empty evaluation dataset")
    rows = []
    part_scores: dict[str, list[float]] = {}
    true_mix: list[int] = []
    pred_mix: list[int] = []
    lm_px: list[float] = []
    for inst in instances:
        stack: FeatureStack = inst["stack"]
        truth: dict = inst["truth"]
        result = parse(model, stack, weights)
        pred_polys = {p["label"]: p["polygon"] for p in landmarks_to_polygons(result)}
        truth_polys = {p["label"]: p["polygon"] for p in truth.get("parts", [])}
        h, w = stack.height, stack.width
        inst_iou = {}
        for label, tpoly in truth_polys.items():
            if label not in pred_polys:
                continue
            value = mask_iou(
                fill_polygon(pred_polys[label], h, w), fill_polygon(tpoly, h, w)
            )
            inst_iou[label] = value
            part_scores.setdefault(label, []).append(value)
        merged_labels = [l for l in ("neck", "torso") if l in truth_polys and l in pred_polys]
        if len(merged_labels) == 2:
            value = mask_iou(
                _union_mask([pred_polys[l] for l in merged_labels], h, w),
                _union_mask([truth_polys[l] for l in merged_labels], h, w),
            )
            inst_iou["neck+torso"] = value
            part_scores.setdefault("neck+torso", []).append(value)
        row = {"id": inst.get("id", ""), "mixtureIndex": result.mixture_index, "iou": inst_iou}
        if "mixtureIndex" in truth:
            true_mix.append(int(truth["mixtureIndex"]))
            pred_mix.append(result.mixture_index)
            row["trueMixture"] = int(truth["mixtureIndex"])
        if "landmarks" in truth:
            gt = np.asarray(truth["landmarks"], dtype=float)
            pred = np.asarray(result.landmarks, dtype=float)
            if gt.shape == pred.shape:
                err = float(np.hypot(*(pred - gt).T).mean())
                row["landmarkPx"] = err
                lm_px.append(err)
        rows.append(row)
    per_part = [
        {
            "label": label,
            "meanIou": float(np.mean(part_scores[label])),
            "count": len(part_scores[label]),
        }
        for label in PART_ROW_ORDER
        if label in part_scores
    ]
    report = {
        "version": 1,
        "instanceCount": len(instances),
        "perPart": per_part,
        "instances": rows,
    }
    if true_mix:
        report["mixtureAccuracy"] = mixture_accuracy(true_mix, pred_mix, len(model.mixtures))
    if lm_px:
        side = max(instances[0]["stack"].width, instances[0]["stack"].height)
        report["meanLandmarkPx"] = float(np.mean(lm_px))
        report["meanLandmarkNormalized"] = float(np.mean(lm_px) / side)
    return report


def _gap_stats(gaps, disps, norm_side):
    gaps = np.asarray(gaps)
    disps = np.asarray(disps)
    return {
        "meanRelEnergyError": float(gaps.mean()),
        "medianRelEnergyError": float(np.median(gaps)),
        "p95RelEnergyError": float(np.percentile(gaps, 95)),
        "maxRelEnergyError": float(gaps.max()),
        "meanLandmarkPx": float(disps.mean()),
        "meanLandmarkNormalized": float(disps.mean() / norm_side),
    }


def _relative_gap(approx_energy: float, exact_energy: float) -> float:
    # approximate energy is an upper bound; report |gap| / |exact|
    gap = approx_energy - exact_energy
    denom = abs(exact_energy)
    if denom < 1e-12:
        return 0.0 if abs(gap) < 1e-12 else math.inf
    return abs(gap) / denom


def approx_error_report(
    model: MixtureModel,
    weights: WeightVector,
    stacks: list[FeatureStack],
    cap: int = EXACT_CAP_DEFAULT,
) -> dict:
    """Approximate vs exact parse on real stacks (small grids only)."""
    if not stacks:
        raise ValidationError("no stacks to measure")
    gaps, disps, rows = [], [], []
    for si, stack in enumerate(stacks):
        cells = stack.height * stack.width
        if cells > cap:
            raise ValidationError(f"stack {si}: {cells} cells exceeds the exact cap {cap}")
        fields = build_leaf_unaries(stack, weights, model.square_side)
        approx_best = None
        exact_best = None
        for mi, tree in enumerate(model.mixtures):
            a = _parse_stack_tree(tree, stack, weights, fields, mi)
            e = _parse_stack_tree(tree, stack, weights, fields, mi, exact=True, cap=cap)
            if approx_best is None or a.total_energy < approx_best.total_energy:
                approx_best = a
            if exact_best is None or e.total_energy < exact_best.total_energy:
                exact_best = e
        gap = _relative_gap(approx_best.total_energy, exact_best.total_energy)
        disp = float(
            np.hypot(
                *(
                    np.asarray(approx_best.landmarks, dtype=float)
                    - np.asarray(exact_best.landmarks, dtype=float)
                ).T
            ).mean()
        )
        gaps.append(gap)
        disps.append(disp)
        rows.append(
            {
                "index": si,
                "approxEnergy": approx_best.total_energy,
                "exactEnergy": exact_best.total_energy,
                "relEnergyError": gap,
                "landmarkPx": disp,
            }
        )
    side = max(stacks[0].width, stacks[0].height)
    report = {"version": 1, "instanceCount": len(stacks), "instances": rows}
    report.update(_gap_stats(gaps, disps, side))
    return report


# ---------------------------------------------------------------------------
# Randomized desk-scale instances for the oracle study and the benches


def random_tree(levels: int, grid: int, rng) -> CompTree:
    nodes: dict[int, CompNode] = {}
    counter = iter(range(1, 1 << 20))

    def build(level):
        nid = next(counter)
        if level == 1:
            nodes[nid] = CompNode(nid, 1, leaf_type=LeafType(int(rng.integers(0, 8)), 0))
            return nid
        a = build(level - 1)
        b = build(level - 1)
        delta = rng.integers(-grid // 2, grid // 2 + 1, 2) / 2.0
        nodes[nid] = CompNode(nid, level, children=(a, b), delta=delta.astype(float))
        return nid

    root = build(levels)
    return CompTree(nodes, root)


def random_parse_instance(grid: int, levels: int, rng, smooth: float = 1.5):
    """Random balanced tree over spatially correlated unary fields (raw
    noise smoothed, the desk-scale analogue of real evidence maps)."""
    tree = random_tree(levels, grid, rng)
    fields = {}
    for node in tree.nodes.values():
        if node.is_leaf:
            f = rng.uniform(0.0, 10.0, (grid, grid))
            if smooth > 0:
                f = ndimage.gaussian_filter(f, smooth)
            fields[node.node_id] = f
    w_def = rng.uniform(0.3, 1.5, 2)
    return tree, fields, w_def


def oracle_check(grid: int = 12, levels: int = 3, instances: int = 200, seed: int = 0) -> dict:
    """Approximation-gap statistics of the separable composition against the
    exact parser on randomized instances."""
    if grid * grid > EXACT_CAP_DEFAULT:
        raise ValidationError(f"grid {grid} too large for the exact reference")
    rng = np.random.default_rng(seed)
    gaps, disps, rows = [], [], []
    for i in range(instances):
        tree, fields, w_def = random_parse_instance(grid, levels, rng)
        ap = parse_fields(tree, fields, w_def)
        ex = exact_parse_fields(tree, fields, w_def)
        gap = _relative_gap(ap.total_energy, ex.total_energy)
        disp = float(
            np.hypot(
                *(
                    np.asarray(ap.landmarks, dtype=float) - np.asarray(ex.landmarks, dtype=float)
                ).T
            ).mean()
        )
        gaps.append(gap)
        disps.append(disp)
        rows.append(
            {
                "index": i,
                "approxEnergy": ap.total_energy,
                "exactEnergy": ex.total_energy,
                "relEnergyError": gap,
                "landmarkPx": disp,
            }
        )
    report = {
        "version": 1,
        "config": {"grid": grid, "treeLevels": levels, "instances": instances, "seed": seed},
        "instances": rows,
    }
    report.update(_gap_stats(gaps, disps, grid))
    return report


def _fit_slope(cells, seconds):
    return float(np.polyfit(np.log(np.asarray(cells, float)), np.log(np.asarray(seconds, float)), 1)[0])


def complexity_bench(
    approx_sizes=(40, 80, 160, 320),
    exact_sizes=(8, 12, 16, 24),
    reps: int = 3,
    levels: int = 3,
    seed: int = 0,
) -> dict:
    """Median wall time and envelope-operation counts per grid size, with
    fitted log-log slopes for the approximate (expected ~1) and exact
    (expected ~2) parsers.

    Timing lives under 'measurements' / 'slopes'; everything under 'config'
    and 'opCounts' is deterministic.
    """
    rng = np.random.default_rng(seed)
    approx_rows, exact_rows, op_rows = [], [], []
    for size in approx_sizes:
        tree, fields, w_def = random_parse_instance(size, levels, rng, smooth=0.0)
        times = []
        ops = 0
        for _ in range(reps):
            before = op_counter.total
            t0 = time.perf_counter()
            parse_fields(tree, fields, w_def)
            times.append(time.perf_counter() - t0)
            ops = op_counter.total - before
        approx_rows.append(
            {"gridSize": size, "cells": size * size, "medianSeconds": float(np.median(times))}
        )
        n_nonleaf = sum(1 for n in tree.nodes.values() if not n.is_leaf)
        op_rows.append(
            {
                "gridSize": size,
                "cells": size * size,
                "envelopeOps": int(ops),
                "nonLeafNodes": n_nonleaf,
                # two 1-D passes per composition, each <= 2 ops per cell
                "opBound": int(4 * size * size * n_nonleaf),
            }
        )
    for size in exact_sizes:
        tree, fields, w_def = random_parse_instance(size, levels, rng, smooth=0.0)
        times = []
        for _ in range(reps):
            t0 = time.perf_counter()
            parse_fields(tree, fields, w_def, exact=True)
            times.append(time.perf_counter() - t0)
        exact_rows.append(
            {"gridSize": size, "cells": size * size, "medianSeconds": float(np.median(times))}
        )
    return {
        "version": 1,
        "config": {
            "approxSizes": list(approx_sizes),
            "exactSizes": list(exact_sizes),
            "reps": reps,
            "treeLevels": levels,
            "seed": seed,
        },
        "opCounts": op_rows,
        "worstCallSlack": float(op_counter.worst_call_slack),
        "measurements": {"approx": approx_rows, "exact": exact_rows},
        "slopes": {
            "approx": _fit_slope(
                [r["cells"] for r in approx_rows], [r["medianSeconds"] for r in approx_rows]
            ),
            "exact": _fit_slope(
                [r["cells"] for r in exact_rows], [r["medianSeconds"] for r in exact_rows]
            ),
        },
    }
