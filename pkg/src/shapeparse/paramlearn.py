"""Latent SVM over positive (object) and negative (non-object) stacks.

Alternates a latent step (re-parse every example under the current weights)
with a convex step (deterministic projected subgradient on the hinge
objective with assignments frozen).  The energy is linear in the weights,
so each assignment is summarized by a sufficient-statistics vector phi with
w . phi == energy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .featurestack import FeatureStack, appearance_feature, edge_feature
from .inference import ParseResult, parse
from .shapemodel import MixtureModel, WeightVector, default_weights


@dataclass
class TrainingExample:
    stack: FeatureStack
    label: int
    name: str = ""

    def __post_init__(self):
        if self.label not in (+1, -1):
            raise ValidationError(f"label must be +1 or -1, got {self.label}")


@dataclass
class TrainResult:
    weights: WeightVector
    objective_history: list[float]  # hinge objective at fresh latent assignments
    convex_traces: list[list[float]]  # best-so-far objective inside each round
    degenerate: bool
    final_scores: list[float] = field(default_factory=list)


def weights_to_vector(weights: WeightVector) -> np.ndarray:
    return np.concatenate(
        [weights.w_def, [weights.w_edge], weights.w_app, [weights.w_part]]
    )


def vector_to_weights(vec: np.ndarray, channels: int) -> WeightVector:
    if vec.size != 4 + 2 * channels:
        raise ValidationError(f"weight vector of length {vec.size} does not match C={channels}")
    return WeightVector(
        w_def=vec[0:2].copy(),
        w_edge=float(vec[2]),
        w_app=vec[3 : 3 + 2 * channels].copy(),
        w_part=float(vec[-1]),
    )


def featurize(model: MixtureModel, stack: FeatureStack, assignment: ParseResult) -> np.ndarray:
    """Sufficient statistics of a configuration: summed squared displacements
    (2), summed edge responses (1), summed appearance vectors (2C), summed
    part scores (1).  Dotting with the weight vector reproduces its energy."""
    tree = model.mixtures[assignment.mixture_index]
    c = stack.channels
    phi = np.zeros(4 + 2 * c)
    for node in tree.bottom_up():
        pos = assignment.node_positions[node.node_id]
        if node.is_leaf:
            phi[2] += edge_feature(stack, node.leaf_type, pos)
            phi[3 : 3 + 2 * c] += appearance_feature(
                stack, node.leaf_type, pos, model.square_side
            )
        else:
            x1, y1 = assignment.node_positions[node.children[0]]
            x2, y2 = assignment.node_positions[node.children[1]]
            dx = x2 - x1 - node.delta[0]
            dy = y2 - y1 - node.delta[1]
            phi[0] += dx * dx
            phi[1] += dy * dy
            if node.part_score_channel is not None:
                phi[-1] += float(stack.part[node.part_score_channel, pos[1], pos[0]])
    return phi


def _hinge_objective(wv, phis, labels, c):
    margins = 1.0 + labels * (phis @ wv)  # F = -w.phi, so 1 - y*F = 1 + y*(w.phi)
    return 0.5 * float(wv @ wv) + c * float(np.maximum(0.0, margins).sum())


def _convex_step(wv, phis, labels, c, iters):
    """Projected subgradient with step 1/t; keeps the best iterate so the
    recorded trace is non-increasing by construction."""
    wv = wv.copy()
    best = wv.copy()
    best_obj = _hinge_objective(wv, phis, labels, c)
    trace = [best_obj]
    for t in range(1, iters + 1):
        margins = 1.0 + labels * (phis @ wv)
        active = margins > 0
        grad = wv.copy()
        if active.any():
            grad += c * (labels[active][:, None] * phis[active]).sum(axis=0)
        wv -= grad / t
        wv[0] = max(wv[0], 0.0)
        wv[1] = max(wv[1], 0.0)
        obj = _hinge_objective(wv, phis, labels, c)
        if obj < best_obj:
            best_obj = obj
            best = wv.copy()
        trace.append(best_obj)
    return best, trace


def train_latent_svm(
    model: MixtureModel,
    examples: list[TrainingExample],
    c: float = 1.0,
    epochs: int = 5,
    seed: int = 0,
    inner_iters: int = 200,
    init_weights: WeightVector | None = None,
    compute_final_scores: bool = True,
) -> TrainResult:
    """Alternating latent/convex training; deterministic given the example
    order (the seed parameter is kept for interface stability)."""
    if not examples:
        raise ValidationError("no training examples")
    if c < 0:
        raise ValidationError("C must be non-negative")
    labels = np.array([ex.label for ex in examples], dtype=float)
    degenerate = len(set(int(l) for l in labels)) < 2
    weights = (init_weights or default_weights(model.channels)).copy()
    if weights.channels != model.channels:
        raise ValidationError("initial weights do not match the model's channels")
    history = []
    traces = []
    for _ in range(max(1, epochs)):
        assignments = [parse(model, ex.stack, weights) for ex in examples]
        phis = np.array([featurize(model, ex.stack, a) for a in assignments])
        wv = weights_to_vector(weights)
        history.append(_hinge_objective(wv, phis, labels, c))
        wv, trace = _convex_step(wv, phis, labels, c, inner_iters)
        traces.append(trace)
        weights = vector_to_weights(wv, model.channels)
    scores = []
    if compute_final_scores:
        final_assignments = [parse(model, ex.stack, weights) for ex in examples]
        scores = [-a.total_energy for a in final_assignments]
        final_phis = np.array(
            [featurize(model, ex.stack, a) for a in final_assignments]
        )
        history.append(_hinge_objective(weights_to_vector(weights), final_phis, labels, c))
    return TrainResult(
        weights=weights,
        objective_history=history,
        convex_traces=traces,
        degenerate=degenerate,
        final_scores=scores,
    )


def score_example(model: MixtureModel, weights: WeightVector, stack: FeatureStack) -> float:
    """Classification score F = -min-energy of the best mixture placement."""
    return -parse(model, stack, weights).total_energy


def training_accuracy(result: TrainResult, examples: list[TrainingExample]) -> float:
    if not result.final_scores:
        raise ValidationError("training was run without final scores")
    correct = sum(
        1
        for score, ex in zip(result.final_scores, examples)
        if (score > 0) == (ex.label > 0)
    )
    return correct / len(examples)
