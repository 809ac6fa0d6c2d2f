"""Operator surface: synth / learn-structure / train / infer / eval / bench /
oracle-check, plus a demo-model bootstrap.

Every command is deterministic given its seed.  Exit codes: 0 success,
2 usage, 3 schema or validation failure, 4 infeasible parse.
"""

from __future__ import annotations

import functools
import json
import os
import sys

import click
import numpy as np

from . import evalbench, reporting
from .demo import DEFAULT_COUNTS, make_demo_model
from .errors import InfeasibleParseError, SchemaError, ShapeParseError, ValidationError
from .featurestack import load_stack, noise_stack, save_stack, synth_stack
from .inference import landmarks_to_polygons, parse
from .paramlearn import TrainingExample, train_latent_svm, training_accuracy
from .shapemodel import load_model, save_model
from .structlearn import annotations_to_dict, learn_structure, load_annotations

NEGATIVE_NOISE_SIGMA = 0.5


def cli_command(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        threads = kwargs.pop("threads", 1)
        if threads < 1:
            click.echo("error: --threads must be >= 1", err=True)
            sys.exit(2)
        try:
            return fn(*args, **kwargs)
        except ShapeParseError as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(e.exit_code)

    wrapper = click.option(
        "--threads", type=int, default=1, show_default=True, help="Worker cap."
    )(wrapper)
    return wrapper


@click.group()
def main():
    """Compositional shape parsing: learn, train, infer, evaluate."""


def _parse_landmark_spec(spec: str) -> dict[str, int]:
    counts = {}
    for chunk in spec.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        if "=" not in chunk:
            raise SchemaError(f"landmark spec '{chunk}' must look like part=count")
        label, _, num = chunk.partition("=")
        try:
            counts[label.strip()] = int(num)
        except ValueError as e:
            raise SchemaError(f"landmark count '{num}' is not an integer") from e
    if not counts:
        raise SchemaError("empty landmark spec")
    return counts


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=False))
@click.option("--count", default=10, show_default=True, help="Positive instances.")
@click.option("--noise", default=0.0, show_default=True, help="Additive noise level.")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--negative-count", default=0, show_default=True, help="Pure-noise stacks.")
@click.option("--jitter", default=3, show_default=True, help="Root placement jitter (px).")
@cli_command
def synth(model_path, count, noise, seed, out_dir, negative_count, jitter):
    """Render synthetic stacks plus ground truth from a model."""
    model, _ = load_model(model_path)
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    size = model.grid_size
    instances = []
    examples = []
    for i in range(count):
        mixture = int(rng.integers(len(model.mixtures)))
        off = rng.integers(-jitter, jitter + 1, 2) if jitter > 0 else np.zeros(2, dtype=int)
        root = (size // 2 + int(off[0]), size // 2 + int(off[1]))
        stack, truth = synth_stack(model, mixture, root, noise, seed=seed * 1_000_003 + i)
        sub = f"instance_{i:03d}"
        subdir = os.path.join(out_dir, sub)
        os.makedirs(subdir, exist_ok=True)
        save_stack(stack, subdir)
        reporting.write_json(os.path.join(subdir, "truth.json"), truth)
        instances.append(
            {"id": sub, "stack": f"{sub}/stack.json", "truth": f"{sub}/truth.json"}
        )
        examples.append({"stack": f"{sub}/stack.json", "label": 1})
    negatives = []
    for i in range(negative_count):
        sub = f"negative_{i:03d}"
        subdir = os.path.join(out_dir, sub)
        os.makedirs(subdir, exist_ok=True)
        stack = noise_stack(
            size, size, channels=model.channels, sigma=NEGATIVE_NOISE_SIGMA,
            seed=seed * 1_000_003 + count + i,
        )
        save_stack(stack, subdir)
        negatives.append({"id": sub, "stack": f"{sub}/stack.json"})
        examples.append({"stack": f"{sub}/stack.json", "label": -1})
    dataset = {
        "version": 1,
        "grid": size,
        "noise": noise,
        "seed": seed,
        "instances": instances,
        "negatives": negatives,
    }
    reporting.write_json(os.path.join(out_dir, "dataset.json"), dataset)
    reporting.write_json(os.path.join(out_dir, "train.json"), {"version": 1, "examples": examples})
    annotations = {
        "version": 1,
        "images": [
            {
                "id": inst["id"],
                "width": size,
                "height": size,
                "parts": json.load(open(os.path.join(out_dir, inst["truth"])))["parts"],
            }
            for inst in instances
        ],
    }
    reporting.write_json(os.path.join(out_dir, "annotations.json"), annotations)
    click.echo(f"wrote {count} instances and {negative_count} negatives to {out_dir}")


@main.command("learn-structure")
@click.option("--annotations", "annotations_path", required=True, type=click.Path())
@click.option("--k", default=1, show_default=True, help="Number of mixtures (medoids).")
@click.option("--landmarks", default="head=8,neck=8,torso=16", show_default=True)
@click.option("--grid", default=160, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--channels", default=2, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@cli_command
def learn_structure_cmd(annotations_path, k, landmarks, grid, seed, channels, out_path):
    """Learn mixture topology and geometry from part annotations."""
    anns = load_annotations(annotations_path)
    counts = _parse_landmark_spec(landmarks)
    model, weights, info = learn_structure(
        anns, k=k, counts=counts, grid_size=grid, seed=seed, channels=channels
    )
    save_model(out_path, model, weights)
    click.echo(
        f"learned {len(model.mixtures)} mixtures from {len(anns)} annotations "
        f"(medoids {info['medoids']}) -> {out_path}"
    )


def _load_manifest_examples(manifest_path):
    try:
        with open(manifest_path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise SchemaError(f"{manifest_path}: parse error at byte offset {e.pos}: {e.msg}") from e
    except OSError as e:
        raise SchemaError(f"{manifest_path}: {e}") from e
    entries = doc.get("examples") if isinstance(doc, dict) else None
    if not isinstance(entries, list) or not entries:
        raise SchemaError(f"{manifest_path}: 'examples' must be a non-empty list")
    base = os.path.dirname(os.path.abspath(manifest_path))
    examples = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict) or "stack" not in entry or "label" not in entry:
            raise SchemaError(f"{manifest_path}: examples[{i}] needs 'stack' and 'label'")
        stack = load_stack(os.path.join(base, entry["stack"]))
        examples.append(TrainingExample(stack, int(entry["label"]), name=entry["stack"]))
    return examples


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path())
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--c", "c_value", default=1.0, show_default=True, help="Hinge weight C.")
@click.option("--epochs", default=5, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--report", "report_path", default=None, type=click.Path())
@cli_command
def train(model_path, manifest_path, c_value, epochs, seed, out_path, report_path):
    """Latent-SVM training of the shared weight vector."""
    model, init_weights = load_model(model_path)
    examples = _load_manifest_examples(manifest_path)
    result = train_latent_svm(
        model,
        examples,
        c=c_value,
        epochs=epochs,
        seed=seed,
        init_weights=None,
        compute_final_scores=report_path is not None,
    )
    save_model(out_path, model, result.weights)
    if result.degenerate:
        click.echo("warning: all examples share one label; weights are degenerate", err=True)
    if report_path:
        acc = training_accuracy(result, examples)
        reporting.write_json(
            report_path,
            {
                "version": 1,
                "objectiveHistory": result.objective_history,
                "convexTraces": result.convex_traces,
                "trainingAccuracy": acc,
                "degenerate": result.degenerate,
                "scores": result.final_scores,
            },
        )
        click.echo(f"training accuracy {acc:.3f}")
    click.echo(f"trained on {len(examples)} examples -> {out_path}")


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path())
@click.option("--stack", "stack_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--overlay", "overlay_path", default=None, type=click.Path())
@cli_command
def infer(model_path, stack_path, out_path, overlay_path):
    """MAP parse of one stack; optional contour overlay image."""
    model, weights = load_model(model_path)
    stack = load_stack(stack_path)
    result = parse(model, stack, weights)
    landmarks_to_polygons(result)  # polygon sanity (>= 3 landmarks per part)
    reporting.write_json(out_path, result.to_dict())
    if overlay_path:
        truth = None
        truth_path = os.path.join(os.path.dirname(os.path.abspath(stack_path)), "truth.json")
        if os.path.exists(truth_path):
            with open(truth_path) as f:
                truth = json.load(f)
        reporting.write_overlay_ppm(overlay_path, stack, result, truth)
    click.echo(
        f"mixture {result.mixture_index} energy {result.total_energy:.4f} -> {out_path}"
    )


@main.command("eval")
@click.option("--model", "model_path", required=True, type=click.Path())
@click.option("--dataset", "dataset_dir", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--figures/--no-figures", default=True, show_default=True)
@cli_command
def eval_cmd(model_path, dataset_dir, out_path, figures):
    """Per-part IOU report against a dataset's ground truth."""
    model, weights = load_model(model_path)
    dataset_path = os.path.join(dataset_dir, "dataset.json")
    try:
        with open(dataset_path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise SchemaError(f"{dataset_path}: parse error at byte offset {e.pos}: {e.msg}") from e
    except OSError as e:
        raise SchemaError(f"{dataset_path}: {e}") from e
    entries = doc.get("instances")
    if not isinstance(entries, list) or not entries:
        raise SchemaError(f"{dataset_path}: 'instances' must be a non-empty list")
    instances = []
    for entry in entries:
        stack = load_stack(os.path.join(dataset_dir, entry["stack"]))
        with open(os.path.join(dataset_dir, entry["truth"])) as f:
            truth = json.load(f)
        instances.append({"id": entry.get("id", ""), "stack": stack, "truth": truth})
    report = evalbench.eval_dataset(model, weights, instances)
    reporting.write_json(out_path, report)
    stem, _ = os.path.splitext(out_path)
    reporting.write_eval_csv(stem + ".csv", report)
    if figures:
        reporting.eval_figure(report, stem + ".png")
    click.echo(reporting.eval_table_text(report), nl=False)


@main.command()
@click.option("--mode", type=click.Choice(["approx-error", "complexity"]), required=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True)
@click.option("--grid", default=12, show_default=True, help="approx-error grid size.")
@click.option("--tree-levels", default=3, show_default=True)
@click.option("--instances", default=200, show_default=True)
@click.option("--sizes", default="40,80,160,320", show_default=True, help="complexity approx sizes.")
@click.option("--exact-sizes", default="8,12,16,24", show_default=True)
@click.option("--reps", default=3, show_default=True)
@click.option("--figures/--no-figures", default=True, show_default=True)
@cli_command
def bench(mode, out_path, seed, grid, tree_levels, instances, sizes, exact_sizes, reps, figures):
    """Approximation-error or complexity measurements; figures land next to
    the JSON report."""
    stem, _ = os.path.splitext(out_path)
    if mode == "approx-error":
        report = evalbench.oracle_check(grid=grid, levels=tree_levels, instances=instances, seed=seed)
        reporting.write_json(out_path, report)
        reporting.write_csv(
            stem + ".csv",
            ("index", "approx_energy", "exact_energy", "rel_energy_error", "landmark_px"),
            [
                (r["index"], r["approxEnergy"], r["exactEnergy"], r["relEnergyError"], r["landmarkPx"])
                for r in report["instances"]
            ],
        )
        if figures:
            reporting.gap_figure(report, stem + ".png")
        click.echo(
            f"mean gap {report['meanRelEnergyError']*100:.3f}%  "
            f"median {report['medianRelEnergyError']*100:.3f}%  "
            f"mean landmark shift {report['meanLandmarkPx']:.3f}px"
        )
        return
    sizes_list = [int(s) for s in sizes.split(",") if s.strip()]
    exact_list = [int(s) for s in exact_sizes.split(",") if s.strip()]
    report = evalbench.complexity_bench(
        approx_sizes=sizes_list, exact_sizes=exact_list, reps=reps, levels=tree_levels, seed=seed
    )
    reporting.write_json(out_path, report)
    rows = [
        ("approx", r["gridSize"], r["cells"], r["medianSeconds"])
        for r in report["measurements"]["approx"]
    ] + [
        ("exact", r["gridSize"], r["cells"], r["medianSeconds"])
        for r in report["measurements"]["exact"]
    ]
    reporting.write_csv(stem + ".csv", ("path", "grid_size", "cells", "median_seconds"), rows)
    if figures:
        reporting.bench_figure(report, stem + ".png")
    click.echo(
        f"slopes: approx {report['slopes']['approx']:.2f}  exact {report['slopes']['exact']:.2f}"
    )


@main.command("oracle-check")
@click.option("--grid", default=12, show_default=True)
@click.option("--tree-levels", default=3, show_default=True)
@click.option("--instances", default=200, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_path", default=None, type=click.Path())
@cli_command
def oracle_check_cmd(grid, tree_levels, instances, seed, out_path):
    """Approximation-gap statistics of the separable composition."""
    report = evalbench.oracle_check(grid=grid, levels=tree_levels, instances=instances, seed=seed)
    if out_path:
        reporting.write_json(out_path, report)
    click.echo(f"instances {instances}  grid {grid}  levels {tree_levels}")
    click.echo(f"meanRelEnergyError {report['meanRelEnergyError']:.6f}")
    click.echo(f"medianRelEnergyError {report['medianRelEnergyError']:.6f}")
    click.echo(f"meanLandmarkPx {report['meanLandmarkPx']:.4f}")
    click.echo(f"meanLandmarkNormalized {report['meanLandmarkNormalized']:.6f}")


@main.command("make-demo-model")
@click.option("--mixtures", default=3, show_default=True)
@click.option("--grid", default=96, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--channels", default=2, show_default=True)
@click.option("--landmarks", default="head=8,neck=8,torso=16", show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@cli_command
def make_demo_model_cmd(mixtures, grid, seed, channels, landmarks, out_path):
    """Write a model built from the built-in demo shapes."""
    counts = _parse_landmark_spec(landmarks)
    model, weights = make_demo_model(
        mixtures=mixtures, grid=grid, seed=seed, counts=counts, channels=channels
    )
    save_model(out_path, model, weights)
    click.echo(f"demo model with {mixtures} mixtures at grid {grid} -> {out_path}")


if __name__ == "__main__":
    main()
