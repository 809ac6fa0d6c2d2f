"""Report emission: canonical JSON, delimited tables, matplotlib figures
rendered to files, and PPM overlays of parses."""

from __future__ import annotations

import csv
import json
import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_PNG_METADATA = {"Software": "shapeparse"}

PART_COLORS = {
    "head": (220, 50, 47),
    "neck": (38, 139, 210),
    "torso": (133, 153, 0),
}
TRUTH_COLOR = (255, 200, 0)


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and math.isinf(obj):
        return "inf" if obj > 0 else "-inf"
    return obj


def dump_json(obj) -> str:
    return json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as f:
        f.write(dump_json(obj))


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def eval_table_text(report: dict) -> str:
    """Aligned plain-text per-part IOU table."""
    lines = [f"{'part':<12}{'mean IOU':>10}{'n':>6}"]
    for row in report.get("perPart", []):
        lines.append(f"{row['label']:<12}{row['meanIou']:>10.4f}{row['count']:>6}")
    if "mixtureAccuracy" in report:
        lines.append(f"{'mixture acc':<12}{report['mixtureAccuracy']:>10.4f}")
    if "meanLandmarkPx" in report:
        lines.append(f"{'landmark px':<12}{report['meanLandmarkPx']:>10.3f}")
    return "\n".join(lines) + "\n"


def write_eval_csv(path, report: dict):
    rows = [(r["label"], f"{r['meanIou']:.6f}", r["count"]) for r in report.get("perPart", [])]
    write_csv(path, ("part", "mean_iou", "count"), rows)


def _save(fig, path):
    fig.savefig(path, format="png", metadata=_PNG_METADATA)
    plt.close(fig)


def eval_figure(report: dict, path):
    """Bar chart of per-part mean IOU."""
    parts = report.get("perPart", [])
    labels = [r["label"] for r in parts]
    values = [r["meanIou"] for r in parts]
    fig, ax = plt.subplots(figsize=(6, 4), dpi=120)
    ax.bar(range(len(labels)), values, color="#4878d0")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("mean IOU")
    title = "part segmentation"
    if "mixtureAccuracy" in report:
        title += f"  (mixture acc {report['mixtureAccuracy']:.2f})"
    ax.set_title(title)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def gap_figure(report: dict, path):
    """Histogram of relative energy gaps from an approximation study."""
    gaps = [row["relEnergyError"] for row in report.get("instances", [])]
    fig, ax = plt.subplots(figsize=(6, 4), dpi=120)
    ax.hist([g * 100 for g in gaps], bins=30, color="#4878d0")
    ax.set_xlabel("relative energy gap (%)")
    ax.set_ylabel("instances")
    ax.set_title(
        f"approx vs exact: mean {report['meanRelEnergyError']*100:.2f}%, "
        f"median {report['medianRelEnergyError']*100:.2f}%"
    )
    fig.tight_layout()
    _save(fig, path)


def bench_figure(bench: dict, path):
    """Log-log time vs cells for the approximate and exact parsers."""
    fig, ax = plt.subplots(figsize=(6, 4), dpi=120)
    for key, color in (("approx", "#4878d0"), ("exact", "#d65f5f")):
        rows = bench["measurements"][key]
        cells = [r["cells"] for r in rows]
        secs = [r["medianSeconds"] for r in rows]
        slope = bench["slopes"][key]
        ax.loglog(cells, secs, "o-", color=color, label=f"{key} (slope {slope:.2f})")
    ax.set_xlabel("grid cells |D|")
    ax.set_ylabel("median parse seconds")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def sweep_figure(ks, ious, path):
    fig, ax = plt.subplots(figsize=(6, 4), dpi=120)
    ax.plot(ks, ious, "o-", color="#4878d0")
    ax.set_xlabel("mixture count K")
    ax.set_ylabel("mean IOU")
    ax.set_title("segmentation vs mixture count")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def _draw_poly(rgb, polygon, color, closed=True):
    h, w = rgb.shape[:2]
    pts = list(polygon)
    n = len(pts)
    rng = range(n) if closed else range(n - 1)
    for i in rng:
        x1, y1 = pts[i]
        x2, y2 = pts[(i + 1) % n]
        length = math.hypot(x2 - x1, y2 - y1)
        steps = max(2, int(math.ceil(length * 2)) + 1)
        for t in np.linspace(0.0, 1.0, steps):
            x = int(math.floor(x1 + t * (x2 - x1) + 0.5))
            y = int(math.floor(y1 + t * (y2 - y1) + 0.5))
            if 0 <= x < w and 0 <= y < h:
                rgb[y, x] = color


def write_overlay_ppm(path, stack, result, truth: dict | None = None):
    """Part contours over a gray render of the strongest edge channel."""
    gray = stack.edge.max(axis=0)
    lo, hi = float(gray.min()), float(gray.max())
    if hi > lo:
        gray = (gray - lo) / (hi - lo)
    else:
        gray = np.zeros_like(gray)
    base = (gray * 200).astype(np.uint8)
    rgb = np.stack([base, base, base], axis=-1)
    if truth is not None:
        for part in truth.get("parts", []):
            _draw_poly(rgb, part["polygon"], TRUTH_COLOR)
    for label, poly in result.parts.items():
        _draw_poly(rgb, poly, PART_COLORS.get(label, (200, 200, 200)))
    h, w = rgb.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(rgb.tobytes())
