"""Metrics, ablation grids, and embedding export.

Multi-label "Accuracy" is the example-based Jaccard score (|Y∩Ŷ|/|Y∪Ŷ|
averaged over samples, an empty union counting as a hit); precision, recall,
and F1 are micro-averaged over every (sample, class) pair. These definitions
are isolated here so they can be swapped without touching callers. Sentiment
uses plain two-class accuracy and F1 with "positive" as the positive class,
over non-excluded samples only.

The two ablation grids mirror the published sweeps: 15 modality orderings
(3 uni, 6 bi, 6 tri) and 4 component combinations. ``run_ablation`` executes
one short training per cell (or a forward-only evaluation when the step
budget is 0) and renders an aligned text table; failed cells appear as
explicit gaps instead of aborting the sweep.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import config_hash, write_run_config

MODALITY_GRID = ("V", "A", "L", "VA", "AV", "AL", "LA", "VL", "LV",
                 "VAL", "AVL", "ALV", "LAV", "VLA", "LVA")

COMPONENT_GRID = (
    {"name": "w/o CMD+LE", "use_cmd": False, "use_le": False},
    {"name": "w/o CMD", "use_cmd": False, "use_le": True},
    {"name": "w/o LE", "use_cmd": True, "use_le": False},
    {"name": "full", "use_cmd": True, "use_le": True},
)

# published test-set numbers (percent); reported for orientation only, never
# used as a pass/fail gate at desk scale
REFERENCE_TARGETS = {
    ("mosei", "emotion"): {"accuracy": 49.3, "precision": 53.1,
                           "recall": 63.4, "micro_f1": 57.8},
    ("mosei", "sentiment"): {"acc2": 85.3, "f1": 85.1},
    ("mosi", "sentiment"): {"acc2": 84.0, "f1": 84.0},
}

METRIC_COLUMNS = {
    "emotion": (("accuracy", "Accuracy"), ("precision", "Precision"),
                ("recall", "Recall"), ("micro_f1", "Micro-F1")),
    "sentiment": (("acc2", "ACC2"), ("f1", "F1")),
}


def multilabel_metrics(predictions, targets) -> tuple[float, float, float, float]:
    """(Accuracy, micro-Precision, micro-Recall, micro-F1) for binary matrices."""
    pred = np.asarray(predictions)
    tgt = np.asarray(targets)
    if pred.shape != tgt.shape or pred.ndim != 2:
        raise ValueError(f"shape mismatch: predictions {pred.shape} vs targets {tgt.shape}")
    pred = pred.astype(bool)
    tgt = tgt.astype(bool)
    inter = (pred & tgt).sum(axis=1)
    union = (pred | tgt).sum(axis=1)
    per_sample = np.where(union == 0, 1.0, inter / np.maximum(union, 1))
    accuracy = float(per_sample.mean())
    tp = int((pred & tgt).sum())
    fp = int((pred & ~tgt).sum())
    fn = int((~pred & tgt).sum())
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return accuracy, float(precision), float(recall), float(f1)


def binary_metrics(predictions, targets, excluded_mask) -> tuple[float, float]:
    """(ACC2, F1) over included samples; class 0 ("positive") is the positive class."""
    pred = np.asarray(predictions)
    tgt = np.asarray(targets)
    mask = np.asarray(excluded_mask, dtype=bool)
    if pred.shape != tgt.shape or pred.ndim != 2 or pred.shape[1] != 2:
        raise ValueError(f"expected one-hot pairs, got {pred.shape} vs {tgt.shape}")
    include = ~mask
    if not include.any():
        raise ValueError("zero included samples")
    pred_idx = pred[include].argmax(axis=1)
    tgt_idx = tgt[include].argmax(axis=1)
    acc2 = float((pred_idx == tgt_idx).mean())
    tp = int(((pred_idx == 0) & (tgt_idx == 0)).sum())
    fp = int(((pred_idx == 0) & (tgt_idx != 0)).sum())
    fn = int(((pred_idx != 0) & (tgt_idx == 0)).sum())
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return acc2, float(f1)


def per_class_breakdown(predictions, targets, class_names) -> dict:
    """Per-class precision/recall/F1 from binary matrices."""
    pred = np.asarray(predictions).astype(bool)
    tgt = np.asarray(targets).astype(bool)
    out = {}
    for j, name in enumerate(class_names):
        tp = int((pred[:, j] & tgt[:, j]).sum())
        fp = int((pred[:, j] & ~tgt[:, j]).sum())
        fn = int((~pred[:, j] & tgt[:, j]).sum())
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * p * r / (p + r) if p + r else 0.0
        out[name] = {"precision": p, "recall": r, "f1": f1, "support": int(tgt[:, j].sum())}
    return out


def percent(x: float) -> str:
    return f"{100.0 * x:.1f}"


@dataclass
class EvalReport:
    task: str
    dataset: str
    config_hash: str
    metrics: dict
    per_class: dict = field(default_factory=dict)
    n_excluded: int = 0

    def lines(self) -> list[str]:
        out = [f"task={self.task} dataset={self.dataset} config={self.config_hash}"]
        cols = METRIC_COLUMNS[self.task]
        out.append("  ".join(f"{label}: {percent(self.metrics[key])}%" for key, label in cols))
        if self.n_excluded:
            out.append(f"excluded samples: {self.n_excluded}")
        for name, stats in self.per_class.items():
            out.append(f"  {name}: P {percent(stats['precision'])}%  "
                       f"R {percent(stats['recall'])}%  F1 {percent(stats['f1'])}%  "
                       f"(n={stats['support']})")
        return out

    def render(self) -> str:
        return "\n".join(self.lines()) + "\n"


def reference_delta_lines(dataset: str, task: str, metrics: dict) -> list[str]:
    """Differences from the published numbers, informational only."""
    targets = REFERENCE_TARGETS.get((dataset, task))
    if targets is None:
        return [f"no reference targets for dataset={dataset} task={task}"]
    lines = []
    for key, ref in targets.items():
        got = 100.0 * metrics[key]
        lines.append(f"{key}: {got:.1f}% vs reference {ref:.1f}% (delta {got - ref:+.1f})")
    return lines


def grid_cells(grid: str, base_cfg: dict) -> list[tuple[str, dict]]:
    """Expand a named grid into (cell name, full config) pairs."""
    import copy

    cells = []
    if grid == "orders":
        for order in MODALITY_GRID:
            cfg = copy.deepcopy(base_cfg)
            cfg["cmd"]["order"] = order
            cfg["cmd"]["layers"] = len(order)
            cfg["model"]["use_cmd"] = True
            cfg["model"]["use_le"] = True
            cells.append((order, cfg))
    elif grid == "components":
        for cell in COMPONENT_GRID:
            cfg = copy.deepcopy(base_cfg)
            cfg["model"]["use_cmd"] = cell["use_cmd"]
            cfg["model"]["use_le"] = cell["use_le"]
            cells.append((cell["name"], cfg))
    else:
        raise ValueError(f"unknown grid {grid!r} (expected 'orders' or 'components')")
    return cells


def _cell_slug(name: str) -> str:
    return "".join(ch if ch.isalnum() else "_" for ch in name).strip("_")


def _train_eval_cell(cfg: dict, data: dict, steps: int, run_dir: Path) -> dict:
    from .model import build_model
    from .train import SELECTION_METRIC, Trainer, evaluate_model

    model = build_model(cfg)
    if steps > 0:
        trainer = Trainer(model, cfg, out_dir=run_dir)
        trainer.fit(data["train"], data.get("val"))
        best_path = run_dir / "best.pt"
        if cfg["train"]["selection"] == "best_val" and best_path.exists():
            trainer.load_checkpoint(best_path)
    eval_split = data.get("test") or data.get("val") or data["train"]
    return evaluate_model(model, eval_split, cfg["train"]["batch_size"])


def format_ablation_table(rows: list[dict], task: str) -> str:
    cols = METRIC_COLUMNS[task]
    name_w = max(len("cell"), *(len(r["cell"]) for r in rows))
    header = f"{'cell':<{name_w}}  " + "  ".join(f"{label:>9}" for _, label in cols) \
        + "  config"
    lines = [header, "-" * len(header)]
    for row in rows:
        if row["metrics"] is not None:
            vals = "  ".join(f"{percent(row['metrics'][key]) + '%':>9}" for key, _ in cols)
        else:
            vals = "  ".join(f"{'n/a':>9}" for _ in cols)
        tail = row["config_hash"][:8]
        if row.get("error"):
            tail += f"  GAP: {row['error']}"
        lines.append(f"{row['cell']:<{name_w}}  {vals}  {tail}")
    return "\n".join(lines) + "\n"


def run_ablation(grid: str, base_cfg: dict, out_dir, data: dict | None = None,
                 steps: int = 0) -> dict:
    """Run every cell of a grid; render a table with explicit gaps for failures.

    With ``data`` absent each cell only materializes its run directory and
    config snapshot (a dry sweep). With data and ``steps`` > 0 each cell
    trains for that many optimizer steps before evaluation.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    task = base_cfg["train"]["task"]
    rows = []
    for name, cfg in grid_cells(grid, base_cfg):
        if data is not None and steps > 0:
            cfg["train"]["max_steps"] = steps
        run_dir = out_dir / _cell_slug(name)
        write_run_config(run_dir, cfg)
        row = {"cell": name, "config_hash": config_hash(cfg),
               "seed": cfg["seed"], "metrics": None, "error": None}
        if data is not None:
            try:
                row["metrics"] = _train_eval_cell(cfg, data, steps, run_dir)
            except Exception as exc:
                row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    table = format_ablation_table(rows, task)
    (out_dir / "table.txt").write_text(table, encoding="utf-8")
    with (out_dir / "rows.jsonl").open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return {"rows": rows, "table": table}


EXPORT_STAGES = ("modality", "fused")


def _sample_label(sample: dict, task: str, class_names: list[str]) -> str:
    if task == "emotion":
        active = [name for name, bit in zip(class_names, sample["emotion_target"]) if bit > 0]
        return ";".join(active) if active else "none"
    if sample["excluded"]:
        return "excluded"
    return class_names[int(sample["sentiment_class"])]


def export_embeddings(model, samples: list[dict], stage: str, out_dir,
                      batch_size: int = 16) -> list[Path]:
    """Write per-sample vectors with labels as TSV; one file per modality or
    a single file for the fused stage."""
    from .train import iter_batches

    if stage not in EXPORT_STAGES:
        raise ValueError(f"unknown stage {stage!r} (expected one of {EXPORT_STAGES})")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    class_names = model.label_texts
    labels = [_sample_label(s, model.task, class_names) for s in samples]
    ids = [s["sample_id"] for s in samples]

    collected: dict[str, list[np.ndarray]] = {}
    model.eval()
    with torch.no_grad():
        for batch in iter_batches(samples, batch_size):
            if stage == "modality":
                _, pooled = model.encode_modalities(batch)
                for letter, vec in pooled.items():
                    collected.setdefault(letter, []).append(vec.numpy())
            else:
                out = model(batch)
                collected.setdefault("fused", []).append(out.fused.numpy())

    paths = []
    for tag, chunks in sorted(collected.items()):
        matrix = np.concatenate(chunks)
        path = out_dir / f"embeddings_{tag}.tsv"
        with path.open("w", encoding="utf-8") as fh:
            dims = "\t".join(f"d{i}" for i in range(matrix.shape[1]))
            fh.write(f"sample_id\tlabel\t{dims}\n")
            for sid, label, row in zip(ids, labels, matrix):
                vals = "\t".join(f"{v:.8g}" for v in row)
                fh.write(f"{sid}\t{label}\t{vals}\n")
        paths.append(path)
    return paths


def read_embeddings(path) -> tuple[list[str], list[str], np.ndarray]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    ids, labels, rows = [], [], []
    for line in lines[1:]:
        parts = line.split("\t")
        ids.append(parts[0])
        labels.append(parts[1])
        rows.append([float(v) for v in parts[2:]])
    return ids, labels, np.asarray(rows)


def plot_embeddings(tsv_path, out_path, perplexity: float = 30.0, seed: int = 0) -> Path:
    """t-SNE projection of an exported embedding file to a scatter image.

    Perplexity is clamped below the sample count as the projection requires;
    this is a reporting convenience with no acceptance weight.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from sklearn.manifold import TSNE

    ids, labels, matrix = read_embeddings(tsv_path)
    n = matrix.shape[0]
    if n < 3:
        raise ValueError("need at least 3 samples to project")
    eff_perplexity = max(1.0, min(perplexity, (n - 1) / 3))
    proj = TSNE(n_components=2, perplexity=eff_perplexity,
                random_state=seed, init="pca").fit_transform(matrix)

    fig, ax = plt.subplots(figsize=(6, 6))
    for label in sorted(set(labels)):
        idx = [i for i, l in enumerate(labels) if l == label]
        ax.scatter(proj[idx, 0], proj[idx, 1], s=12, label=label)
    ax.legend(fontsize=7, markerscale=1.5)
    ax.set_title(Path(tsv_path).stem)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return out_path
