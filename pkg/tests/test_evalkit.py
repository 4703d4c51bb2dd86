"""Metrics, ablation grids, embedding export, and plots."""

import json

import numpy as np
import pytest

from emofuse.config import read_run_config
from emofuse.evalkit import (COMPONENT_GRID, MODALITY_GRID, REFERENCE_TARGETS,
                             EvalReport, binary_metrics, export_embeddings,
                             format_ablation_table, grid_cells,
                             multilabel_metrics, per_class_breakdown, percent,
                             plot_embeddings, read_embeddings,
                             reference_delta_lines, run_ablation)

from conftest import small_cfg


def brute_multilabel(pred, tgt):
    n, c = pred.shape
    jacc = []
    tp = fp = fn = 0
    for i in range(n):
        inter = union = 0
        for j in range(c):
            p, t = bool(pred[i, j]), bool(tgt[i, j])
            inter += p and t
            union += p or t
            tp += p and t
            fp += p and not t
            fn += (not p) and t
        jacc.append(1.0 if union == 0 else inter / union)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return sum(jacc) / n, precision, recall, f1


def test_multilabel_metrics_hand_case():
    pred = np.array([[1, 1, 0], [0, 1, 0], [1, 0, 0]])
    tgt = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1]])
    acc, p, r, f1 = multilabel_metrics(pred, tgt)
    assert abs(acc - (0.5 + 1.0 + 0.0) / 3) < 1e-12
    assert abs(p - 2 / 4) < 1e-12
    assert abs(r - 2 / 3) < 1e-12
    assert abs(f1 - 4 / 7) < 1e-12
    # empty prediction and empty target count as a perfect sample
    acc, p, r, f1 = multilabel_metrics(np.zeros((2, 3)), np.zeros((2, 3)))
    assert acc == 1.0 and p == 0.0 and r == 0.0 and f1 == 0.0
    with pytest.raises(ValueError, match="shape mismatch"):
        multilabel_metrics(pred, tgt[:2])


def test_multilabel_metrics_randomized_against_brute_force():
    rng = np.random.default_rng(11)
    for _ in range(40):
        n, c = int(rng.integers(1, 10)), int(rng.integers(1, 8))
        pred = rng.integers(0, 2, size=(n, c))
        tgt = rng.integers(0, 2, size=(n, c))
        got = multilabel_metrics(pred, tgt)
        want = brute_multilabel(pred, tgt)
        assert np.abs(np.array(got) - np.array(want)).max() < 1e-12


def test_binary_metrics_conventions():
    pred = np.array([[1, 0], [0, 1], [1, 0], [0, 1]])
    tgt = np.array([[1, 0], [1, 0], [0, 1], [0, 1]])
    mask = np.array([False, False, False, False])
    acc2, f1 = binary_metrics(pred, tgt, mask)
    assert abs(acc2 - 0.5) < 1e-12
    assert abs(f1 - 0.5) < 1e-12     # tp=1 fp=1 fn=1
    # excluded samples drop out entirely
    acc2, f1 = binary_metrics(pred, tgt, np.array([False, True, True, False]))
    assert acc2 == 1.0 and f1 == 1.0
    with pytest.raises(ValueError, match="zero included"):
        binary_metrics(pred, tgt, np.ones(4, dtype=bool))
    with pytest.raises(ValueError, match="one-hot"):
        binary_metrics(pred[:, :1], tgt[:, :1], mask)


def test_per_class_breakdown_counts():
    pred = np.array([[1, 0], [1, 1]])
    tgt = np.array([[1, 1], [0, 1]])
    out = per_class_breakdown(pred, tgt, ["a", "b"])
    assert out["a"] == {"precision": 0.5, "recall": 1.0, "f1": 2 / 3, "support": 1}
    assert out["b"]["recall"] == 0.5 and out["b"]["support"] == 2


def test_grid_contents_are_exact():
    assert MODALITY_GRID == ("V", "A", "L", "VA", "AV", "AL", "LA", "VL", "LV",
                             "VAL", "AVL", "ALV", "LAV", "VLA", "LVA")
    assert len(set(MODALITY_GRID)) == 15
    names = [cell["name"] for cell in COMPONENT_GRID]
    assert names == ["w/o CMD+LE", "w/o CMD", "w/o LE", "full"]
    toggles = {(cell["use_cmd"], cell["use_le"]) for cell in COMPONENT_GRID}
    assert toggles == {(False, False), (False, True), (True, False), (True, True)}


def test_grid_cells_apply_toggles():
    base = small_cfg()
    orders = grid_cells("orders", base)
    assert [name for name, _ in orders] == list(MODALITY_GRID)
    for name, cfg in orders:
        assert cfg["cmd"]["order"] == name
        assert cfg["cmd"]["layers"] == len(name)
        assert cfg["model"]["use_cmd"] and cfg["model"]["use_le"]
    components = grid_cells("components", base)
    for (name, cfg), cell in zip(components, COMPONENT_GRID):
        assert name == cell["name"]
        assert cfg["model"]["use_cmd"] == cell["use_cmd"]
        assert cfg["model"]["use_le"] == cell["use_le"]
    # the base config is never mutated
    assert base["model"] == {"use_cmd": True, "use_le": True}
    with pytest.raises(ValueError, match="unknown grid"):
        grid_cells("widths", base)


def test_ablation_dry_run_writes_snapshots(tmp_path):
    base = small_cfg()
    result = run_ablation("components", base, tmp_path, data=None)
    assert len(result["rows"]) == 4
    assert all(r["metrics"] is None and r["error"] is None for r in result["rows"])
    table = (tmp_path / "table.txt").read_text()
    assert "n/a" in table and "w/o CMD+LE" in table
    rows_file = [json.loads(l) for l in (tmp_path / "rows.jsonl").read_text().splitlines()]
    assert len(rows_file) == 4
    for cell in COMPONENT_GRID:
        slug = "".join(ch if ch.isalnum() else "_" for ch in cell["name"]).strip("_")
        snap = read_run_config(tmp_path / slug)
        assert snap["model"]["use_cmd"] == cell["use_cmd"]
        assert snap["model"]["use_le"] == cell["use_le"]


def test_ablation_training_records_gaps_not_crashes(tmp_path, splits56):
    # a bad base config breaks every cell; the sweep still renders a table
    base = small_cfg(**{"labels.emotion_labels": "no_such_fixture"})
    result = run_ablation("components", base, tmp_path, data=splits56, steps=1)
    assert all(r["error"] for r in result["rows"])
    assert "GAP:" in result["table"]


def test_reference_targets_and_deltas():
    assert REFERENCE_TARGETS[("mosei", "emotion")] == {
        "accuracy": 49.3, "precision": 53.1, "recall": 63.4, "micro_f1": 57.8}
    assert REFERENCE_TARGETS[("mosei", "sentiment")] == {"acc2": 85.3, "f1": 85.1}
    assert REFERENCE_TARGETS[("mosi", "sentiment")] == {"acc2": 84.0, "f1": 84.0}
    lines = reference_delta_lines("mosi", "sentiment", {"acc2": 0.79, "f1": 0.80})
    assert lines[0] == "acc2: 79.0% vs reference 84.0% (delta -5.0)"
    assert lines[1] == "f1: 80.0% vs reference 84.0% (delta -4.0)"
    assert "no reference targets" in reference_delta_lines("synth", "emotion", {})[0]


def test_eval_report_render():
    report = EvalReport(task="sentiment", dataset="synth", config_hash="cafe",
                        metrics={"acc2": 0.755, "f1": 0.5}, n_excluded=2)
    text = report.render()
    assert "ACC2: 75.5%" in text and "F1: 50.0%" in text
    assert "excluded samples: 2" in text
    assert percent(0.333) == "33.3"


def test_format_table_marks_gaps():
    rows = [
        {"cell": "VA", "config_hash": "deadbeef" * 2, "metrics": {"acc2": 0.5, "f1": 0.4},
         "error": None},
        {"cell": "LVA", "config_hash": "cafebabe" * 2, "metrics": None,
         "error": "ValueError: boom"},
    ]
    table = format_ablation_table(rows, "sentiment")
    assert "deadbeef" in table
    assert "GAP: ValueError: boom" in table
    assert "n/a" in table


def test_export_and_read_embeddings(tmp_path, splits56, sentiment_run):
    model = sentiment_run["model"]
    samples = splits56["val"]
    paths = export_embeddings(model, samples, "modality", tmp_path / "mod")
    assert sorted(p.name for p in paths) == [
        "embeddings_A.tsv", "embeddings_L.tsv", "embeddings_V.tsv"]
    ids, labels, matrix = read_embeddings(paths[0])
    assert ids == [s["sample_id"] for s in samples]
    assert matrix.shape == (len(samples), 64)
    assert set(labels) <= {"positive", "negative", "excluded"}

    fused = export_embeddings(model, samples, "fused", tmp_path / "fused")
    assert [p.name for p in fused] == ["embeddings_fused.tsv"]
    _, _, fmat = read_embeddings(fused[0])
    assert fmat.shape == (len(samples), 64)
    with pytest.raises(ValueError, match="unknown stage"):
        export_embeddings(model, samples, "attention", tmp_path)


def test_plot_embeddings_writes_image(tmp_path, splits56, sentiment_run):
    paths = export_embeddings(sentiment_run["model"], splits56["train"],
                              "fused", tmp_path)
    out = plot_embeddings(paths[0], tmp_path / "plot.png", perplexity=30.0)
    assert out.is_file() and out.stat().st_size > 1000
    tiny = tmp_path / "tiny.tsv"
    tiny.write_text("sample_id\tlabel\td0\na\tx\t0.1\nb\ty\t0.2\n")
    with pytest.raises(ValueError, match="at least 3"):
        plot_embeddings(tiny, tmp_path / "nope.png")
