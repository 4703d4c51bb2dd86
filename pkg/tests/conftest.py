"""Shared fixtures: one synthetic corpus per session, preprocessed once.

Unit tests run at a reduced geometry (56x56 media, 2 frames, short text
window) so the whole suite stays fast; the acceptance tests build their own
corpora where a criterion pins the exact setup.
"""

import pytest

from emofuse.config import load_config, put
from emofuse.ingest.manifest import load_manifest
from emofuse.ingest.store import preprocess_in_memory
from emofuse.ingest.synth import generate_corpus


def small_cfg(**overrides) -> dict:
    cfg = load_config(dataset="synth")
    put(cfg, "preprocess.image_size", 56)
    put(cfg, "preprocess.mel_bins", 56)
    put(cfg, "preprocess.frame_count", 2)
    put(cfg, "preprocess.max_text_len", 48)
    put(cfg, "cmd.hidden", 64)
    put(cfg, "cmd.heads", 4)
    put(cfg, "train.batch_size", 4)
    for key, val in overrides.items():
        put(cfg, key, val)
    return cfg


# one line per acceptance gate, echoed after the run so the verdicts survive
# pytest's output capture
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance gates")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def corpus_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    generate_corpus(root, counts={"train": 12, "val": 4, "test": 4}, seed=1234)
    return root


@pytest.fixture(scope="session")
def manifest(corpus_root):
    return load_manifest(corpus_root / "manifest.jsonl")


@pytest.fixture(scope="session")
def splits56(corpus_root, manifest):
    pre = small_cfg()["preprocess"]
    return {split: preprocess_in_memory(manifest, corpus_root, pre, split)
            for split in ("train", "val", "test")}


@pytest.fixture(scope="session")
def sentiment_run(tmp_path_factory, splits56):
    """A short sentiment training run whose artifacts several tests reuse."""
    from emofuse.config import write_run_config
    from emofuse.model import build_model
    from emofuse.train import Trainer

    out = tmp_path_factory.mktemp("run_sentiment")
    cfg = small_cfg(**{"train.task": "sentiment", "train.epochs": 3,
                       "train.max_steps": 6})
    write_run_config(out, cfg)
    model = build_model(cfg)
    trainer = Trainer(model, cfg, out_dir=out)
    summary = trainer.fit(splits56["train"], splits56["val"])
    return {"dir": out, "cfg": cfg, "model": model, "summary": summary}
