"""Quick oracle and invariant checks behind the ``selftest`` subcommand.

Each check is independent and cheap (the whole suite runs in well under a
minute on CPU). They cover the numerical contracts that matter most when
porting or refactoring: attention against a dense reference, tokenizer
round-trips, preprocessing geometry, the inference rule's hand-checkable
cases, metric definitions, grid cardinalities, pooling consistency, and the
frozen label tower.
"""

from __future__ import annotations

import math

import numpy as np
import torch

from .backbone import MultiheadAttention
from .config import load_config, put
from .evalkit import COMPONENT_GRID, MODALITY_GRID, binary_metrics, multilabel_metrics
from .head import predict_emotions, zscore
from .ingest.audio import frame_count
from .ingest.text import ByteTokenizer, EOS_ID, PAD_ID, SOS_ID
from .ingest.video import sample_frames
from .model import build_model
from .train import Trainer, collate


def random_sample(rng: np.random.Generator, cfg: dict, sample_id: str,
                  n_segments: int | None = None) -> dict:
    """A synthetic preprocessed sample (random media, random targets)."""
    pre = cfg["preprocess"]
    size = pre["image_size"]
    n_frames = pre["frame_count"]
    n_seg = n_segments if n_segments is not None else int(rng.integers(1, 4))
    max_len = pre["max_text_len"]
    body_len = int(rng.integers(1, min(16, max_len - 2) + 1))
    ids = np.full(max_len, PAD_ID, dtype=np.int32)
    ids[0] = SOS_ID
    ids[1:1 + body_len] = rng.integers(3, 259, size=body_len)
    ids[1 + body_len] = EOS_ID
    score = float(rng.uniform(-3, 3))
    return {
        "sample_id": sample_id,
        "split": "train",
        "frames": rng.random((n_frames, 3, size, size), dtype=np.float32),
        "spec_frames": rng.standard_normal((n_seg, 3, size, size)).astype(np.float32),
        "token_ids": ids,
        "eos_index": 1 + body_len,
        "emotion_target": (rng.random(6) < 0.3).astype(np.float32),
        "sentiment_class": np.int64(score <= 0),
        "excluded": False,
        "sentiment_score": np.float32(score),
    }


def random_batch(cfg: dict, batch_size: int, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    return collate([random_sample(rng, cfg, f"rnd{i:03d}") for i in range(batch_size)])


def small_config(**overrides) -> dict:
    """Tiny config shrunk further for fast smoke runs (56x56 inputs)."""
    cfg = load_config(dataset="synth")
    put(cfg, "preprocess.image_size", 56)
    put(cfg, "preprocess.frame_count", 2)
    put(cfg, "preprocess.max_text_len", 32)
    put(cfg, "cmd.hidden", 64)
    put(cfg, "cmd.heads", 4)
    for key, val in overrides.items():
        put(cfg, key, val)
    return cfg


def dense_attention_reference(attn: MultiheadAttention, query: np.ndarray,
                              source: np.ndarray) -> np.ndarray:
    """Numpy re-computation of the attention module's forward pass."""
    def lin(x, layer):
        w = layer.weight.detach().numpy()
        b = layer.bias.detach().numpy()
        return x @ w.T + b

    heads, d_head = attn.heads, attn.head_dim
    q = lin(query, attn.q_proj)
    k = lin(source, attn.k_proj)
    v = lin(source, attn.v_proj)
    bsz, tq, width = q.shape
    ts = k.shape[1]
    q = q.reshape(bsz, tq, heads, d_head).transpose(0, 2, 1, 3)
    k = k.reshape(bsz, ts, heads, d_head).transpose(0, 2, 1, 3)
    v = v.reshape(bsz, ts, heads, d_head).transpose(0, 2, 1, 3)
    scores = q @ k.transpose(0, 1, 3, 2) / math.sqrt(d_head)
    scores -= scores.max(axis=-1, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=-1, keepdims=True)
    out = (weights @ v).transpose(0, 2, 1, 3).reshape(bsz, tq, width)
    return lin(out, attn.out_proj)


def check_attention_oracle(trials: int = 100, seed: int = 0) -> None:
    rng = np.random.default_rng(seed)
    for trial in range(trials):
        heads = int(rng.choice([1, 2]))
        d_head = int(rng.integers(2, 5))
        width = heads * d_head
        tq = int(rng.integers(1, 4))
        ts = int(rng.integers(1, 9))
        torch.manual_seed(trial)
        with torch.no_grad():
            attn = MultiheadAttention(width, heads).double()
            q = rng.standard_normal((1, tq, width))
            s = rng.standard_normal((1, ts, width))
            got = attn(torch.from_numpy(q), torch.from_numpy(s))[0].numpy()
        want = dense_attention_reference(attn, q, s)
        err = np.abs(got - want).max()
        assert err <= 1e-6, f"trial {trial}: attention mismatch {err:.3e}"


def check_tokenizer_roundtrip(trials: int = 50, seed: int = 1) -> None:
    rng = np.random.default_rng(seed)
    tok = ByteTokenizer()
    texts = ["", "hello world", "ünïcode 字", "a" * 40]
    for _ in range(trials):
        n = int(rng.integers(0, 30))
        texts.append("".join(chr(int(c)) for c in rng.integers(32, 1000, size=n)))
    for text in texts:
        ids, eos = tok.encode(text, max_len=256)
        assert ids[eos] == EOS_ID
        assert tok.decode(ids) == text, f"round-trip failed for {text!r}"


def check_frame_sampling() -> None:
    frames = np.arange(120)[:, None, None, None] * np.ones((1, 4, 4, 3))
    picked = sample_frames(frames, 12)
    idx = [int(f[0, 0, 0]) for f in picked]
    assert idx == [0, 10, 21, 32, 43, 54, 64, 75, 86, 97, 108, 119], idx
    short = sample_frames(frames[:5], 12)
    assert short.shape[0] == 12 and int(short[-1][0, 0, 0]) == 4


def check_spectrogram_geometry() -> None:
    assert frame_count(32000, 1024, 512) == 61
    assert frame_count(16000, 1024, 512) == 30


def check_inference_rule() -> None:
    scores = torch.tensor([[0.9, 0.1, 0.1, 0.1, 0.1, 0.1]], dtype=torch.float64)
    binary, probs = predict_emotions(scores)
    assert binary.tolist() == [[1, 0, 0, 0, 0, 0]], binary.tolist()
    z = zscore(scores)
    assert abs(float(z[0, 0]) - math.sqrt(5.0)) < 1e-9
    flat = torch.full((1, 6), 0.3, dtype=torch.float64)
    binary, probs = predict_emotions(flat)
    assert binary.sum() == 0 and torch.allclose(probs, torch.full_like(probs, 0.5))


def check_logit_scale() -> None:
    from .head import LogitScale
    # construct under float64 so the stored log value is exact at that width,
    # the same way build_model constructs fixed-precision models
    prev = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    try:
        scale = LogitScale()
    finally:
        torch.set_default_dtype(prev)
    err = abs(float(scale.value.detach()) - 1.0 / 0.07)
    assert err < 1e-9, f"logit scale off by {err:.2e}"


def check_metrics() -> None:
    pred = np.array([[1, 0, 1], [0, 0, 0], [1, 1, 0]])
    tgt = np.array([[1, 0, 0], [0, 0, 0], [0, 1, 1]])
    acc, p, r, f1 = multilabel_metrics(pred, tgt)
    # hand-counted: jaccard (1/2, 1, 1/3); tp=2 fp=2 fn=1
    assert abs(acc - (0.5 + 1.0 + 1 / 3) / 3) < 1e-12
    assert abs(p - 0.5) < 1e-12 and abs(r - 2 / 3) < 1e-12 and abs(f1 - 4 / 7) < 1e-12
    onehot = np.eye(2, dtype=int)
    preds = onehot[[0, 0, 1, 1]]
    tgts = onehot[[0, 1, 1, 0]]
    acc2, f1 = binary_metrics(preds, tgts, np.zeros(4, dtype=bool))
    assert abs(acc2 - 0.5) < 1e-12 and abs(f1 - 0.5) < 1e-12


def check_grids() -> None:
    assert len(MODALITY_GRID) == 15 and len(set(MODALITY_GRID)) == 15
    assert len(COMPONENT_GRID) == 4


def check_pooling_consistency() -> None:
    cfg = small_config()
    model = build_model(cfg)
    batch = random_batch(cfg, 3, seed=5)
    with torch.no_grad():
        feats, pooled = model.encode_modalities(batch)
    for letter, feat in feats.items():
        if letter == "L":
            want = feat.tokens[torch.arange(3), batch["eos_index"]]
        else:
            w = feat.mask.to(feat.tokens.dtype)
            want = (feat.tokens * w.unsqueeze(-1)).sum(1) / w.sum(1, keepdim=True)
        err = (feat.pooled - want).abs().max()
        assert err < 1e-5, f"{letter}: pooled differs from re-pooled tokens by {err:.2e}"


def check_frozen_label_tower() -> None:
    cfg = small_config()
    put(cfg, "train.lr", 1e-3)
    model = build_model(cfg)
    trainer = Trainer(model, cfg)
    before = model.frozen_digest()
    from .backbone import parameter_digest
    prompts_before = parameter_digest(
        [("label", model.label_encoder.label_prompt),
         ("query", model.label_encoder.query_prompt)])
    for step in range(3):
        stats = trainer.train_step(random_batch(cfg, 2, seed=step))
        assert stats["grad_norms"]["label_encoder"] == 0.0
    assert model.frozen_digest() == before, "frozen tower changed during training"
    prompts_after = parameter_digest(
        [("label", model.label_encoder.label_prompt),
         ("query", model.label_encoder.query_prompt)])
    assert prompts_after != prompts_before, "prompt contexts never trained"


CHECKS = (
    ("attention_oracle", check_attention_oracle),
    ("tokenizer_roundtrip", check_tokenizer_roundtrip),
    ("frame_sampling", check_frame_sampling),
    ("spectrogram_geometry", check_spectrogram_geometry),
    ("inference_rule", check_inference_rule),
    ("logit_scale", check_logit_scale),
    ("metrics", check_metrics),
    ("grids", check_grids),
    ("pooling_consistency", check_pooling_consistency),
    ("frozen_label_tower", check_frozen_label_tower),
)


def run_selftest(verbose: bool = True) -> int:
    """Run every check; return the number of failures."""
    failures = 0
    for name, fn in CHECKS:
        try:
            fn()
        except Exception as exc:
            failures += 1
            if verbose:
                print(f"FAIL {name}: {exc}")
        else:
            if verbose:
                print(f"ok   {name}")
    if verbose:
        total = len(CHECKS)
        print(f"{total - failures}/{total} checks passed")
    return failures
