"""Per-sample preprocessed containers.

One ``.npz`` per sample: frames (T_V, 3, S, S) float32 in [0, 1], spectrogram
frames (T_A, 3, S, S) float32 log-mel values, token ids (T_L,) int32, EOS
index, and both task targets. An ``index.json`` lists sample ids per split.
Arrays are stored channel-first, ready for the encoders.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from emofuse.ingest.audio import resample_waveform, segment_audio, spectrogram_image
from emofuse.ingest.manifest import Manifest, SampleRecord
from emofuse.ingest.synth import RawSample
from emofuse.ingest.targets import make_targets
from emofuse.ingest.text import ByteTokenizer
from emofuse.ingest.video import sample_frames

CONTAINER_VERSION = 1


def _resize_nearest(frames: np.ndarray, size: int) -> np.ndarray:
    """Nearest-neighbor spatial resize for raw frames that do not match the config."""
    n, h, w, c = frames.shape
    if h == size and w == size:
        return frames
    rows = np.floor(np.linspace(0, h - 1, size)).astype(np.int64)
    cols = np.floor(np.linspace(0, w - 1, size)).astype(np.int64)
    return frames[:, rows][:, :, cols]


def load_raw_sample(record: SampleRecord, base_dir) -> RawSample:
    base = Path(base_dir)

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    video = np.load(resolve(record.video_path))
    audio = np.load(resolve(record.audio_path))
    return RawSample(
        sample_id=record.sample_id,
        video_frames=video,
        audio=np.asarray(audio["waveform"], dtype=np.float32),
        sample_rate=int(audio["sample_rate"]),
        transcript=record.transcript,
        sentiment_score=record.sentiment_score,
        emotion_intensities=np.asarray(record.emotion_intensities, dtype=np.float32),
        split=record.split,
    )


def preprocess_sample(sample: RawSample, pre_cfg: dict, tokenizer: ByteTokenizer | None = None) -> dict:
    """Run the full preprocessing chain for one raw sample."""
    tokenizer = tokenizer or ByteTokenizer()
    size = pre_cfg["image_size"]

    frames = sample_frames(sample.video_frames, pre_cfg["frame_count"])
    frames = _resize_nearest(frames, size).astype(np.float32) / 255.0
    frames = frames.transpose(0, 3, 1, 2)                 # (T, 3, S, S) for the model

    wave = resample_waveform(sample.audio, sample.sample_rate, pre_cfg["sample_rate"])
    segments = segment_audio(wave, pre_cfg["sample_rate"], pre_cfg["segment_seconds"])
    spec = np.stack([
        spectrogram_image(
            seg, pre_cfg["sample_rate"], mel_bins=pre_cfg["mel_bins"],
            window_ms=pre_cfg["window_ms"], hop_ms=pre_cfg["hop_ms"],
            image_size=size, segment_seconds=pre_cfg["segment_seconds"],
        )
        for seg in segments
    ]).transpose(0, 3, 1, 2)

    token_ids, eos_index = tokenizer.encode(sample.transcript, pre_cfg["max_text_len"])
    emo = make_targets(sample, "emotion")
    sen = make_targets(sample, "sentiment", zero_as_negative=pre_cfg.get("zero_as_negative", False))
    return {
        "sample_id": sample.sample_id,
        "split": sample.split,
        "frames": frames,
        "spec_frames": spec.astype(np.float32),
        "token_ids": token_ids,
        "eos_index": np.int64(eos_index),
        "emotion_target": emo["emotion"],
        "sentiment_class": np.int64(sen["sentiment"]),
        "excluded": bool(sen["excluded"]),
        "sentiment_score": np.float32(sample.sentiment_score),
    }


def save_container(item: dict, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{item['sample_id']}.npz"
    np.savez_compressed(
        path,
        version=np.int64(CONTAINER_VERSION),
        frames=item["frames"],
        spec_frames=item["spec_frames"],
        token_ids=item["token_ids"],
        eos_index=item["eos_index"],
        emotion_target=item["emotion_target"],
        sentiment_class=item["sentiment_class"],
        excluded=np.bool_(item["excluded"]),
        sentiment_score=item["sentiment_score"],
        split=np.str_(item["split"]),
    )
    return path


def load_container(path) -> dict:
    with np.load(path) as data:
        return {
            "sample_id": Path(path).stem,
            "split": str(data["split"]),
            "frames": data["frames"],
            "spec_frames": data["spec_frames"],
            "token_ids": data["token_ids"],
            "eos_index": int(data["eos_index"]),
            "emotion_target": data["emotion_target"],
            "sentiment_class": int(data["sentiment_class"]),
            "excluded": bool(data["excluded"]),
            "sentiment_score": float(data["sentiment_score"]),
        }


def preprocess_manifest(manifest: Manifest, base_dir, out_dir, pre_cfg: dict) -> Path:
    """Preprocess every manifest record into per-sample containers + index.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tokenizer = ByteTokenizer()
    index = {"version": CONTAINER_VERSION, "samples": []}
    for record in manifest.records:
        raw = load_raw_sample(record, base_dir)
        item = preprocess_sample(raw, pre_cfg, tokenizer)
        save_container(item, out_dir)
        index["samples"].append({"sample_id": record.sample_id, "split": record.split})
    index_path = out_dir / "index.json"
    index_path.write_text(json.dumps(index, indent=2), encoding="utf-8")
    return index_path


def load_preprocessed(data_dir, split: str | None = None) -> list[dict]:
    """Load preprocessed containers (optionally one split) into memory."""
    data_dir = Path(data_dir)
    index_path = data_dir / "index.json"
    if not index_path.exists():
        raise FileNotFoundError(f"no index.json under {data_dir}; run preprocess first")
    index = json.loads(index_path.read_text(encoding="utf-8"))
    items = []
    for entry in index["samples"]:
        if split is not None and entry["split"] != split:
            continue
        items.append(load_container(data_dir / f"{entry['sample_id']}.npz"))
    return items


def preprocess_in_memory(manifest: Manifest, base_dir, pre_cfg: dict,
                         split: str | None = None) -> list[dict]:
    """Preprocess straight to memory (tests and the synth dataset path)."""
    tokenizer = ByteTokenizer()
    items = []
    for record in manifest.records:
        if split is not None and record.split != split:
            continue
        raw = load_raw_sample(record, base_dir)
        items.append(preprocess_sample(raw, pre_cfg, tokenizer))
    return items
