"""Deterministic synthetic corpus for desk-scale runs.

Each sample carries a real (if miniature) video, waveform, and transcript
whose content correlates with its labels, so a randomly initialized model can
actually learn the mapping: present emotion classes add a class-specific
horizontal stripe to the frames, a class-specific tone to the audio, and a
class-specific word to the transcript; sentiment polarity controls overall
brightness, pitch, and word choice.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from emofuse.ingest.manifest import SampleRecord, write_manifest
from emofuse.ingest.targets import EMOTION_NAMES

POSITIVE_WORDS = ("wonderful", "delight", "smile", "bright", "lovely", "cheer")
NEGATIVE_WORDS = ("terrible", "gloomy", "misery", "dreary", "bitter", "grim")
EMOTION_MARKERS = {
    "happy": "laughing",
    "sad": "weeping",
    "angry": "shouting",
    "surprise": "gasping",
    "disgust": "wincing",
    "fear": "trembling",
}
FILLER_WORDS = ("the", "and", "today", "story", "moment", "voice", "scene", "again")

CLASS_TONES_HZ = tuple(350.0 + 280.0 * k for k in range(len(EMOTION_NAMES)))


@dataclass
class RawSample:
    """One utterance: frames, waveform, transcript, and labels."""

    sample_id: str
    video_frames: np.ndarray        # (n, H, W, 3) uint8
    audio: np.ndarray               # float waveform
    sample_rate: int
    transcript: str
    sentiment_score: float
    emotion_intensities: np.ndarray  # 6 non-negative reals
    split: str = "train"

    @property
    def duration(self) -> float:
        return self.audio.size / self.sample_rate

    def validate(self):
        if not (-3.0 <= self.sentiment_score <= 3.0):
            raise ValueError("sentiment score outside [-3, 3]")
        if np.any(np.asarray(self.emotion_intensities) < 0):
            raise ValueError("emotion intensities must be non-negative")
        if self.duration <= 0:
            raise ValueError("duration must be positive")


def synth_raw_sample(
    rng: np.random.Generator,
    sample_id: str,
    image_size: int = 224,
    sample_rate: int = 16000,
    duration_range: tuple[float, float] = (1.5, 4.5),
    n_frames_range: tuple[int, int] = (6, 18),
    neutral: bool = False,
    split: str = "train",
) -> RawSample:
    intensities = np.where(rng.random(6) < 0.4, rng.uniform(0.3, 1.0, 6), 0.0)
    if neutral:
        score = 0.0
    else:
        sign = 1.0 if rng.random() < 0.5 else -1.0
        score = float(sign * rng.uniform(0.5, 3.0))
    positive = score > 0

    # frames: polarity sets base brightness, each present class adds a stripe
    n_frames = int(rng.integers(n_frames_range[0], n_frames_range[1] + 1))
    base = 150.0 if positive else 60.0
    frames = rng.normal(base, 12.0, (n_frames, image_size, image_size, 3))
    band = max(image_size // 6, 1)
    for k in range(6):
        if intensities[k] > 0:
            frames[:, k * band:(k + 1) * band, :, :] += 90.0
    frames = np.clip(frames, 0, 255).astype(np.uint8)

    # audio: polarity tone plus one tone per present class
    duration = float(rng.uniform(*duration_range))
    t = np.arange(int(duration * sample_rate)) / sample_rate
    wave = 0.3 * np.sin(2 * np.pi * (880.0 if positive else 220.0) * t)
    for k in range(6):
        if intensities[k] > 0:
            wave = wave + 0.2 * np.sin(2 * np.pi * CLASS_TONES_HZ[k] * t)
    wave = wave + rng.normal(0.0, 0.01, t.size)

    # transcript: polarity words, class markers, some filler
    pool = POSITIVE_WORDS if positive else NEGATIVE_WORDS
    words = list(rng.choice(pool, 2, replace=False))
    for k, name in enumerate(EMOTION_NAMES):
        if intensities[k] > 0:
            words.append(EMOTION_MARKERS[name])
    words += list(rng.choice(FILLER_WORDS, 2, replace=False))
    rng.shuffle(words)

    return RawSample(
        sample_id=sample_id,
        video_frames=frames,
        audio=wave.astype(np.float32),
        sample_rate=sample_rate,
        transcript=" ".join(words),
        sentiment_score=score,
        emotion_intensities=intensities.astype(np.float32),
        split=split,
    )


def save_raw_sample(sample: RawSample, media_dir: Path) -> tuple[str, str]:
    media_dir = Path(media_dir)
    media_dir.mkdir(parents=True, exist_ok=True)
    video_path = media_dir / f"{sample.sample_id}.video.npy"
    audio_path = media_dir / f"{sample.sample_id}.audio.npz"
    np.save(video_path, sample.video_frames)
    np.savez(audio_path, waveform=sample.audio, sample_rate=np.int64(sample.sample_rate))
    return str(video_path), str(audio_path)


def generate_corpus(
    out_dir,
    counts: dict | None = None,
    seed: int = 0,
    image_size: int = 224,
    sample_rate: int = 16000,
    duration_range: tuple[float, float] = (1.5, 4.5),
    neutral_fraction: float = 0.0,
) -> Path:
    """Write a miniature corpus (media files + manifest.jsonl); returns the manifest path."""
    counts = counts or {"train": 32, "val": 8, "test": 8}
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    records = []
    for split, n in counts.items():
        for i in range(n):
            neutral = rng.random() < neutral_fraction
            sample = synth_raw_sample(
                rng, f"{split}_{i:04d}", image_size=image_size, sample_rate=sample_rate,
                duration_range=duration_range, neutral=neutral, split=split,
            )
            video_path, audio_path = save_raw_sample(sample, out_dir / "media")
            records.append(SampleRecord(
                sample_id=sample.sample_id,
                # paths stored relative to the manifest directory
                video_path=str(Path(video_path).relative_to(out_dir)),
                audio_path=str(Path(audio_path).relative_to(out_dir)),
                transcript=sample.transcript,
                sentiment_score=sample.sentiment_score,
                emotion_intensities=[float(v) for v in sample.emotion_intensities],
                duration=sample.duration,
                split=split,
            ))
    return write_manifest(out_dir / "manifest.jsonl", records)
