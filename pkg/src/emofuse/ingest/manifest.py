"""Dataset manifests: line-delimited UTF-8 records, one sample per line."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

# published split sizes for the full corpora, used for reporting only
EXPECTED_SPLITS = {
    "mosi": {"train": 1284, "val": 229, "test": 686},
    "mosei": {"train": 16326, "val": 1871, "test": 4659},
}

SPLITS = ("train", "val", "test")


@dataclass
class SampleRecord:
    sample_id: str
    video_path: str
    audio_path: str
    transcript: str
    sentiment_score: float
    emotion_intensities: list = field(default_factory=lambda: [0.0] * 6)
    duration: float = 0.0
    split: str = "train"

    def validate(self):
        if not (-3.0 <= self.sentiment_score <= 3.0):
            raise ValueError(f"{self.sample_id}: sentiment score {self.sentiment_score} "
                             "outside [-3, 3]")
        if len(self.emotion_intensities) != 6 or any(v < 0 for v in self.emotion_intensities):
            raise ValueError(f"{self.sample_id}: emotion intensities must be 6 non-negative values")
        if self.duration <= 0:
            raise ValueError(f"{self.sample_id}: duration must be positive")
        if self.split not in SPLITS:
            raise ValueError(f"{self.sample_id}: unknown split {self.split!r}")


class Manifest:
    def __init__(self, records: list[SampleRecord]):
        seen = set()
        for rec in records:
            rec.validate()
            if rec.sample_id in seen:
                raise ValueError(f"duplicate sample_id {rec.sample_id!r}")
            seen.add(rec.sample_id)
        self.records = list(records)

    def split(self, name: str) -> list[SampleRecord]:
        return [r for r in self.records if r.split == name]

    def split_counts(self) -> dict:
        return {name: len(self.split(name)) for name in SPLITS}

    def __len__(self):
        return len(self.records)


def write_manifest(path, records) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(asdict(rec), ensure_ascii=False) + "\n")
    return path


def load_manifest(path) -> Manifest:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    records = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(SampleRecord(**json.loads(line)))
            except (json.JSONDecodeError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad manifest record ({exc})") from exc
    return Manifest(records)
