"""Label targets for the two tasks."""

from __future__ import annotations

import numpy as np

EMOTION_NAMES = ("happy", "sad", "angry", "surprise", "disgust", "fear")


def make_targets(sample, task: str, zero_as_negative: bool = False) -> dict:
    """Build the training target for one sample.

    emotion: 6-dim binary vector, class present iff its intensity > 0.
    sentiment: class index (0 = positive, 1 = negative) from the sign of the
    score; score-0 samples are flagged ``excluded`` unless ``zero_as_negative``.
    """
    if task == "emotion":
        intensities = np.asarray(sample.emotion_intensities, dtype=np.float64)
        if intensities.shape != (len(EMOTION_NAMES),):
            raise ValueError(f"expected {len(EMOTION_NAMES)} emotion intensities")
        return {"emotion": (intensities > 0).astype(np.float32), "excluded": False}
    if task == "sentiment":
        score = float(sample.sentiment_score)
        if score > 0:
            return {"sentiment": 0, "excluded": False}
        if score < 0 or zero_as_negative:
            return {"sentiment": 1, "excluded": False}
        return {"sentiment": 1, "excluded": True}
    raise ValueError(f"unknown task {task!r}")
