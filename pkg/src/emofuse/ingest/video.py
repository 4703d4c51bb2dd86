"""Frame selection for video inputs."""

from __future__ import annotations

import numpy as np


def sample_frames(frames: np.ndarray, frame_count: int) -> np.ndarray:
    """Regularly select ``frame_count`` frames from a video.

    Indices are ``floor(linspace(0, len-1, frame_count))``, which keeps the
    selection deterministic and order-preserving. Videos shorter than
    ``frame_count`` keep all frames and repeat the last one to pad.
    """
    frames = np.asarray(frames)
    if frames.shape[0] == 0:
        raise ValueError("empty video")
    if frame_count < 1:
        raise ValueError("frame_count must be >= 1")
    n = frames.shape[0]
    if n < frame_count:
        idx = np.concatenate([np.arange(n), np.full(frame_count - n, n - 1)])
    else:
        idx = np.floor(np.linspace(0.0, n - 1, frame_count)).astype(np.int64)
    return frames[idx]
