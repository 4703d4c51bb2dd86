"""Waveform segmentation and log-mel spectrogram images.

Audio is resampled to a common rate (default 16 kHz, which makes the 64 ms
window and 32 ms hop land on 1024/512 samples), cut into fixed 2-second
segments, and each segment rendered as a log-mel image: ``mel_bins`` filters
by F analysis frames, then linearly resized along time to a square image and
replicated to three channels.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.signal import resample_poly

LOG_FLOOR = 1e-10


def resample_waveform(waveform: np.ndarray, rate_in: int, rate_out: int) -> np.ndarray:
    waveform = np.asarray(waveform, dtype=np.float64)
    if rate_in == rate_out:
        return waveform
    g = math.gcd(int(rate_in), int(rate_out))
    return resample_poly(waveform, rate_out // g, rate_in // g)


def segment_audio(waveform: np.ndarray, sample_rate: int, segment_seconds: float = 2.0) -> list[np.ndarray]:
    """Split a waveform into ceil(duration / segment_seconds) segments.

    Every segment has exactly ``segment_seconds * sample_rate`` samples; the
    last one is zero-padded.
    """
    waveform = np.asarray(waveform, dtype=np.float64)
    if waveform.size == 0:
        raise ValueError("zero-length waveform")
    seg_len = int(round(segment_seconds * sample_rate))
    count = math.ceil(waveform.size / seg_len)
    segments = []
    for i in range(count):
        chunk = waveform[i * seg_len:(i + 1) * seg_len]
        if chunk.size < seg_len:
            chunk = np.pad(chunk, (0, seg_len - chunk.size))
        segments.append(chunk)
    return segments


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular mel filters, shape (n_mels, n_fft // 2 + 1)."""
    n_bins = n_fft // 2 + 1
    fft_freqs = np.linspace(0.0, sample_rate / 2.0, n_bins)
    mel_pts = np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    fb = np.zeros((n_mels, n_bins))
    for i in range(n_mels):
        lo, mid, hi = hz_pts[i], hz_pts[i + 1], hz_pts[i + 2]
        up = (fft_freqs - lo) / max(mid - lo, 1e-12)
        down = (hi - fft_freqs) / max(hi - mid, 1e-12)
        fb[i] = np.clip(np.minimum(up, down), 0.0, None)
    return fb


def frame_count(n_samples: int, window: int, hop: int) -> int:
    return (n_samples - window) // hop + 1


def _resize_time_axis(mat: np.ndarray, out_cols: int) -> np.ndarray:
    """Linear interpolation of each row from F columns to out_cols."""
    n_rows, n_cols = mat.shape
    if n_cols == 1:
        return np.repeat(mat, out_cols, axis=1)
    pos = np.linspace(0.0, n_cols - 1, out_cols)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n_cols - 1)
    frac = pos - lo
    return mat[:, lo] * (1.0 - frac) + mat[:, hi] * frac


def spectrogram_image(
    segment: np.ndarray,
    sample_rate: int,
    mel_bins: int = 224,
    window_ms: float = 64.0,
    hop_ms: float = 32.0,
    image_size: int = 224,
    segment_seconds: float = 2.0,
) -> np.ndarray:
    """Render one fixed-length segment as an (image_size, image_size, 3) log-mel image.

    The power spectrum of Hann-windowed frames is pooled through ``mel_bins``
    triangular filters, floored at 1e-10 before the log, and the time axis is
    linearly resized to ``image_size`` columns. The single channel is
    replicated to three.
    """
    segment = np.asarray(segment, dtype=np.float64)
    expected = int(round(segment_seconds * sample_rate))
    if segment.size != expected:
        raise ValueError(f"segment must be exactly {segment_seconds} s at {sample_rate} Hz "
                         f"({expected} samples, got {segment.size})")
    window = int(round(window_ms / 1000.0 * sample_rate))
    hop = int(round(hop_ms / 1000.0 * sample_rate))
    if window // 2 + 1 < mel_bins:
        raise ValueError(f"sample rate {sample_rate} too low for a {window_ms} ms window "
                         f"with {mel_bins} mel bins")

    n_frames = frame_count(segment.size, window, hop)
    idx = np.arange(window)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = segment[idx] * np.hanning(window)[None, :]
    power = np.abs(np.fft.rfft(frames, axis=1)) ** 2          # (F, bins)
    mel = mel_filterbank(mel_bins, window, sample_rate) @ power.T   # (mel_bins, F)
    logmel = np.log(np.maximum(mel, LOG_FLOOR))
    image = _resize_time_axis(logmel, image_size)
    if image.shape[0] != image_size:
        raise ValueError("mel_bins must equal the spectrogram image height")
    return np.repeat(image[:, :, None], 3, axis=2).astype(np.float32)
