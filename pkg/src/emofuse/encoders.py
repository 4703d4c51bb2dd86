"""Modality encoders wrapping the shared backbones.

Each encoder returns both a token sequence (one state per frame, segment, or
text position) and a pooled vector, together with a validity mask. The pooled
vector is always an exact function of the returned tokens: mean over frames
for vision, masked mean over segments for audio, and the [EOS] state for
language. Downstream code may either consume the pooled vector directly or
re-pool the tokens; both routes agree.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .backbone import ImageBackbone, TextBackbone
from .ingest.text import EOS_ID, SOS_ID


@dataclass
class ModalityFeature:
    tokens: torch.Tensor   # (B, T, d)
    pooled: torch.Tensor   # (B, d)
    mask: torch.Tensor     # (B, T) bool, True where the token is valid


class VisionEncoder(nn.Module):
    """Encodes sampled video frames; pools by averaging per-frame states."""

    def __init__(self, backbone: ImageBackbone):
        super().__init__()
        self.backbone = backbone

    def forward(self, frames: torch.Tensor) -> ModalityFeature:
        if frames.ndim != 5:
            raise ValueError(f"expected (B, T, 3, S, S) frames, got {tuple(frames.shape)}")
        bsz, n_frames = frames.shape[:2]
        flat = frames.reshape(bsz * n_frames, *frames.shape[2:])
        tokens = self.backbone(flat).view(bsz, n_frames, -1)
        mask = torch.ones(bsz, n_frames, dtype=torch.bool, device=frames.device)
        return ModalityFeature(tokens=tokens, pooled=tokens.mean(dim=1), mask=mask)


class AudioEncoder(nn.Module):
    """Encodes spectrogram images per segment; pools by masked averaging."""

    def __init__(self, backbone: ImageBackbone):
        super().__init__()
        self.backbone = backbone

    def forward(self, spec_frames: torch.Tensor, mask: torch.Tensor) -> ModalityFeature:
        if spec_frames.ndim != 5:
            raise ValueError(
                f"expected (B, T, 3, S, S) spectrogram frames, got {tuple(spec_frames.shape)}")
        if mask.shape != spec_frames.shape[:2]:
            raise ValueError("segment mask shape does not match spectrogram frames")
        if not bool(mask.any(dim=1).all()):
            raise ValueError("sample with no valid audio segments")
        bsz, n_seg = spec_frames.shape[:2]
        flat = spec_frames.reshape(bsz * n_seg, *spec_frames.shape[2:])
        tokens = self.backbone(flat).view(bsz, n_seg, -1)
        weights = mask.to(tokens.dtype)
        pooled = (tokens * weights.unsqueeze(-1)).sum(dim=1) / weights.sum(dim=1, keepdim=True)
        return ModalityFeature(tokens=tokens, pooled=pooled, mask=mask.bool())


class LanguageEncoder(nn.Module):
    """Encodes token ids; pools at the [EOS] position."""

    def __init__(self, backbone: TextBackbone):
        super().__init__()
        self.backbone = backbone

    def forward(self, token_ids: torch.Tensor, eos_index: torch.Tensor) -> ModalityFeature:
        if token_ids.ndim != 2:
            raise ValueError(f"expected (B, T) token ids, got {tuple(token_ids.shape)}")
        if bool((token_ids[:, 0] != SOS_ID).any()):
            raise ValueError("sequence does not start with [SOS]")
        eos_counts = (token_ids == EOS_ID).sum(dim=1)
        if bool((eos_counts != 1).any()):
            raise ValueError("sequence must contain exactly one [EOS]")
        actual_eos = (token_ids == EOS_ID).float().argmax(dim=1)
        if bool((actual_eos != eos_index).any()):
            raise ValueError("eos_index does not point at the [EOS] token")
        tokens = self.backbone(token_ids)
        pooled = tokens[torch.arange(tokens.shape[0], device=tokens.device), eos_index]
        positions = torch.arange(token_ids.shape[1], device=token_ids.device)
        mask = positions.unsqueeze(0) <= eos_index.unsqueeze(1)
        return ModalityFeature(tokens=tokens, pooled=pooled, mask=mask)
