"""Similarity-based prediction head and its losses.

The fused representation is compared to every label row by cosine
similarity. Emotion inference z-scores the per-sample similarities, applies
a sigmoid, and thresholds strictly at 0.6 (all-equal similarities give
sigmoid(0) = 0.5 everywhere and therefore an all-zero prediction). Sentiment
inference scales the pair of similarities by the learnable logit scale and
takes the argmax, breaking ties toward the first listed class. Training uses
BCE on the sigmoid of z-scored similarities for emotion and CE on the scaled
similarities for sentiment, matching the inference paths.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

NORM_EPS = 1e-12
STD_FLOOR = 1e-8
PROB_CLAMP = 1e-7


class LogitScale(nn.Module):
    """Learnable positive scale, stored in log space, initialized to 1/0.07."""

    def __init__(self):
        super().__init__()
        self.log_scale = nn.Parameter(torch.tensor(math.log(1.0 / 0.07)))

    @property
    def value(self) -> torch.Tensor:
        return self.log_scale.exp()

    def forward(self) -> torch.Tensor:
        return self.value


def cosine_scores(fused: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Cosine similarity of each fused vector (B, d) against label rows (C, d)."""
    if fused.shape[-1] != labels.shape[-1]:
        raise ValueError(
            f"width mismatch: fused {fused.shape[-1]} vs labels {labels.shape[-1]}")
    fused_norm = fused.norm(dim=-1)
    label_norm = labels.norm(dim=-1)
    if bool((fused_norm <= NORM_EPS).any()) or bool((label_norm <= NORM_EPS).any()):
        raise ValueError("zero-norm input to cosine similarity")
    return (fused @ labels.T) / (fused_norm.unsqueeze(1) * label_norm.unsqueeze(0))


def zscore(scores: torch.Tensor, std_floor: float = STD_FLOOR) -> torch.Tensor:
    """Per-sample standardization with population std and a floor for flat rows."""
    mean = scores.mean(dim=-1, keepdim=True)
    std = scores.std(dim=-1, keepdim=True, unbiased=False)
    return (scores - mean) / std.clamp_min(std_floor)


def emotion_probabilities(scores: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid(zscore(scores))


def predict_emotions(scores: torch.Tensor,
                     threshold: float = 0.6) -> tuple[torch.Tensor, torch.Tensor]:
    """Multi-label prediction: probability strictly above the threshold -> 1."""
    probs = emotion_probabilities(scores)
    return (probs > threshold).to(torch.int64), probs


def _first_argmax(logits: torch.Tensor) -> torch.Tensor:
    """Index of the first maximal entry per row (fully specified tie-break)."""
    n_classes = logits.shape[-1]
    is_max = logits >= logits.max(dim=-1, keepdim=True).values
    positions = torch.arange(n_classes, device=logits.device).expand_as(logits)
    return torch.where(is_max, positions, torch.full_like(positions, n_classes)).min(dim=-1).values


def predict_sentiment(scores: torch.Tensor,
                      logit_scale: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Two-class prediction: one-hot of the larger scaled similarity."""
    logits = logit_scale * scores
    idx = _first_argmax(logits)
    onehot = F.one_hot(idx, num_classes=scores.shape[-1]).to(torch.int64)
    return onehot, torch.softmax(logits, dim=-1)


def bce_loss(probabilities: torch.Tensor, targets: torch.Tensor,
             clamp: float = PROB_CLAMP) -> torch.Tensor:
    """Mean binary cross-entropy over every (sample, class) pair."""
    if probabilities.shape != targets.shape:
        raise ValueError(
            f"shape mismatch: probabilities {tuple(probabilities.shape)} vs "
            f"targets {tuple(targets.shape)}")
    p = probabilities.clamp(clamp, 1.0 - clamp)
    y = targets.to(p.dtype)
    return -(y * p.log() + (1.0 - y) * (1.0 - p).log()).mean()


def ce_loss(scores: torch.Tensor, target_class: torch.Tensor,
            logit_scale: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy of scaled similarities against the target class."""
    if scores.shape[0] != target_class.shape[0]:
        raise ValueError("scores and targets disagree on batch size")
    if scores.shape[0] == 0:
        raise ValueError("no samples reached the sentiment loss")
    return F.cross_entropy(logit_scale * scores, target_class)
