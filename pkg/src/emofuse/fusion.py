"""Cross-modal decoder: fold modality features into the query state.

The decoder holds one layer per fused modality. Layer k takes the running
target state (a single query vector per sample), applies self-attention,
cross-attends to modality k's features as keys/values, then a feed-forward,
with pre-norm residuals around each sublayer. The fusion order is a string
over {L, V, A}; "LVA" attends language, then vision, then audio.

Keys and values come either from the modality's token sequence
(kv_granularity "token", the default) or from its single pooled vector
("global"). With a single global key the softmax is constant 1 and the
cross-attention reduces to a value pass-through, so "global" is kept only
for comparison runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .backbone import MultiheadAttention
from .encoders import ModalityFeature

MODALITY_LETTERS = "LVA"


@dataclass
class CMDConfig:
    layers: int = 3
    hidden: int = 512
    heads: int = 8
    ff_mult: int = 4
    order: str = "LVA"
    kv_granularity: str = "token"

    def __post_init__(self):
        if not self.order or any(ch not in MODALITY_LETTERS for ch in self.order):
            raise ValueError(f"order must be a non-empty string over 'LVA', got {self.order!r}")
        if len(set(self.order)) != len(self.order):
            raise ValueError(f"order must not repeat modalities: {self.order!r}")
        if self.layers != len(self.order):
            raise ValueError(
                f"layer count {self.layers} must equal fused modality count {len(self.order)}")
        if self.hidden % self.heads:
            raise ValueError("hidden size must be divisible by head count")
        if self.kv_granularity not in ("token", "global"):
            raise ValueError(f"kv_granularity must be 'token' or 'global', "
                             f"got {self.kv_granularity!r}")


class CMDLayer(nn.Module):
    """Self-attention, cross-attention to one modality, feed-forward."""

    def __init__(self, hidden: int, heads: int, ff_mult: int = 4):
        super().__init__()
        self.hidden = hidden
        self.ln_self = nn.LayerNorm(hidden)
        self.self_attn = MultiheadAttention(hidden, heads)
        self.ln_cross = nn.LayerNorm(hidden)
        self.cross_attn = MultiheadAttention(hidden, heads)
        self.ln_mlp = nn.LayerNorm(hidden)
        self.mlp = nn.Sequential(
            nn.Linear(hidden, ff_mult * hidden),
            nn.GELU(),
            nn.Linear(ff_mult * hidden, hidden),
        )

    def forward(self, target, source_tokens, source_mask=None):
        if target.shape[-1] != self.hidden or source_tokens.shape[-1] != self.hidden:
            raise ValueError(
                f"width mismatch: layer width {self.hidden}, target "
                f"{target.shape[-1]}, source {source_tokens.shape[-1]}")
        h = self.ln_self(target)
        target = target + self.self_attn(h, h)[0]
        out, weights = self.cross_attn(self.ln_cross(target), source_tokens,
                                       key_mask=source_mask)
        target = target + out
        target = target + self.mlp(self.ln_mlp(target))
        return target, weights


class CrossModalDecoder(nn.Module):

    def __init__(self, cfg: CMDConfig):
        super().__init__()
        self.cfg = cfg
        self.layers = nn.ModuleList(
            CMDLayer(cfg.hidden, cfg.heads, cfg.ff_mult) for _ in cfg.order
        )

    def decode(self, target: torch.Tensor,
               features: dict[str, ModalityFeature]) -> tuple[torch.Tensor, list[torch.Tensor]]:
        """Fuse ``features`` into ``target`` (B, 1, d) in the configured order.

        Returns the final state and the list of intermediate states, one per
        fused modality.
        """
        if set(features) != set(self.cfg.order):
            raise ValueError(
                f"fusion order {self.cfg.order!r} does not match provided "
                f"modalities {sorted(features)}")
        if len(self.layers) != len(self.cfg.order):
            raise ValueError("order/layer count mismatch")
        states = []
        for layer, letter in zip(self.layers, self.cfg.order):
            feat = features[letter]
            if self.cfg.kv_granularity == "token":
                source, mask = feat.tokens, feat.mask
            else:
                source = feat.pooled.unsqueeze(1)
                mask = torch.ones(source.shape[:2], dtype=torch.bool, device=source.device)
            target, _ = layer(target, source, mask)
            states.append(target)
        return target, states

    def forward(self, target, features):
        return self.decode(target, features)[0]
