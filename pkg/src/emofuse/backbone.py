"""Transformer backbones shared by the three modality encoders.

One image tower (patch embedding + class token) serves both vision and audio
spectrogram inputs; one text tower (byte embedding + causal attention, pooled
at [EOS]) serves the language input and the label encoder. Widths come from
the backbone config; when the trunk width differs from the embed width a
final linear projection maps every token state into the embed space, so
pooled vectors remain exact functions of the token states.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn


class WeightSchemaError(RuntimeError):
    """Raised when a weight archive does not match the model's parameters."""


@dataclass
class ImageBackboneConfig:
    width: int
    layers: int
    heads: int
    patch_size: int
    image_size: int = 224
    embed_width: int = 0    # 0 -> same as width

    def __post_init__(self):
        if self.embed_width == 0:
            self.embed_width = self.width
        if self.width % self.heads:
            raise ValueError("width must be divisible by head count")
        if self.image_size % self.patch_size:
            raise ValueError("image size must be divisible by patch size")

    @property
    def n_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2


@dataclass
class TextBackboneConfig:
    width: int
    layers: int
    heads: int
    vocab_size: int
    max_len: int
    embed_width: int = 0

    def __post_init__(self):
        if self.embed_width == 0:
            self.embed_width = self.width
        if self.width % self.heads:
            raise ValueError("width must be divisible by head count")


class MultiheadAttention(nn.Module):
    """Query-key-value attention with per-head 1/sqrt(d_head) scaling.

    ``key_mask`` (B, S) marks valid source positions; ``attn_mask`` (T, S)
    marks allowed pairs (used for causal text attention). Returns the output
    sequence and the attention weights (B, H, T, S).
    """

    def __init__(self, width: int, heads: int):
        super().__init__()
        if width % heads:
            raise ValueError("width must be divisible by head count")
        self.heads = heads
        self.head_dim = width // heads
        self.q_proj = nn.Linear(width, width)
        self.k_proj = nn.Linear(width, width)
        self.v_proj = nn.Linear(width, width)
        self.out_proj = nn.Linear(width, width)

    def forward(self, query, source, key_mask=None, attn_mask=None):
        bsz, tgt_len, width = query.shape
        src_len = source.shape[1]
        q = self.q_proj(query).view(bsz, tgt_len, self.heads, self.head_dim).transpose(1, 2)
        k = self.k_proj(source).view(bsz, src_len, self.heads, self.head_dim).transpose(1, 2)
        v = self.v_proj(source).view(bsz, src_len, self.heads, self.head_dim).transpose(1, 2)

        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        if attn_mask is not None:
            scores = scores.masked_fill(~attn_mask.view(1, 1, tgt_len, src_len), float("-inf"))
        if key_mask is not None:
            if not bool(key_mask.any(dim=1).all()):
                raise ValueError("empty source")
            scores = scores.masked_fill(~key_mask.view(bsz, 1, 1, src_len), float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        out = (weights @ v).transpose(1, 2).reshape(bsz, tgt_len, width)
        return self.out_proj(out), weights


class TransformerBlock(nn.Module):
    """Pre-norm self-attention + feed-forward with residuals."""

    def __init__(self, width: int, heads: int, ff_mult: int = 4):
        super().__init__()
        self.ln_attn = nn.LayerNorm(width)
        self.attn = MultiheadAttention(width, heads)
        self.ln_mlp = nn.LayerNorm(width)
        self.mlp = nn.Sequential(
            nn.Linear(width, ff_mult * width),
            nn.GELU(),
            nn.Linear(ff_mult * width, width),
        )

    def forward(self, x, attn_mask=None):
        h = self.ln_attn(x)
        x = x + self.attn(h, h, attn_mask=attn_mask)[0]
        x = x + self.mlp(self.ln_mlp(x))
        return x


class ImageBackbone(nn.Module):
    """ViT-style image tower; returns the projected class-token state."""

    def __init__(self, cfg: ImageBackboneConfig):
        super().__init__()
        self.cfg = cfg
        w = cfg.width
        self.patch_embed = nn.Conv2d(3, w, kernel_size=cfg.patch_size,
                                     stride=cfg.patch_size, bias=False)
        self.class_token = nn.Parameter(torch.randn(w) * 0.02)
        self.pos_embed = nn.Parameter(torch.randn(cfg.n_patches + 1, w) * 0.02)
        self.blocks = nn.ModuleList(
            TransformerBlock(w, cfg.heads) for _ in range(cfg.layers)
        )
        self.ln_final = nn.LayerNorm(w)
        self.out_proj = (
            nn.Linear(w, cfg.embed_width, bias=False) if cfg.embed_width != w else None
        )

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        if images.ndim != 4 or images.shape[1] != 3 or images.shape[2] != self.cfg.image_size \
                or images.shape[3] != self.cfg.image_size:
            raise ValueError(
                f"expected (B, 3, {self.cfg.image_size}, {self.cfg.image_size}) images, "
                f"got {tuple(images.shape)}")
        x = self.patch_embed(images)                      # (B, w, g, g)
        x = x.flatten(2).transpose(1, 2)                  # (B, g*g, w)
        cls = self.class_token.expand(x.shape[0], 1, -1)
        x = torch.cat([cls, x], dim=1) + self.pos_embed
        for block in self.blocks:
            x = block(x)
        x = self.ln_final(x)[:, 0]
        if self.out_proj is not None:
            x = self.out_proj(x)
        return x


class TextBackbone(nn.Module):
    """Causal text tower; returns projected states for every position."""

    def __init__(self, cfg: TextBackboneConfig):
        super().__init__()
        self.cfg = cfg
        w = cfg.width
        self.token_embed = nn.Embedding(cfg.vocab_size, w)
        nn.init.normal_(self.token_embed.weight, std=0.02)
        self.pos_embed = nn.Parameter(torch.randn(cfg.max_len, w) * 0.02)
        self.blocks = nn.ModuleList(
            TransformerBlock(w, cfg.heads) for _ in range(cfg.layers)
        )
        self.ln_final = nn.LayerNorm(w)
        self.out_proj = (
            nn.Linear(w, cfg.embed_width, bias=False) if cfg.embed_width != w else None
        )

    def forward_embedded(self, embeddings: torch.Tensor) -> torch.Tensor:
        """Run already-embedded token vectors (B, T, width) through the tower."""
        seq_len = embeddings.shape[1]
        if seq_len > self.cfg.max_len:
            raise ValueError(f"sequence length {seq_len} exceeds max_len {self.cfg.max_len}")
        x = embeddings + self.pos_embed[:seq_len]
        causal = torch.ones(seq_len, seq_len, dtype=torch.bool,
                            device=embeddings.device).tril()
        for block in self.blocks:
            x = block(x, attn_mask=causal)
        x = self.ln_final(x)
        if self.out_proj is not None:
            x = self.out_proj(x)
        return x

    def forward(self, token_ids: torch.Tensor) -> torch.Tensor:
        return self.forward_embedded(self.token_embed(token_ids))


def build_image_backbone(cfg: ImageBackboneConfig, seed: int) -> ImageBackbone:
    torch.manual_seed(seed)
    return ImageBackbone(cfg)


def build_text_backbone(cfg: TextBackboneConfig, seed: int) -> TextBackbone:
    torch.manual_seed(seed)
    return TextBackbone(cfg)


def parameter_digest(source) -> str:
    """Stable digest over named parameters: sorted by name, shape- and dtype-tagged."""
    if isinstance(source, nn.Module):
        items = list(source.named_parameters())
    else:
        items = list(source)
    h = hashlib.sha256()
    for name, tensor in sorted(items, key=lambda kv: kv[0]):
        h.update(name.encode("utf-8"))
        h.update(str(tuple(tensor.shape)).encode("ascii"))
        h.update(str(tensor.dtype).encode("ascii"))
        h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def save_weights(module: nn.Module, path) -> Path:
    """Named-parameter archive (.npz) plus a JSON shape manifest."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {name: p.detach().cpu().numpy() for name, p in module.named_parameters()}
    np.savez(path, **arrays)
    manifest = {name: {"shape": list(a.shape), "dtype": str(a.dtype)}
                for name, a in sorted(arrays.items())}
    path.with_suffix(".manifest.json").write_text(
        json.dumps(manifest, indent=2), encoding="utf-8")
    return path


def load_weights(module: nn.Module, path) -> None:
    """Load an archive saved by :func:`save_weights`; schema must match exactly."""
    with np.load(Path(path)) as data:
        archive = {name: data[name] for name in data.files}
    params = dict(module.named_parameters())
    for name in sorted(params):
        if name not in archive:
            raise WeightSchemaError(f"parameter missing from archive: {name}")
        if tuple(archive[name].shape) != tuple(params[name].shape):
            raise WeightSchemaError(
                f"shape mismatch for {name}: archive {tuple(archive[name].shape)} "
                f"vs model {tuple(params[name].shape)}")
    for name in sorted(archive):
        if name not in params:
            raise WeightSchemaError(f"unexpected parameter in archive: {name}")
    with torch.no_grad():
        for name, param in params.items():
            param.copy_(torch.from_numpy(archive[name]).to(param.dtype))
