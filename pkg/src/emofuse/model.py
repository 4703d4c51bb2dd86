"""Full classifier: modality encoders, decoder fusion, similarity prediction.

The assembly is driven by the merged config. Two switches produce the
component-ablation variants:

  use_cmd=True,  use_le=True   decoder fusion seeded by the label query,
                               cosine scores against label rows (the default)
  use_cmd=False, use_le=True   pooled features concatenated and mapped by a
                               linear layer to one vector, cosine scores
  use_cmd=True,  use_le=False  decoder fusion seeded by a free learnable
                               query, linear classifier on the fused vector
  use_cmd=False, use_le=False  concatenated pooled features through a small
                               MLP straight to class logits

Backbone embed width, decoder width, and label embed width are decoupled by
learned linear projections (identity when the widths already agree). Label
rows and the query are recomputed inside every forward pass so gradient
updates to the prompt contexts take effect immediately.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import torch
from torch import nn

from .backbone import (ImageBackbone, ImageBackboneConfig, TextBackbone,
                       TextBackboneConfig, parameter_digest)
from .encoders import AudioEncoder, LanguageEncoder, ModalityFeature, VisionEncoder
from .fusion import CMDConfig, CrossModalDecoder
from .head import (LogitScale, bce_loss, ce_loss, cosine_scores,
                   emotion_probabilities, predict_emotions, predict_sentiment)
from .labels import LabelEncoder, load_label_texts, resolve_query_word

PRECISION_DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class ModelOutput:
    scores: torch.Tensor                 # (B, C): cosine scores or raw logits
    fused: torch.Tensor                  # (B, d_cmd) vector entering the head
    is_similarity: bool                  # True when scores are cosine values
    label_matrix: torch.Tensor | None = None
    intermediates: list = field(default_factory=list)
    modality_pooled: dict = field(default_factory=dict)   # letter -> (B, embed)


def _maybe_linear(d_in: int, d_out: int) -> nn.Module:
    return nn.Linear(d_in, d_out) if d_in != d_out else nn.Identity()


class MultimodalClassifier(nn.Module):

    def __init__(self, cfg: dict):
        super().__init__()
        self.cfg = cfg
        self.task = cfg["train"]["task"]
        if self.task not in ("emotion", "sentiment"):
            raise ValueError(f"unknown task {self.task!r}")
        self.use_cmd = bool(cfg["model"]["use_cmd"])
        self.use_le = bool(cfg["model"]["use_le"])
        self.threshold = float(cfg["head"]["threshold"])

        pre = cfg["preprocess"]
        img = cfg["backbone"]["image"]
        txt = cfg["backbone"]["text"]
        image_cfg = ImageBackboneConfig(
            width=img["width"], layers=img["layers"], heads=img["heads"],
            patch_size=img["patch_size"], image_size=pre["image_size"],
            embed_width=img["embed_width"])
        text_cfg = TextBackboneConfig(
            width=txt["width"], layers=txt["layers"], heads=txt["heads"],
            vocab_size=txt["vocab_size"], max_len=pre["max_text_len"],
            embed_width=txt["embed_width"])

        cmd_cfg = cfg["cmd"]
        self.order = cmd_cfg["order"]
        d_cmd = cmd_cfg["hidden"]

        self.vision = VisionEncoder(ImageBackbone(image_cfg)) if "V" in self.order else None
        self.audio = AudioEncoder(ImageBackbone(image_cfg)) if "A" in self.order else None
        self.language = LanguageEncoder(TextBackbone(text_cfg)) if "L" in self.order else None

        self.mod_proj = nn.ModuleDict({
            letter: _maybe_linear(
                image_cfg.embed_width if letter in "VA" else text_cfg.embed_width, d_cmd)
            for letter in self.order
        })

        label_source = cfg["labels"][f"{self.task}_labels"]
        self.label_texts = load_label_texts(label_source)
        self.n_classes = len(self.label_texts)

        if self.use_le:
            # the label tower starts from the language tower's initial weights
            # (same architecture, separate parameters) and never trains
            if self.language is not None:
                label_backbone = copy.deepcopy(self.language.backbone)
            else:
                label_backbone = TextBackbone(text_cfg)
            query_word = resolve_query_word(cfg["labels"]["query_word"], self.task)
            self.label_encoder = LabelEncoder(
                label_backbone, self.label_texts, query_word,
                prompt_length=cfg["labels"]["prompt_length"])
            self.head_proj = _maybe_linear(d_cmd, self.label_encoder.embed_width)
            self.query_proj = _maybe_linear(self.label_encoder.embed_width, d_cmd)
            self.logit_scale = LogitScale()
        else:
            self.label_encoder = None
            self.free_query = nn.Parameter(torch.randn(d_cmd) * 0.02)
            self.classifier = nn.Linear(d_cmd, self.n_classes)

        if self.use_cmd:
            self.cmd = CrossModalDecoder(CMDConfig(
                layers=len(self.order), hidden=d_cmd, heads=cmd_cfg["heads"],
                ff_mult=cmd_cfg["ff_mult"], order=self.order,
                kv_granularity=cmd_cfg["kv_granularity"]))
        else:
            self.cmd = None
            self.fuse_fc = nn.Linear(len(self.order) * d_cmd, d_cmd)
            if not self.use_le:
                self.fuse_act = nn.GELU()

    @property
    def dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    def encode_modalities(self, batch: dict) -> tuple[dict, dict]:
        """Per-modality features projected to decoder width, plus raw pooled."""
        dtype = self.dtype
        raw: dict[str, ModalityFeature] = {}
        if "V" in self.order:
            raw["V"] = self.vision(batch["frames"].to(dtype))
        if "L" in self.order:
            raw["L"] = self.language(batch["token_ids"], batch["eos_index"])
        if "A" in self.order:
            raw["A"] = self.audio(batch["spec_frames"].to(dtype), batch["spec_mask"])
        projected = {
            letter: ModalityFeature(
                tokens=self.mod_proj[letter](feat.tokens),
                pooled=self.mod_proj[letter](feat.pooled),
                mask=feat.mask)
            for letter, feat in raw.items()
        }
        pooled = {letter: feat.pooled for letter, feat in raw.items()}
        return projected, pooled

    def _fuse(self, features: dict) -> tuple[torch.Tensor, list]:
        batch_size = next(iter(features.values())).pooled.shape[0]
        if self.use_cmd:
            if self.use_le:
                query = self.query_proj(self.label_encoder.embed_query())
            else:
                query = self.free_query.unsqueeze(0)
            target = query.unsqueeze(0).expand(batch_size, 1, -1)
            fused, states = self.cmd.decode(target, features)
            return fused.squeeze(1), states
        cat = torch.cat([features[letter].pooled for letter in self.order], dim=-1)
        return self.fuse_fc(cat), []

    def forward(self, batch: dict) -> ModelOutput:
        features, pooled = self.encode_modalities(batch)
        fused, states = self._fuse(features)
        if self.use_le:
            label_matrix = self.label_encoder.embed_labels()
            scores = cosine_scores(self.head_proj(fused), label_matrix)
            return ModelOutput(scores=scores, fused=fused, is_similarity=True,
                               label_matrix=label_matrix, intermediates=states,
                               modality_pooled=pooled)
        logits = self.classifier(self.fuse_act(fused) if (not self.use_cmd) else fused)
        return ModelOutput(scores=logits, fused=fused, is_similarity=False,
                           intermediates=states, modality_pooled=pooled)

    def compute_loss(self, output: ModelOutput, batch: dict) -> torch.Tensor:
        if self.task == "emotion":
            if output.is_similarity:
                probs = emotion_probabilities(output.scores)
            else:
                probs = torch.sigmoid(output.scores)
            return bce_loss(probs, batch["emotion_target"].to(probs.dtype))
        valid = ~batch["excluded"]
        scores = output.scores[valid]
        target = batch["sentiment_class"][valid]
        scale = self.logit_scale.value if output.is_similarity else \
            torch.ones((), dtype=scores.dtype, device=scores.device)
        return ce_loss(scores, target, scale)

    @torch.no_grad()
    def predict(self, batch: dict) -> dict:
        output = self.forward(batch)
        if self.task == "emotion":
            if output.is_similarity:
                binary, probs = predict_emotions(output.scores, self.threshold)
            else:
                probs = torch.sigmoid(output.scores)
                binary = (probs > self.threshold).to(torch.int64)
            return {"scores": output.scores, "probabilities": probs, "binary": binary}
        if output.is_similarity:
            onehot, probs = predict_sentiment(output.scores, self.logit_scale.value)
        else:
            onehot, probs = predict_sentiment(output.scores,
                                              torch.ones((), dtype=output.scores.dtype))
        return {"scores": output.scores, "probabilities": probs, "binary": onehot}

    def parameter_inventory(self) -> dict[str, str]:
        """Every parameter tagged exactly once as trainable or frozen."""
        return {name: ("trainable" if p.requires_grad else "frozen")
                for name, p in self.named_parameters()}

    def frozen_digest(self) -> str | None:
        return self.label_encoder.frozen_digest() if self.use_le else None

    def digest(self) -> str:
        return parameter_digest(self)


def build_model(cfg: dict, dtype: torch.dtype | None = None) -> MultimodalClassifier:
    """Construct the classifier deterministically under the requested dtype.

    Parameters are created while the requested dtype is torch's default, so a
    float64 build carries exact float64 initial values (not float32 values
    cast upward).
    """
    if dtype is None:
        dtype = PRECISION_DTYPES[cfg["train"]["precision"]]
    previous = torch.get_default_dtype()
    torch.set_default_dtype(dtype)
    try:
        torch.manual_seed(cfg["seed"])
        model = MultimodalClassifier(cfg)
    finally:
        torch.set_default_dtype(previous)
    return model
