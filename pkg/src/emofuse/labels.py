"""Label encoder: class names and a shared query embedded by a frozen text tower.

Each class label (word, phrase, or sentence) is wrapped as

    [SOS]  c_1 .. c_P  label bytes  [EOS]

where c_1..c_P are learnable context vectors spliced in at the embedding
layer. The wrapped sequence runs through the text backbone and the [EOS]
state becomes that class's row in the label matrix. The query vector is
built the same way from a single query word with its own context vectors;
with an empty query word the sequence is just the contexts between the
markers. The text tower itself stays frozen: only the two context banks
receive gradients.
"""

from __future__ import annotations

from pathlib import Path

import torch
from torch import nn

from .backbone import TextBackbone, parameter_digest
from .ingest.text import EOS_ID, PAD_ID, SOS_ID, ByteTokenizer

FIXTURE_DIR = Path(__file__).parent / "fixtures"

NO_WORD = "(no word)"


def load_label_texts(source: str) -> list[str]:
    """Read label texts, one per line, from a bundled fixture or a file path.

    ``source`` may be a bundled fixture name ("emotion_words",
    "sentiment_phrases", ...) or a path to a text file with the same layout.
    Blank lines and lines starting with '#' are skipped.
    """
    bundled = FIXTURE_DIR / f"{source}.txt"
    path = bundled if bundled.is_file() else Path(source)
    if not path.is_file():
        raise FileNotFoundError(f"label text source not found: {source}")
    lines = [line.strip() for line in path.read_text(encoding="utf-8").splitlines()]
    texts = [line for line in lines if line and not line.startswith("#")]
    if not texts:
        raise ValueError(f"label text source is empty: {source}")
    return texts


def resolve_query_word(word: str, task: str) -> str:
    """Map the configured query word to the literal text used for the query.

    "auto" picks the task name ("Emotion" / "Sentiment"); "(no word)" means
    the query is built from the learnable contexts alone.
    """
    if word == "auto":
        return {"emotion": "Emotion", "sentiment": "Sentiment"}[task]
    if word == NO_WORD:
        return ""
    return word


class LabelEncoder(nn.Module):

    def __init__(self, backbone: TextBackbone, label_texts: list[str],
                 query_word: str, prompt_length: int = 8):
        super().__init__()
        if not label_texts:
            raise ValueError("label encoder needs at least one label text")
        self.backbone = backbone
        self.backbone.requires_grad_(False)
        width = backbone.cfg.width
        self.prompt_length = prompt_length
        self.label_prompt = nn.Parameter(torch.randn(prompt_length, width) * 0.02)
        self.query_prompt = nn.Parameter(torch.randn(prompt_length, width) * 0.02)
        self._tokenizer = ByteTokenizer()
        self.label_texts = list(label_texts)
        self._label_ids = [self._tokenizer.encode_text(t) for t in self.label_texts]
        for text, ids in zip(self.label_texts, self._label_ids):
            if not ids:
                raise ValueError(f"label tokenizes to empty: {text!r}")
        self.query_word = query_word
        self._query_ids = self._tokenizer.encode_text(query_word)
        room = backbone.cfg.max_len - 2 - prompt_length
        if room < 0:
            raise ValueError("prompt length leaves no room for [SOS]/[EOS]")
        self._room = room

    @property
    def n_labels(self) -> int:
        return len(self.label_texts)

    @property
    def embed_width(self) -> int:
        return self.backbone.cfg.embed_width

    def set_query_word(self, word: str) -> None:
        self.query_word = word
        self._query_ids = self._tokenizer.encode_text(word)

    def _encode_wrapped(self, prompt: torch.Tensor,
                        token_lists: list[list[int]]) -> torch.Tensor:
        """Embed [SOS] + prompt + tokens + [EOS] rows and pool at [EOS]."""
        table = self.backbone.token_embed.weight
        sos, eos, pad = table[SOS_ID], table[EOS_ID], table[PAD_ID]
        bodies = [ids[: self._room] for ids in token_lists]
        # label bytes longer than the context window are truncated so the
        # [EOS] marker is always present
        lengths = [2 + self.prompt_length + len(ids) for ids in bodies]
        max_len = max(lengths)
        rows = []
        for ids in bodies:
            parts = [sos.unsqueeze(0), prompt]
            if ids:
                parts.append(table[torch.tensor(ids, device=table.device)])
            parts.append(eos.unsqueeze(0))
            seq = torch.cat(parts, dim=0)
            if seq.shape[0] < max_len:
                filler = pad.unsqueeze(0).expand(max_len - seq.shape[0], -1)
                seq = torch.cat([seq, filler], dim=0)
            rows.append(seq)
        batch = torch.stack(rows, dim=0)
        states = self.backbone.forward_embedded(batch)
        eos_pos = torch.tensor([n - 1 for n in lengths], device=states.device)
        return states[torch.arange(len(rows), device=states.device), eos_pos]

    def embed_labels(self) -> torch.Tensor:
        """Label matrix, one row per class: (n_labels, embed_width)."""
        return self._encode_wrapped(self.label_prompt, self._label_ids)

    def embed_query(self) -> torch.Tensor:
        """Query vector (1, embed_width) from the query word and its contexts."""
        return self._encode_wrapped(self.query_prompt, [self._query_ids])

    def frozen_digest(self) -> str:
        """Digest of the frozen text tower (contexts excluded: they train)."""
        return parameter_digest(self.backbone)
