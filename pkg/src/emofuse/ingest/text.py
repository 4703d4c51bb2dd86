"""Byte-level tokenizer with start/end markers.

Token ids: 0 = PAD, 1 = SOS, 2 = EOS, 3..258 = UTF-8 bytes. Byte-level ids
round-trip any string exactly (no vocabulary file, no normalization), which
also makes phrase- and sentence-level label text a non-event.
"""

from __future__ import annotations

import numpy as np

PAD_ID = 0
SOS_ID = 1
EOS_ID = 2
BYTE_OFFSET = 3
VOCAB_SIZE = BYTE_OFFSET + 256


class ByteTokenizer:
    pad_id = PAD_ID
    sos_id = SOS_ID
    eos_id = EOS_ID
    vocab_size = VOCAB_SIZE

    def encode_text(self, text: str) -> list[int]:
        """Raw byte ids for ``text``, no markers."""
        return [b + BYTE_OFFSET for b in text.encode("utf-8")]

    def encode(self, text: str, max_len: int) -> tuple[np.ndarray, int]:
        """[SOS] bytes [EOS], truncated to ``max_len`` with EOS always last.

        Returns the id array (int32, padded to max_len) and the EOS index.
        """
        if max_len < 2:
            raise ValueError("max_len must allow [SOS] and [EOS]")
        body = self.encode_text(text)[: max_len - 2]
        seq = [SOS_ID] + body + [EOS_ID]
        eos_index = len(seq) - 1
        ids = np.full(max_len, PAD_ID, dtype=np.int32)
        ids[: len(seq)] = seq
        return ids, eos_index

    def decode(self, ids) -> str:
        data = bytes(int(t) - BYTE_OFFSET for t in ids if int(t) >= BYTE_OFFSET)
        return data.decode("utf-8", errors="replace")
