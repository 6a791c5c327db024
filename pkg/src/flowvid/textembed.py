"""Toy stand-in for the multilingual text encoder.

Whitespace tokens hash into a fixed 4096-slot embedding table; the
output keeps the real interface (a fixed 512-token context), zero
padded past the prompt.  Deterministic across processes: the table is
generated from a constant seed and tokens hash with crc32, never the
salted builtin hash.
"""

from __future__ import annotations

import zlib

import torch

TABLE_SLOTS = 4096
CONTEXT_LEN = 512
_TABLE_SEED = 0x7E57C0DE


class ToyTextEmbedder:
    def __init__(self, width: int = 32, context_len: int = CONTEXT_LEN):
        self.width = width
        self.context_len = context_len
        gen = torch.Generator().manual_seed(_TABLE_SEED)
        self.table = torch.randn(TABLE_SLOTS, width, generator=gen) / width ** 0.5

    def embed(self, prompt: str) -> torch.Tensor:
        """Prompt -> (context_len, width); padding rows are exact zeros."""
        out = torch.zeros(self.context_len, self.width)
        tokens = prompt.split()[: self.context_len]
        for i, tok in enumerate(tokens):
            slot = zlib.crc32(tok.encode("utf-8")) % TABLE_SLOTS
            out[i] = self.table[slot]
        return out

    def null_context(self) -> torch.Tensor:
        """The unconditional (empty prompt) context for guidance."""
        return torch.zeros(self.context_len, self.width)

    def global_embedding(self, frame: torch.Tensor) -> torch.Tensor:
        """Toy global image context: channel means hashed onto the table.

        Keeps the decoupled global-context injection pathway exercised
        without a real image encoder.
        """
        stats = frame.mean(dim=(-2, -1)).flatten()
        key = " ".join(f"{v:.3f}" for v in stats.tolist())
        slot = zlib.crc32(key.encode("utf-8")) % TABLE_SLOTS
        return self.table[slot]
