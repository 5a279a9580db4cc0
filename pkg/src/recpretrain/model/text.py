"""Frozen text embedder: hashed-token random projections.

Stands in for a pretrained language encoder at desk scale. The projection
table is generated once from a seed and never updated, so the same title
always maps to the same unit vector and two runs of any training procedure
leave it byte-identical.
"""

from __future__ import annotations

import hashlib
import math
import re

import numpy as np

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class TextEmbedder:
    def __init__(self, dim: int = 64, vocab_size: int = 4096, seed: int = 0):
        if dim < 1 or vocab_size < 1:
            raise ValueError("dim and vocab_size must be positive")
        self.dim = dim
        self.vocab_size = vocab_size
        self.seed = seed
        rng = np.random.default_rng(seed)
        table = rng.standard_normal((vocab_size, dim)) / math.sqrt(dim)
        table.setflags(write=False)
        self._table = table
        self._cache: dict[str, np.ndarray] = {}

    @staticmethod
    def tokens(title: str) -> list[str]:
        toks = _TOKEN_RE.findall(title.lower())
        return toks if toks else [title.strip()]

    def _bucket(self, token: str) -> int:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little") % self.vocab_size

    def encode(self, title: str) -> np.ndarray:
        """L2-normalized mean of the hashed-token projection rows."""
        if not title or not title.strip():
            raise ValueError("cannot encode an empty title")
        cached = self._cache.get(title)
        if cached is not None:
            return cached
        rows = self._table[[self._bucket(tok) for tok in self.tokens(title)]]
        vec = rows.mean(axis=0)
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise ValueError(f"degenerate zero embedding for title {title!r}")
        vec = vec / norm
        vec.setflags(write=False)
        self._cache[title] = vec
        return vec

    def table_bytes(self) -> bytes:
        """Raw projection table bytes, for frozen-parameter checks."""
        return self._table.tobytes()
