"""Versioned binary checkpoints.

Layout: a fixed-order header (magic, version, dims, item count, step, seed,
vocabulary digest) followed by the declared tensors as little-endian 32-bit
floats. Loading then saving reproduces the file byte for byte.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from ..util import atomic_write_bytes
from . import network
from .network import ModelDims

if TYPE_CHECKING:  # pragma: no cover
    from .recommender import Recommender

MAGIC = b"RCPT"
VERSION = 1
_HEADER = struct.Struct("<4sI7IQQ16s")


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class Checkpoint:
    dims: ModelDims
    n_items: int
    step: int
    seed: int
    vocab_digest: bytes
    tensors: dict[str, np.ndarray]

    @classmethod
    def from_model(cls, model: "Recommender", step: int) -> "Checkpoint":
        return cls(
            dims=model.dims,
            n_items=model.n_items,
            step=step,
            seed=model.seed,
            vocab_digest=model.vocab_digest(),
            tensors=model.snapshot(),
        )

    def header_bytes(self) -> bytes:
        d = self.dims
        return _HEADER.pack(
            MAGIC,
            VERSION,
            d.d_text,
            d.d_collab,
            d.n_heads,
            d.n_blocks,
            d.max_history,
            d.hash_vocab,
            self.n_items,
            self.step,
            self.seed,
            self.vocab_digest,
        )

    def to_bytes(self) -> bytes:
        chunks = [self.header_bytes()]
        for key in network.param_keys(self.dims):
            chunks.append(self.tensors[key].astype("<f4").tobytes())
        return b"".join(chunks)

    def save(self, path: Path | str) -> None:
        atomic_write_bytes(path, self.to_bytes())

    @classmethod
    def load(cls, path: Path | str) -> "Checkpoint":
        blob = Path(path).read_bytes()
        if len(blob) < _HEADER.size:
            raise CheckpointError(f"{path}: truncated header")
        (magic, version, d_text, d_collab, n_heads, n_blocks, max_history,
         hash_vocab, n_items, step, seed, digest) = _HEADER.unpack_from(blob)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise CheckpointError(
                f"{path}: version {version} unsupported (expected {VERSION})"
            )
        dims = ModelDims(
            d_text=d_text,
            d_collab=d_collab,
            n_heads=n_heads,
            n_blocks=n_blocks,
            max_history=max_history,
            hash_vocab=hash_vocab,
        )
        shapes = network.param_shapes(dims, n_items)
        tensors: dict[str, np.ndarray] = {}
        offset = _HEADER.size
        for key in network.param_keys(dims):
            shape = shapes[key]
            count = int(np.prod(shape))
            end = offset + 4 * count
            if end > len(blob):
                raise CheckpointError(f"{path}: truncated tensor {key}")
            flat = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
            tensors[key] = flat.astype(np.float64).reshape(shape)
            offset = end
        if offset != len(blob):
            raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes")
        return cls(
            dims=dims,
            n_items=n_items,
            step=step,
            seed=seed,
            vocab_digest=digest,
            tensors=tensors,
        )


def inspect(path: Path | str) -> dict[str, object]:
    """Header fields only, for the `checkpoint inspect` command."""
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise CheckpointError(f"{path}: truncated header")
    (magic, version, d_text, d_collab, n_heads, n_blocks, max_history,
     hash_vocab, n_items, step, seed, digest) = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    return {
        "magic": magic.decode("ascii"),
        "version": version,
        "d_text": d_text,
        "d_collab": d_collab,
        "n_heads": n_heads,
        "n_blocks": n_blocks,
        "max_history": max_history,
        "hash_vocab": hash_vocab,
        "n_items": n_items,
        "step": step,
        "seed": seed,
        "vocab_digest": digest.hex(),
        "payload_bytes": len(blob) - _HEADER.size,
    }


def restore_into(model: "Recommender", ckpt: Checkpoint) -> None:
    """Load checkpoint tensors into a model, rejecting any mismatch."""
    if ckpt.dims != model.dims:
        raise CheckpointError(f"dims mismatch: {ckpt.dims} vs {model.dims}")
    if ckpt.n_items != model.n_items:
        raise CheckpointError(
            f"item count mismatch: {ckpt.n_items} vs {model.n_items}"
        )
    if ckpt.vocab_digest != model.vocab_digest():
        raise CheckpointError("vocabulary digest mismatch")
    model.restore(ckpt.tensors)
