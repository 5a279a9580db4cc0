"""Small shared helpers: stable hashing, digests, atomic file writes."""

from __future__ import annotations

import hashlib
import os
from pathlib import Path


def stable_hash64(*parts: object) -> int:
    """Platform-stable 64-bit hash of the string forms of ``parts``."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        h.update(str(part).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


def derive_seed(base_seed: int, *parts: object) -> int:
    """Per-task seed: base seed XOR a stable hash of the task coordinates."""
    return (int(base_seed) ^ stable_hash64(*parts)) & 0x7FFF_FFFF_FFFF_FFFF


def sha256_file(path: Path | str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write_bytes(path: Path | str, data: bytes) -> None:
    """Write via a temp file + rename so readers never see partial content."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def atomic_write_text(path: Path | str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))
