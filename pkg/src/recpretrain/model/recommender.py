"""The compact trainable sequential recommender.

Wires a frozen text embedder, a trainable collaborative encoder, and the
trainable adapter head over an item vocabulary, and exposes the
example-level operations: encoding, slate scoring, single-step training, and
generation. Optimization is plain gradient descent with momentum and global
gradient-norm clipping; all randomness is seeded.
"""

from __future__ import annotations

import hashlib
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from ..prompting import PromptMode, TrainingExample
from ..util import derive_seed
from . import network
from .network import Batch, ModelDims
from .text import TextEmbedder

DEFAULT_MOMENTUM = 0.9
DEFAULT_CLIP_NORM = 1.0


class TrainingDiverged(RuntimeError):
    pass


def vocab_digest(vocab: Sequence[str]) -> bytes:
    h = hashlib.blake2b(digest_size=16)
    for item in vocab:
        h.update(item.encode("utf-8"))
        h.update(b"\n")
    return h.digest()


class Recommender:
    def __init__(
        self,
        vocab: Iterable[str],
        titles: Mapping[str, str],
        dims: ModelDims = ModelDims(),
        seed: int = 0,
        momentum: float = DEFAULT_MOMENTUM,
        clip_norm: float = DEFAULT_CLIP_NORM,
        train_collab: bool = False,
    ):
        self.vocab: tuple[str, ...] = tuple(sorted(set(vocab)))
        self.index = {item: i for i, item in enumerate(self.vocab)}
        self.n_items = len(self.vocab)
        self.dims = dims
        self.seed = seed
        self.momentum = momentum
        self.clip_norm = clip_norm
        self.train_collab = train_collab
        self.embedder = TextEmbedder(
            dims.d_text, dims.hash_vocab, seed=derive_seed(seed, "text-embedder")
        )
        self.params = network.init_params(
            dims, self.n_items, seed=derive_seed(seed, "params")
        )
        self.cold_item_lookups = 0
        self._momentum_buf: dict[str, np.ndarray] = {}
        # Frozen per-item text vectors; the extra row backs cold items and is
        # patched per batch from the example's own title when one is present.
        text = np.zeros((self.n_items + 1, dims.d_text))
        for item_id in self.vocab:
            title = titles.get(item_id)
            if title is None:
                raise ValueError(f"no title for vocabulary item {item_id!r}")
            text[self.index[item_id]] = self.embedder.encode(title)
        text.setflags(write=False)
        self._text_vecs = text

    # ---- lookups -------------------------------------------------------

    def _lookup(self, item_id: str) -> int:
        idx = self.index.get(item_id)
        if idx is None:
            self.cold_item_lookups += 1
            return self.n_items
        return idx

    def trainable_keys(self) -> tuple[str, ...]:
        keys = list(network.ADAPTER_KEYS)
        if self.train_collab:
            keys.extend(network.collab_keys(self.dims))
        return tuple(keys)

    # ---- encoding ------------------------------------------------------

    def encode_text(self, title: str) -> np.ndarray:
        return self.embedder.encode(title)

    def encode_collab(self, item_ids: Sequence[str]) -> np.ndarray:
        """Per-position causal-attention outputs for a history, (m, d_collab)."""
        if not item_ids:
            raise ValueError("history must be non-empty")
        ids = np.array([[self._lookup(i) for i in item_ids]], dtype=np.int64)
        mask = np.ones((1, len(item_ids)))
        x_final, _ = network.collab_forward(self.params, self.dims, ids, mask)
        return x_final[0]

    def item_rep(
        self, item_id: str, title: str, mode: PromptMode | str
    ) -> np.ndarray:
        """Concatenated representation: frozen text block then projected
        collaborative block (zeroed in text-only mode and for cold items)."""
        mode = PromptMode(mode)
        text = (
            self._text_vecs[self.index[item_id]]
            if item_id in self.index
            else self.embedder.encode(title)
        )
        collab = np.zeros(self.dims.d_text)
        if mode is PromptMode.HYBRID:
            idx = self._lookup(item_id)
            emb = self.params["collab.item_emb"][idx]
            collab = self.params["adapter.proj"] @ emb
        return np.concatenate([text, collab])

    # ---- batch assembly ------------------------------------------------

    def assemble(
        self,
        examples: Sequence[TrainingExample],
        modes: Sequence[PromptMode] | None = None,
    ) -> Batch:
        B = len(examples)
        slate_size = len(examples[0].slate)
        m = max(len(ex.window.history) for ex in examples)
        hist_ids = np.full((B, m), self.n_items, dtype=np.int64)
        hist_mask = np.zeros((B, m))
        last_idx = np.zeros(B, dtype=np.int64)
        text_mean = np.zeros((B, self.dims.d_text))
        cand_ids = np.full((B, slate_size), self.n_items, dtype=np.int64)
        cand_text = np.zeros((B, slate_size, self.dims.d_text))
        hybrid = np.zeros(B)
        target = np.zeros(B, dtype=np.int64)
        example_ids = []
        for b, ex in enumerate(examples):
            if len(ex.slate) != slate_size:
                raise ValueError("all examples in a batch need equal slate sizes")
            hist = ex.window.history
            n = len(hist)
            vecs = np.zeros((n, self.dims.d_text))
            for q, it in enumerate(hist):
                idx = self._lookup(it.item_id)
                hist_ids[b, q] = idx
                vecs[q] = (
                    self._text_vecs[idx]
                    if idx < self.n_items
                    else self.embedder.encode(it.title)
                )
            hist_mask[b, :n] = 1.0
            last_idx[b] = n - 1
            text_mean[b] = vecs.mean(axis=0)
            for k, (item_id, title) in enumerate(ex.slate.items):
                idx = self._lookup(item_id)
                cand_ids[b, k] = idx
                cand_text[b, k] = (
                    self._text_vecs[idx]
                    if idx < self.n_items
                    else self.embedder.encode(title)
                )
            mode = modes[b] if modes is not None else ex.mode
            hybrid[b] = 1.0 if PromptMode(mode) is PromptMode.HYBRID else 0.0
            target[b] = ex.slate.target_index
            example_ids.append(ex.example_id)
        return Batch(
            hist_ids=hist_ids,
            hist_mask=hist_mask,
            last_idx=last_idx,
            text_mean=text_mean,
            cand_ids=cand_ids,
            cand_text=cand_text,
            hybrid=hybrid,
            target=target,
            example_ids=example_ids,
        )

    # ---- scoring and training ------------------------------------------

    def score_slate(self, example: TrainingExample) -> np.ndarray:
        batch = self.assemble([example])
        scores, _ = network.score_batch(self.params, self.dims, batch)
        return scores[0]

    def score_batch(
        self,
        examples: Sequence[TrainingExample],
        modes: Sequence[PromptMode] | None = None,
        head: str = "hybrid",
    ) -> np.ndarray:
        batch = self.assemble(examples, modes)
        scores, _ = network.score_batch(self.params, self.dims, batch, head=head)
        return scores

    def loss_and_grads(
        self,
        examples: Sequence[TrainingExample],
        modes: Sequence[PromptMode] | None = None,
        head: str = "hybrid",
        keys: Sequence[str] | None = None,
    ) -> tuple[float, dict[str, np.ndarray], np.ndarray]:
        """Pure loss/gradient computation; no parameter update."""
        batch = self.assemble(examples, modes)
        scores, cache = network.score_batch(self.params, self.dims, batch, head=head)
        loss, d_scores = network.softmax_xent(scores, batch.target)
        grads = network.zero_grads(
            self.params, keys if keys is not None else self.params.keys()
        )
        network.score_backward(
            self.params, self.dims, batch, cache, d_scores, grads, head=head
        )
        return loss, grads, scores

    def update(
        self,
        examples: Sequence[TrainingExample],
        lr: float,
        modes: Sequence[PromptMode] | None = None,
        head: str = "hybrid",
        keys: Sequence[str] | None = None,
        step: int | None = None,
    ) -> float:
        """One clipped momentum-SGD update; returns the pre-update loss."""
        if lr <= 0:
            raise ValueError(f"learning rate must be > 0, got {lr}")
        keys = tuple(keys) if keys is not None else self.trainable_keys()
        loss, grads, _ = self.loss_and_grads(examples, modes, head=head, keys=keys)
        if not np.isfinite(loss):
            raise TrainingDiverged(
                f"non-finite loss {loss} (lr={lr}, step={step}, "
                f"examples={[ex.example_id for ex in examples][:4]})"
            )
        norm = network.global_norm(grads)
        scale = self.clip_norm / norm if norm > self.clip_norm else 1.0
        for key in keys:
            g = grads[key] * scale
            buf = self._momentum_buf.get(key)
            if buf is None:
                buf = np.zeros_like(g)
                self._momentum_buf[key] = buf
            buf *= self.momentum
            buf += g
            self.params[key] -= lr * buf
        self.params["collab.item_emb"][-1] = 0.0
        return loss

    def train_step(self, example: TrainingExample, lr: float) -> float:
        return self.update([example], lr)

    def reset_optimizer(self) -> None:
        self._momentum_buf.clear()

    # ---- generation ------------------------------------------------------

    def generate(
        self,
        example: TrainingExample,
        channel: Callable[[str], str] | None = None,
    ) -> str:
        """Emit the display title of the argmax-scored candidate. Ties go to
        the lowest slate index; ``channel`` lets harnesses corrupt output."""
        scores = self.score_slate(example)
        best = int(np.argmax(scores))
        title = example.slate.display_titles[best]
        return channel(title) if channel is not None else title

    # ---- snapshots -------------------------------------------------------

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def restore(self, params: Mapping[str, np.ndarray]) -> None:
        for key, current in self.params.items():
            new = params[key]
            if new.shape != current.shape:
                raise ValueError(
                    f"shape mismatch for {key}: {new.shape} vs {current.shape}"
                )
            self.params[key] = np.array(new, dtype=np.float64)

    def vocab_digest(self) -> bytes:
        return vocab_digest(self.vocab)
