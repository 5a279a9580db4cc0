"""Numerical core: batched forward/backward passes for the compact
sequential recommender.

Parameters live in a flat name -> array dict so the optimizer, gradient
clipping, checkpoints, and finite-difference checks can treat them
uniformly. All math is float64; every backward pass here is written by hand
and verified against central finite differences in the test suite.

Item representation follows a two-block concatenation: a frozen text vector
(d_text) next to a projected collaborative vector (also d_text wide after
projection). A slate candidate scores as

    score_j = (A @ t_mean) . text_j  +  hybrid * (P @ h) . (P @ emb_j)

where t_mean is the mean history text vector, h the causal-attention summary
of the history items, A the trainable text-affinity head, and P the
trainable projector from collaborative to semantic space. Text-only examples
zero the hybrid term, which is exactly a zeroed collaborative block in the
concatenated representation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

NEG_INF = -1e30


@dataclass(frozen=True)
class ModelDims:
    d_text: int = 64
    d_collab: int = 32
    n_heads: int = 2
    n_blocks: int = 1
    max_history: int = 10
    hash_vocab: int = 4096

    def __post_init__(self) -> None:
        if self.d_collab % self.n_heads != 0:
            raise ValueError(
                f"d_collab={self.d_collab} not divisible by n_heads={self.n_heads}"
            )
        if min(self.d_text, self.d_collab, self.n_heads, self.n_blocks,
               self.max_history, self.hash_vocab) < 1:
            raise ValueError("all dimensions must be positive")


ADAPTER_KEYS = ("adapter.text", "adapter.proj")


def block_keys(i: int) -> tuple[str, ...]:
    return tuple(f"collab.block{i}.{w}" for w in ("wq", "wk", "wv", "wo"))


def param_keys(dims: ModelDims) -> tuple[str, ...]:
    keys = list(ADAPTER_KEYS) + ["collab.item_emb", "collab.pos_emb"]
    for i in range(dims.n_blocks):
        keys.extend(block_keys(i))
    return tuple(keys)


def collab_keys(dims: ModelDims) -> tuple[str, ...]:
    keys = ["collab.item_emb", "collab.pos_emb"]
    for i in range(dims.n_blocks):
        keys.extend(block_keys(i))
    return tuple(keys)


def param_shapes(dims: ModelDims, n_items: int) -> dict[str, tuple[int, ...]]:
    """Declared tensor shapes; item_emb carries one extra frozen cold row."""
    shapes: dict[str, tuple[int, ...]] = {
        "adapter.text": (dims.d_text, dims.d_text),
        "adapter.proj": (dims.d_text, dims.d_collab),
        "collab.item_emb": (n_items + 1, dims.d_collab),
        "collab.pos_emb": (dims.max_history, dims.d_collab),
    }
    for i in range(dims.n_blocks):
        for key in block_keys(i):
            shapes[key] = (dims.d_collab, dims.d_collab)
    return shapes


def init_params(dims: ModelDims, n_items: int, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    d = dims.d_collab
    params: dict[str, np.ndarray] = {
        "adapter.text": np.zeros((dims.d_text, dims.d_text)),
        "adapter.proj": rng.normal(0.0, 0.05, (dims.d_text, d)),
        "collab.item_emb": rng.normal(0.0, 0.1, (n_items + 1, d)),
        "collab.pos_emb": rng.normal(0.0, 0.05, (dims.max_history, d)),
    }
    params["collab.item_emb"][-1] = 0.0  # cold-item row stays zero
    for i in range(dims.n_blocks):
        for key in block_keys(i):
            params[key] = rng.normal(0.0, 1.0 / math.sqrt(d), (d, d))
    return params


def zero_grads(params: dict[str, np.ndarray], keys=None) -> dict[str, np.ndarray]:
    keys = params.keys() if keys is None else keys
    return {k: np.zeros_like(params[k]) for k in keys}


@dataclass
class Batch:
    """Padded example arrays; history ids use n_items for cold items."""

    hist_ids: np.ndarray    # (B, m) int64
    hist_mask: np.ndarray   # (B, m) float64, 1 for real positions
    last_idx: np.ndarray    # (B,) int64, index of last real position
    text_mean: np.ndarray   # (B, d_text) mean history text vector
    cand_ids: np.ndarray    # (B, K) int64
    cand_text: np.ndarray   # (B, K, d_text)
    hybrid: np.ndarray      # (B,) float64 in {0, 1}
    target: np.ndarray      # (B,) int64 slate index of the true target
    example_ids: list[str] = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.hist_ids.shape[0]


def _split_heads(x: np.ndarray, nh: int, dh: int) -> np.ndarray:
    B, m, _ = x.shape
    return x.reshape(B, m, nh, dh).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    B, nh, m, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, m, nh * dh)


def collab_forward(
    params: dict[str, np.ndarray],
    dims: ModelDims,
    hist_ids: np.ndarray,
    hist_mask: np.ndarray,
) -> tuple[np.ndarray, list[tuple]]:
    """Causal self-attention over the history items.

    Position q output depends only on positions <= q; padded positions are
    masked out of both keys and outputs.
    """
    E = params["collab.item_emb"]
    pos = params["collab.pos_emb"]
    B, m = hist_ids.shape
    nh = dims.n_heads
    dh = dims.d_collab // nh
    scale = 1.0 / math.sqrt(dh)
    mask3 = hist_mask[:, :, None]
    x = (E[hist_ids] + pos[None, :m, :]) * mask3
    causal = np.tril(np.ones((m, m)))
    allow = causal[None, :, :] * hist_mask[:, None, :]
    bias = np.where(allow > 0.0, 0.0, NEG_INF)[:, None, :, :]
    caches: list[tuple] = []
    for i in range(dims.n_blocks):
        wq, wk, wv, wo = (params[k] for k in block_keys(i))
        qh = _split_heads(x @ wq, nh, dh)
        kh = _split_heads(x @ wk, nh, dh)
        vh = _split_heads(x @ wv, nh, dh)
        s = qh @ kh.transpose(0, 1, 3, 2) * scale + bias
        s_max = s.max(axis=-1, keepdims=True)
        aw = np.exp(s - s_max)
        aw /= aw.sum(axis=-1, keepdims=True)
        oc = _merge_heads(aw @ vh)
        x_new = (x + oc @ wo) * mask3
        caches.append((x, qh, kh, vh, aw, oc))
        x = x_new
    return x, caches


def collab_backward(
    params: dict[str, np.ndarray],
    dims: ModelDims,
    hist_ids: np.ndarray,
    hist_mask: np.ndarray,
    caches: list[tuple],
    d_x: np.ndarray,
    grads: dict[str, np.ndarray],
) -> None:
    """Accumulate gradients for the attention stack into ``grads``."""
    B, m = hist_ids.shape
    nh = dims.n_heads
    dh = dims.d_collab // nh
    scale = 1.0 / math.sqrt(dh)
    mask3 = hist_mask[:, :, None]
    for i in reversed(range(dims.n_blocks)):
        x_in, qh, kh, vh, aw, oc = caches[i]
        wq, wk, wv, wo = (params[k] for k in block_keys(i))
        kq, kk, kv, ko = block_keys(i)
        d_masked = d_x * mask3
        d_attn = d_masked
        d_x_in = d_masked.copy()
        if ko in grads:
            grads[ko] += np.einsum("bmd,bme->de", oc, d_attn)
        d_oc = d_attn @ wo.T
        d_oh = _split_heads(d_oc, nh, dh)
        d_aw = d_oh @ vh.transpose(0, 1, 3, 2)
        d_vh = aw.transpose(0, 1, 3, 2) @ d_oh
        d_s = aw * (d_aw - (d_aw * aw).sum(axis=-1, keepdims=True))
        d_qh = d_s @ kh * scale
        d_kh = d_s.transpose(0, 1, 3, 2) @ qh * scale
        d_q = _merge_heads(d_qh)
        d_k = _merge_heads(d_kh)
        d_v = _merge_heads(d_vh)
        if kq in grads:
            grads[kq] += np.einsum("bmd,bme->de", x_in, d_q)
            grads[kk] += np.einsum("bmd,bme->de", x_in, d_k)
            grads[kv] += np.einsum("bmd,bme->de", x_in, d_v)
        d_x_in += d_q @ wq.T + d_k @ wk.T + d_v @ wv.T
        d_x = d_x_in
    d_x0 = d_x * mask3
    if "collab.pos_emb" in grads:
        grads["collab.pos_emb"][:m] += d_x0.sum(axis=0)
    if "collab.item_emb" in grads:
        np.add.at(grads["collab.item_emb"], hist_ids, d_x0)
        grads["collab.item_emb"][-1] = 0.0


@dataclass
class ScoreCache:
    x_final: np.ndarray
    attn_caches: list[tuple]
    h: np.ndarray
    st: np.ndarray | None
    sc: np.ndarray | None
    cand_emb: np.ndarray
    pc: np.ndarray | None


def score_batch(
    params: dict[str, np.ndarray],
    dims: ModelDims,
    batch: Batch,
    head: str = "hybrid",
) -> tuple[np.ndarray, ScoreCache]:
    """Slate scores for one batch.

    head="hybrid": the trained scorer (text term plus per-example hybrid
    collaborative term). head="collab": next-item scores from the attention
    summary alone, used to pre-train the collaborative encoder.
    """
    x_final, attn_caches = collab_forward(params, dims, batch.hist_ids, batch.hist_mask)
    rows = np.arange(batch.size)
    h = x_final[rows, batch.last_idx]
    E = params["collab.item_emb"]
    cand_emb = E[batch.cand_ids]
    if head == "collab":
        scores = np.einsum("bd,bkd->bk", h, cand_emb)
        cache = ScoreCache(x_final, attn_caches, h, None, None, cand_emb, None)
        return scores, cache
    if head != "hybrid":
        raise ValueError(f"unknown scoring head {head!r}")
    A = params["adapter.text"]
    P = params["adapter.proj"]
    st = batch.text_mean @ A.T
    sc = h @ P.T
    pc = cand_emb @ P.T
    scores = np.einsum("bd,bkd->bk", st, batch.cand_text)
    scores += batch.hybrid[:, None] * np.einsum("bd,bkd->bk", sc, pc)
    cache = ScoreCache(x_final, attn_caches, h, st, sc, cand_emb, pc)
    return scores, cache


def score_backward(
    params: dict[str, np.ndarray],
    dims: ModelDims,
    batch: Batch,
    cache: ScoreCache,
    d_scores: np.ndarray,
    grads: dict[str, np.ndarray],
    head: str = "hybrid",
) -> None:
    rows = np.arange(batch.size)
    if head == "collab":
        d_h = np.einsum("bk,bkd->bd", d_scores, cache.cand_emb)
        d_cand = d_scores[:, :, None] * cache.h[:, None, :]
    else:
        P = params["adapter.proj"]
        d_st = np.einsum("bk,bkd->bd", d_scores, batch.cand_text)
        if "adapter.text" in grads:
            grads["adapter.text"] += np.einsum("bd,be->de", d_st, batch.text_mean)
        gh = d_scores * batch.hybrid[:, None]
        d_sc = np.einsum("bk,bkd->bd", gh, cache.pc)
        d_pc = gh[:, :, None] * cache.sc[:, None, :]
        if "adapter.proj" in grads:
            grads["adapter.proj"] += np.einsum("bd,be->de", d_sc, cache.h)
            grads["adapter.proj"] += np.einsum("bkd,bke->de", d_pc, cache.cand_emb)
        d_h = d_sc @ P
        d_cand = d_pc @ P
    if "collab.item_emb" in grads:
        np.add.at(grads["collab.item_emb"], batch.cand_ids, d_cand)
    d_x = np.zeros_like(cache.x_final)
    d_x[rows, batch.last_idx] = d_h
    collab_backward(params, dims, batch.hist_ids, batch.hist_mask,
                    cache.attn_caches, d_x, grads)
    if "collab.item_emb" in grads:
        grads["collab.item_emb"][-1] = 0.0


def softmax_xent(scores: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the slate plus d(loss)/d(scores)."""
    z = scores - scores.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    rows = np.arange(scores.shape[0])
    loss = float(-logp[rows, target].mean())
    d_scores = np.exp(logp)
    d_scores[rows, target] -= 1.0
    d_scores /= scores.shape[0]
    return loss, d_scores


def global_norm(grads: dict[str, np.ndarray]) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    return math.sqrt(total)
