"""Ranking metrics over 20-candidate slates: HR@k, NDCG@k, ValidRatio,
ordered generation by iterative candidate removal, sparsity subsets, and
multi-seed aggregation.

With a single relevant item per instance (leave-one-out), the ideal DCG is 1,
so NDCG@k reduces to 1/log2(rank+1) inside the cutoff. Score ties are broken
by the lower slate index everywhere, which keeps every quantity here
deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .prompting import CandidateSlate, TrainingExample

SUBSET_NAMES = ("sparse", "medium", "dense")
# History-length thresholds: sparse [3,5), medium [5,9), dense [9,10].
SPARSE_UPPER = 5
MEDIUM_UPPER = 9
HISTORY_MIN = 3
HISTORY_MAX = 10


@dataclass(frozen=True)
class EvalRecord:
    user_id: str
    rank: int
    valid: bool
    history_length: int


@dataclass(frozen=True)
class MetricReport:
    values: dict[str, float]
    subsets: dict[str, dict[str, float]]
    seeds: tuple[int, ...]
    n_records: int


def rank_target(scores: Sequence[float], target_index: int) -> int:
    """1-based rank of the target: strictly greater scores rank ahead, equal
    scores at a lower slate index rank ahead."""
    arr = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("scores must be finite")
    if not 0 <= target_index < arr.shape[0]:
        raise ValueError(f"target_index {target_index} outside slate")
    t = arr[target_index]
    greater = int(np.sum(arr > t))
    equal_before = int(np.sum((arr == t) & (np.arange(arr.shape[0]) < target_index)))
    return 1 + greater + equal_before


def ranks_from_scores(scores: np.ndarray, target_indices: np.ndarray) -> np.ndarray:
    """Vectorized rank_target over a (B, K) score matrix."""
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    B, K = scores.shape
    rows = np.arange(B)
    t = scores[rows, target_indices]
    greater = (scores > t[:, None]).sum(axis=1)
    idx = np.arange(K)[None, :]
    equal_before = (
        (scores == t[:, None]) & (idx < target_indices[:, None])
    ).sum(axis=1)
    return 1 + greater + equal_before


def hr_at_k(records: Sequence[EvalRecord], k: int) -> float:
    if not records:
        raise ValueError("no records")
    if k < 1:
        raise ValueError("k must be >= 1")
    return sum(1 for r in records if r.rank <= k) / len(records)


def ndcg_at_k(records: Sequence[EvalRecord], k: int) -> float:
    if not records:
        raise ValueError("no records")
    if k < 1:
        raise ValueError("k must be >= 1")
    total = sum(1.0 / np.log2(r.rank + 1) for r in records if r.rank <= k)
    return float(total / len(records))


def normalize_title(text: str) -> str:
    return " ".join(text.split())


def valid_ratio(
    generations: Sequence[str], slates: Sequence[CandidateSlate]
) -> float:
    """Fraction of emissions that exactly name a slate candidate after
    whitespace normalization (case-sensitive)."""
    if len(generations) != len(slates):
        raise ValueError(
            f"{len(generations)} generations vs {len(slates)} slates"
        )
    if not generations:
        raise ValueError("no generations")
    hits = 0
    for text, slate in zip(generations, slates):
        titles = {normalize_title(t) for t in slate.display_titles}
        if normalize_title(text) in titles:
            hits += 1
    return hits / len(generations)


def ordered_generation(model, example: TrainingExample, depth: int = 5) -> list[str]:
    """Emit the argmax candidate, remove it from the slate, and repeat
    ``depth`` times; returns item ids in emission order."""
    slate_size = len(example.slate)
    if depth > slate_size:
        raise ValueError(f"depth {depth} exceeds slate size {slate_size}")
    scores = np.asarray(model.score_slate(example), dtype=np.float64)
    alive = list(range(slate_size))
    emitted: list[str] = []
    for _ in range(depth):
        best_pos = max(range(len(alive)), key=lambda p: (scores[alive[p]], -alive[p]))
        slate_idx = alive.pop(best_pos)
        emitted.append(example.slate.items[slate_idx][0])
    return emitted


def subset_of(history_length: int) -> str:
    if not HISTORY_MIN <= history_length <= HISTORY_MAX:
        raise ValueError(
            f"history_length {history_length} outside "
            f"[{HISTORY_MIN}, {HISTORY_MAX}]"
        )
    if history_length < SPARSE_UPPER:
        return "sparse"
    if history_length < MEDIUM_UPPER:
        return "medium"
    return "dense"


def sparsity_subsets(
    records: Sequence[EvalRecord],
) -> dict[str, list[EvalRecord]]:
    """Exhaustive, disjoint three-way partition by history length."""
    subsets: dict[str, list[EvalRecord]] = {name: [] for name in SUBSET_NAMES}
    for r in records:
        subsets[subset_of(r.history_length)].append(r)
    return subsets


def build_report(
    records: Sequence[EvalRecord],
    *,
    generations: Sequence[str] | None = None,
    slates: Sequence[CandidateSlate] | None = None,
    ks: Sequence[int] = (1, 3, 5),
    seed: int | None = None,
) -> MetricReport:
    """Metrics overall and per sparsity subset; overall values are micro
    (record-weighted) averages."""
    if not records:
        raise ValueError("no records")
    values: dict[str, float] = {}
    for k in ks:
        values[f"hr@{k}"] = hr_at_k(records, k)
        values[f"ndcg@{k}"] = ndcg_at_k(records, k)
    if generations is not None:
        if slates is None:
            raise ValueError("slates required alongside generations")
        values["valid_ratio"] = valid_ratio(generations, slates)
    subsets: dict[str, dict[str, float]] = {}
    for name, rows in sparsity_subsets(records).items():
        if not rows:
            subsets[name] = {}
            continue
        subsets[name] = {}
        for k in ks:
            subsets[name][f"hr@{k}"] = hr_at_k(rows, k)
            subsets[name][f"ndcg@{k}"] = ndcg_at_k(rows, k)
        subsets[name]["n"] = float(len(rows))
    return MetricReport(
        values=values,
        subsets=subsets,
        seeds=(seed,) if seed is not None else (),
        n_records=len(records),
    )


def seed_average(reports: Sequence[MetricReport]) -> MetricReport:
    """Arithmetic mean per metric key across per-seed reports."""
    if not reports:
        raise ValueError("no reports")
    base_keys = set(reports[0].values)
    for rep in reports[1:]:
        if set(rep.values) != base_keys:
            diff = sorted(set(rep.values) ^ base_keys)
            raise ValueError(f"metric keys diverge: {diff}")
    values = {
        key: float(np.mean([rep.values[key] for rep in reports]))
        for key in sorted(base_keys)
    }
    subset_out: dict[str, dict[str, float]] = {}
    for name in SUBSET_NAMES:
        per_seed = [rep.subsets.get(name, {}) for rep in reports]
        keys = set().union(*(set(d) for d in per_seed)) if per_seed else set()
        subset_out[name] = {
            key: float(np.mean([d[key] for d in per_seed if key in d]))
            for key in sorted(keys)
        }
    seeds: tuple[int, ...] = tuple(s for rep in reports for s in rep.seeds)
    return MetricReport(
        values=values,
        subsets=subset_out,
        seeds=seeds,
        n_records=sum(rep.n_records for rep in reports),
    )


def evaluate_examples(
    model,
    examples: Sequence[TrainingExample],
    *,
    ks: Sequence[int] = (1, 3, 5),
    seed: int | None = None,
    channel: Callable[[str], str] | None = None,
    batch_size: int = 256,
) -> tuple[list[EvalRecord], list[str], MetricReport]:
    """Score every example, build EvalRecords and generations, and report."""
    if not examples:
        raise ValueError("no examples to evaluate")
    records: list[EvalRecord] = []
    generations: list[str] = []
    for start in range(0, len(examples), batch_size):
        chunk = examples[start : start + batch_size]
        scores = model.score_batch(chunk)
        targets = np.array([ex.slate.target_index for ex in chunk])
        ranks = ranks_from_scores(scores, targets)
        for row, ex in enumerate(chunk):
            emitted = ex.slate.display_titles[int(np.argmax(scores[row]))]
            if channel is not None:
                emitted = channel(emitted)
            titles = {normalize_title(t) for t in ex.slate.display_titles}
            records.append(
                EvalRecord(
                    user_id=ex.window.user_id,
                    rank=int(ranks[row]),
                    valid=normalize_title(emitted) in titles,
                    history_length=len(ex.window.history),
                )
            )
            generations.append(emitted)
    report = build_report(
        records,
        generations=generations,
        slates=[ex.slate for ex in examples],
        ks=ks,
        seed=seed,
    )
    return records, generations, report
