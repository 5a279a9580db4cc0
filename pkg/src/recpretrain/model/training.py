"""Training loops: one-epoch continual pre-training over the staged stream,
collaborative-encoder pre-training, and downstream fine-tuning with the
text-only-to-hybrid curriculum."""

from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ..evaluation import ranks_from_scores
from ..prompting import PromptMode, TrainingExample
from ..scheduler import CurriculumState, SchedulePlan, StagedExample, curriculum_p
from ..util import derive_seed
from . import network
from .checkpoint import Checkpoint
from .recommender import Recommender

logger = logging.getLogger(__name__)

DEFAULT_LR_GRID = (6e-4, 3e-4, 1e-4)


@dataclass(frozen=True)
class CptResult:
    checkpoint: Checkpoint
    losses: tuple[float, ...]
    steps: int


def cpt_run(
    model: Recommender,
    stream: Iterable[StagedExample],
    plan: SchedulePlan,
) -> CptResult:
    """Consume the staged stream once, applying each step's attached learning
    rate, and emit a checkpoint at the final step."""
    losses: list[float] = []
    step = None
    lr = None
    pending: list[TrainingExample] = []

    def flush() -> None:
        if pending:
            losses.append(model.update(pending, lr, step=step))
            pending.clear()

    for staged in stream:
        if staged.step != step:
            flush()
            step = staged.step
            lr = staged.lr
        elif staged.lr != lr:
            raise ValueError(f"inconsistent learning rate within step {step}")
        pending.append(staged.example)
    flush()
    final_step = step if step is not None else 0
    if final_step not in (0, plan.A):
        logger.warning("stream ended at step %d, plan expected %d", final_step, plan.A)
    return CptResult(
        checkpoint=Checkpoint.from_model(model, step=final_step),
        losses=tuple(losses),
        steps=final_step,
    )


def pretrain_collab(
    model: Recommender,
    examples: Sequence[TrainingExample],
    *,
    epochs: int = 3,
    lr: float = 0.05,
    batch_size: int = 8,
    seed: int = 0,
) -> list[float]:
    """Next-item pre-training of the collaborative encoder: slate
    cross-entropy from the attention summary alone."""
    keys = network.collab_keys(model.dims)
    losses: list[float] = []
    order = list(range(len(examples)))
    for epoch in range(epochs):
        rng = random.Random(derive_seed(seed, "collab-pretrain", epoch))
        rng.shuffle(order)
        for start in range(0, len(order), batch_size):
            chunk = [examples[i] for i in order[start : start + batch_size]]
            losses.append(model.update(chunk, lr, head="collab", keys=keys))
    return losses


def _valid_hr1(model: Recommender, valid_examples: Sequence[TrainingExample]) -> float:
    if not valid_examples:
        return 0.0
    hits = 0
    for start in range(0, len(valid_examples), 256):
        chunk = valid_examples[start : start + 256]
        scores = model.score_batch(chunk)
        targets = np.array([ex.slate.target_index for ex in chunk])
        hits += int((ranks_from_scores(scores, targets) == 1).sum())
    return hits / len(valid_examples)


@dataclass(frozen=True)
class SftResult:
    params: dict[str, np.ndarray]
    best_lr: float | None
    best_epoch: int
    valid_hr1: float
    search: tuple[dict, ...]


def sft_run(
    model: Recommender,
    train_examples: Sequence[TrainingExample],
    valid_examples: Sequence[TrainingExample],
    *,
    init: Checkpoint | None = None,
    lr_grid: Sequence[float] = DEFAULT_LR_GRID,
    epochs: int = 2,
    batch_size: int = 8,
    seed: int = 0,
    collab_pretrain_epochs: int = 3,
    collab_pretrain_lr: float = 0.05,
) -> SftResult:
    """Fine-tune on the target domain.

    The collaborative encoder is pre-trained first (then left frozen unless
    the model says otherwise). Each learning rate in the grid trains from the
    same starting point; per training step tau the batch mode is drawn hybrid
    with probability tau/T, T being the steps in one epoch. The returned
    parameters are the (lr, epoch) snapshot with the best validation HR@1.
    """
    from .checkpoint import restore_into

    if init is not None:
        restore_into(model, init)
    if epochs == 0:
        start = model.snapshot()
        return SftResult(
            params=start,
            best_lr=None,
            best_epoch=0,
            valid_hr1=_valid_hr1(model, valid_examples),
            search=(),
        )
    if not train_examples:
        raise ValueError("no training examples for fine-tuning")
    if collab_pretrain_epochs > 0:
        pretrain_collab(
            model,
            train_examples,
            epochs=collab_pretrain_epochs,
            lr=collab_pretrain_lr,
            batch_size=batch_size,
            seed=derive_seed(seed, "sft-collab"),
        )
    start = model.snapshot()
    n = len(train_examples)
    T = math.ceil(n / batch_size)
    best_params = start
    best_hr = -1.0
    best_lr: float | None = None
    best_epoch = 0
    search: list[dict] = []
    for lr in lr_grid:
        model.restore(start)
        model.reset_optimizer()
        for epoch in range(epochs):
            order = list(range(n))
            shuffle_rng = random.Random(derive_seed(seed, "sft-order", epoch))
            shuffle_rng.shuffle(order)
            mode_rng = random.Random(derive_seed(seed, "sft-mode", epoch))
            for tau in range(T):
                p = curriculum_p(CurriculumState(tau=tau, T=T))
                mode = (
                    PromptMode.HYBRID
                    if mode_rng.random() < p
                    else PromptMode.TEXT_ONLY
                )
                chunk = [
                    train_examples[i]
                    for i in order[tau * batch_size : (tau + 1) * batch_size]
                ]
                model.update(chunk, lr, modes=[mode] * len(chunk), step=tau)
            hr1 = _valid_hr1(model, valid_examples)
            search.append({"lr": lr, "epoch": epoch + 1, "valid_hr1": hr1})
            if hr1 > best_hr:
                best_hr = hr1
                best_params = model.snapshot()
                best_lr = lr
                best_epoch = epoch + 1
    model.restore(best_params)
    return SftResult(
        params=best_params,
        best_lr=best_lr,
        best_epoch=best_epoch,
        valid_hr1=best_hr,
        search=tuple(search),
    )
