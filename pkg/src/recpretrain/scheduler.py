"""Warmup-Stable-Annealing learning-rate schedule with phase-routed data.

The schedule is piecewise over optimizer steps s in [0, A]:

    s <= W      : eta_l + (s / W) * (eta_h - eta_l)         (linear warm-up)
    W < s <= S  : eta_h                                      (stable plateau)
    S < s <= A  : eta_l + f(s) * (eta_h - eta_l)             (cosine anneal)

with f(s) = (1 + cos(pi * (s - S) / (A - S))) / 2, so the rate starts at
eta_l, reaches eta_h at W, holds through S, and decays back to exactly eta_l
at A. Warm-up and stable steps consume domain-specific examples only; the
annealing steps consume the all-domain mixed examples.
"""

from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Sequence, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")

DEFAULT_ETA_L = 5e-6
DEFAULT_ETA_H = 5e-4
DEFAULT_WARMUP_FRAC = 0.05


class Phase(str, Enum):
    WARMUP = "warmup"
    STABLE = "stable"
    ANNEALING = "annealing"


class ScheduleExhausted(ValueError):
    """Raised when a step past the end of the plan is requested."""


@dataclass(frozen=True)
class SchedulePlan:
    """Phase end steps (W, S, A) and the learning-rate bounds."""

    W: int
    S: int
    A: int
    eta_l: float = DEFAULT_ETA_L
    eta_h: float = DEFAULT_ETA_H

    def __post_init__(self) -> None:
        if not (0 < self.W <= self.S <= self.A):
            raise ValueError(f"need 0 < W <= S <= A, got W={self.W} S={self.S} A={self.A}")
        if not (0 < self.eta_l <= self.eta_h):
            raise ValueError(f"need 0 < eta_l <= eta_h, got {self.eta_l}, {self.eta_h}")

    def phase_of(self, s: int) -> Phase:
        if s > self.A or s < 0:
            raise ScheduleExhausted(f"step {s} outside [0, {self.A}]")
        if s <= self.W:
            return Phase.WARMUP
        if s <= self.S:
            return Phase.STABLE
        return Phase.ANNEALING


def cosine_anneal_f(s: float, S: int, A: int) -> float:
    """Decay factor in [0, 1] over the annealing span (S, A]."""
    if not S < A:
        raise ValueError(f"need S < A, got S={S} A={A}")
    if not (S < s <= A):
        raise ValueError(f"step {s} outside annealing range ({S}, {A}]")
    return 0.5 * (1.0 + math.cos(math.pi * (s - S) / (A - S)))


def wsa_lr(s: float, plan: SchedulePlan) -> float:
    """Learning rate at step s under the three-phase schedule."""
    if s < 0:
        raise ValueError(f"step must be >= 0, got {s}")
    if s > plan.A:
        raise ScheduleExhausted(f"schedule exhausted: step {s} > A={plan.A}")
    span = plan.eta_h - plan.eta_l
    if s <= plan.W:
        return plan.eta_l + (s / plan.W) * span
    if s <= plan.S:
        return plan.eta_h
    return plan.eta_l + cosine_anneal_f(s, plan.S, plan.A) * span


def constant_lr(s: float, plan: SchedulePlan) -> float:
    """Ablation baseline: hold eta_h for the entire run."""
    if s < 0 or s > plan.A:
        raise ScheduleExhausted(f"step {s} outside [0, {plan.A}]")
    return plan.eta_h


def cosine_lr(s: float, plan: SchedulePlan) -> float:
    """Ablation baseline: warm up to eta_h, then cosine-decay over (W, A]."""
    if s < 0 or s > plan.A:
        raise ScheduleExhausted(f"step {s} outside [0, {plan.A}]")
    span = plan.eta_h - plan.eta_l
    if s <= plan.W:
        return plan.eta_l + (s / plan.W) * span
    return plan.eta_l + cosine_anneal_f(s, plan.W, plan.A) * span


LR_SCHEDULES = {"wsa": wsa_lr, "constant": constant_lr, "cosine": cosine_lr}


@dataclass(frozen=True)
class CurriculumState:
    """Step position within one epoch, driving the text-only/hybrid mix."""

    tau: int
    T: int

    def __post_init__(self) -> None:
        if self.T <= 0:
            raise ValueError(f"T must be > 0, got {self.T}")
        if not 0 <= self.tau <= self.T:
            raise ValueError(f"need 0 <= tau <= T, got tau={self.tau} T={self.T}")


def curriculum_p(state: CurriculumState) -> float:
    """Probability of presenting a hybrid example at step tau: tau / T."""
    return state.tau / state.T


def build_plan(
    n_domain_specific: int,
    n_mixed: int,
    eta_l: float = DEFAULT_ETA_L,
    eta_h: float = DEFAULT_ETA_H,
    warmup_frac: float = DEFAULT_WARMUP_FRAC,
    batch_size: int = 1,
) -> SchedulePlan:
    """Single-pass plan: warm-up covers ``warmup_frac`` of the
    domain-specific examples, the plateau covers the rest of them, and the
    annealing span covers the mixed examples."""
    if n_domain_specific <= 0:
        raise ValueError("n_domain_specific must be > 0")
    if n_mixed < 0:
        raise ValueError("n_mixed must be >= 0")
    if not 0 < warmup_frac < 1:
        raise ValueError(f"warmup_frac must be in (0, 1), got {warmup_frac}")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    W = math.ceil(warmup_frac * n_domain_specific / batch_size)
    S = math.ceil(n_domain_specific / batch_size)
    A = S + math.ceil(n_mixed / batch_size)
    if n_mixed == 0:
        logger.warning("no mixed examples: annealing phase is empty (A = S)")
    return SchedulePlan(W=W, S=S, A=A, eta_l=eta_l, eta_h=eta_h)


@dataclass(frozen=True)
class StagedExample:
    example: object
    step: int
    lr: float
    phase: Phase


def stage_stream(
    domain_examples: Sequence[T],
    mixed_examples: Sequence[T],
    plan: SchedulePlan,
    seed: int,
    batch_size: int = 1,
    lr_schedule: str = "wsa",
) -> Iterator[StagedExample]:
    """Route shuffled domain-specific examples through steps 1..S and mixed
    examples through steps S+1..A, attaching the per-step learning rate."""
    n_ds = len(domain_examples)
    n_mixed = len(mixed_examples)
    if math.ceil(n_ds / batch_size) != plan.S:
        raise ValueError(
            f"domain-specific pool exhausts at step {math.ceil(n_ds / batch_size)}, "
            f"plan expects S={plan.S} (warmup+stable phases)"
        )
    if plan.S + math.ceil(n_mixed / batch_size) != plan.A:
        raise ValueError(
            f"mixed pool exhausts at step {plan.S + math.ceil(n_mixed / batch_size)}, "
            f"plan expects A={plan.A} (annealing phase)"
        )
    lr_at = LR_SCHEDULES[lr_schedule]
    rng = random.Random(seed)
    ds_order = list(range(n_ds))
    rng.shuffle(ds_order)
    mixed_order = list(range(n_mixed))
    rng.shuffle(mixed_order)
    for i, idx in enumerate(ds_order):
        step = i // batch_size + 1
        yield StagedExample(
            example=domain_examples[idx],
            step=step,
            lr=lr_at(step, plan),
            phase=plan.phase_of(step),
        )
    for i, idx in enumerate(mixed_order):
        step = plan.S + i // batch_size + 1
        yield StagedExample(
            example=mixed_examples[idx],
            step=step,
            lr=lr_at(step, plan),
            phase=plan.phase_of(step),
        )
