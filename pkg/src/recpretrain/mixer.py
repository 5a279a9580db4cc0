"""Domain-specific and all-domain mixed behavior sequences, plus windowing
into fixed-size training histories.

Mixed sequences merge one user's interactions from every domain into a single
chronological timeline. Windows cut from mixed sequences must satisfy two
construction rules:

  rule 1: the target item's domain already appears in the history;
  rule 2: the history spans at least two distinct domains.
"""

from __future__ import annotations

from dataclasses import dataclass

from .corpus import (
    BehaviorSequence,
    Interaction,
    InteractionLog,
    SequenceKind,
    build_user_sequences,
)

DEFAULT_MIN_HISTORY = 3
DEFAULT_MAX_HISTORY = 10


@dataclass(frozen=True)
class SequenceWindow:
    """A training instance: a short history and the next item as target."""

    user_id: str
    history: tuple[Interaction, ...]
    target: Interaction
    source_kind: SequenceKind
    source_domain: str | None = None
    index: int = 0

    @property
    def history_domains(self) -> frozenset[str]:
        return frozenset(it.domain for it in self.history)


@dataclass(frozen=True)
class GuidelineViolation:
    rule: int
    detail: str

    def __str__(self) -> str:
        return f"rule {self.rule}: {self.detail}"


def domain_sequences(log: InteractionLog, domain: str) -> list[BehaviorSequence]:
    """One domain-specific sequence per user active in ``domain``."""
    if domain not in log.domains:
        raise ValueError(
            f"unknown domain {domain!r}; available: {sorted(log.domains)}"
        )
    restricted = log.restrict_domain(domain)
    sequences = build_user_sequences(restricted)
    return [sequences[user_id] for user_id in sorted(sequences)]


def build_mixed_sequences(log: InteractionLog) -> list[BehaviorSequence]:
    """All-domain mixed sequences: full per-user timelines spanning >= 2
    domains, interleaved strictly chronologically. Single-domain users emit
    nothing (rule 2 can never hold for them)."""
    if len(log) == 0:
        return []
    sequences = build_user_sequences(log)
    return [
        seq
        for user_id, seq in sorted(sequences.items())
        if seq.kind is SequenceKind.MIXED
    ]


def validate_window(window: SequenceWindow) -> list[GuidelineViolation]:
    """Check both mixed-sequence construction rules for one window."""
    violations: list[GuidelineViolation] = []
    history_domains = window.history_domains
    if window.target.domain not in history_domains:
        violations.append(
            GuidelineViolation(
                1,
                f"target domain {window.target.domain!r} absent from history "
                f"domains {sorted(history_domains)}",
            )
        )
    if len(history_domains) < 2:
        violations.append(
            GuidelineViolation(
                2, f"history spans only {sorted(history_domains)}"
            )
        )
    return violations


@dataclass(frozen=True)
class WindowingResult:
    windows: tuple[SequenceWindow, ...]
    dropped: tuple[SequenceWindow, ...]

    @property
    def drop_count(self) -> int:
        return len(self.dropped)


def window_sequences(
    sequences: list[BehaviorSequence],
    max_history: int = DEFAULT_MAX_HISTORY,
    min_history: int = DEFAULT_MIN_HISTORY,
) -> WindowingResult:
    """Slide a next-item target over every valid prefix position.

    A sequence of length L yields L - min_history windows, each keeping the
    most recent ``max_history`` items at most. Windows from mixed sources
    that violate either construction rule are dropped but retained in the
    result for accounting.
    """
    if min_history < 1:
        raise ValueError("min_history must be >= 1")
    if max_history < min_history:
        raise ValueError("max_history must be >= min_history")
    windows: list[SequenceWindow] = []
    dropped: list[SequenceWindow] = []
    for seq in sequences:
        items = seq.items
        for q in range(min_history, len(items)):
            window = SequenceWindow(
                user_id=seq.user_id,
                history=items[max(0, q - max_history) : q],
                target=items[q],
                source_kind=seq.kind,
                source_domain=seq.domain,
                index=len(windows) + len(dropped),
            )
            if seq.kind is SequenceKind.MIXED and validate_window(window):
                dropped.append(window)
            else:
                windows.append(window)
    return WindowingResult(windows=tuple(windows), dropped=tuple(dropped))
