"""Multi-domain interaction corpus: ingestion, k-core filtering, chronological
user sequences, leave-one-out splits, and dataset statistics."""

from __future__ import annotations

import logging
from collections import Counter, defaultdict
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from typing import Iterable, Mapping

logger = logging.getLogger(__name__)

FIELD_NAMES = ("user_id", "item_id", "domain", "timestamp", "title")


@dataclass(frozen=True)
class Interaction:
    """One (user, item, domain, timestamp) event plus the item's title text."""

    user_id: str
    item_id: str
    domain: str
    timestamp: int
    title: str


def event_order(it: Interaction) -> tuple[int, str, str]:
    # Chronological with (domain, item_id) tie-break: deterministic across runs.
    return (it.timestamp, it.domain, it.item_id)


@dataclass(frozen=True)
class InteractionLog:
    """Immutable collection of interactions in a canonical order."""

    interactions: tuple[Interaction, ...]
    domains: frozenset[str]

    @classmethod
    def from_interactions(cls, interactions: Iterable[Interaction]) -> "InteractionLog":
        rows = tuple(
            sorted(interactions, key=lambda r: (r.user_id,) + event_order(r))
        )
        return cls(interactions=rows, domains=frozenset(r.domain for r in rows))

    def __len__(self) -> int:
        return len(self.interactions)

    def restrict_domain(self, domain: str) -> "InteractionLog":
        return InteractionLog.from_interactions(
            r for r in self.interactions if r.domain == domain
        )

    @classmethod
    def merge(cls, logs: Iterable["InteractionLog"]) -> "InteractionLog":
        rows: list[Interaction] = []
        for log in logs:
            rows.extend(log.interactions)
        return cls.from_interactions(rows)

    def user_pools(self) -> dict[str, set[str]]:
        """Per user, the set of all item ids they ever interacted with."""
        pools: dict[str, set[str]] = defaultdict(set)
        for r in self.interactions:
            pools[r.user_id].add(r.item_id)
        return dict(pools)

    def catalog(self) -> dict[str, dict[str, str]]:
        """Per domain, item id -> title (first title in canonical order wins)."""
        cat: dict[str, dict[str, str]] = defaultdict(dict)
        for r in self.interactions:
            cat[r.domain].setdefault(r.item_id, r.title)
        return dict(cat)


@dataclass(frozen=True)
class RowError:
    line: int
    message: str


@dataclass(frozen=True)
class IngestResult:
    log: InteractionLog
    errors: tuple[RowError, ...]


def format_row(it: Interaction, delimiter: str = "\t") -> str:
    return delimiter.join(
        (it.user_id, it.item_id, it.domain, str(it.timestamp), it.title)
    )


def ingest(lines: Iterable[str], delimiter: str = "\t") -> IngestResult:
    """Parse delimited rows (user_id, item_id, domain, timestamp, title).

    Malformed rows are reported with their line number instead of aborting.
    Exact (user, item, timestamp) duplicates collapse to one event; among
    duplicates the lexicographically smallest (domain, title) is kept so the
    result does not depend on input row order.
    """
    errors: list[RowError] = []
    dedup: dict[tuple[str, str, int], tuple[str, str]] = {}
    for line_no, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n").rstrip("\r")
        if not line.strip():
            continue
        parts = line.split(delimiter, 4)
        if len(parts) != 5:
            errors.append(
                RowError(line_no, f"expected 5 fields, got {len(parts)}")
            )
            continue
        user_id, item_id, domain, ts_text, title = (p.strip() for p in parts)
        if not user_id or not item_id or not domain:
            errors.append(RowError(line_no, "empty user_id/item_id/domain field"))
            continue
        try:
            timestamp = int(ts_text)
        except ValueError:
            errors.append(RowError(line_no, f"invalid timestamp {ts_text!r}"))
            continue
        if timestamp < 0:
            errors.append(RowError(line_no, f"negative timestamp {timestamp}"))
            continue
        if not title:
            errors.append(RowError(line_no, "empty title"))
            continue
        key = (user_id, item_id, timestamp)
        value = (domain, title)
        if key not in dedup or value < dedup[key]:
            dedup[key] = value
    rows = [
        Interaction(u, i, d, ts, t) for (u, i, ts), (d, t) in dedup.items()
    ]
    return IngestResult(InteractionLog.from_interactions(rows), tuple(errors))


def kcore_filter(log: InteractionLog, k: int) -> InteractionLog:
    """Iteratively remove users/items with fewer than k interactions.

    Runs to the fixpoint where every remaining user and item has at least k
    events; the fixpoint is unique, so the result is iteration-order free.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    rows = list(log.interactions)
    while True:
        user_counts = Counter(r.user_id for r in rows)
        item_counts = Counter(r.item_id for r in rows)
        kept = [
            r
            for r in rows
            if user_counts[r.user_id] >= k and item_counts[r.item_id] >= k
        ]
        if len(kept) == len(rows):
            break
        rows = kept
    return InteractionLog.from_interactions(rows)


class SequenceKind(str, Enum):
    DOMAIN_SPECIFIC = "domain_specific"
    MIXED = "mixed"


@dataclass(frozen=True)
class BehaviorSequence:
    """A user's chronologically ordered interactions.

    Domain-specific sequences contain exactly one domain; mixed sequences
    interleave at least two domains under the same chronological order.
    """

    user_id: str
    kind: SequenceKind
    items: tuple[Interaction, ...]
    domain: str | None = None

    def __post_init__(self) -> None:
        if not self.items:
            raise ValueError("sequence must be non-empty")
        n_domains = len({it.domain for it in self.items})
        if self.kind is SequenceKind.DOMAIN_SPECIFIC:
            if n_domains != 1 or self.domain != self.items[0].domain:
                raise ValueError("domain-specific sequence must span one domain")
        else:
            if n_domains < 2:
                raise ValueError("mixed sequence must span at least two domains")
        keys = [event_order(it) for it in self.items]
        if keys != sorted(keys):
            raise ValueError("sequence items must be chronologically ordered")

    def __len__(self) -> int:
        return len(self.items)


def sequence_from_items(user_id: str, items: tuple[Interaction, ...]) -> BehaviorSequence:
    """Build a sequence, deriving the kind from the domains present."""
    domains = {it.domain for it in items}
    if len(domains) == 1:
        return BehaviorSequence(
            user_id, SequenceKind.DOMAIN_SPECIFIC, items, domain=items[0].domain
        )
    return BehaviorSequence(user_id, SequenceKind.MIXED, items)


def build_user_sequences(log: InteractionLog) -> dict[str, BehaviorSequence]:
    """One chronologically sorted sequence per user, with deterministic
    (timestamp, domain, item_id) tie-breaking."""
    if len(log) == 0:
        raise ValueError("log is empty")
    per_user: dict[str, list[Interaction]] = defaultdict(list)
    for r in log.interactions:
        per_user[r.user_id].append(r)
    out: dict[str, BehaviorSequence] = {}
    for user_id in sorted(per_user):
        items = tuple(sorted(per_user[user_id], key=event_order))
        out[user_id] = sequence_from_items(user_id, items)
    return out


@dataclass(frozen=True)
class HoldoutInstance:
    """An evaluation target plus the full history preceding it."""

    user_id: str
    history: tuple[Interaction, ...]
    target: Interaction


@dataclass(frozen=True)
class SplitDataset:
    train: dict[str, BehaviorSequence]
    valid: dict[str, HoldoutInstance]
    test: dict[str, HoldoutInstance]
    excluded: int


def leave_one_out_split(sequences: Mapping[str, BehaviorSequence]) -> SplitDataset:
    """Last item per user -> test, penultimate -> validation, rest -> train.

    Sequences shorter than 3 are excluded (train would be empty) and counted.
    """
    train: dict[str, BehaviorSequence] = {}
    valid: dict[str, HoldoutInstance] = {}
    test: dict[str, HoldoutInstance] = {}
    excluded = 0
    for user_id in sorted(sequences):
        seq = sequences[user_id]
        if len(seq) < 3:
            excluded += 1
            continue
        items = seq.items
        train[user_id] = sequence_from_items(user_id, items[:-2])
        valid[user_id] = HoldoutInstance(user_id, items[:-2], items[-2])
        test[user_id] = HoldoutInstance(user_id, items[:-1], items[-1])
    if excluded:
        logger.warning("leave-one-out: excluded %d sequences shorter than 3", excluded)
    return SplitDataset(train=train, valid=valid, test=test, excluded=excluded)


@dataclass(frozen=True)
class DatasetStats:
    users: int
    items: int
    interactions: int
    sparsity: float | None

    def sparsity_percent(self) -> str:
        """Sparsity as a percentage rounded half-up to 2 decimals, or n/a."""
        if self.sparsity is None:
            return "n/a"
        cells = self.users * self.items
        exact = Decimal(100) * Decimal(cells - self.interactions) / Decimal(cells)
        return f"{exact.quantize(Decimal('0.01'), rounding=ROUND_HALF_UP)}%"


def dataset_stats(log: InteractionLog) -> DatasetStats:
    users = len({r.user_id for r in log.interactions})
    items = len({r.item_id for r in log.interactions})
    n = len(log)
    if users == 0 or items == 0:
        sparsity = None
    else:
        sparsity = 1.0 - n / (users * items)
    return DatasetStats(users=users, items=items, interactions=n, sparsity=sparsity)
