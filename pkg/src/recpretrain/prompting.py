"""Prompt materialization: 20-item candidate slates, the unified textual
template, domain-word genericization, and text-only/hybrid example bundles."""

from __future__ import annotations

import random
import re
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

from .corpus import Interaction
from .mixer import SequenceWindow

SEPARATOR = ", "
DEFAULT_QUOTE = '"'
DEFAULT_NEGATIVES = 19

# Scaffold of the unified prompt; {history} and {candidates} are title lists.
UNIFIED_TEMPLATE = (
    "This user has bought {history} in the previous. "
    "Please predict the next item this user will buy. "
    "The item title candidates are {candidates}. "
    "Choose only one item from the candidates. The answer is "
)

_CANDIDATES_ANCHOR = "The item title candidates are "
_CANDIDATES_TAIL = ". Choose only one item from the candidates. The answer is "


class PromptMode(str, Enum):
    TEXT_ONLY = "text_only"
    HYBRID = "hybrid"


class SlateError(ValueError):
    """Candidate slate cannot be built as requested."""


class CollabUnavailableError(RuntimeError):
    """Hybrid materialization requested without a collaborative encoder."""


@dataclass(frozen=True)
class CandidateSlate:
    """Target plus sampled negatives in seeded-shuffle order.

    ``display_titles`` disambiguates duplicate titles with a stable numeric
    suffix so prompts and generation matching stay unambiguous.
    """

    items: tuple[tuple[str, str], ...]  # (item_id, title)
    target_index: int
    display_titles: tuple[str, ...]
    disambiguated: int

    def __len__(self) -> int:
        return len(self.items)

    @property
    def target_item_id(self) -> str:
        return self.items[self.target_index][0]

    @classmethod
    def from_items(
        cls, items: Sequence[tuple[str, str]], target_index: int
    ) -> "CandidateSlate":
        titles = [title for _, title in items]
        display, n_disambiguated = _disambiguate_titles(titles)
        return cls(
            items=tuple(items),
            target_index=target_index,
            display_titles=tuple(display),
            disambiguated=n_disambiguated,
        )


def _disambiguate_titles(titles: Sequence[str]) -> tuple[list[str], int]:
    seen: dict[str, int] = {}
    out: list[str] = []
    changed = 0
    for title in titles:
        count = seen.get(title, 0) + 1
        seen[title] = count
        if count == 1:
            out.append(title)
        else:
            out.append(f"{title} ({count})")
            changed += 1
    return out, changed


def sample_candidates(
    target: Interaction,
    user_pool: set[str],
    catalog: Mapping[str, Mapping[str, str]],
    n_negatives: int = DEFAULT_NEGATIVES,
    seed: int = 0,
) -> CandidateSlate:
    """Sample ``n_negatives`` never-interacted items from the target's domain
    and shuffle them together with the target."""
    if target.domain not in catalog:
        raise SlateError(
            f"no catalog for domain {target.domain!r}; "
            f"available: {sorted(catalog)}"
        )
    domain_items = catalog[target.domain]
    eligible = sorted(
        item_id
        for item_id in domain_items
        if item_id not in user_pool and item_id != target.item_id
    )
    if len(eligible) < n_negatives:
        raise SlateError(
            f"domain {target.domain!r} has {len(eligible)} eligible negatives, "
            f"need {n_negatives} (short by {n_negatives - len(eligible)})"
        )
    rng = random.Random(seed)
    negatives = rng.sample(eligible, n_negatives)
    entries = [(item_id, domain_items[item_id]) for item_id in negatives]
    entries.append((target.item_id, target.title))
    rng.shuffle(entries)
    target_index = next(
        i for i, (item_id, _) in enumerate(entries) if item_id == target.item_id
    )
    return CandidateSlate.from_items(entries, target_index)


def quote_title(title: str, quote: str = DEFAULT_QUOTE) -> str:
    """Wrap titles containing the list separator or the quote character so
    candidate boundaries stay parseable."""
    if SEPARATOR in title or quote in title:
        return quote + title.replace(quote, quote + quote) + quote
    return title


def split_titles(text: str, quote: str = DEFAULT_QUOTE) -> list[str]:
    """Inverse of joining quoted titles with the separator."""
    out: list[str] = []
    i = 0
    n = len(text)
    while i <= n:
        if i < n and text[i] == quote:
            i += 1
            buf: list[str] = []
            while i < n:
                if text[i] == quote:
                    if i + 1 < n and text[i + 1] == quote:
                        buf.append(quote)
                        i += 2
                        continue
                    i += 1
                    break
                buf.append(text[i])
                i += 1
            out.append("".join(buf))
            if text[i : i + len(SEPARATOR)] == SEPARATOR:
                i += len(SEPARATOR)
            elif i >= n:
                break
        else:
            j = text.find(SEPARATOR, i)
            if j == -1:
                out.append(text[i:])
                break
            out.append(text[i:j])
            i = j + len(SEPARATOR)
    return out


def render_prompt(
    window: SequenceWindow,
    slate: CandidateSlate,
    template: str = UNIFIED_TEMPLATE,
    quote: str = DEFAULT_QUOTE,
) -> str:
    """Render the unified prompt; byte-identical output for identical inputs.

    History titles appear in chronological order and candidates in slate
    order. Only the scaffold is templated; titles are interpolated verbatim
    (modulo quoting), so genericization never touches them.
    """
    for it in window.history:
        if not it.title.strip():
            raise ValueError(f"history item {it.item_id!r} has an empty title")
    history = SEPARATOR.join(quote_title(it.title, quote) for it in window.history)
    candidates = SEPARATOR.join(
        quote_title(title, quote) for title in slate.display_titles
    )
    return template.format(history=history, candidates=candidates)


def parse_candidate_titles(prompt_text: str, quote: str = DEFAULT_QUOTE) -> list[str]:
    """Recover the candidate titles from a rendered prompt.

    Relies on the template anchors; titles that themselves contain a full
    template sentence are not supported.
    """
    start = prompt_text.index(_CANDIDATES_ANCHOR) + len(_CANDIDATES_ANCHOR)
    end = prompt_text.rindex(_CANDIDATES_TAIL)
    return split_titles(prompt_text[start:end], quote)


def genericize_domain(
    text: str, domain_lexicon: Mapping[str, Sequence[str]]
) -> str:
    """Replace whole-word domain surface words with the word ``item``.

    Intended for template scaffolding only; callers must never pass item
    titles through this. Matching is case-insensitive; longer surface words
    are replaced first so overlapping entries behave predictably.
    """
    words = sorted(
        {w for surface in domain_lexicon.values() for w in surface if w},
        key=len,
        reverse=True,
    )
    for word in words:
        text = re.sub(rf"\b{re.escape(word)}\b", "item", text, flags=re.IGNORECASE)
    return text


@dataclass(frozen=True)
class TrainingExample:
    """A rendered prompt bundled with its window, slate, and mode."""

    window: SequenceWindow
    slate: CandidateSlate
    mode: PromptMode
    prompt_text: str
    hybrid_positions: tuple[int, ...]

    @property
    def example_id(self) -> str:
        t = self.window.target
        return f"{self.window.user_id}|{t.item_id}|{t.timestamp}|{len(self.window.history)}"


def materialize(
    window: SequenceWindow,
    slate: CandidateSlate,
    mode: PromptMode,
    *,
    collab_available: bool = True,
    template: str = UNIFIED_TEMPLATE,
    quote: str = DEFAULT_QUOTE,
) -> TrainingExample:
    """Bundle a window and slate into a training example.

    Hybrid examples mark every history position for collaborative-embedding
    concatenation; the prompt text itself is identical across modes.
    """
    mode = PromptMode(mode)
    if mode is PromptMode.HYBRID and not collab_available:
        raise CollabUnavailableError(
            "hybrid mode needs collaborative embeddings; train the "
            "collaborative encoder first or materialize as text_only"
        )
    positions = tuple(range(len(window.history))) if mode is PromptMode.HYBRID else ()
    return TrainingExample(
        window=window,
        slate=slate,
        mode=mode,
        prompt_text=render_prompt(window, slate, template=template, quote=quote),
        hybrid_positions=positions,
    )
