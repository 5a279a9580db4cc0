"""Bundled synthetic multi-domain corpus with planted cross-domain structure.

Every item belongs to a latent interest group whose marker word appears in
its title, and users pick items from their own group most of the time. A
user's choices in the held-out target domain therefore correlate with their
history in the other domains, and the shared title vocabulary lets a
text-space model transfer that structure to a domain it never trained on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Interaction, format_row
from .util import atomic_write_text, derive_seed

GROUP_WORDS = (
    "crimson", "amber", "cobalt", "jade", "onyx", "pearl",
    "umber", "sable", "ivory", "teal",
)
DOMAIN_NOUNS = ("widget", "gadget", "trinket", "gizmo", "doodad")


@dataclass(frozen=True)
class SyntheticSpec:
    users: int = 2000
    items_per_domain: int = 500
    domains: tuple[str, ...] = ("alpha", "beta", "gamma")
    target_domain: str = "gamma"
    groups: int = 6
    group_affinity: float = 0.8
    activity: dict[str, float] = field(
        default_factory=lambda: {"alpha": 0.85, "beta": 0.85, "gamma": 0.55}
    )
    events_lo: int = 5
    events_hi: int = 10
    seed: int = 8675309

    def __post_init__(self) -> None:
        if self.groups > len(GROUP_WORDS):
            raise ValueError(f"at most {len(GROUP_WORDS)} groups supported")
        if self.target_domain not in self.domains:
            raise ValueError("target_domain must be one of domains")


def item_title(domain_index: int, group: int, serial: int) -> str:
    noun = DOMAIN_NOUNS[domain_index % len(DOMAIN_NOUNS)]
    return f"{GROUP_WORDS[group]} {noun}{serial:03d}"


def generate(spec: SyntheticSpec = SyntheticSpec()) -> dict[str, list[Interaction]]:
    """Deterministic event logs per domain for the given spec."""
    rng = np.random.default_rng(derive_seed(spec.seed, "synthetic-corpus"))
    items: dict[str, list[tuple[str, str, int]]] = {}
    by_group: dict[str, dict[int, list[int]]] = {}
    for d_idx, domain in enumerate(spec.domains):
        rows = []
        groups: dict[int, list[int]] = {g: [] for g in range(spec.groups)}
        for serial in range(spec.items_per_domain):
            group = serial % spec.groups
            item_id = f"{domain}-{serial:04d}"
            rows.append((item_id, item_title(d_idx, group, serial), group))
            groups[group].append(serial)
        items[domain] = rows
        by_group[domain] = groups

    logs: dict[str, list[Interaction]] = {d: [] for d in spec.domains}
    for u in range(spec.users):
        user_id = f"u{u:05d}"
        group = int(rng.integers(0, spec.groups))
        for domain in spec.domains:
            if rng.random() >= spec.activity.get(domain, 1.0):
                continue
            n_events = int(rng.integers(spec.events_lo, spec.events_hi + 1))
            for _ in range(n_events):
                if rng.random() < spec.group_affinity:
                    serial = int(
                        by_group[domain][group][
                            int(rng.integers(0, len(by_group[domain][group])))
                        ]
                    )
                else:
                    serial = int(rng.integers(0, spec.items_per_domain))
                item_id, title, _ = items[domain][serial]
                timestamp = int(rng.integers(1, 100_000_000))
                logs[domain].append(
                    Interaction(user_id, item_id, domain, timestamp, title)
                )
    return logs


def write_corpus(
    out_dir: Path | str, spec: SyntheticSpec = SyntheticSpec()
) -> dict[str, Path]:
    """Write one delimited log per domain; returns domain -> path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    logs = generate(spec)
    paths: dict[str, Path] = {}
    for domain in spec.domains:
        path = out_dir / f"{domain}.tsv"
        lines = [format_row(it) for it in logs[domain]]
        atomic_write_text(path, "\n".join(lines) + "\n")
        paths[domain] = path
    return paths


def write_run_config(
    config_path: Path | str,
    data_paths: dict[str, Path],
    spec: SyntheticSpec = SyntheticSpec(),
    *,
    out_dir: str = "runs/demo",
    seeds: tuple[int, ...] = (101, 211, 307, 401),
    sft_epochs: int = 2,
    eta_l: float = 5e-6,
    eta_h: float = 5e-4,
) -> Path:
    """Write a ready-to-run INI config next to the generated data."""
    config_path = Path(config_path)
    cpt_domains = [d for d in spec.domains if d != spec.target_domain]
    base = config_path.parent

    def rel(p: Path) -> str:
        try:
            return str(p.relative_to(base))
        except ValueError:
            return str(p)

    lines = ["[corpus]"]
    lines.append("domains = " + ", ".join(cpt_domains))
    for d in cpt_domains:
        lines.append(f"path.{d} = {rel(data_paths[d])}")
    lines.append(f"target_domain = {spec.target_domain}")
    lines.append(f"target_path = {rel(data_paths[spec.target_domain])}")
    lines.append("kcore = 3")
    lines.append("cpt_kcore_scope = union")
    lines.append("delimiter = tab")
    lines.append("")
    lines.append("[schedule]")
    lines.append(f"eta_l = {eta_l}")
    lines.append(f"eta_h = {eta_h}")
    lines.append("warmup_frac = 0.05")
    lines.append("batch_size = 8")
    lines.append("kind = wsa")
    lines.append("")
    lines.append("[model]")
    lines.append("d_text = 64")
    lines.append("d_collab = 32")
    lines.append("n_heads = 2")
    lines.append("n_blocks = 1")
    lines.append("max_history = 10")
    lines.append("min_history = 3")
    lines.append("hash_vocab = 4096")
    lines.append("momentum = 0.9")
    lines.append("clip_norm = 1.0")
    lines.append("")
    lines.append("[sft]")
    lines.append(f"epochs = {sft_epochs}")
    lines.append("batch_size = 8")
    lines.append("lr_grid = 6e-4, 3e-4, 1e-4")
    lines.append("collab_pretrain_epochs = 3")
    lines.append("collab_pretrain_lr = 0.05")
    lines.append("train_collab = false")
    lines.append("")
    lines.append("[eval]")
    lines.append("negatives = 19")
    lines.append("ks = 1, 3, 5")
    lines.append("depth = 5")
    lines.append("")
    lines.append("[run]")
    lines.append("seeds = " + ", ".join(str(s) for s in seeds))
    lines.append(f"out = {out_dir}")
    lines.append("")
    atomic_write_text(config_path, "\n".join(lines))
    return config_path
