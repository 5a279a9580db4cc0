"""Run configuration: INI-style key = value sections, validated at load."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .model.network import ModelDims


class ConfigError(ValueError):
    """User/config problem; maps to exit code 2."""


@dataclass
class RunConfig:
    domains: tuple[str, ...]
    domain_paths: dict[str, Path]
    target_domain: str
    target_path: Path
    out: Path
    seeds: tuple[int, ...]
    kcore: int = 3
    cpt_kcore_scope: str = "union"
    delimiter: str = "\t"
    eta_l: float = 5e-6
    eta_h: float = 5e-4
    warmup_frac: float = 0.05
    batch_size: int = 8
    schedule_kind: str = "wsa"
    dims: ModelDims = field(default_factory=ModelDims)
    min_history: int = 3
    momentum: float = 0.9
    clip_norm: float = 1.0
    sft_epochs: int = 2
    sft_batch_size: int = 8
    lr_grid: tuple[float, ...] = (6e-4, 3e-4, 1e-4)
    collab_pretrain_epochs: int = 3
    collab_pretrain_lr: float = 0.05
    train_collab: bool = False
    negatives: int = 19
    ks: tuple[int, ...] = (1, 3, 5)
    depth: int = 5
    config_text: str = ""

    def validate(self) -> None:
        if not self.domains:
            raise ConfigError("no pre-training domains configured")
        if self.target_domain in self.domains:
            raise ConfigError(
                f"target domain {self.target_domain!r} must not be a "
                "pre-training domain"
            )
        for domain, path in {
            **self.domain_paths,
            self.target_domain: self.target_path,
        }.items():
            if not path.is_file():
                raise ConfigError(f"data path for {domain!r} missing: {path}")
        if not self.seeds:
            raise ConfigError("seeds list is empty")
        if self.kcore < 1:
            raise ConfigError(f"kcore must be >= 1, got {self.kcore}")
        if self.cpt_kcore_scope not in ("union", "per-domain"):
            raise ConfigError(
                f"cpt_kcore_scope must be union|per-domain, got {self.cpt_kcore_scope!r}"
            )
        if self.schedule_kind not in ("wsa", "constant", "cosine"):
            raise ConfigError(f"unknown schedule kind {self.schedule_kind!r}")
        if not 0 < self.eta_l <= self.eta_h:
            raise ConfigError("need 0 < eta_l <= eta_h")
        if not 0 < self.warmup_frac < 1:
            raise ConfigError("warmup_frac must be in (0, 1)")
        if self.batch_size < 1 or self.sft_batch_size < 1:
            raise ConfigError("batch sizes must be >= 1")
        if self.negatives < 1:
            raise ConfigError("negatives must be >= 1")
        if not 1 <= self.min_history <= self.dims.max_history:
            raise ConfigError("need 1 <= min_history <= max_history")
        if self.sft_epochs < 0:
            raise ConfigError("sft epochs must be >= 0")


def _parse_delimiter(text: str) -> str:
    return {"tab": "\t", "\\t": "\t", "comma": ",", ";": ";"}.get(text, text)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.replace(",", " ").split())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.replace(",", " ").split())


def load_config(path: Path | str, overrides: Mapping[str, str] | None = None) -> RunConfig:
    """Parse and validate a run config; paths resolve relative to the file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        config_text = path.read_text(encoding="utf-8")
        parser.read_string(config_text)
    except (configparser.Error, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    base = path.parent

    def resolve(p: str) -> Path:
        candidate = Path(p)
        return candidate if candidate.is_absolute() else (base / candidate)

    try:
        corpus = parser["corpus"]
        run = parser["run"]
        domains = tuple(
            d.strip() for d in corpus["domains"].split(",") if d.strip()
        )
        domain_paths = {d: resolve(corpus[f"path.{d}"]) for d in domains}
        target_domain = corpus["target_domain"].strip()
        target_path = resolve(corpus["target_path"])
        sched = parser["schedule"] if parser.has_section("schedule") else {}
        mod = parser["model"] if parser.has_section("model") else {}
        sft = parser["sft"] if parser.has_section("sft") else {}
        ev = parser["eval"] if parser.has_section("eval") else {}
        overrides = dict(overrides or {})
        out = resolve(overrides.pop("out", None) or run["out"])
        seeds_text = overrides.pop("seeds", None) or run["seeds"]
        negatives_text = overrides.pop("negatives", None) or ev.get("negatives", "19")
        if overrides:
            raise ConfigError(f"unknown overrides: {sorted(overrides)}")
        dims = ModelDims(
            d_text=int(mod.get("d_text", "64")),
            d_collab=int(mod.get("d_collab", "32")),
            n_heads=int(mod.get("n_heads", "2")),
            n_blocks=int(mod.get("n_blocks", "1")),
            max_history=int(mod.get("max_history", "10")),
            hash_vocab=int(mod.get("hash_vocab", "4096")),
        )
        cfg = RunConfig(
            domains=domains,
            domain_paths=domain_paths,
            target_domain=target_domain,
            target_path=target_path,
            out=out,
            seeds=_ints(seeds_text),
            kcore=int(corpus.get("kcore", "3")),
            cpt_kcore_scope=corpus.get("cpt_kcore_scope", "union").strip(),
            delimiter=_parse_delimiter(corpus.get("delimiter", "tab").strip()),
            eta_l=float(sched.get("eta_l", "5e-6")),
            eta_h=float(sched.get("eta_h", "5e-4")),
            warmup_frac=float(sched.get("warmup_frac", "0.05")),
            batch_size=int(sched.get("batch_size", "8")),
            schedule_kind=sched.get("kind", "wsa").strip(),
            dims=dims,
            min_history=int(mod.get("min_history", "3")),
            momentum=float(mod.get("momentum", "0.9")),
            clip_norm=float(mod.get("clip_norm", "1.0")),
            sft_epochs=int(sft.get("epochs", "2")),
            sft_batch_size=int(sft.get("batch_size", "8")),
            lr_grid=_floats(sft.get("lr_grid", "6e-4, 3e-4, 1e-4")),
            collab_pretrain_epochs=int(sft.get("collab_pretrain_epochs", "3")),
            collab_pretrain_lr=float(sft.get("collab_pretrain_lr", "0.05")),
            train_collab=str(sft.get("train_collab", "false")).lower()
            in ("1", "true", "yes"),
            negatives=int(negatives_text),
            ks=_ints(ev.get("ks", "1, 3, 5")),
            depth=int(ev.get("depth", "5")),
            config_text=config_text,
        )
    except ConfigError:
        raise
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"invalid config {path}: {exc!r}") from exc
    cfg.validate()
    return cfg
