"""Stage orchestration: ingest -> mix -> plan -> cpt -> sft -> eval -> report.

Each stage reads its inputs from the artifacts of earlier stages, writes its
own outputs atomically, and is recorded in the run manifest with content
digests, so reruns with an identical config and seeds are reproducible
digest-for-digest.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from pathlib import Path

import numpy as np

from . import evaluation, mixer, scheduler
from .config import RunConfig
from .corpus import (
    BehaviorSequence,
    HoldoutInstance,
    Interaction,
    InteractionLog,
    SequenceKind,
    build_user_sequences,
    dataset_stats,
    format_row,
    ingest,
    kcore_filter,
    leave_one_out_split,
)
from .manifest import ManifestBuilder
from .mixer import SequenceWindow, WindowingResult, window_sequences
from .model import Checkpoint, ModelDims, Recommender, cpt_run, restore_into, sft_run
from .prompting import PromptMode, TrainingExample, materialize, sample_candidates
from .util import atomic_write_text, derive_seed

logger = logging.getLogger(__name__)

STAGE_ORDER = ("ingest", "mix", "plan", "cpt", "sft", "eval")


class PipelineError(RuntimeError):
    """Internal pipeline failure; maps to exit code 1."""


# ---------------------------------------------------------------- paths ----


def ingest_dir(out: Path) -> Path:
    return out / "ingest"


def mix_dir(out: Path) -> Path:
    return out / "mix"


def plan_dir(out: Path) -> Path:
    return out / "plan"


def seed_dir(out: Path, seed: int) -> Path:
    return out / f"seed_{seed}"


def _require(path: Path, producing_stage: str) -> Path:
    if not path.is_file():
        raise PipelineError(
            f"missing artifact {path}; run the '{producing_stage}' stage first"
        )
    return path


# ------------------------------------------------------------ serializers --


def _interaction_to_json(it: Interaction) -> dict:
    return {
        "user_id": it.user_id,
        "item_id": it.item_id,
        "domain": it.domain,
        "timestamp": it.timestamp,
        "title": it.title,
    }


def _interaction_from_json(d: dict) -> Interaction:
    return Interaction(
        d["user_id"], d["item_id"], d["domain"], int(d["timestamp"]), d["title"]
    )


def window_to_json(w: SequenceWindow) -> dict:
    return {
        "user_id": w.user_id,
        "kind": w.source_kind.value,
        "domain": w.source_domain,
        "history": [_interaction_to_json(it) for it in w.history],
        "target": _interaction_to_json(w.target),
    }


def window_from_json(d: dict, index: int) -> SequenceWindow:
    return SequenceWindow(
        user_id=d["user_id"],
        history=tuple(_interaction_from_json(x) for x in d["history"]),
        target=_interaction_from_json(d["target"]),
        source_kind=SequenceKind(d["kind"]),
        source_domain=d.get("domain"),
        index=index,
    )


def holdout_to_json(h: HoldoutInstance) -> dict:
    return {
        "user_id": h.user_id,
        "history": [_interaction_to_json(it) for it in h.history],
        "target": _interaction_to_json(h.target),
    }


def holdout_from_json(d: dict) -> HoldoutInstance:
    return HoldoutInstance(
        user_id=d["user_id"],
        history=tuple(_interaction_from_json(x) for x in d["history"]),
        target=_interaction_from_json(d["target"]),
    )


def write_jsonl(path: Path, rows: list[dict]) -> None:
    atomic_write_text(
        path, "".join(json.dumps(row, sort_keys=True) + "\n" for row in rows)
    )


def read_jsonl(path: Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def read_log(path: Path, delimiter: str = "\t") -> InteractionLog:
    with open(path, encoding="utf-8") as fh:
        result = ingest(fh, delimiter=delimiter)
    if result.errors:
        preview = "; ".join(
            f"line {e.line}: {e.message}" for e in result.errors[:5]
        )
        raise PipelineError(
            f"{path}: {len(result.errors)} malformed rows ({preview})"
        )
    return result.log


def write_log(path: Path, log: InteractionLog, delimiter: str = "\t") -> None:
    atomic_write_text(
        path,
        "".join(format_row(it, delimiter) + "\n" for it in log.interactions),
    )


# ---------------------------------------------------------------- stages ---


def stage_ingest(cfg: RunConfig) -> list[Path]:
    """Ingest raw logs, apply the k-core filter, and write corpora + stats."""
    out = ingest_dir(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    raw_logs = {d: read_log(p, cfg.delimiter) for d, p in cfg.domain_paths.items()}
    if cfg.cpt_kcore_scope == "per-domain":
        cpt_log = InteractionLog.merge(
            kcore_filter(raw_logs[d], cfg.kcore) for d in cfg.domains
        )
    else:
        cpt_log = kcore_filter(
            InteractionLog.merge(raw_logs[d] for d in cfg.domains), cfg.kcore
        )
    target_log = kcore_filter(read_log(cfg.target_path, cfg.delimiter), cfg.kcore)

    stats_rows = []
    for domain in cfg.domains:
        stats_rows.append((domain, dataset_stats(cpt_log.restrict_domain(domain))))
    stats_rows.append((cfg.target_domain, dataset_stats(target_log)))

    cpt_path = out / "cpt_corpus.tsv"
    target_path = out / "target_corpus.tsv"
    write_log(cpt_path, cpt_log, cfg.delimiter)
    write_log(target_path, target_log, cfg.delimiter)

    csv_lines = ["dataset,users,items,interactions,sparsity"]
    txt_lines = []
    for name, stats in stats_rows:
        csv_lines.append(
            f"{name},{stats.users},{stats.items},{stats.interactions},"
            f"{stats.sparsity_percent()}"
        )
        txt_lines.extend(
            [
                f"dataset = {name}",
                f"users = {stats.users}",
                f"items = {stats.items}",
                f"interactions = {stats.interactions}",
                f"sparsity = {stats.sparsity_percent()}",
                "",
            ]
        )
    stats_csv = out / "stats.csv"
    stats_txt = out / "stats.txt"
    atomic_write_text(stats_csv, "\n".join(csv_lines) + "\n")
    atomic_write_text(stats_txt, "\n".join(txt_lines))

    vocab: dict[str, tuple[str, str]] = {}
    for log in (cpt_log, target_log):
        for it in log.interactions:
            vocab.setdefault(it.item_id, (it.domain, it.title))
    vocab_path = out / "vocab.tsv"
    atomic_write_text(
        vocab_path,
        "".join(
            f"{item_id}\t{domain}\t{title}\n"
            for item_id, (domain, title) in sorted(vocab.items())
        ),
    )
    return [cpt_path, target_path, stats_csv, stats_txt, vocab_path]


def _windows_jsonl(result: WindowingResult) -> list[dict]:
    return [window_to_json(w) for w in result.windows]


def stage_mix(cfg: RunConfig) -> list[Path]:
    """Build domain-specific + mixed windows and the target-domain splits."""
    out = mix_dir(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cpt_log = read_log(
        _require(ingest_dir(cfg.out) / "cpt_corpus.tsv", "ingest"), cfg.delimiter
    )
    max_h, min_h = cfg.dims.max_history, cfg.min_history

    per_domain_counts: dict[str, int] = {}
    ds_rows: list[dict] = []
    for domain in cfg.domains:
        sequences = mixer.domain_sequences(cpt_log, domain)
        result = window_sequences(sequences, max_history=max_h, min_history=min_h)
        per_domain_counts[domain] = len(result.windows)
        ds_rows.extend(_windows_jsonl(result))
    mixed_result = window_sequences(
        mixer.build_mixed_sequences(cpt_log), max_history=max_h, min_history=min_h
    )

    target_log = read_log(
        _require(ingest_dir(cfg.out) / "target_corpus.tsv", "ingest"), cfg.delimiter
    )
    splits = leave_one_out_split(build_user_sequences(target_log))
    train_seqs = [
        splits.train[u] for u in sorted(splits.train) if len(splits.train[u]) > min_h
    ]
    train_result = window_sequences(train_seqs, max_history=max_h, min_history=min_h)

    ds_path = out / "cpt_domain_specific_0.jsonl"
    mixed_path = out / "cpt_mixed_0.jsonl"
    train_path = out / "target_train_0.jsonl"
    valid_path = out / "target_valid.jsonl"
    test_path = out / "target_test.jsonl"
    write_jsonl(ds_path, ds_rows)
    write_jsonl(mixed_path, _windows_jsonl(mixed_result))
    write_jsonl(train_path, _windows_jsonl(train_result))
    write_jsonl(
        valid_path, [holdout_to_json(splits.valid[u]) for u in sorted(splits.valid)]
    )
    write_jsonl(
        test_path, [holdout_to_json(splits.test[u]) for u in sorted(splits.test)]
    )
    counts_path = out / "counts.json"
    atomic_write_text(
        counts_path,
        json.dumps(
            {
                "domain_specific": len(ds_rows),
                "per_domain": per_domain_counts,
                "mixed": len(mixed_result.windows),
                "mixed_dropped": mixed_result.drop_count,
                "target_train_windows": len(train_result.windows),
                "target_valid": len(splits.valid),
                "target_test": len(splits.test),
                "split_excluded_users": splits.excluded,
            },
            indent=2,
            sort_keys=True,
        )
        + "\n",
    )
    return [ds_path, mixed_path, train_path, valid_path, test_path, counts_path]


def load_plan(cfg: RunConfig) -> tuple[scheduler.SchedulePlan, dict]:
    plan_path = _require(plan_dir(cfg.out) / "plan.json", "plan")
    data = json.loads(plan_path.read_text(encoding="utf-8"))
    plan = scheduler.SchedulePlan(
        W=data["W"], S=data["S"], A=data["A"],
        eta_l=data["eta_l"], eta_h=data["eta_h"],
    )
    return plan, data


def stage_plan(cfg: RunConfig) -> list[Path]:
    """Derive the schedule plan from the mixed/domain-specific counts."""
    counts = json.loads(
        _require(mix_dir(cfg.out) / "counts.json", "mix").read_text(encoding="utf-8")
    )
    plan = scheduler.build_plan(
        n_domain_specific=counts["domain_specific"],
        n_mixed=counts["mixed"],
        eta_l=cfg.eta_l,
        eta_h=cfg.eta_h,
        warmup_frac=cfg.warmup_frac,
        batch_size=cfg.batch_size,
    )
    out = plan_dir(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    plan_path = out / "plan.json"
    atomic_write_text(
        plan_path,
        json.dumps(
            {
                "W": plan.W,
                "S": plan.S,
                "A": plan.A,
                "eta_l": plan.eta_l,
                "eta_h": plan.eta_h,
                "batch_size": cfg.batch_size,
                "kind": cfg.schedule_kind,
            },
            indent=2,
            sort_keys=True,
        )
        + "\n",
    )
    lr_at = scheduler.LR_SCHEDULES[cfg.schedule_kind]
    curve = ["step,lr,phase"]
    for step in range(plan.A + 1):
        curve.append(f"{step},{lr_at(step, plan):.12g},{plan.phase_of(step).value}")
    curve_path = out / "lr_curve.csv"
    atomic_write_text(curve_path, "\n".join(curve) + "\n")
    return [plan_path, curve_path]


def plan_table(cfg: RunConfig) -> str:
    plan, data = load_plan(cfg)
    lr_at = scheduler.LR_SCHEDULES[data.get("kind", "wsa")]
    lines = [
        f"schedule kind      : {data.get('kind', 'wsa')}",
        f"batch size         : {data.get('batch_size')}",
        f"warm-up end W      : {plan.W} (lr {lr_at(plan.W, plan):.3g})",
        f"stable end S       : {plan.S} (lr {lr_at(plan.S, plan):.3g})",
        f"annealing end A    : {plan.A} (lr {lr_at(plan.A, plan):.3g})",
        f"lr bounds          : [{plan.eta_l:.3g}, {plan.eta_h:.3g}]",
    ]
    return "\n".join(lines)


# ------------------------------------------------------- example building --


def load_vocab(cfg: RunConfig) -> tuple[list[str], dict[str, str]]:
    vocab_path = _require(ingest_dir(cfg.out) / "vocab.tsv", "ingest")
    items: list[str] = []
    titles: dict[str, str] = {}
    with open(vocab_path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            item_id, _domain, title = line.split("\t", 2)
            items.append(item_id)
            titles[item_id] = title
    return items, titles


def build_model(cfg: RunConfig, seed: int) -> Recommender:
    vocab, titles = load_vocab(cfg)
    return Recommender(
        vocab,
        titles,
        dims=cfg.dims,
        seed=derive_seed(seed, "model"),
        momentum=cfg.momentum,
        clip_norm=cfg.clip_norm,
        train_collab=cfg.train_collab,
    )


def build_examples(
    windows: list[SequenceWindow],
    pools: dict[str, set[str]],
    catalog: dict[str, dict[str, str]],
    *,
    negatives: int,
    base_seed: int,
    shard: str,
    mode: PromptMode,
) -> list[TrainingExample]:
    examples = []
    for w in windows:
        slate = sample_candidates(
            w.target,
            pools.get(w.user_id, set()),
            catalog,
            n_negatives=negatives,
            seed=derive_seed(base_seed, "slate", shard, w.user_id, w.index),
        )
        examples.append(materialize(w, slate, mode))
    return examples


def holdout_window(
    h: HoldoutInstance, max_history: int, min_history: int
) -> SequenceWindow | None:
    """Cap a holdout history at the most recent ``max_history`` items; skip
    instances whose history is shorter than ``min_history``."""
    if len(h.history) < min_history:
        return None
    history = h.history[-max_history:]
    domains = {it.domain for it in history} | {h.target.domain}
    kind = (
        SequenceKind.DOMAIN_SPECIFIC if len(domains) == 1 else SequenceKind.MIXED
    )
    return SequenceWindow(
        user_id=h.user_id,
        history=history,
        target=h.target,
        source_kind=kind,
        source_domain=history[0].domain if len(domains) == 1 else None,
    )


def load_windows(path: Path) -> list[SequenceWindow]:
    return [window_from_json(d, i) for i, d in enumerate(read_jsonl(path))]


def holdout_examples(
    cfg: RunConfig,
    holdouts: list[HoldoutInstance],
    pools: dict[str, set[str]],
    catalog: dict[str, dict[str, str]],
    *,
    seed: int,
    shard: str,
    mode: PromptMode,
) -> list[TrainingExample]:
    windows = []
    skipped = 0
    for i, h in enumerate(holdouts):
        w = holdout_window(h, cfg.dims.max_history, cfg.min_history)
        if w is None:
            skipped += 1
            continue
        windows.append(dataclasses.replace(w, index=i))
    if skipped:
        logger.info("%s: skipped %d holdouts with history < %d",
                    shard, skipped, cfg.min_history)
    return build_examples(
        windows, pools, catalog,
        negatives=cfg.negatives, base_seed=seed, shard=shard, mode=mode,
    )


def stage_cpt(cfg: RunConfig, seed: int) -> list[Path]:
    """One-epoch continual pre-training over the staged stream."""
    plan, plan_data = load_plan(cfg)
    mix = mix_dir(cfg.out)
    ds_windows = load_windows(_require(mix / "cpt_domain_specific_0.jsonl", "mix"))
    mixed_windows = load_windows(_require(mix / "cpt_mixed_0.jsonl", "mix"))
    cpt_log = read_log(
        _require(ingest_dir(cfg.out) / "cpt_corpus.tsv", "ingest"), cfg.delimiter
    )
    pools = cpt_log.user_pools()
    catalog = cpt_log.catalog()
    # Pre-training prompts are text-only: the collaborative block stays out
    # of the continual phase entirely.
    ds_examples = build_examples(
        ds_windows, pools, catalog,
        negatives=cfg.negatives, base_seed=seed, shard="cpt_ds",
        mode=PromptMode.TEXT_ONLY,
    )
    mixed_examples = build_examples(
        mixed_windows, pools, catalog,
        negatives=cfg.negatives, base_seed=seed, shard="cpt_mixed",
        mode=PromptMode.TEXT_ONLY,
    )
    model = build_model(cfg, seed)
    stream = scheduler.stage_stream(
        ds_examples,
        mixed_examples,
        plan,
        seed=derive_seed(seed, "stream"),
        batch_size=plan_data["batch_size"],
        lr_schedule=plan_data.get("kind", "wsa"),
    )
    result = cpt_run(model, stream, plan)
    sdir = seed_dir(cfg.out, seed)
    sdir.mkdir(parents=True, exist_ok=True)
    ckpt_path = sdir / "cpt.ckpt"
    result.checkpoint.save(ckpt_path)
    losses_path = sdir / "cpt_losses.csv"
    atomic_write_text(
        losses_path,
        "step,loss\n"
        + "".join(f"{i+1},{x:.8f}\n" for i, x in enumerate(result.losses)),
    )
    return [ckpt_path, losses_path]


def stage_sft(cfg: RunConfig, seed: int, from_scratch: bool = False) -> list[Path]:
    """Fine-tune on the target domain, optionally from the CPT checkpoint."""
    mix = mix_dir(cfg.out)
    train_windows = load_windows(_require(mix / "target_train_0.jsonl", "mix"))
    valid_holdouts = [
        holdout_from_json(d)
        for d in read_jsonl(_require(mix / "target_valid.jsonl", "mix"))
    ]
    target_log = read_log(
        _require(ingest_dir(cfg.out) / "target_corpus.tsv", "ingest"), cfg.delimiter
    )
    pools = target_log.user_pools()
    catalog = target_log.catalog()
    train_examples = build_examples(
        train_windows, pools, catalog,
        negatives=cfg.negatives, base_seed=seed, shard="sft_train",
        mode=PromptMode.TEXT_ONLY,
    )
    valid_examples = holdout_examples(
        cfg, valid_holdouts, pools, catalog,
        seed=seed, shard="sft_valid", mode=PromptMode.HYBRID,
    )
    model = build_model(cfg, seed)
    init = None
    if not from_scratch:
        ckpt_path = seed_dir(cfg.out, seed) / "cpt.ckpt"
        if not ckpt_path.is_file():
            raise PipelineError(
                f"missing CPT checkpoint {ckpt_path}; run the 'cpt' stage "
                "first or pass --from-scratch"
            )
        init = Checkpoint.load(ckpt_path)
    result = sft_run(
        model,
        train_examples,
        valid_examples,
        init=init,
        lr_grid=cfg.lr_grid,
        epochs=cfg.sft_epochs,
        batch_size=cfg.sft_batch_size,
        seed=derive_seed(seed, "sft"),
        collab_pretrain_epochs=cfg.collab_pretrain_epochs,
        collab_pretrain_lr=cfg.collab_pretrain_lr,
    )
    sdir = seed_dir(cfg.out, seed)
    sdir.mkdir(parents=True, exist_ok=True)
    ckpt_path = sdir / "sft.ckpt"
    steps = result.best_epoch * max(1, len(train_examples) // cfg.sft_batch_size)
    Checkpoint.from_model(model, step=steps).save(ckpt_path)
    search_path = sdir / "sft_search.json"
    atomic_write_text(
        search_path,
        json.dumps(
            {
                "from_scratch": from_scratch,
                "best_lr": result.best_lr,
                "best_epoch": result.best_epoch,
                "valid_hr1": result.valid_hr1,
                "search": list(result.search),
            },
            indent=2,
            sort_keys=True,
        )
        + "\n",
    )
    return [ckpt_path, search_path]


def _metric_rows(
    dataset: str, seed: int, report: evaluation.MetricReport
) -> list[str]:
    rows = []

    def emit(subset: str, key: str, value: float) -> None:
        if key == "n":
            return
        if "@" in key:
            metric, k = key.split("@")
        else:
            metric, k = key, ""
        rows.append(f"{dataset},{subset},{metric},{k},{seed},{value:.6f}")

    for key, value in sorted(report.values.items()):
        emit("all", key, value)
    for subset, metrics in sorted(report.subsets.items()):
        for key, value in sorted(metrics.items()):
            emit(subset, key, value)
    return rows


def stage_eval(cfg: RunConfig, seed: int) -> list[Path]:
    """Evaluate the best available model for this seed on the test split."""
    mix = mix_dir(cfg.out)
    test_holdouts = [
        holdout_from_json(d)
        for d in read_jsonl(_require(mix / "target_test.jsonl", "mix"))
    ]
    target_log = read_log(
        _require(ingest_dir(cfg.out) / "target_corpus.tsv", "ingest"), cfg.delimiter
    )
    pools = target_log.user_pools()
    catalog = target_log.catalog()
    model = build_model(cfg, seed)
    sdir = seed_dir(cfg.out, seed)
    sft_path = sdir / "sft.ckpt"
    cpt_path = sdir / "cpt.ckpt"
    if sft_path.is_file():
        restore_into(model, Checkpoint.load(sft_path))
        mode = PromptMode.HYBRID
        source = "sft"
    elif cpt_path.is_file():
        # A pre-training-only checkpoint never trained its collaborative
        # side, so it is evaluated on text-only prompts.
        restore_into(model, Checkpoint.load(cpt_path))
        mode = PromptMode.TEXT_ONLY
        source = "cpt"
    else:
        logger.warning("seed %d: no checkpoint found, evaluating fresh init", seed)
        mode = PromptMode.TEXT_ONLY
        source = "untrained"
    examples = holdout_examples(
        cfg, test_holdouts, pools, catalog,
        seed=seed, shard="eval_test", mode=mode,
    )
    records, generations, report = evaluation.evaluate_examples(
        model, examples, ks=cfg.ks, seed=seed
    )
    sdir.mkdir(parents=True, exist_ok=True)
    metrics_path = sdir / "metrics.csv"
    atomic_write_text(
        metrics_path,
        "dataset,subset,metric,k,seed,value\n"
        + "\n".join(_metric_rows(cfg.target_domain, seed, report))
        + "\n",
    )
    records_path = sdir / "records.csv"
    atomic_write_text(
        records_path,
        "user_id,rank,valid,history_length\n"
        + "".join(
            f"{r.user_id},{r.rank},{int(r.valid)},{r.history_length}\n"
            for r in records
        ),
    )
    ordered_path = sdir / "ordered.jsonl"
    depth = min(cfg.depth, cfg.negatives + 1)
    write_jsonl(
        ordered_path,
        [
            {
                "user_id": ex.window.user_id,
                "items": evaluation.ordered_generation(model, ex, depth=depth),
            }
            for ex in examples
        ],
    )
    meta_path = sdir / "eval_meta.json"
    atomic_write_text(
        meta_path,
        json.dumps(
            {"model": source, "mode": mode.value, "n_examples": len(examples)},
            indent=2,
            sort_keys=True,
        )
        + "\n",
    )
    return [metrics_path, records_path, ordered_path, meta_path]


def read_metrics_csv(path: Path) -> dict[tuple[str, str, str], float]:
    """(subset, metric, k) -> value from one metrics/summary CSV."""
    out: dict[tuple[str, str, str], float] = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        has_seed = "seed" in header
        for line in fh:
            parts = line.strip().split(",")
            if len(parts) < 5:
                continue
            if has_seed:
                _dataset, subset, metric, k, _seed, value = parts[:6]
            else:
                _dataset, subset, metric, k, value = parts[:5]
            out[(subset, metric, k)] = float(value)
    return out


def _report_from_metrics(path: Path, seed: int) -> evaluation.MetricReport:
    flat = read_metrics_csv(path)
    values: dict[str, float] = {}
    subsets: dict[str, dict[str, float]] = {}
    for (subset, metric, k), value in flat.items():
        key = f"{metric}@{k}" if k else metric
        if subset == "all":
            values[key] = value
        else:
            subsets.setdefault(subset, {})[key] = value
    return evaluation.MetricReport(
        values=values, subsets=subsets, seeds=(seed,), n_records=0
    )


def summarize(cfg: RunConfig) -> list[Path]:
    """Average per-seed metric reports into the run summary."""
    reports = []
    for seed in cfg.seeds:
        metrics_path = _require(seed_dir(cfg.out, seed) / "metrics.csv", "eval")
        reports.append(_report_from_metrics(metrics_path, seed))
    mean = evaluation.seed_average(reports)
    lines = ["dataset,subset,metric,k,value"]
    for key, value in sorted(mean.values.items()):
        metric, _, k = key.partition("@")
        lines.append(f"{cfg.target_domain},all,{metric},{k},{value:.6f}")
    for subset, metrics in sorted(mean.subsets.items()):
        for key, value in sorted(metrics.items()):
            if key == "n":
                continue
            metric, _, k = key.partition("@")
            lines.append(f"{cfg.target_domain},{subset},{metric},{k},{value:.6f}")
    summary_csv = cfg.out / "summary.csv"
    atomic_write_text(summary_csv, "\n".join(lines) + "\n")
    txt = [
        f"dataset: {cfg.target_domain}",
        f"seeds: {', '.join(str(s) for s in cfg.seeds)}",
        "averaging: micro (record-weighted) within seed, arithmetic across seeds",
        "",
    ]
    for key, value in sorted(mean.values.items()):
        txt.append(f"{key} = {value:.4f}")
    summary_txt = cfg.out / "summary.txt"
    atomic_write_text(summary_txt, "\n".join(txt) + "\n")
    return [summary_csv, summary_txt]


def run_pipeline(
    cfg: RunConfig,
    stages: tuple[str, ...] = STAGE_ORDER,
    from_scratch: bool = False,
) -> Path:
    """Execute the requested stages in dependency order and write the
    manifest. Per-seed stages fan out over the configured seeds."""
    unknown = set(stages) - set(STAGE_ORDER)
    if unknown:
        raise PipelineError(f"unknown stages: {sorted(unknown)}")
    cfg.out.mkdir(parents=True, exist_ok=True)
    builder = ManifestBuilder(out_dir=cfg.out, config_text=cfg.config_text)
    ordered = [s for s in STAGE_ORDER if s in stages]
    for stage in ordered:
        if stage in ("ingest", "mix", "plan"):
            fn = {"ingest": stage_ingest, "mix": stage_mix, "plan": stage_plan}[stage]
            inputs = (
                list(cfg.domain_paths.values()) + [cfg.target_path]
                if stage == "ingest"
                else []
            )
            t0 = time.perf_counter()
            outputs = fn(cfg)
            builder.record(stage, inputs, outputs, time.perf_counter() - t0)
        else:
            for seed in cfg.seeds:
                t0 = time.perf_counter()
                if stage == "cpt":
                    outputs = stage_cpt(cfg, seed)
                elif stage == "sft":
                    outputs = stage_sft(cfg, seed, from_scratch=from_scratch)
                else:
                    outputs = stage_eval(cfg, seed)
                builder.record(
                    f"{stage}[seed={seed}]", [], outputs, time.perf_counter() - t0
                )
    if "eval" in stages:
        t0 = time.perf_counter()
        outputs = summarize(cfg)
        builder.record("summary", [], outputs, time.perf_counter() - t0)
    atomic_write_text(cfg.out / "config.snapshot.ini", cfg.config_text)
    return builder.write()


def stage_report(run_dirs: list[Path]) -> tuple[str, str]:
    """Side-by-side comparison of run summaries with relative improvement
    against the first run. Returns (csv_text, table_text)."""
    if not run_dirs:
        raise PipelineError("report needs at least one completed run directory")
    summaries = []
    for run in run_dirs:
        path = Path(run) / "summary.csv"
        if not path.is_file():
            raise PipelineError(f"missing {path}; run the 'eval' stage first")
        summaries.append(read_metrics_csv(path))
    base_keys = set(summaries[0])
    for run, flat in zip(run_dirs, summaries[1:], strict=False):
        if set(flat) != base_keys:
            diff = sorted(set(flat) ^ base_keys)
            raise PipelineError(f"incompatible metric keys across runs: {diff[:6]}")
    names = [Path(r).name or str(r) for r in run_dirs]
    header = ["subset", "metric", "k"] + names + [
        f"{n}_vs_{names[0]}_pct" for n in names[1:]
    ]
    csv_lines = [",".join(header)]
    table_lines = [" | ".join(header)]
    for key in sorted(base_keys):
        subset, metric, k = key
        row = [subset, metric, k]
        base = summaries[0][key]
        values = [flat[key] for flat in summaries]
        row.extend(f"{v:.6f}" for v in values)
        for v in values[1:]:
            rel = (v - base) / base * 100 if base != 0 else float("nan")
            row.append(f"{rel:+.2f}%")
        csv_lines.append(",".join(row))
        table_lines.append(" | ".join(row))
    return "\n".join(csv_lines) + "\n", "\n".join(table_lines) + "\n"
