"""Command-line surface: synth, ingest, stats, mix, plan, cpt, sft, eval,
pipeline, report, checkpoint inspect.

Exit codes: 0 success, 1 internal error, 2 user/config error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__, pipeline, synthetic
from .config import ConfigError, load_config
from .model import checkpoint as ckpt_mod
from .pipeline import PipelineError
from .util import atomic_write_text


def _add_config_args(p: argparse.ArgumentParser, seeds: bool = True) -> None:
    p.add_argument("--config", required=True, help="run config (INI)")
    p.add_argument("--out", help="override the output directory")
    if seeds:
        p.add_argument("--seeds", help="override the seeds list, e.g. '1, 2'")
    p.add_argument("--negatives", help="override the negatives count")


def _overrides(args: argparse.Namespace) -> dict[str, str]:
    out = {}
    for key in ("out", "seeds", "negatives"):
        value = getattr(args, key, None)
        if value:
            out[key] = str(value)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="recpretrain",
        description="Multi-domain behavioral pre-training pipeline for "
        "sequential recommendation",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the bundled synthetic corpus")
    p.add_argument("--out", required=True, help="directory for data + config")
    p.add_argument("--users", type=int, default=synthetic.SyntheticSpec.users)
    p.add_argument(
        "--items-per-domain", type=int,
        default=synthetic.SyntheticSpec.items_per_domain,
    )
    p.add_argument("--seed", type=int, default=synthetic.SyntheticSpec.seed)
    p.add_argument("--run-out", default="runs/demo")

    for name, help_text in (
        ("ingest", "ingest raw logs, k-core filter, write corpora + stats"),
        ("stats", "print Table-style dataset statistics"),
        ("mix", "build domain-specific/mixed windows and target splits"),
        ("plan", "derive the schedule plan and learning-rate curve"),
        ("cpt", "continual pre-training per seed"),
        ("sft", "downstream fine-tuning per seed"),
        ("eval", "evaluate per seed and build the summary"),
        ("pipeline", "run stages in dependency order"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_config_args(p)
        if name in ("sft", "pipeline"):
            p.add_argument(
                "--from-scratch",
                action="store_true",
                help="fine-tune from fresh initialization (skip CPT init)",
            )
        if name == "pipeline":
            p.add_argument(
                "--stages",
                default=",".join(pipeline.STAGE_ORDER),
                help="comma-separated subset of "
                + ",".join(pipeline.STAGE_ORDER),
            )

    p = sub.add_parser("report", help="compare completed runs")
    p.add_argument("runs", nargs="+", help="run output directories")
    p.add_argument("--out", help="write the comparison CSV here")

    p = sub.add_parser("checkpoint", help="checkpoint utilities")
    ck = p.add_subparsers(dest="checkpoint_command", required=True)
    pi = ck.add_parser("inspect", help="print a checkpoint header")
    pi.add_argument("path")

    return parser


def _cmd_synth(args: argparse.Namespace) -> int:
    out = Path(args.out)
    spec = synthetic.SyntheticSpec(
        users=args.users,
        items_per_domain=args.items_per_domain,
        seed=args.seed,
    )
    paths = synthetic.write_corpus(out / "data", spec)
    config_path = synthetic.write_run_config(
        out / "config.ini", paths, spec, out_dir=args.run_out
    )
    print(f"wrote {len(paths)} domain logs under {out / 'data'}")
    print(f"wrote config {config_path}")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    csv_text, table_text = pipeline.stage_report([Path(r) for r in args.runs])
    if args.out:
        atomic_write_text(Path(args.out), csv_text)
        print(f"wrote {args.out}")
    print(table_text, end="")
    return 0


def _cmd_checkpoint(args: argparse.Namespace) -> int:
    header = ckpt_mod.inspect(args.path)
    for key, value in header.items():
        print(f"{key} = {value}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "synth":
            return _cmd_synth(args)
        if args.command == "report":
            return _cmd_report(args)
        if args.command == "checkpoint":
            return _cmd_checkpoint(args)
        cfg = load_config(args.config, _overrides(args))
        if args.command == "stats":
            pipeline.stage_ingest(cfg)
            print((pipeline.ingest_dir(cfg.out) / "stats.csv").read_text(), end="")
            return 0
        if args.command == "pipeline":
            stages = tuple(
                s.strip() for s in args.stages.split(",") if s.strip()
            )
            manifest = pipeline.run_pipeline(
                cfg, stages, from_scratch=getattr(args, "from_scratch", False)
            )
            print(f"wrote manifest {manifest}")
            return 0
        stages = {
            "ingest": ("ingest",),
            "mix": ("mix",),
            "plan": ("plan",),
            "cpt": ("cpt",),
            "sft": ("sft",),
            "eval": ("eval",),
        }[args.command]
        manifest = pipeline.run_pipeline(
            cfg, stages, from_scratch=getattr(args, "from_scratch", False)
        )
        if args.command == "plan":
            print(pipeline.plan_table(cfg))
        print(f"wrote manifest {manifest}")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (PipelineError, OSError, ckpt_mod.CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
