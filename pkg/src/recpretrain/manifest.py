"""Run manifests: per-stage input/output content digests and wall-clock,
written atomically at the end of a run."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .util import atomic_write_text, sha256_file


@dataclass
class StageRecord:
    name: str
    inputs: dict[str, str]
    outputs: dict[str, str]
    seconds: float


@dataclass
class ManifestBuilder:
    out_dir: Path
    config_text: str = ""
    stages: list[StageRecord] = field(default_factory=list)

    def record(
        self,
        name: str,
        inputs: list[Path],
        outputs: list[Path],
        seconds: float,
    ) -> None:
        self.stages.append(
            StageRecord(
                name=name,
                inputs={str(p): sha256_file(p) for p in sorted(inputs)},
                outputs={str(p): sha256_file(p) for p in sorted(outputs)},
                seconds=seconds,
            )
        )

    def write(self) -> Path:
        path = Path(self.out_dir) / "manifest.json"
        payload = {
            "tool_version": __version__,
            "written_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "config": self.config_text,
            "stages": [
                {
                    "name": s.name,
                    "inputs": s.inputs,
                    "outputs": s.outputs,
                    "seconds": round(s.seconds, 3),
                }
                for s in self.stages
            ],
        }
        atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")
        return path


def load_manifest(path: Path | str) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def digest_map(manifest: dict) -> dict[str, dict[str, str]]:
    """Stage name -> {relative artifact name -> digest} for comparisons."""
    out: dict[str, dict[str, str]] = {}
    for stage in manifest["stages"]:
        digests = {}
        for path, digest in stage["outputs"].items():
            digests[Path(path).name] = digest
        out[stage["name"]] = digests
    return out


def digests_equal(a: dict, b: dict) -> bool:
    """True when two manifests agree digest-for-digest on every stage."""
    return digest_map(a) == digest_map(b)
