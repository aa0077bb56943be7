"""Run manifests written next to every output artifact.

A manifest records what produced an artifact: the config hash, the sha256
of every input file, the seed, the package version and tree backend, and
a timestamp. Timestamps honour ``SOURCE_DATE_EPOCH`` so that repeated runs
can produce identical manifests; thread counts are deliberately left out
because they never change the outputs.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .ensembles import BACKEND

MANIFEST_SUFFIX = ".manifest.json"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    moment = (
        datetime.fromtimestamp(int(epoch), tz=timezone.utc) if epoch else datetime.now(timezone.utc).replace(microsecond=0)
    )
    return moment.isoformat().replace("+00:00", "Z")


@dataclass
class RunManifest:
    command: str
    config_hash: str | None
    inputs: dict  # file name -> sha256
    seed: int | None
    tool_version: str = __version__
    backend: str = BACKEND
    created: str = field(default_factory=timestamp)
    outputs: dict = field(default_factory=dict)  # file name -> sha256
    diagnostics: int = 0
    extra: dict = field(default_factory=dict)

    @classmethod
    def for_inputs(cls, command, paths, config_hash=None, seed=None, **kw) -> "RunManifest":
        inputs = {Path(p).name: sha256_file(p) for p in paths if p is not None}
        return cls(command, config_hash, dict(sorted(inputs.items())), seed, **kw)

    def add_output(self, path) -> None:
        self.outputs[Path(path).name] = sha256_file(path)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def write_for(self, artifact) -> Path:
        """Write the manifest as ``<artifact stem>.manifest.json`` beside ``artifact``."""
        artifact = Path(artifact)
        target = manifest_path(artifact)
        target.write_text(self.to_json(), encoding="utf-8")
        return target


def manifest_path(artifact) -> Path:
    artifact = Path(artifact)
    return artifact.with_name(artifact.stem + MANIFEST_SUFFIX)
