# pest_exports.py
"""
Output side of every run
- Atomic file writes (temp file in the target directory + os.replace)
- RunWriter stages outputs as *.partial and promotes them only when the run succeeds
- Deterministic run manifest: subcommand, config echo, seed, SHA-256 of inputs and outputs
"""

import hashlib
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Dict, Iterable, Mapping, Optional

import pandas as pd

import config

logger = logging.getLogger(__name__)

PARTIAL_SUFFIX = ".partial"
MANIFEST_NAME = "manifest.json"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as f:
        while chunk := f.read(1024 * 1024):
            h.update(chunk)
    return h.hexdigest()


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n"


def frame_text(df: pd.DataFrame) -> str:
    return df.to_csv(index=False, lineterminator="\n")


def read_json(path) -> Dict:
    with Path(path).open(encoding="utf-8") as f:
        return json.load(f)


# -----------------------------
# Run output set
# -----------------------------
class RunWriter:
    """
    Collects the outputs of one subcommand run. Each output is written to
    <name>.partial as soon as it is produced; commit() renames them all and
    writes the manifest. A failed run leaves its *.partial files behind.
    """

    def __init__(self, out_dir, subcommand: str, settings: Mapping, seed: int = config.SEED,
                 inputs: Iterable = ()):
        self.out_dir = Path(out_dir)
        self.subcommand = subcommand
        self.settings = dict(settings)
        self.seed = seed
        self.inputs = [Path(p) for p in inputs if p]
        self._staged: Dict[str, Path] = {}

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def add_text(self, name: str, text: str) -> Path:
        staged = atomic_write_text(self.out_dir / (name + PARTIAL_SUFFIX), text)
        self._staged[name] = staged
        logger.debug(f"Staged {staged}")
        return staged

    def add_json(self, name: str, obj) -> Path:
        return self.add_text(name, json_text(obj))

    def add_frame(self, name: str, df: pd.DataFrame) -> Path:
        return self.add_text(name, frame_text(df))

    def manifest(self) -> Dict:
        return {
            "subcommand": self.subcommand,
            "artifact_version": config.ARTIFACT_VERSION,
            "seed": self.seed,
            "config": self.settings,
            "inputs": {p.name: sha256_file(p) for p in self.inputs if p.is_file()},
            "outputs": {name: sha256_file(p) for name, p in sorted(self._staged.items())},
        }

    def commit(self) -> Dict[str, Path]:
        manifest = self.manifest()
        final = {}
        for name, staged in sorted(self._staged.items()):
            target = self.out_dir / name
            os.replace(staged, target)
            final[name] = target
        final[MANIFEST_NAME] = atomic_write_text(self.out_dir / MANIFEST_NAME, json_text(manifest))
        logger.info(f"Wrote {len(final)} file(s) to {self.out_dir}")
        return final

    @property
    def staged(self) -> Dict[str, Path]:
        return dict(self._staged)


def load_manifest(out_dir) -> Optional[Dict]:
    path = Path(out_dir) / MANIFEST_NAME
    return read_json(path) if path.is_file() else None
