"""Content-addressed artifact store under the run directory.

Artifacts (behavioral-evidence images, text traces, raw LLM responses) are
written once under ``artifacts/<sha256-prefix>.<ext>`` and referenced by
their run-directory-relative path, so a run directory is self-contained,
inspectable, and diff-able.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

ARTIFACT_DIRNAME = "artifacts"
_HASH_CHARS = 24


class ArtifactStore:
    def __init__(self, run_dir: Path):
        self.run_dir = Path(run_dir)
        self.root = self.run_dir / ARTIFACT_DIRNAME
        self.root.mkdir(parents=True, exist_ok=True)

    def put(self, data: bytes, ext: str) -> str:
        """Store bytes, returning a run-dir-relative reference.

        Identical content maps to the identical reference; writes are
        idempotent.
        """
        digest = hashlib.sha256(data).hexdigest()[:_HASH_CHARS]
        name = f"{digest}.{ext.lstrip('.')}"
        path = self.root / name
        if not path.exists():
            tmp = path.with_suffix(path.suffix + ".tmp")
            tmp.write_bytes(data)
            tmp.replace(path)
        return f"{ARTIFACT_DIRNAME}/{name}"

    def put_text(self, text: str, ext: str = "txt") -> str:
        return self.put(text.encode("utf-8"), ext)

    def path(self, ref: str) -> Path:
        return self.run_dir / ref

    def exists(self, ref: str) -> bool:
        return self.path(ref).is_file()

    def load(self, ref: str) -> bytes:
        return self.path(ref).read_bytes()

    def load_text(self, ref: str) -> str:
        return self.load(ref).decode("utf-8")
