"""Small helpers for checksummed, versioned artifacts on disk."""
from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Any

from .errors import ArtifactNotFoundError, IntegrityError, VersionMismatchError


def sha256_file(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def stable_hash(obj: Any) -> str:
    """Hash of a JSON-serialisable object, independent of dict key order."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def write_json(path: str | os.PathLike, obj: Any) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def read_json(path: str | os.PathLike) -> Any:
    path = Path(path)
    if not path.exists():
        raise ArtifactNotFoundError(f"no such artifact: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise IntegrityError(f"{path}: malformed JSON ({exc})") from exc


def check_version(meta: dict, kind: str, version: int, path) -> None:
    if meta.get("kind") != kind:
        raise IntegrityError(f"{path}: expected a {kind!r} artifact, found {meta.get('kind')!r}")
    if meta.get("version") != version:
        raise VersionMismatchError(
            f"{path}: {kind} format version {meta.get('version')!r}, this build reads {version}"
        )


def verify_checksum(blob_path: Path, expected: str) -> None:
    if not blob_path.exists():
        raise IntegrityError(f"missing blob {blob_path}")
    if sha256_file(blob_path) != expected:
        raise IntegrityError(f"checksum mismatch for {blob_path}; file is corrupted or truncated")
