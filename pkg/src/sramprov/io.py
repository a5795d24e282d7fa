"""Atomic file writes, stable JSON, digests and seed derivation."""

import hashlib
import json
import os
import tempfile
import zlib
from pathlib import Path

import numpy as np


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def dump_json(obj) -> str:
    """Canonical JSON text: sorted keys, fixed indent, trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n"


def write_json(path, obj):
    atomic_write_text(path, dump_json(obj))


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def tree_digest(root, exclude=()) -> str:
    """SHA-256 over relative paths and contents of every file under ``root``.

    Files whose name is in ``exclude`` are skipped (e.g. ``run_config.json``,
    which records the output path).
    """
    root = Path(root)
    h = hashlib.sha256()
    for p in sorted(q for q in root.rglob("*") if q.is_file() and q.name not in exclude):
        h.update(p.relative_to(root).as_posix().encode())
        h.update(b"\0")
        h.update(hashlib.sha256(p.read_bytes()).digest())
    return h.hexdigest()


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def derive_seed(root: int, *purpose) -> np.random.SeedSequence:
    """Seed for one purpose under a u64 root seed.

    Every purpose component (string or int) becomes one 32-bit spawn-key word:
    ints are taken mod 2**32, strings through CRC-32.  The same
    ``(root, purpose...)`` always yields the same stream.
    """
    if not 0 <= int(root) < 2**64:
        raise ValueError(f"root seed must be a u64, got {root}")
    return np.random.SeedSequence(int(root), spawn_key=tuple(_key(p) for p in purpose))


def rng_for(root: int, *purpose) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *purpose))
