"""Checksums of run outputs, used by the manifests and ``--check``."""

import hashlib
from pathlib import Path
from typing import Iterable

CHUNK_SIZE = 8192


def calculate_sha256(file_path: str | Path) -> tuple[str, int]:
    """Streams a file through SHA256.

    Args:
        file_path: Path to the file

    Returns:
        The hex digest and the number of bytes read
    """
    digest = hashlib.sha256()
    num_bytes = 0
    with open(file_path, "rb") as f:
        while chunk := f.read(CHUNK_SIZE):
            digest.update(chunk)
            num_bytes += len(chunk)
    return digest.hexdigest(), num_bytes


def hash_files(root: Path, names: Iterable[str]) -> dict[str, str]:
    """SHA256 of every named file under ``root``, keyed by relative name in sorted order."""
    return {name: calculate_sha256(root / name)[0] for name in sorted(names)}


def combined_hash(digests: dict[str, str]) -> str:
    """One digest over a ``name -> digest`` table, independent of insertion order."""
    digest = hashlib.sha256()
    for name in sorted(digests):
        digest.update(f"{name}:{digests[name]}\n".encode())
    return digest.hexdigest()
