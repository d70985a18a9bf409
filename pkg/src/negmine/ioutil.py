"""Deterministic, atomic file plumbing shared across the pipeline.

All artifact writers go through `atomic_write_*` (write to a temp file in the
target directory, then rename) so partially written outputs never appear
under their final name. Floats in text artifacts are formatted with `repr`,
which round-trips every double exactly, keeping reruns byte-identical.
"""
from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np


def format_float(x: float) -> str:
    """Shortest decimal string that parses back to exactly the same double."""
    return repr(float(x))


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


class LockError(RuntimeError):
    """Another process holds the output-directory lock."""


class DirectoryLock:
    """Exclusive advisory lock on an output directory via an O_EXCL lockfile."""

    def __init__(self, directory: str | Path, name: str = ".lock"):
        self.path = Path(directory) / name
        self._fd: int | None = None

    def __enter__(self) -> "DirectoryLock":
        try:
            self._fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise LockError(f"lockfile exists: {self.path} (another run in progress?)") from None
        os.write(self._fd, str(os.getpid()).encode())
        return self

    def __exit__(self, *exc) -> None:
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None
        if self.path.exists():
            self.path.unlink()


def derive_seed(seed: int, *salt: int) -> int:
    """Independent child seed for a namespaced subtask of a base seed."""
    return int(np.random.SeedSequence([int(seed), *map(int, salt)]).generate_state(1)[0])
