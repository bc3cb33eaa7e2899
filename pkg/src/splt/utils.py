"""Shared plumbing: seeded random streams, atomic file writes, CSV helpers.

All randomness in the package flows from one root seed.  Named streams are
derived with ``numpy.random.SeedSequence`` using a stable hash of the scope
strings as the spawn key, so e.g. ``rng_stream(7, "collect", "episode", 12)``
is reproducible across runs and platforms and independent of every other
stream derived from the same root.
"""

from __future__ import annotations

import hashlib
import os
import tempfile

import numpy as np


def _scope_key(scope) -> int:
    digest = hashlib.sha256(repr(scope).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def rng_stream(root_seed: int, *scope) -> np.random.Generator:
    """Independent, reproducible generator for (root_seed, scope...)."""
    seq = np.random.SeedSequence(entropy=int(root_seed), spawn_key=(_scope_key(scope),))
    return np.random.Generator(np.random.PCG64(seq))


def stream_seed(root_seed: int, *scope) -> int:
    """A derived integer seed, for APIs that take a seed rather than a rng."""
    return int(rng_stream(root_seed, *scope).integers(0, 2**63 - 1))


def atomic_write_bytes(path: str, payload: bytes) -> None:
    """Write a file via temp-then-rename so readers never see partial data."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: str, header_comments: list[str], columns: list[str], rows: list[list]) -> None:
    """CSV with leading '#' comment lines carrying provenance metadata."""
    lines = [f"# {c}" for c in header_comments]
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(str(v) for v in row))
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


def read_csv(path: str) -> tuple[list[str], list[str], list[list[str]]]:
    """Inverse of write_csv: returns (comments, columns, rows-as-strings)."""
    comments, columns, rows = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                comments.append(line[1:].strip())
            elif not columns:
                columns = line.split(",")
            else:
                rows.append(line.split(","))
    return comments, columns, rows
