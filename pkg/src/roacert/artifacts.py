"""Versioned binary cache files and atomic writes.

Layout: the magic line ``ROACERT\\n``, one JSON header line holding the
format version, artifact kind, metadata and array names, then each array in
``.npy`` format. Arrays therefore round-trip bit for bit.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

from .errors import FormatError

MAGIC = b"ROACERT\n"
FORMAT_VERSION = 1


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_artifact(path, kind: str, meta: dict, arrays: Dict[str, np.ndarray]) -> None:
    header = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "meta": meta,
        "arrays": list(arrays),
    }
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
    for name in arrays:
        np.save(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
    atomic_write_bytes(path, buf.getvalue())


def read_artifact(path, kind: str) -> Tuple[dict, Dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise FormatError(f"{path}: not a roacert artifact")
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("format_version") != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported format version {header.get('format_version')}")
        if header.get("kind") != kind:
            raise FormatError(f"{path}: expected a {kind} artifact, found {header.get('kind')}")
        arrays = {name: np.load(fh, allow_pickle=False) for name in header["arrays"]}
    return header["meta"], arrays


def digest(obj) -> str:
    """Stable SHA-256 of a JSON-serialisable object or raw array bytes."""
    h = hashlib.sha256()
    if isinstance(obj, np.ndarray):
        h.update(str(obj.dtype).encode())
        h.update(str(obj.shape).encode())
        h.update(np.ascontiguousarray(obj).tobytes())
    else:
        h.update(json.dumps(obj, sort_keys=True).encode("utf-8"))
    return h.hexdigest()
