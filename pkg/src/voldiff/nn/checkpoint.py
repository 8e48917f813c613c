"""Checkpoint files: a text header, a JSON manifest line, then raw arrays.

Layout::

    VOLDIFF-CKPT-1\\n
    {"precision": "float32", "arrays": [{"name": ..., "shape": [...], "offset": ...}, ...], ...}\\n
    <little-endian scalars, concatenated in manifest order>

Offsets are in bytes relative to the start of the binary block.
"""

from __future__ import annotations

import json
import os
import tempfile
from collections import OrderedDict

import numpy as np

HEADER = "VOLDIFF-CKPT-1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, arrays, meta=None, precision="float32"):
    """Write ``arrays`` (ordered name -> ndarray) atomically to ``path``."""
    dt = np.dtype(precision).newbyteorder("<")
    entries = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        a = np.ascontiguousarray(np.asarray(arr), dtype=dt)
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes())
        offset += a.nbytes
    manifest = dict(meta or {})
    manifest["precision"] = np.dtype(precision).name
    manifest["arrays"] = entries
    line = json.dumps(manifest, sort_keys=True, separators=(",", ":"))

    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".ckpt-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write((HEADER + "\n").encode("utf-8"))
            fh.write((line + "\n").encode("utf-8"))
            for b in blobs:
                fh.write(b)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path):
    """Return ``(arrays, manifest)``; arrays keep the stored precision."""
    with open(path, "rb") as fh:
        raw = fh.read()
    first = raw.find(b"\n")
    if first < 0 or raw[:first].decode("utf-8", "replace") != HEADER:
        raise CheckpointError(f"{path}: not a {HEADER} file")
    second = raw.find(b"\n", first + 1)
    if second < 0:
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[first + 1:second].decode("utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: malformed manifest ({exc})") from None
    body = memoryview(raw)[second + 1:]
    dt = np.dtype(manifest["precision"]).newbyteorder("<")
    arrays = OrderedDict()
    for e in manifest["arrays"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        end = e["offset"] + count * dt.itemsize
        if end > len(body):
            raise CheckpointError(f"{path}: array {e['name']!r} runs past end of file")
        a = np.frombuffer(body[e["offset"]:end], dtype=dt).reshape(e["shape"])
        arrays[e["name"]] = a.astype(np.dtype(manifest["precision"]))
    return arrays, manifest
