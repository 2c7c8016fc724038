"""Tensor container: JSON manifest + raw little-endian payloads, one file.

Layout: 4-byte magic ``NDT1``, uint64-LE manifest length, UTF-8 JSON manifest,
then the concatenated raw tensor payloads in manifest order. Round trips are
bit-exact.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"NDT1"

_DTYPES = {"float32": "<f4", "float64": "<f8", "int32": "<i4", "int64": "<i8"}


class ContainerError(RuntimeError):
    pass


def _entries(tensors: dict[str, np.ndarray], trainable: dict[str, bool] | None):
    entries = []
    for name in tensors:
        arr = np.ascontiguousarray(tensors[name])
        dt = str(arr.dtype)
        if dt not in _DTYPES:
            raise ContainerError(f"unsupported dtype {dt} for {name!r}")
        entry = {"name": name, "shape": list(arr.shape), "dtype": dt,
                 "nbytes": arr.nbytes}
        if trainable is not None:
            entry["trainable"] = bool(trainable.get(name, True))
        entries.append((entry, arr))
    return entries


def save_tensors(path: str | Path, tensors: dict[str, np.ndarray],
                 meta: dict | None = None,
                 trainable: dict[str, bool] | None = None) -> None:
    blob = serialize_tensors(tensors, meta=meta, trainable=trainable)
    Path(path).write_bytes(blob)


def serialize_tensors(tensors: dict[str, np.ndarray], meta: dict | None = None,
                      trainable: dict[str, bool] | None = None) -> bytes:
    entries = _entries(tensors, trainable)
    manifest = {"endianness": "little",
                "tensors": [e for e, _ in entries],
                "meta": meta or {}}
    mbytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<Q", len(mbytes)), mbytes]
    for entry, arr in entries:
        parts.append(arr.astype(_DTYPES[entry["dtype"]], copy=False).tobytes())
    return b"".join(parts)


def load_tensors(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    blob = Path(path).read_bytes()
    return deserialize_tensors(blob)


def deserialize_tensors(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if blob[:4] != MAGIC:
        raise ContainerError("bad magic: not a tensor container")
    if len(blob) < 12:
        raise ContainerError("truncated header")
    (mlen,) = struct.unpack("<Q", blob[4:12])
    if len(blob) < 12 + mlen:
        raise ContainerError("truncated manifest")
    try:
        manifest = json.loads(blob[12 : 12 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ContainerError(f"corrupt manifest: {e}") from e
    offset = 12 + mlen
    tensors: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        n = entry["nbytes"]
        expected = int(np.prod(entry["shape"], dtype=np.int64)) * np.dtype(
            _DTYPES[entry["dtype"]]).itemsize
        if n != expected:
            raise ContainerError(
                f"manifest/payload mismatch for {entry['name']!r}: "
                f"{n} bytes listed, shape needs {expected}")
        chunk = blob[offset : offset + n]
        if len(chunk) != n:
            raise ContainerError(f"truncated payload for {entry['name']!r}")
        arr = np.frombuffer(chunk, dtype=_DTYPES[entry["dtype"]]).reshape(entry["shape"])
        tensors[entry["name"]] = arr.astype(entry["dtype"])  # native, writable copy
        offset += n
    return tensors, manifest


def save_tree(path: str | Path, params, meta: dict | None = None) -> None:
    """Serialize a named parameter tree (dict of name -> Parameter)."""
    tensors = {k: p.data for k, p in params.items()}
    trainable = {k: getattr(p, "trainable", True) for k, p in params.items()}
    save_tensors(path, tensors, meta=meta, trainable=trainable)


def load_into_tree(path: str | Path, params) -> dict:
    """Load a container into an existing parameter tree, shape-checked."""
    tensors, manifest = load_tensors(path)
    missing = set(params) - set(tensors)
    extra = set(tensors) - set(params)
    if missing or extra:
        raise ContainerError(f"parameter tree mismatch: missing={sorted(missing)} "
                             f"extra={sorted(extra)}")
    for name, p in params.items():
        arr = tensors[name]
        if tuple(arr.shape) != tuple(p.data.shape):
            raise ContainerError(f"shape mismatch for {name!r}: "
                                 f"{arr.shape} vs {p.data.shape}")
        p.data = arr.astype(p.data.dtype, copy=False)
    return manifest


def tree_hash(params) -> str:
    """sha256 of the canonical serialization (names sorted)."""
    tensors = {k: params[k].data for k in sorted(params)}
    return hashlib.sha256(serialize_tensors(tensors)).hexdigest()


def file_hash(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
