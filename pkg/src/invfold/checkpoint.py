"""Portable parameter checkpoints.

Container layout (all integers little-endian)::

    bytes 0..7    magic b"IFCKPT01"
    bytes 8..11   u32 manifest length N
    N bytes       UTF-8 JSON manifest
    remainder     tensor payloads, concatenated in manifest order

The manifest holds ``format_version``, the model ``config``, the feature
``layout_hash`` and a ``tensors`` list of ``{name, shape, dtype, offset,
nbytes}`` where ``dtype`` is ``"<f4"`` or ``"<f8"`` and ``offset`` counts
from the start of the payload section. Values are C-order.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .graph import layout_hash
from .pignn import ModelConfig, ModelParams, params_from_named

MAGIC = b"IFCKPT01"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: ModelParams, extra: dict | None = None) -> dict:
    named = params.named_tensors()
    entries, blobs, offset = [], [], 0
    for name in sorted(named):
        arr = np.asarray(named[name].value)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = np.ascontiguousarray(le).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": le.dtype.str,
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": params.config.to_dict(),
        "layout_hash": layout_hash(params.config.features),
        "tensors": entries,
        "extra": extra or {},
    }
    head = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for raw in blobs:
            fh.write(raw)
    return manifest


def read_manifest(path) -> tuple[dict, bytes]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if len(data) < 12:
        raise CheckpointError(f"{path}: truncated header")
    (size,) = struct.unpack("<I", data[8:12])
    try:
        manifest = json.loads(data[12 : 12 + size].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt manifest ({exc})") from None
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {manifest.get('format_version')}")
    return manifest, data[12 + size :]


def load_checkpoint(path, requires_grad: bool = True) -> ModelParams:
    manifest, payload = read_manifest(path)
    config = ModelConfig.from_dict(manifest["config"])
    if manifest["layout_hash"] != layout_hash(config.features):
        raise CheckpointError(f"{path}: feature layout hash does not match its config")
    named = {}
    for entry in manifest["tensors"]:
        lo, hi = entry["offset"], entry["offset"] + entry["nbytes"]
        if hi > len(payload):
            raise CheckpointError(f"{path}: tensor {entry['name']} runs past end of file")
        arr = np.frombuffer(payload[lo:hi], dtype=np.dtype(entry["dtype"]))
        named[entry["name"]] = arr.reshape(entry["shape"]).astype(arr.dtype.newbyteorder("="))
    try:
        return params_from_named(config, named, requires_grad)
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing tensor {exc}") from None
