"""Versioned binary checkpoint container and transfer-learning warm starts.

Layout (all integers little-endian):

    magic   4 bytes  b"SGCK"
    version u32
    hlen    u64      header length in bytes
    header  hlen     canonical JSON (sorted keys, no whitespace)
    payload          concatenated tensor bytes, little-endian
    digest  32 bytes sha256 of the payload

The header carries the architecture descriptor, training counters, a config
echo, the rng states, and the tensor index (name, shape, dtype, offset), so
it is readable without touching the payload.  No timestamps or host details
are stored: the same tensors always serialize to the same bytes.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"SGCK"
FORMAT_VERSION = 1

_DTYPE_TAGS = {"f4": "<f4", "f8": "<f8"}
_TAG_BY_KIND = {np.dtype(np.float32): "f4", np.dtype(np.float64): "f8"}


class CheckpointError(Exception):
    pass


class BadMagic(CheckpointError):
    pass


class BadVersion(CheckpointError):
    pass


class BadChecksum(CheckpointError):
    pass


@dataclass
class Checkpoint:
    header: dict
    tensors: dict[str, np.ndarray]

    @property
    def descriptor(self) -> dict:
        return self.header["descriptor"]

    @property
    def counters(self) -> dict:
        return self.header.get("counters", {})


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save(path, tensors: dict[str, np.ndarray], meta: dict) -> Path:
    """Write atomically (temp file + rename); returns the final path."""
    path = Path(path)
    index = []
    chunks = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        tag = _TAG_BY_KIND.get(arr.dtype)
        if tag is None:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
        raw = np.ascontiguousarray(arr, dtype=_DTYPE_TAGS[tag]).tobytes()
        index.append(
            {"name": name, "shape": list(arr.shape), "dtype": tag, "offset": offset, "nbytes": len(raw)}
        )
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = dict(meta)
    header["format_version"] = FORMAT_VERSION
    header["tensor_index"] = index
    hbytes = _canonical_json(header)

    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(hbytes)))
        fh.write(hbytes)
        fh.write(payload)
        fh.write(hashlib.sha256(payload).digest())
    os.replace(tmp, path)
    return path


def _read_header(fh) -> dict:
    magic = fh.read(4)
    if magic != MAGIC:
        raise BadMagic(f"expected {MAGIC!r}, found {magic!r}")
    (version,) = struct.unpack("<I", fh.read(4))
    if version != FORMAT_VERSION:
        raise BadVersion(f"format version {version} not supported (expected {FORMAT_VERSION})")
    (hlen,) = struct.unpack("<Q", fh.read(8))
    hbytes = fh.read(hlen)
    if len(hbytes) != hlen:
        raise BadChecksum("truncated header")
    return json.loads(hbytes.decode("utf-8"))


def inspect(path) -> dict:
    """Header only; never reads the payload."""
    with open(path, "rb") as fh:
        return _read_header(fh)


def load(path) -> Checkpoint:
    with open(path, "rb") as fh:
        header = _read_header(fh)
        index = header["tensor_index"]
        payload_len = sum(e["nbytes"] for e in index)
        payload = fh.read(payload_len)
        digest = fh.read(32)
    if len(payload) != payload_len or len(digest) != 32:
        raise BadChecksum("truncated payload")
    if hashlib.sha256(payload).digest() != digest:
        raise BadChecksum("payload checksum mismatch")
    tensors = {}
    for entry in index:
        start = entry["offset"]
        raw = payload[start : start + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=_DTYPE_TAGS[entry["dtype"]]).reshape(entry["shape"])
        tensors[entry["name"]] = arr.astype(arr.dtype.newbyteorder("="))
    return Checkpoint(header=header, tensors=tensors)


# --------------------------------------------------------------------------
# bundling networks in and out of checkpoints
# --------------------------------------------------------------------------


def pair_tensors(pair) -> dict[str, np.ndarray]:
    """Flatten a generator/discriminator pair to prefixed named arrays."""
    out: dict[str, np.ndarray] = {}
    for prefix, net in (("g", pair.generator), ("d", pair.discriminator)):
        for name, p in net.named_params().items():
            out[f"{prefix}.{name}"] = p.data
        for name, b in net.named_buffers().items():
            out[f"{prefix}.{name}"] = b
    return out


def load_into_pair(pair, ckpt: Checkpoint) -> None:
    """Bit-exact restore of every parameter and buffer (shapes must match)."""
    from .nn import load_params

    load_params(pair.generator, ckpt.tensors, prefix="g.")
    load_params(pair.discriminator, ckpt.tensors, prefix="d.")


def warm_start(pair, ckpt: Checkpoint, freeze: tuple[str, ...] = ()) -> dict:
    """Copy every name-and-shape-matched tensor from a donor checkpoint.

    Mismatched or missing tensors keep their fresh initialization (listed
    per name in the report).  ``freeze`` is a tuple of name prefixes (over
    the flattened ``g.``/``d.`` names) whose parameters should receive no
    optimizer updates; it is echoed into the report for the trainer.
    """
    copied: list[str] = []
    reinitialized: list[str] = []
    for prefix, net in (("g", pair.generator), ("d", pair.discriminator)):
        targets: dict[str, np.ndarray] = {f"{prefix}.{n}": p.data for n, p in net.named_params().items()}
        targets.update({f"{prefix}.{n}": b for n, b in net.named_buffers().items()})
        for name, dst in targets.items():
            src = ckpt.tensors.get(name)
            if src is not None and tuple(src.shape) == tuple(dst.shape):
                dst[...] = src.astype(dst.dtype)
                copied.append(name)
            else:
                reinitialized.append(name)
    if not copied:
        raise CheckpointError("incompatible donor: no tensor matched by name and shape")
    frozen = [n for n in copied + reinitialized if n.startswith(tuple(freeze))] if freeze else []
    return {"copied": copied, "reinitialized": reinitialized, "frozen": frozen}
