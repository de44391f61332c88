"""Standalone writer/reader for the portable weight container format.

Layout: magic ``ILMC`` | uint32 version | uint64 header length | compact
JSON header (sorted keys) | zero padding to a 64-byte payload offset |
float32 little-endian tensor payloads concatenated in name order |
uint64 checksum = first 8 bytes of SHA-256 over the payload bytes.

This is a deliberate re-implementation of the format, not an import of
the consumer's loader; both sides meeting in the middle on real bytes is
part of the interchange contract.
"""

import hashlib
import json
import struct

import numpy as np

__all__ = [
    "MAGIC",
    "FORMAT_VERSION",
    "PAYLOAD_ALIGN",
    "write_container",
    "write_features",
    "read_container",
    "vocab_header",
]

MAGIC = b"ILMC"
FORMAT_VERSION = 1
PAYLOAD_ALIGN = 64


def vocab_header(tokens, sos_id: int = 0, eos_id: int = 1) -> dict:
    return {"tokens": list(tokens), "sos_id": sos_id, "eos_id": eos_id}


def _header_bytes(kind: str, hyperparams: dict, tensors: dict, vocab) -> bytes:
    header = {
        "kind": kind,
        "dtype": "float32",
        "hyperparams": hyperparams,
        "vocab": vocab,
        "tensors": [
            {"name": name, "shape": list(np.asarray(tensors[name]).shape)}
            for name in sorted(tensors)
        ],
    }
    return json.dumps(header, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode(
        "utf-8"
    )


def write_container(path, kind: str, hyperparams: dict, tensors: dict, vocab=None) -> int:
    """Write one container; returns the payload checksum."""
    header = _header_bytes(kind, hyperparams, tensors, vocab)
    pad = (-(len(MAGIC) + 4 + 8 + len(header))) % PAYLOAD_ALIGN
    payload = b"".join(
        np.ascontiguousarray(tensors[name], dtype="<f4").tobytes(order="C")
        for name in sorted(tensors)
    )
    checksum = struct.unpack("<Q", hashlib.sha256(payload).digest()[:8])[0]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(b"\x00" * pad)
        fh.write(payload)
        fh.write(struct.pack("<Q", checksum))
    return checksum


def write_features(path, features: np.ndarray) -> int:
    feats = np.ascontiguousarray(features, dtype=np.float32)
    if feats.ndim != 2:
        raise ValueError(f"features must be 2-D, got shape {feats.shape}")
    hyperparams = {"frames": int(feats.shape[0]), "feat_dim": int(feats.shape[1])}
    return write_container(path, "features", hyperparams, {"feat": feats}, vocab=None)


def read_container(path) -> dict:
    """Parse a container back; used by forge-side tests and sanity checks."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic {blob[:4]!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    (header_len,) = struct.unpack_from("<Q", blob, 8)
    header = json.loads(blob[16 : 16 + header_len].decode("utf-8"))
    offset = 16 + header_len + ((-(16 + header_len)) % PAYLOAD_ALIGN)
    tensors = {}
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape)
        tensors[spec["name"]] = arr.copy()
        offset += count * 4
    (stored,) = struct.unpack_from("<Q", blob, offset)
    payload = blob[16 + header_len + ((-(16 + header_len)) % PAYLOAD_ALIGN) : offset]
    computed = struct.unpack("<Q", hashlib.sha256(payload).digest()[:8])[0]
    if stored != computed:
        raise ValueError(f"{path}: checksum mismatch")
    return {
        "kind": header["kind"],
        "hyperparams": header["hyperparams"],
        "vocab": header["vocab"],
        "tensors": tensors,
        "checksum": stored,
    }
