"""Self-describing binary container for checkpoints and dataset caches.

Layout (all integers little-endian):

    magic  b"RDCF"
    u16    format version (currently 1)
    u32    section count
    per section: u32 name length | name utf-8 | u64 payload length | payload

The "tensors" payload holds a u32 tensor count followed by, per tensor,
u32 name length | name | u8 ndim | ndim x u64 dims | raw float64 data.
Round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"RDCF"
VERSION = 1


class CheckpointError(ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


class ArchMismatchError(CheckpointError):
    pass


def _need(blob: bytes, offset: int, count: int, what: str) -> None:
    if offset + count > len(blob):
        raise TruncatedError(f"container truncated while reading {what}")


def encode_tensors(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode()
        a = np.ascontiguousarray(arr, dtype=np.float64)
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", a.ndim))
        for d in a.shape:
            parts.append(struct.pack("<Q", d))
        parts.append(a.astype("<f8").tobytes())
    return b"".join(parts)


def decode_tensors(blob: bytes) -> dict[str, np.ndarray]:
    _need(blob, 0, 4, "tensor count")
    (count,) = struct.unpack_from("<I", blob, 0)
    offset = 4
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        _need(blob, offset, 4, "tensor name length")
        (nlen,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        _need(blob, offset, nlen, "tensor name")
        name = blob[offset : offset + nlen].decode()
        offset += nlen
        _need(blob, offset, 1, f"tensor '{name}' rank")
        (ndim,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        dims = []
        for _ in range(ndim):
            _need(blob, offset, 8, f"tensor '{name}' shape")
            (d,) = struct.unpack_from("<Q", blob, offset)
            dims.append(d)
            offset += 8
        size = int(np.prod(dims)) if dims else 1
        _need(blob, offset, 8 * size, f"tensor '{name}' data")
        arr = np.frombuffer(blob, dtype="<f8", count=size, offset=offset).reshape(dims)
        out[name] = arr.copy()
        offset += 8 * size
    return out


def write_container(path, sections: dict[str, bytes]) -> None:
    parts = [MAGIC, struct.pack("<H", VERSION), struct.pack("<I", len(sections))]
    for name, payload in sections.items():
        raw = name.encode()
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<Q", len(payload)))
        parts.append(payload)
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def read_container(path) -> dict[str, bytes]:
    with open(path, "rb") as f:
        blob = f.read()
    _need(blob, 0, 4, "magic")
    if blob[:4] != MAGIC:
        raise BadMagicError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    _need(blob, 4, 2, "version")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != VERSION:
        raise UnsupportedVersionError(f"container version {version}, supported: {VERSION}")
    _need(blob, 6, 4, "section count")
    (count,) = struct.unpack_from("<I", blob, 6)
    offset = 10
    sections: dict[str, bytes] = {}
    for i in range(count):
        _need(blob, offset, 4, f"section {i} name length")
        (nlen,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        _need(blob, offset, nlen, f"section {i} name")
        name = blob[offset : offset + nlen].decode()
        offset += nlen
        _need(blob, offset, 8, f"section '{name}' length")
        (plen,) = struct.unpack_from("<Q", blob, offset)
        offset += 8
        _need(blob, offset, plen, f"section '{name}' payload")
        sections[name] = blob[offset : offset + plen]
        offset += plen
    return sections


# --------------------------------------------------------------- checkpoints


def save_checkpoint(path, arch_text: str, params: dict[str, np.ndarray], meta: dict) -> None:
    write_container(
        path,
        {
            "arch": arch_text.encode(),
            "meta": json.dumps(meta, sort_keys=True).encode(),
            "tensors": encode_tensors(params),
        },
    )


def load_checkpoint(path):
    sections = read_container(path)
    for required in ("arch", "meta", "tensors"):
        if required not in sections:
            raise TruncatedError(f"container is missing section '{required}'")
    arch_text = sections["arch"].decode()
    meta = json.loads(sections["meta"].decode())
    params = decode_tensors(sections["tensors"])
    return arch_text, params, meta


def load_into_network(path, net) -> dict:
    """Restore parameters into an existing network; arch must match."""
    arch_text, params, meta = load_checkpoint(path)
    if arch_text != net.spec.to_text():
        raise ArchMismatchError("checkpoint architecture differs from the requested one")
    for name, value in params.items():
        net.set_param(name, value)
    return meta


# ------------------------------------------------------------ dataset cache


def save_dataset(path, dataset) -> None:
    write_container(
        path,
        {
            "meta": json.dumps({"source": dataset.source}, sort_keys=True).encode(),
            "tensors": encode_tensors(
                {"images": dataset.images, "labels": dataset.labels.astype(np.float64)}
            ),
        },
    )


def load_dataset(path):
    from .data import Dataset

    sections = read_container(path)
    for required in ("meta", "tensors"):
        if required not in sections:
            raise TruncatedError(f"container is missing section '{required}'")
    meta = json.loads(sections["meta"].decode())
    tensors = decode_tensors(sections["tensors"])
    return Dataset(
        tensors["images"], tensors["labels"].astype(np.int64), meta["source"]
    )
