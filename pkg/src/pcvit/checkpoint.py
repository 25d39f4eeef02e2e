"""Named-tensor container (``.pcvt``) used for checkpoints and cached images.

Layout::

    b"PCVT" | version: u32 LE | header_len: u64 LE | header: UTF-8 JSON | payload

The header maps each tensor name to ``{"dtype": "f32", "shape": [...],
"offset": int, "length": int}`` where offsets are relative to the start of the
payload. An optional ``"__metadata__"`` entry holds a flat ``str -> str`` map.
Payload data is little-endian float32, tensors packed in header order.
"""

from __future__ import annotations

import json
import os
import struct
import uuid
from collections.abc import Mapping

import numpy as np

from pcvit.errors import ContainerError

MAGIC = b"PCVT"
VERSION = 1
METADATA_KEY = "__metadata__"
_PREFIX = struct.Struct("<4sIQ")


def encode(tensors: Mapping[str, np.ndarray], metadata: Mapping[str, str] | None = None) -> bytes:
    header: dict = {}
    if metadata:
        header[METADATA_KEY] = {str(k): str(v) for k, v in metadata.items()}
    chunks = []
    offset = 0
    for name, arr in tensors.items():
        if name == METADATA_KEY:
            raise ContainerError(f"tensor name {METADATA_KEY!r} is reserved")
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        header[name] = {
            "dtype": "f32",
            "shape": [int(n) for n in np.shape(arr)],
            "offset": offset,
            "length": len(raw),
        }
        chunks.append(raw)
        offset += len(raw)
    head = json.dumps(header, separators=(",", ":")).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(head)) + head + b"".join(chunks)


def decode(buf: bytes) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    """Parse and validate a container; returns ``(tensors, metadata)``."""
    if len(buf) < _PREFIX.size:
        raise ContainerError("container truncated: missing fixed prefix")
    magic, version, head_len = _PREFIX.unpack_from(buf)
    if magic != MAGIC:
        raise ContainerError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    start = _PREFIX.size + head_len
    if start > len(buf):
        raise ContainerError("container truncated: header extends past end of file")
    try:
        header = json.loads(buf[_PREFIX.size:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"malformed header: {exc}") from exc
    if not isinstance(header, dict):
        raise ContainerError("malformed header: not a JSON object")
    metadata = header.pop(METADATA_KEY, {}) or {}
    payload = memoryview(buf)[start:]
    spans = []
    tensors: dict[str, np.ndarray] = {}
    for name, info in header.items():
        try:
            dtype, shape, off, length = info["dtype"], info["shape"], info["offset"], info["length"]
        except (KeyError, TypeError) as exc:
            raise ContainerError(f"tensor {name!r}: incomplete header entry") from exc
        if dtype != "f32":
            raise ContainerError(f"tensor {name!r}: unsupported dtype {dtype!r}")
        if any(not isinstance(n, int) or n < 0 for n in shape):
            raise ContainerError(f"tensor {name!r}: invalid shape {shape}")
        if length != 4 * int(np.prod(shape, dtype=np.int64)):
            raise ContainerError(f"tensor {name!r}: byte length {length} does not match shape {shape}")
        if off < 0 or off + length > len(payload):
            raise ContainerError(f"container truncated: tensor {name!r} extends past end of payload")
        spans.append((off, off + length, name))
        tensors[name] = np.frombuffer(payload[off:off + length], dtype="<f4").astype(np.float32).reshape(shape)
    spans.sort()
    for (_, end_a, a), (start_b, _, b) in zip(spans, spans[1:]):
        if start_b < end_a:
            raise ContainerError(f"tensors {a!r} and {b!r} overlap")
    return tensors, dict(metadata)


def save(path, tensors: Mapping[str, np.ndarray], metadata: Mapping[str, str] | None = None) -> None:
    """Write atomically: a temp file in the same directory is renamed into place."""
    data = encode(tensors, metadata)
    path = os.fspath(path)
    # unlike mkstemp, a plain exclusive open honours the umask
    tmp = f"{path}.{os.getpid()}.{uuid.uuid4().hex[:8]}.tmp"
    try:
        with open(tmp, "xb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    with open(path, "rb") as fh:
        return decode(fh.read())
