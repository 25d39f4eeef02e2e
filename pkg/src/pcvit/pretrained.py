"""Import externally converted ViT weights through the packaged name map.

Sources may be ``.safetensors`` files (F32/F64/F16/BF16) or ``.pcvt``
containers holding tensors under their original names.
"""

from __future__ import annotations

import json
import logging
import struct
from importlib import resources

import numpy as np

from pcvit import checkpoint
from pcvit.errors import ContainerError, DimensionError
from pcvit.vit import HEAD_PARAMS, ViTConfig, ViTParams, init_params, param_shapes

logger = logging.getLogger(__name__)

_ST_DTYPES = {"F32": "<f4", "F64": "<f8", "F16": "<f2"}


def default_name_map() -> dict:
    with resources.files("pcvit").joinpath("data/vit_base_name_map.json").open() as fh:
        return json.load(fh)


def read_safetensors(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 8:
        raise ContainerError(f"{path}: truncated safetensors file")
    (n,) = struct.unpack_from("<Q", buf)
    if 8 + n > len(buf):
        raise ContainerError(f"{path}: safetensors header extends past end of file")
    header = json.loads(buf[8:8 + n])
    header.pop("__metadata__", None)
    data = memoryview(buf)[8 + n:]
    out = {}
    for name, info in header.items():
        begin, end = info["data_offsets"]
        if end > len(data):
            raise ContainerError(f"{path}: tensor {name} extends past end of file")
        raw = data[begin:end]
        if info["dtype"] == "BF16":
            arr = (np.frombuffer(raw, dtype="<u2").astype(np.uint32) << 16).view(np.float32)
        elif info["dtype"] in _ST_DTYPES:
            arr = np.frombuffer(raw, dtype=_ST_DTYPES[info["dtype"]])
        else:
            raise ContainerError(f"{path}: tensor {name} has unsupported dtype {info['dtype']}")
        out[name] = arr.astype(np.float32).reshape(info["shape"])
    return out


def read_source(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == checkpoint.MAGIC:
        return checkpoint.load(path)[0]
    return read_safetensors(path)


def _apply(transform: str, arr: np.ndarray) -> np.ndarray:
    if transform == "none":
        return arr
    if transform == "transpose":
        return arr.T
    if transform == "flatten":
        return arr.reshape(-1)
    if transform == "squeeze_batch":
        return arr.reshape(arr.shape[-2:]) if arr.ndim == 3 and arr.shape[0] == 1 else arr
    if transform == "conv_to_linear":
        return arr.reshape(arr.shape[0], -1).T if arr.ndim == 4 else arr
    raise ValueError(f"unknown transform {transform!r}")


def expand_name_map(name_map: dict, num_layers: int) -> list[tuple[tuple[str, ...], str, str]]:
    """Rows of ``(source names, target, transform)`` with ``{i}`` expanded.

    The source names are the primary name followed by any aliases.
    """
    rows = []
    for entry in name_map["tensors"]:
        srcs = (entry["source"], *entry.get("aliases", ()))
        dst, tf = entry["target"], entry["transform"]
        if "{i}" in dst:
            for i in range(num_layers):
                rows.append((tuple(s.replace("{i}", str(i)) for s in srcs), dst.replace("{i}", str(i)), tf))
        else:
            rows.append((srcs, dst, tf))
    return rows


def convert(
    source: dict[str, np.ndarray],
    config: ViTConfig,
    name_map: dict | None = None,
    replace_head: bool = False,
    seed: int = 0,
) -> ViTParams:
    """Map source tensors onto a :class:`ViTParams` for ``config``.

    Every target shape is validated before anything is built; the first
    mismatch (in parameter order) is reported. With ``replace_head`` the
    classification head is freshly initialised whenever the source head is
    missing or has a different class count.
    """
    shapes = param_shapes(config)
    rows = {dst: (src, tf) for src, dst, tf in expand_name_map(name_map or default_name_map(), config.num_layers)}
    fresh = init_params(config, seed) if replace_head else None
    arrays: dict[str, np.ndarray] = {}
    for name, shape in shapes.items():
        if name not in rows:
            raise DimensionError(f"name map has no entry for parameter {name}")
        srcs, tf = rows[name]
        src = next((s for s in srcs if s in source), srcs[0])
        arr = _apply(tf, source[src]) if src in source else None
        if name in HEAD_PARAMS and replace_head and (arr is None or arr.shape != shape):
            arrays[name] = fresh[name].data
            continue
        if arr is None:
            raise DimensionError(f"source checkpoint lacks tensor {src} (for {name})")
        if arr.shape != shape:
            raise DimensionError(f"tensor {src} -> {name}: expected shape {shape}, got {arr.shape}")
        arrays[name] = arr
    used = {s for n in shapes for s in rows[n][0]}
    unused = sorted(set(source) - used)
    if unused:
        logger.info("ignored %d source tensors (e.g. %s)", len(unused), unused[0])
    return ViTParams.from_arrays(config, arrays)
