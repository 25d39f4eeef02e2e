"""Grayscale -> jet pseudo-color preprocessing.

Pipeline for one image::

    decode -> to_grayscale -> resize_bilinear -> jet_map -> to_model_input

The result is a float32 ``(3, H, W)`` array with every value in ``[0, 1]``.
"""

from __future__ import annotations

import io
import os

import numpy as np
from PIL import Image, UnidentifiedImageError

from pcvit._backend import kernels
from pcvit.errors import DimensionError, FormatError

IMAGE_SIZE = 224
IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")


def jet_rgb(v: float) -> tuple[float, float, float]:
    """Jet colour of a unit-range scalar, as Python floats."""
    r = min(max(1.5 - abs(4.0 * v - 3.0), 0.0), 1.0)
    g = min(max(1.5 - abs(4.0 * v - 2.0), 0.0), 1.0)
    b = min(max(1.5 - abs(4.0 * v - 1.0), 0.0), 1.0)
    return r, g, b


def _build_jet_lut() -> np.ndarray:
    v = np.arange(256, dtype=np.float64) / 255.0
    lut = np.stack(
        [
            np.clip(1.5 - np.abs(4.0 * v - 3.0), 0.0, 1.0),
            np.clip(1.5 - np.abs(4.0 * v - 2.0), 0.0, 1.0),
            np.clip(1.5 - np.abs(4.0 * v - 1.0), 0.0, 1.0),
        ],
        axis=1,
    )
    return lut.astype(np.float32)


# (256, 3) float32, indexed by 8-bit intensity
JET_LUT = _build_jet_lut()
JET_LUT.setflags(write=False)


def decode_image(source) -> np.ndarray:
    """Decode PNG/JPEG bytes, a path, or a PIL image into an 8-bit array.

    Returns ``(H, W)`` for single-channel images and ``(H, W, C)`` otherwise.
    Palette images are expanded to RGB. Anything that is not 8 bits per
    channel raises :class:`FormatError`.
    """
    if isinstance(source, np.ndarray):
        return source
    try:
        if isinstance(source, Image.Image):
            img = source
        elif isinstance(source, (bytes, bytearray, memoryview)):
            img = Image.open(io.BytesIO(bytes(source)))
        else:
            img = Image.open(os.fspath(source))
        img.load()
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise FormatError(f"cannot decode image: {exc}") from exc
    if img.mode == "P":
        img = img.convert("RGBA" if "transparency" in img.info else "RGB")
    if img.mode == "1":
        img = img.convert("L")
    if img.mode not in ("L", "LA", "RGB", "RGBA"):
        raise FormatError(f"unsupported image mode {img.mode!r}; expected 8-bit L or RGB")
    return np.asarray(img, dtype=np.uint8)


def to_grayscale(image) -> np.ndarray:
    """Collapse a decoded 8-bit image to one channel.

    RGB pixels use luma weights 0.299/0.587/0.114 with half-up rounding;
    single-channel input is returned unchanged.
    """
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        raise FormatError(f"expected 8-bit image, got dtype {arr.dtype}")
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim == 2:
        return np.ascontiguousarray(arr)
    if arr.ndim != 3 or arr.shape[2] != 3:
        channels = arr.shape[2] if arr.ndim == 3 else arr.ndim
        raise FormatError(f"unsupported channel count {channels}; expected 1 or 3")
    rgb = arr.astype(np.uint32)
    # exact integer form of round(0.299 R + 0.587 G + 0.114 B), halves up
    luma = (299 * rgb[..., 0] + 587 * rgb[..., 1] + 114 * rgb[..., 2] + 500) // 1000
    return luma.astype(np.uint8)


def resize_bilinear(gray: np.ndarray, out_h: int = IMAGE_SIZE, out_w: int = IMAGE_SIZE) -> np.ndarray:
    """Bilinear resize with half-pixel centres; output rounded and clamped to uint8."""
    gray = np.ascontiguousarray(gray, dtype=np.uint8)
    if gray.ndim != 2 or min(gray.shape) < 1:
        raise DimensionError(f"expected a non-empty 2-D image, got shape {gray.shape}")
    if out_h < 1 or out_w < 1:
        raise DimensionError(f"output size must be positive, got {out_h}x{out_w}")
    return kernels.resize_bilinear(gray, int(out_h), int(out_w))


def jet_map(gray: np.ndarray) -> np.ndarray:
    """Map 8-bit intensities to jet colours, ``(H, W, 3)`` float32 in [0, 1]."""
    gray = np.asarray(gray)
    if gray.dtype != np.uint8:
        raise FormatError(f"expected uint8 intensities, got {gray.dtype}")
    return JET_LUT[gray]


def to_model_input(rgb: np.ndarray, size: int = IMAGE_SIZE) -> np.ndarray:
    """Permute ``(H, W, 3)`` to channel-first ``(3, H, W)``; values are unchanged."""
    if rgb.ndim != 3 or rgb.shape != (size, size, 3):
        raise DimensionError(f"expected ({size}, {size}, 3) image, got {rgb.shape}")
    return np.ascontiguousarray(np.transpose(rgb, (2, 0, 1)), dtype=np.float32)


def preprocess(source, size: int = IMAGE_SIZE) -> np.ndarray:
    """Decode and run the full pseudo-color pipeline on one image."""
    gray = to_grayscale(decode_image(source))
    return to_model_input(jet_map(resize_bilinear(gray, size, size)), size)


def preprocess_gray(gray: np.ndarray, size: int = IMAGE_SIZE) -> np.ndarray:
    """Pipeline tail for an already-decoded grayscale array."""
    return to_model_input(jet_map(resize_bilinear(gray, size, size)), size)
