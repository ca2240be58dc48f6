"""Lossless grayscale image I/O and batch loading for model input."""

from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np
from PIL import Image

from .errors import DataError, IngestionError, RangeError, ShapeError


def write_image(path: Path, values: np.ndarray, bit_depth: int = 8) -> Path:
    """Quantize a [0,1] float array to the given bit depth and save as PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if values.ndim != 2:
        raise ShapeError(f"expected a 2-D grayscale array, got shape {values.shape}")
    if values.min() < 0.0 or values.max() > 1.0:
        raise RangeError(
            f"values outside [0,1]: min={values.min():.4g} max={values.max():.4g}"
        )
    peak = 2**bit_depth - 1
    quantized = np.round(values.astype(np.float64) * peak)
    if bit_depth == 8:
        img = Image.fromarray(quantized.astype(np.uint8))
    elif bit_depth == 16:
        img = Image.fromarray(quantized.astype(np.uint16))
    else:
        raise RangeError(f"unsupported bit depth {bit_depth}")
    img.save(path, format="PNG")
    return path


def read_image(path: Path, bit_depth: int = 8) -> np.ndarray:
    """Load an image as float32 in [0,1], converting to grayscale if needed."""
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"image not found: {path}")
    try:
        img = Image.open(path)
        img.load()
    except Exception as exc:
        raise IngestionError(f"cannot decode image {path}: {exc}") from exc
    if img.mode in ("I;16", "I"):
        arr = np.asarray(img, dtype=np.float32)
    else:
        if img.mode != "L":
            img = img.convert("L")
        arr = np.asarray(img, dtype=np.float32)
    peak = float(2**bit_depth - 1)
    arr = arr / peak
    return np.clip(arr, 0.0, 1.0)


def resize(values: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize of a 2-D array to size x size."""
    if values.ndim != 2:
        raise ShapeError(f"expected a 2-D array, got shape {values.shape}")
    if values.shape == (size, size):
        return values.astype(np.float32)
    out = cv2.resize(
        values.astype(np.float32), (size, size), interpolation=cv2.INTER_LINEAR
    )
    return np.clip(out, 0.0, 1.0)


def load_batch(manifest, size: int, bit_depth: int | None = None) -> np.ndarray:
    """Load every manifest image as a (n, 1, size, size) float32 batch in [0,1].

    ``bit_depth`` defaults to the sidecar of each sample's directory; passing
    it explicitly skips the sidecar lookups. Never touches sample labels.
    """
    from .manifest import read_sidecar  # local import to avoid a cycle

    samples = list(manifest)
    if not samples:
        raise DataError("cannot load an empty manifest")
    depth_cache: dict[Path, int] = {}
    out = np.empty((len(samples), 1, size, size), dtype=np.float32)
    for i, sample in enumerate(samples):
        p = Path(sample.path)
        if bit_depth is None:
            parent = p.parent
            if parent not in depth_cache:
                depth_cache[parent] = read_sidecar(parent).bit_depth
            depth = depth_cache[parent]
        else:
            depth = bit_depth
        out[i, 0] = resize(read_image(p, bit_depth=depth), size)
    return out
