"""Byte-stable serialization helpers and 8-bit grayscale PNG I/O.

Reproducibility is part of the output contract: identical inputs must
produce byte-identical JSON and CSV files. Floats are therefore always
formatted with a fixed 17-significant-digit format instead of relying on
``json.dump`` / ``str`` defaults.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image


def format_float(value: float) -> str:
    """Format a float with 17 significant digits (lossless round trip)."""
    if value != value:  # NaN
        return "nan"
    if value in (float("inf"), float("-inf")):
        return "inf" if value > 0 else "-inf"
    return format(float(value), ".17g")


def _encode(obj, pieces: list[str]) -> None:
    if isinstance(obj, dict):
        pieces.append("{")
        for i, (key, val) in enumerate(obj.items()):
            if i:
                pieces.append(", ")
            pieces.append(json.dumps(str(key)))
            pieces.append(": ")
            _encode(val, pieces)
        pieces.append("}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        seq = obj.tolist() if isinstance(obj, np.ndarray) else obj
        pieces.append("[")
        for i, val in enumerate(seq):
            if i:
                pieces.append(", ")
            _encode(val, pieces)
        pieces.append("]")
    elif isinstance(obj, bool) or isinstance(obj, np.bool_):
        pieces.append("true" if obj else "false")
    elif isinstance(obj, (int, np.integer)):
        pieces.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        pieces.append(format_float(float(obj)))
    elif obj is None:
        pieces.append("null")
    elif isinstance(obj, str):
        pieces.append(json.dumps(obj))
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__} to stable JSON")


def dumps_stable(obj) -> str:
    """Serialize to JSON with insertion-ordered keys and fixed float format."""
    pieces: list[str] = []
    _encode(obj, pieces)
    return "".join(pieces)


def dump_stable(obj, path: str | Path) -> None:
    """Write byte-stable JSON (trailing newline, UTF-8)."""
    Path(path).write_text(dumps_stable(obj) + "\n", encoding="utf-8")


def load_json(path: str | Path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def read_gray(path: str | Path) -> np.ndarray:
    """Read an image as 8-bit grayscale, shape (H, W) uint8."""
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.uint8)


def read_mask(path: str | Path) -> np.ndarray:
    """Read a binary mask image: nonzero (>127) pixels are True."""
    return read_gray(path) > 127


def write_gray(path: str | Path, image: np.ndarray) -> None:
    """Write a (H, W) uint8 array as an 8-bit grayscale PNG."""
    if image.dtype != np.uint8:
        raise ValueError("expected uint8 image")
    Image.fromarray(image, mode="L").save(str(path), format="PNG")


def write_mask(path: str | Path, mask: np.ndarray) -> None:
    """Write a boolean mask as a 0/255 grayscale PNG."""
    write_gray(path, np.where(mask, 255, 0).astype(np.uint8))
