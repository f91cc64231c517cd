"""PNG encoding of rendered float images."""

from __future__ import annotations

import io

import numpy as np
from PIL import Image


def to_uint8(img):
    """[0, 1] floats to display-ready bytes (round half up, clamped)."""
    x = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.floor(x * 255.0 + 0.5).astype(np.uint8)


def png_bytes(img) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(to_uint8(img), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def save_png(path, img):
    Image.fromarray(to_uint8(img), mode="RGB").save(path, format="PNG")


def load_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
