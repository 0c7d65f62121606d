"""Pixel buffer type and PNG persistence shared by renderer, QC, assembly."""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image


@dataclass(frozen=True)
class ImageBuf:
    """Row-major RGB pixels, 8 bits per channel."""

    pixels: np.ndarray  # (height, width, 3) uint8

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 3 or px.shape[2] != 3 or px.dtype != np.uint8:
            raise ValueError(f"pixels must be (h, w, 3) uint8, got {px.shape} {px.dtype}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def to_png_bytes(self) -> bytes:
        buf = io.BytesIO()
        Image.fromarray(self.pixels, mode="RGB").save(buf, format="PNG", optimize=False)
        return buf.getvalue()

    def save_png(self, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_bytes(self.to_png_bytes())

    @staticmethod
    def load_png(path: str | Path) -> "ImageBuf":
        with Image.open(path) as im:
            # copy: PIL hands out read-only buffers
            return ImageBuf(np.array(im.convert("RGB"), dtype=np.uint8))

    @staticmethod
    def blank(size: int, color: tuple[int, int, int] = (255, 255, 255)) -> "ImageBuf":
        px = np.empty((size, size, 3), dtype=np.uint8)
        px[:] = color
        return ImageBuf(px)
