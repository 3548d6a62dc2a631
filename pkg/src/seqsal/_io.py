"""Atomic file writes and minimal image encoders shared by the exporters."""

from __future__ import annotations

import os

import numpy as np


def atomic_write_bytes(path, data: bytes) -> None:
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def pgm_bytes(grid: np.ndarray) -> bytes:
    """Binary (P5) 8-bit PGM encoding of a uint8 array."""
    grid = np.ascontiguousarray(grid, dtype=np.uint8)
    h, w = grid.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + grid.tobytes()
