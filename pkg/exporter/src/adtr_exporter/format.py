"""Standalone ADTRFT01 writer.

This package talks to the detection side only through its external
interfaces, so the wire format is implemented here against the published
layout rather than imported:

    magic "ADTRFT01" | C,H,W as u32 LE | flags byte (bit0 mask,
    bit1 label) | label byte iff bit1 | H*W mask bytes iff bit0 |
    C*H*W float32 LE payload, index (c*H + h)*W + w

Manifest lines: ``<relative-path>\\t<train|test>\\t<label>``.
"""

from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"ADTRFT01"


def write_sample_bytes(values: np.ndarray, mask: np.ndarray | None,
                       label: int | None) -> bytes:
    values = np.asarray(values, dtype=np.float32)
    if values.ndim != 3:
        raise ValueError(f"expected C x H x W values, got {values.shape}")
    if not np.isfinite(values).all():
        raise ValueError("feature values must be finite")
    c, h, w = values.shape
    if mask is not None:
        mask = np.asarray(mask, dtype=np.uint8)
        if mask.shape != (h, w):
            raise ValueError(f"mask {mask.shape} does not match grid {(h, w)}")
        if not np.isin(mask, (0, 1)).all():
            raise ValueError("mask entries must be 0 or 1")
    if label is not None and label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label}")
    flags = (1 if mask is not None else 0) | (2 if label is not None else 0)
    chunks = [MAGIC, struct.pack("<III", c, h, w), bytes([flags])]
    if label is not None:
        chunks.append(bytes([label]))
    if mask is not None:
        chunks.append(mask.tobytes())
    chunks.append(np.ascontiguousarray(values, dtype="<f4").tobytes())
    return b"".join(chunks)


def save_sample(path: str | os.PathLike, values: np.ndarray,
                mask: np.ndarray | None, label: int | None) -> int:
    blob = write_sample_bytes(values, mask, label)
    with open(path, "wb") as fh:
        fh.write(blob)
    return len(blob)


def save_manifest(path: str | os.PathLike, entries: list[tuple[str, str, str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for rel, split, label in entries:
            fh.write(f"{rel}\t{split}\t{label}\n")
