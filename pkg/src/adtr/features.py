"""Feature-sample file format, dataset manifests, and multi-scale concat.

A sample file ("ADTRFT01") stores one C x H x W feature map with an
optional pixel mask and image label, bit-exactly:

    magic     8 bytes, ASCII "ADTRFT01"
    C, H, W   three unsigned 32-bit little-endian integers
    flags     1 byte; bit0 = mask present, bit1 = label present,
              remaining bits must be zero
    label     1 byte in {0, 1}, present iff bit1
    mask      H*W bytes in {0, 1}, row-major, present iff bit0
    payload   C*H*W IEEE-754 32-bit little-endian floats,
              element (c, h, w) at flat index (c*H + h)*W + w

A dataset manifest is UTF-8 text, one record per line:
``<relative-path>\\t<train|test>\\t<normal|anomalous|unlabeled>``.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable

import numpy as np

from adtr.errors import (
    AdtrError,
    BadMagicError,
    FlagsError,
    HeaderFieldError,
    MaskByteError,
    NonFiniteValueError,
    TrailingDataError,
    TruncationError,
)

MAGIC = b"ADTRFT01"
_HEADER = struct.Struct("<III")

SPLIT_TRAIN = "train"
SPLIT_TEST = "test"
LABEL_NORMAL = "normal"
LABEL_ANOMALOUS = "anomalous"
LABEL_UNLABELED = "unlabeled"


@dataclass
class FeatureMap:
    """A C x H x W real-valued feature tensor."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 3:
            raise HeaderFieldError(f"feature map must be C x H x W, got shape {self.values.shape}")
        if min(self.values.shape) < 1:
            raise HeaderFieldError(f"feature map extents must be >= 1, got {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise NonFiniteValueError("feature map contains non-finite values")

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


@dataclass
class SampleRecord:
    """One feature map plus optional pixel mask and image label."""

    features: FeatureMap
    pixel_mask: np.ndarray | None = None
    image_label: int | None = None
    sample_id: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.pixel_mask is not None:
            self.pixel_mask = np.asarray(self.pixel_mask, dtype=np.uint8)
            expected = (self.features.height, self.features.width)
            if self.pixel_mask.shape != expected:
                raise MaskByteError(
                    f"pixel mask shape {self.pixel_mask.shape} does not match features {expected}")
            if not np.isin(self.pixel_mask, (0, 1)).all():
                raise MaskByteError("pixel mask entries must be 0 or 1")
        if self.image_label is not None and self.image_label not in (0, 1):
            raise MaskByteError(f"image label must be 0 or 1, got {self.image_label}")
        if (self.pixel_mask is not None and self.pixel_mask.any()
                and self.image_label is not None and self.image_label != 1):
            raise MaskByteError("a sample with anomalous mask pixels must carry image label 1")


def write_sample(record: SampleRecord, dest: BinaryIO) -> int:
    """Serialize a record; returns the number of bytes written."""
    record.validate()
    fm = record.features
    flags = (1 if record.pixel_mask is not None else 0) | (2 if record.image_label is not None else 0)
    chunks = [MAGIC, _HEADER.pack(fm.channels, fm.height, fm.width), bytes([flags])]
    if record.image_label is not None:
        chunks.append(bytes([record.image_label]))
    if record.pixel_mask is not None:
        chunks.append(record.pixel_mask.astype(np.uint8).tobytes())
    chunks.append(np.ascontiguousarray(fm.values, dtype="<f4").tobytes())
    blob = b"".join(chunks)
    dest.write(blob)
    return len(blob)


def _read_exact(source: BinaryIO, n: int, what: str) -> bytes:
    buf = source.read(n)
    if len(buf) != n:
        raise TruncationError(f"truncated {what}: expected {n} bytes, found {len(buf)}")
    return buf


def read_sample(source: BinaryIO, sample_id: str = "") -> SampleRecord:
    """Parse and fully validate one sample; trailing bytes are rejected."""
    magic = source.read(len(MAGIC))
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    c, h, w = _HEADER.unpack(_read_exact(source, _HEADER.size, "header"))
    if min(c, h, w) < 1:
        raise HeaderFieldError(f"extents must be >= 1, got C={c} H={h} W={w}")
    flags = _read_exact(source, 1, "flags")[0]
    if flags & ~0b11:
        raise FlagsError(f"reserved flag bits set: 0x{flags:02x}")
    label: int | None = None
    if flags & 0b10:
        label = _read_exact(source, 1, "label")[0]
        if label not in (0, 1):
            raise MaskByteError(f"label byte must be 0 or 1, got {label}")
    mask: np.ndarray | None = None
    if flags & 0b01:
        raw = _read_exact(source, h * w, "mask")
        mask = np.frombuffer(raw, dtype=np.uint8).reshape(h, w)
        if not np.isin(mask, (0, 1)).all():
            raise MaskByteError("mask bytes must be 0 or 1")
    payload = _read_exact(source, 4 * c * h * w, "payload")
    values = np.frombuffer(payload, dtype="<f4").reshape(c, h, w)
    if not np.isfinite(values).all():
        raise NonFiniteValueError("payload contains non-finite floats")
    extra = source.read(1)
    if extra:
        raise TrailingDataError("stream continues past the declared payload")
    return SampleRecord(features=FeatureMap(values.copy()), pixel_mask=mask,
                        image_label=label, sample_id=sample_id)


def save_sample(record: SampleRecord, path: str | os.PathLike) -> int:
    try:
        with open(path, "wb") as fh:
            return write_sample(record, fh)
    except OSError as exc:
        raise AdtrError(f"cannot write sample {path}: {exc}") from exc


def load_sample(path: str | os.PathLike) -> SampleRecord:
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise AdtrError(f"cannot read sample {path}: {exc}") from exc
    with fh:
        stem = os.path.splitext(os.path.basename(os.fspath(path)))[0]
        return read_sample(fh, sample_id=stem)


# ---------------------------------------------------------------------------
# manifests


@dataclass
class ManifestEntry:
    path: str
    split: str
    label: str

    def __post_init__(self):
        if self.split not in (SPLIT_TRAIN, SPLIT_TEST):
            raise AdtrError(f"manifest split must be train or test, got {self.split!r}")
        if self.label not in (LABEL_NORMAL, LABEL_ANOMALOUS, LABEL_UNLABELED):
            raise AdtrError(f"manifest label {self.label!r} unknown")


@dataclass
class DatasetManifest:
    """Ordered sample index. Seed and notes are in-memory provenance only;
    the on-disk format carries just the entry lines."""

    entries: list[ManifestEntry] = field(default_factory=list)
    seed: int = 0
    notes: str = ""

    def split(self, which: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == which]

    def save(self, path: str | os.PathLike) -> None:
        lines = [f"{e.path}\t{e.split}\t{e.label}\n" for e in self.entries]
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.writelines(lines)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "DatasetManifest":
        entries = []
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise AdtrError(f"{path}:{lineno}: expected 3 tab-separated fields")
                entries.append(ManifestEntry(*parts))
        return cls(entries=entries)

    def validate(self, root: str | os.PathLike) -> None:
        """Check path uniqueness and that every referenced file parses."""
        seen = set()
        for e in self.entries:
            if e.path in seen:
                raise AdtrError(f"duplicate manifest path {e.path!r}")
            seen.add(e.path)
            load_sample(os.path.join(os.fspath(root), e.path))


# ---------------------------------------------------------------------------
# multi-scale concatenation


def bilinear_resize(values: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Bilinear resize with pixel-center alignment over the last two axes."""
    c, h, w = values.shape
    if (h, w) == (target_h, target_w):
        return values.copy()

    def axis_coords(src: int, dst: int):
        pos = (np.arange(dst) + 0.5) * (src / dst) - 0.5
        lo = np.clip(np.floor(pos).astype(np.int64), 0, src - 1)
        hi = np.clip(lo + 1, 0, src - 1)
        frac = np.clip(pos - np.floor(pos), 0.0, 1.0).astype(values.dtype)
        return lo, hi, frac

    h0, h1, fh = axis_coords(h, target_h)
    w0, w1, fw = axis_coords(w, target_w)
    rows0, rows1 = values[:, h0, :], values[:, h1, :]
    rows = rows0 + fh[None, :, None] * (rows1 - rows0)
    cols0, cols1 = rows[:, :, w0], rows[:, :, w1]
    return cols0 + fw[None, None, :] * (cols1 - cols0)


def concat_multiscale(maps: Iterable[FeatureMap], target_h: int, target_w: int) -> FeatureMap:
    """Resize each map to the target grid, then concatenate channels in order."""
    maps = list(maps)
    if not maps:
        raise AdtrError("concat_multiscale requires at least one feature map")
    resized = [bilinear_resize(m.values, target_h, target_w) for m in maps]
    return FeatureMap(np.concatenate(resized, axis=0))
