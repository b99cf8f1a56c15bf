"""File format round-trips, corruption rejection, and multi-scale concat."""

import io
import os

import numpy as np
import pytest

from adtr import features
from adtr.errors import (
    BadMagicError,
    FlagsError,
    FormatError,
    HeaderFieldError,
    MaskByteError,
    NonFiniteValueError,
    TrailingDataError,
    TruncationError,
)
from adtr.features import (
    DatasetManifest,
    FeatureMap,
    ManifestEntry,
    SampleRecord,
    bilinear_resize,
    concat_multiscale,
    read_sample,
    write_sample,
)

HEADER_BYTES = 21  # magic + C,H,W + flags; any single-byte change must reject


def small_record(c=2, h=3, w=4, mask=True, label=True, seed=0):
    rng = np.random.default_rng(seed)
    values = rng.standard_normal((c, h, w)).astype(np.float32)
    m = None
    lab = None
    if mask:
        m = (rng.random((h, w)) < 0.3).astype(np.uint8)
    if label:
        lab = 1 if (m is not None and m.any()) else 0
    return SampleRecord(features=FeatureMap(values), pixel_mask=m, image_label=lab,
                        sample_id="s")


def roundtrip(record):
    buf = io.BytesIO()
    write_sample(record, buf)
    buf.seek(0)
    return read_sample(buf, sample_id=record.sample_id)


def test_minimal_record_byte_count():
    record = SampleRecord(features=FeatureMap(np.zeros((1, 1, 1), dtype=np.float32)))
    buf = io.BytesIO()
    assert write_sample(record, buf) == 25  # 8 magic + 12 dims + 1 flags + 4 payload


def test_roundtrip_bit_identical():
    record = small_record()
    buf = io.BytesIO()
    write_sample(record, buf)
    first = buf.getvalue()
    back = roundtrip(record)
    assert np.array_equal(back.features.values, record.features.values)
    assert np.array_equal(back.pixel_mask, record.pixel_mask)
    assert back.image_label == record.image_label
    buf2 = io.BytesIO()
    write_sample(back, buf2)
    assert buf2.getvalue() == first


def test_roundtrip_without_mask_or_label():
    record = small_record(mask=False, label=False)
    back = roundtrip(record)
    assert back.pixel_mask is None and back.image_label is None


def test_mask_shape_mismatch_rejected_before_write():
    record = small_record(mask=False, label=False)
    record.pixel_mask = np.zeros((2, 2), dtype=np.uint8)
    sink = io.BytesIO()
    with pytest.raises(MaskByteError):
        write_sample(record, sink)
    assert sink.getvalue() == b""


def test_mask_set_requires_label_one():
    fm = FeatureMap(np.zeros((1, 2, 2), dtype=np.float32))
    mask = np.array([[1, 0], [0, 0]], dtype=np.uint8)
    with pytest.raises(MaskByteError):
        SampleRecord(features=fm, pixel_mask=mask, image_label=0)


def test_zero_length_stream_bad_magic():
    with pytest.raises(BadMagicError):
        read_sample(io.BytesIO(b""))


def test_wrong_magic():
    with pytest.raises(BadMagicError):
        read_sample(io.BytesIO(b"NOTADTRX" + b"\x00" * 40))


def test_truncated_payload_names_byte_counts():
    buf = io.BytesIO()
    write_sample(small_record(mask=False, label=False), buf)
    blob = buf.getvalue()
    with pytest.raises(TruncationError, match=r"expected 96 bytes, found 90"):
        read_sample(io.BytesIO(blob[:-6]))


def test_trailing_garbage_rejected():
    buf = io.BytesIO()
    write_sample(small_record(), buf)
    with pytest.raises(TrailingDataError):
        read_sample(io.BytesIO(buf.getvalue() + b"\x00"))


def test_non_finite_payload_rejected():
    buf = io.BytesIO()
    write_sample(small_record(mask=False, label=False), buf)
    blob = bytearray(buf.getvalue())
    blob[-4:] = np.array([np.nan], dtype="<f4").tobytes()
    with pytest.raises(NonFiniteValueError):
        read_sample(io.BytesIO(bytes(blob)))


def test_bad_mask_byte_rejected():
    buf = io.BytesIO()
    write_sample(small_record(mask=True, label=False), buf)
    blob = bytearray(buf.getvalue())
    blob[HEADER_BYTES] = 2  # first mask byte
    with pytest.raises(MaskByteError):
        read_sample(io.BytesIO(bytes(blob)))


def test_reserved_flag_bits_rejected():
    buf = io.BytesIO()
    write_sample(small_record(mask=False, label=False), buf)
    blob = bytearray(buf.getvalue())
    blob[20] = 0b100
    with pytest.raises(FlagsError):
        read_sample(io.BytesIO(bytes(blob)))


def test_zero_extent_rejected():
    blob = features.MAGIC + np.array([0, 1, 1], dtype="<u4").tobytes() + b"\x00"
    with pytest.raises(HeaderFieldError):
        read_sample(io.BytesIO(blob))


def test_every_header_byte_corruption_rejected():
    buf = io.BytesIO()
    write_sample(small_record(), buf)
    golden = buf.getvalue()
    rng = np.random.default_rng(99)
    rejections = 0
    for trial in range(100):
        pos = int(rng.integers(0, HEADER_BYTES))
        new = int(rng.integers(0, 256))
        while new == golden[pos]:
            new = int(rng.integers(0, 256))
        corrupted = bytearray(golden)
        corrupted[pos] = new
        with pytest.raises(FormatError):
            read_sample(io.BytesIO(bytes(corrupted)))
        rejections += 1
    assert rejections == 100


# ---------------------------------------------------------------------------
# manifests


def test_manifest_round_trip(tmp_path):
    manifest = DatasetManifest(entries=[
        ManifestEntry("a.adtrft", "train", "normal"),
        ManifestEntry("b.adtrft", "test", "anomalous"),
        ManifestEntry("c.adtrft", "test", "unlabeled"),
    ])
    path = tmp_path / "manifest.tsv"
    manifest.save(path)
    back = DatasetManifest.load(path)
    assert back.entries == manifest.entries


def test_manifest_validate_flags_duplicates(tmp_path):
    features.save_sample(small_record(), tmp_path / "a.adtrft")
    manifest = DatasetManifest(entries=[
        ManifestEntry("a.adtrft", "train", "normal"),
        ManifestEntry("a.adtrft", "test", "normal"),
    ])
    with pytest.raises(Exception, match="duplicate"):
        manifest.validate(tmp_path)


def test_manifest_rejects_unknown_split():
    with pytest.raises(Exception, match="split"):
        ManifestEntry("a", "validation", "normal")


# ---------------------------------------------------------------------------
# multi-scale concat


def test_concat_single_map_passthrough_bit_identical():
    fm = FeatureMap(np.random.default_rng(1).standard_normal((3, 4, 5)).astype(np.float32))
    out = concat_multiscale([fm], 4, 5)
    assert np.array_equal(out.values, fm.values)


def test_concat_channel_order():
    a = FeatureMap(np.zeros((1, 2, 2), dtype=np.float32))
    b = FeatureMap(np.ones((1, 2, 2), dtype=np.float32))
    out = concat_multiscale([a, b], 2, 2)
    assert out.channels == 2
    assert np.array_equal(out.values[0], a.values[0])
    assert np.array_equal(out.values[1], b.values[0])


def test_resize_preserves_constants_exactly():
    fm = FeatureMap(np.full((2, 2, 2), 3.25, dtype=np.float32))
    out = concat_multiscale([fm], 4, 4)
    assert out.values.shape == (2, 4, 4)
    assert np.array_equal(out.values, np.full((2, 4, 4), 3.25, dtype=np.float32))


def test_resize_is_linear():
    rng = np.random.default_rng(4)
    a = rng.standard_normal((2, 3, 5)).astype(np.float32)
    b = rng.standard_normal((2, 3, 5)).astype(np.float32)
    lhs = bilinear_resize(a + b, 7, 6)
    rhs = bilinear_resize(a, 7, 6) + bilinear_resize(b, 7, 6)
    assert np.abs(lhs - rhs).max() <= 1e-6


def test_concat_empty_list_rejected():
    with pytest.raises(Exception, match="at least one"):
        concat_multiscale([], 2, 2)


def test_concat_mixed_scales_total_channels():
    rng = np.random.default_rng(8)
    maps = [FeatureMap(rng.standard_normal((c, s, s)).astype(np.float32))
            for c, s in [(2, 8), (3, 4), (1, 2)]]
    out = concat_multiscale(maps, 8, 8)
    assert out.values.shape == (6, 8, 8)
