import struct

import cv2
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from domainbridge.datakit import (
    balance_undersample,
    dedup_consecutive,
    extract_frames,
    normalize,
    split,
)
from domainbridge.errors import IngestionError, LabelingError, RangeError, ShapeError, SpecError
from domainbridge.imgio import write_image
from domainbridge.manifest import (
    DatasetManifest,
    DatasetMeta,
    ImageSample,
    RegimeLabel,
    Split,
    SplitSpec,
    write_sidecar,
)

# ---------------------------------------------------------------- normalize


def test_normalize_endpoints():
    img = np.array([[0, 255]], dtype=np.uint8)
    out = normalize(img, bit_depth=8)
    assert out[0, 0] == 0.0
    assert out[0, 1] == 1.0


def test_normalize_midpoint():
    img = np.full((4, 4), 128, dtype=np.uint8)
    out = normalize(img, bit_depth=8)
    assert np.allclose(out, 128 / 255)


def test_normalize_16bit():
    img = np.array([[65535, 0]], dtype=np.uint16)
    out = normalize(img, bit_depth=16)
    assert out[0, 0] == 1.0 and out[0, 1] == 0.0


def test_normalize_idempotent():
    img = np.random.default_rng(0).random((8, 8)).astype(np.float32)
    once = normalize(img, bit_depth=8)
    twice = normalize(once, bit_depth=8)
    assert np.array_equal(once, twice)
    assert np.array_equal(once, img)


def test_normalize_out_of_range():
    with pytest.raises(RangeError):
        normalize(np.array([[300]], dtype=np.int32), bit_depth=8)
    with pytest.raises(RangeError):
        normalize(np.array([[-1]], dtype=np.int32), bit_depth=8)
    with pytest.raises(RangeError):
        normalize(np.array([[1.5]], dtype=np.float64), bit_depth=8)


@given(st.integers(min_value=0, max_value=255))
def test_normalize_always_unit_interval(value):
    out = normalize(np.array([[value]], dtype=np.uint8), bit_depth=8)
    assert 0.0 <= out[0, 0] <= 1.0
    assert np.array_equal(normalize(out, bit_depth=8), out)


# ---------------------------------------------------------------- split


def _label_manifest(n_chf, n_pre, domain="d"):
    samples = []
    for i in range(n_chf + n_pre):
        samples.append(
            ImageSample(
                path=f"/virtual/{domain}/img_{i}.png",
                domain_id=domain,
                label=RegimeLabel.CHF if i < n_chf else RegimeLabel.PRE_CHF,
                frame_index=i,
            )
        )
    return DatasetManifest(samples=samples, domain_id=domain)


def test_split_rounding_rule():
    manifest = _label_manifest(786, 786)
    tagged = split(manifest, SplitSpec(fractions=(0.8, 0.1, 0.1), seed=0))
    counts = {tag: 0 for tag in Split}
    for s in tagged.samples:
        counts[s.split] += 1
    assert counts[Split.VAL] == 157
    assert counts[Split.TEST] == 157
    assert counts[Split.TRAIN] == 1258


def test_split_deterministic():
    manifest = _label_manifest(30, 30)
    spec = SplitSpec(fractions=(0.6, 0.2, 0.2), seed=9)
    a = split(manifest, spec)
    b = split(manifest, spec)
    assert [s.split for s in a.samples] == [s.split for s in b.samples]


def test_split_stratified_balance():
    manifest = _label_manifest(100, 100)
    tagged = split(manifest, SplitSpec(fractions=(0.8, 0.1, 0.1), seed=1, stratified=True))
    for tag in Split:
        subset = tagged.subset(tag)
        counts = subset.class_counts()
        assert abs(counts[RegimeLabel.CHF] - counts[RegimeLabel.PRE_CHF]) <= 1


def test_split_every_sample_tagged_once():
    manifest = _label_manifest(17, 13)
    tagged = split(manifest, SplitSpec(fractions=(0.5, 0.25, 0.25), seed=0))
    assert all(s.split is not None for s in tagged.samples)
    assert len(tagged) == 30


@settings(max_examples=30, deadline=None)
@given(
    n=st.integers(min_value=1, max_value=400),
    f_val=st.integers(min_value=0, max_value=40),
    f_test=st.integers(min_value=0, max_value=40),
)
def test_split_counts_sum_to_n(n, f_val, f_test):
    fractions = (1.0 - (f_val + f_test) / 100.0, f_val / 100.0, f_test / 100.0)
    manifest = _label_manifest(n, 0)
    tagged = split(manifest, SplitSpec(fractions=fractions, seed=0))
    counts = {tag: 0 for tag in Split}
    for s in tagged.samples:
        counts[s.split] += 1
    assert sum(counts.values()) == n
    assert counts[Split.VAL] == int(np.floor(n * fractions[1]))
    assert counts[Split.TEST] == int(np.floor(n * fractions[2]))


def test_split_invalid_fractions():
    with pytest.raises(SpecError):
        split(_label_manifest(4, 4), SplitSpec(fractions=(0.5, 0.5, 0.5)))


# ---------------------------------------------------------------- balance


def test_balance_imbalanced_counts():
    manifest = _label_manifest(786, 5372)
    balanced = balance_undersample(manifest, seed=0)
    counts = balanced.class_counts()
    assert counts[RegimeLabel.CHF] == 786
    assert counts[RegimeLabel.PRE_CHF] == 786


def test_balance_fixed_point():
    manifest = _label_manifest(50, 50)
    balanced = balance_undersample(manifest, seed=1)
    assert [s.path for s in balanced.samples] == [s.path for s in manifest.samples]


def test_balance_deterministic():
    manifest = _label_manifest(30, 90)
    a = balance_undersample(manifest, seed=42)
    b = balance_undersample(manifest, seed=42)
    assert [s.path for s in a.samples] == [s.path for s in b.samples]


def test_balance_preserves_order():
    manifest = _label_manifest(10, 40)
    balanced = balance_undersample(manifest, seed=0)
    indices = [s.frame_index for s in balanced.samples]
    assert indices == sorted(indices)


def test_balance_requires_labels():
    samples = [
        ImageSample(path="/v/a.png", domain_id="d", frame_index=0),
        ImageSample(path="/v/b.png", domain_id="d", frame_index=1),
    ]
    with pytest.raises(LabelingError):
        balance_undersample(DatasetManifest(samples=samples, domain_id="d"), seed=0)


@settings(max_examples=30, deadline=None)
@given(
    n_chf=st.integers(min_value=1, max_value=200),
    n_pre=st.integers(min_value=1, max_value=200),
    seed=st.integers(min_value=0, max_value=10),
)
def test_balance_property_all_classes_at_minority_count(n_chf, n_pre, seed):
    manifest = _label_manifest(n_chf, n_pre)
    balanced = balance_undersample(manifest, seed=seed)
    counts = balanced.class_counts()
    minority = min(n_chf, n_pre)
    assert counts[RegimeLabel.CHF] == minority
    assert counts[RegimeLabel.PRE_CHF] == minority
    # kept samples are a subset of the originals, in original order
    kept = [s.frame_index for s in balanced.samples]
    assert kept == sorted(kept)


# ---------------------------------------------------------------- dedup


def _frame_manifest(tmp_path, frames):
    samples = []
    for i, frame in enumerate(frames):
        path = tmp_path / f"f_{i:04d}.png"
        write_image(path, frame.astype(np.float32))
        samples.append(
            ImageSample(path=path, domain_id="clip", frame_index=i, width=frame.shape[1],
                        height=frame.shape[0])
        )
    write_sidecar(tmp_path, DatasetMeta(bit_depth=8, width=frames[0].shape[1],
                                        height=frames[0].shape[0]))
    return DatasetManifest(samples=samples, domain_id="clip")


def _distinct_frames(n, size=16, seed=0):
    rng = np.random.default_rng(seed)
    return [rng.random((size, size)) for _ in range(n)]


def test_dedup_exact_duplicate_removed(tmp_path):
    a, b = _distinct_frames(2)
    manifest = _frame_manifest(tmp_path, [a, a, b])
    kept = dedup_consecutive(manifest)
    assert [s.frame_index for s in kept.samples] == [0, 2]


def test_dedup_noop_when_all_distinct(tmp_path):
    frames = _distinct_frames(3)
    manifest = _frame_manifest(tmp_path, frames)
    kept = dedup_consecutive(manifest)
    assert len(kept) == 3
    assert [s.frame_index for s in kept.samples] == [0, 1, 2]


def test_dedup_duplicated_clip_removal_rate(tmp_path):
    frames = _distinct_frames(50)
    doubled = []
    for f in frames:
        doubled.extend([f, f])
    manifest = _frame_manifest(tmp_path, doubled)
    kept = dedup_consecutive(manifest)
    assert len(kept) == 50
    assert kept.samples[0].frame_index == 0
    indices = [s.frame_index for s in kept.samples]
    assert indices == sorted(indices)  # never reorders


def test_dedup_first_frame_always_kept(tmp_path):
    a = _distinct_frames(1)[0]
    manifest = _frame_manifest(tmp_path, [a, a, a, a])
    kept = dedup_consecutive(manifest)
    assert len(kept) == 1
    assert kept.samples[0].frame_index == 0


def test_dedup_compares_to_last_kept(tmp_path):
    # Per-step drift stays below the threshold, so raw-neighbor comparison
    # would discard everything after frame 0; comparison against the last
    # *kept* frame accumulates the drift and periodically keeps a frame.
    rng = np.random.default_rng(5)
    base = rng.uniform(0.2, 0.6, size=(16, 16))
    frames = [np.clip(base + i * 4e-3, 0, 1) for i in range(40)]
    for early, later in zip(frames[:-1], frames[1:]):
        from domainbridge.metrics import ssim

        assert 1.0 - ssim(early, later) < 3e-4  # single-step below threshold
    manifest = _frame_manifest(tmp_path, frames)
    kept = dedup_consecutive(manifest)
    assert 1 < len(kept) < 40


def test_dedup_shape_mismatch(tmp_path):
    a = np.zeros((16, 16))
    b = np.zeros((8, 8))
    samples = []
    for i, frame in enumerate([a, b]):
        path = tmp_path / f"m_{i}.png"
        write_image(path, frame.astype(np.float32))
        samples.append(ImageSample(path=path, domain_id="clip", frame_index=i))
    manifest = DatasetManifest(samples=samples, domain_id="clip")
    with pytest.raises(ShapeError):
        dedup_consecutive(manifest)


# ---------------------------------------------------------------- extract_frames


def _write_video(path, n_frames, fps=30, size=32, seed=0):
    rng = np.random.default_rng(seed)
    fourcc = cv2.VideoWriter_fourcc(*"MJPG")
    writer = cv2.VideoWriter(str(path), fourcc, float(fps), (size, size), isColor=False)
    assert writer.isOpened()
    for _ in range(n_frames):
        writer.write((rng.random((size, size)) * 255).astype(np.uint8))
    writer.release()


def _count_avi_frames(path):
    """Independent frame count: walk the RIFF movi list and count video chunks."""
    data = path.read_bytes()
    assert data[:4] == b"RIFF" and data[8:12] == b"AVI "
    count = 0
    pos = 12
    stack = [len(data)]
    while pos + 8 <= len(data):
        chunk_id = data[pos : pos + 4]
        size = struct.unpack("<I", data[pos + 4 : pos + 8])[0]
        if chunk_id == b"LIST":
            pos += 12  # descend into the list body
            continue
        if chunk_id in (b"00dc", b"00db"):
            count += 1
        pos += 8 + size + (size % 2)
    return count


def test_extract_frames_count_and_order(tmp_path):
    video = tmp_path / "clip.avi"
    _write_video(video, n_frames=10)
    manifest = extract_frames(video, tmp_path / "frames")
    assert len(manifest) == 10
    assert [s.frame_index for s in manifest.samples] == list(range(10))
    assert all(s.path.exists() for s in manifest.samples)


def test_extract_frames_two_second_clip(tmp_path):
    video = tmp_path / "clip2s.avi"
    _write_video(video, n_frames=60, fps=30)
    reference_count = _count_avi_frames(video)
    assert reference_count == 60
    manifest = extract_frames(video, tmp_path / "frames")
    assert len(manifest) == reference_count


def test_extract_frames_missing_video(tmp_path):
    with pytest.raises(IngestionError):
        extract_frames(tmp_path / "missing.avi", tmp_path / "frames")


def test_extract_frames_corrupt_video(tmp_path):
    bogus = tmp_path / "corrupt.avi"
    bogus.write_bytes(b"this is not a video file at all")
    with pytest.raises(IngestionError) as err:
        extract_frames(bogus, tmp_path / "frames")
    assert "corrupt.avi" in str(err.value)
