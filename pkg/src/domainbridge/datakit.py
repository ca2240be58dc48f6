"""Raw data ingestion and preprocessing: frame extraction, near-duplicate
removal, normalization, class balancing, and train/val/test splitting."""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path

import cv2
import numpy as np

from .errors import IngestionError, LabelingError, RangeError, ShapeError
from .imgio import read_image, write_image
from .manifest import (
    DatasetManifest,
    DatasetMeta,
    ImageSample,
    RegimeLabel,
    Split,
    SplitSpec,
    read_sidecar,
    write_sidecar,
)
from .metrics import ssim

DEDUP_THRESHOLD = 3e-4


def extract_frames(
    video: Path, out_dir: Path, domain_id: str | None = None
) -> DatasetManifest:
    """Decode every frame of a video into lossless grayscale PNGs.

    Frame order is preserved; ``frame_index`` equals the decode order.
    """
    video = Path(video)
    out_dir = Path(out_dir)
    if not video.exists():
        raise IngestionError(f"video not found: {video}")
    if domain_id is None:
        domain_id = video.stem
    cap = cv2.VideoCapture(str(video))
    if not cap.isOpened():
        raise IngestionError(f"cannot open video: {video}")
    out_dir.mkdir(parents=True, exist_ok=True)
    samples: list[ImageSample] = []
    width = height = 0
    index = 0
    while True:
        ok, frame = cap.read()
        if not ok:
            break
        gray = cv2.cvtColor(frame, cv2.COLOR_BGR2GRAY)
        height, width = gray.shape
        path = out_dir / f"frame_{index:06d}.png"
        write_image(path, gray.astype(np.float32) / 255.0, bit_depth=8)
        samples.append(
            ImageSample(
                path=path,
                domain_id=domain_id,
                frame_index=index,
                width=width,
                height=height,
            )
        )
        index += 1
    cap.release()
    if not samples:
        raise IngestionError(f"no decodable frames in video: {video}")
    write_sidecar(out_dir, DatasetMeta(bit_depth=8, width=width, height=height))
    return DatasetManifest(samples=samples, domain_id=domain_id)


def dedup_consecutive(
    manifest: DatasetManifest, threshold: float = DEDUP_THRESHOLD
) -> DatasetManifest:
    """Drop frames structurally indistinguishable from the last kept frame.

    A candidate is removed when d = 1 - SSIM(last_kept, candidate) < threshold.
    Comparing against the last *kept* frame (not the last raw frame) prevents
    slow drift from evading the filter. The first frame is always kept.
    """
    if not manifest.samples:
        return manifest
    bit_depth = read_sidecar(Path(manifest.samples[0].path).parent).bit_depth
    kept = [manifest.samples[0]]
    last_img = read_image(manifest.samples[0].path, bit_depth=bit_depth)
    for sample in manifest.samples[1:]:
        img = read_image(sample.path, bit_depth=bit_depth)
        if img.shape != last_img.shape:
            raise ShapeError(
                f"image shape {img.shape} of {sample.path} does not match "
                f"{last_img.shape} earlier in the manifest"
            )
        if 1.0 - ssim(last_img, img) < threshold:
            continue
        kept.append(sample)
        last_img = img
    return DatasetManifest(samples=kept, domain_id=manifest.domain_id)


def normalize(image: np.ndarray, bit_depth: int = 8) -> np.ndarray:
    """Map integer pixel values onto [0,1] by the declared bit depth.

    Real-valued input already in [0,1] passes through unchanged, so the
    operation is idempotent.
    """
    arr = np.asarray(image)
    peak = 2**bit_depth - 1
    if np.issubdtype(arr.dtype, np.floating):
        if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
            raise RangeError(
                f"real input outside [0,1]: min={arr.min():.4g} max={arr.max():.4g}"
            )
        return arr.astype(np.float32)
    if arr.size and (arr.min() < 0 or arr.max() > peak):
        raise RangeError(
            f"pixel values outside [0, {peak}]: min={arr.min()} max={arr.max()}"
        )
    return (arr.astype(np.float32)) / np.float32(peak)


def balance_undersample(manifest: DatasetManifest, seed: int = 0) -> DatasetManifest:
    """Downsample every class to the minority-class count.

    Removal is uniform without replacement, seeded; classes already at the
    minority count keep all their samples. Relative order is preserved.
    """
    counts = manifest.class_counts()  # raises LabelingError if unlabeled
    if not counts:
        raise LabelingError("manifest has no labeled samples")
    minority = min(counts.values())
    rng = np.random.default_rng(seed)
    keep_idx: set[int] = set()
    for cls in sorted(counts, key=lambda c: c.value):
        idx = [i for i, s in enumerate(manifest.samples) if s.label is cls]
        if len(idx) > minority:
            chosen = rng.choice(len(idx), size=minority, replace=False)
            idx = [idx[int(j)] for j in chosen]
        keep_idx.update(idx)
    kept = [s for i, s in enumerate(manifest.samples) if i in keep_idx]
    return DatasetManifest(samples=kept, domain_id=manifest.domain_id)


def split(manifest: DatasetManifest, spec: SplitSpec) -> DatasetManifest:
    """Assign TRAIN/VAL/TEST tags.

    Counts follow val = floor(n*f_val), test = floor(n*f_test), train =
    remainder. Stratified mode applies the same rule per class, keeping class
    proportions within one sample of the global fractions.
    """
    n = len(manifest.samples)
    rng = np.random.default_rng(spec.seed)
    assignment: dict[int, Split] = {}

    def assign(indices: list[int]) -> None:
        order = [indices[int(j)] for j in rng.permutation(len(indices))]
        n_val = int(np.floor(len(order) * spec.fractions[1]))
        n_test = int(np.floor(len(order) * spec.fractions[2]))
        for i in order[:n_val]:
            assignment[i] = Split.VAL
        for i in order[n_val : n_val + n_test]:
            assignment[i] = Split.TEST
        for i in order[n_val + n_test :]:
            assignment[i] = Split.TRAIN

    if spec.stratified:
        by_class: dict[RegimeLabel, list[int]] = {}
        for i, s in enumerate(manifest.samples):
            if s.label is None:
                raise LabelingError(f"stratified split requires labels: {s.path}")
            by_class.setdefault(s.label, []).append(i)
        for cls in sorted(by_class, key=lambda c: c.value):
            assign(by_class[cls])
    else:
        assign(list(range(n)))

    tagged = [replace(s, split=assignment[i]) for i, s in enumerate(manifest.samples)]
    return DatasetManifest(samples=tagged, domain_id=manifest.domain_id)
