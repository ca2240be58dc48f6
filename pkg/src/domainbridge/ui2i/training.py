"""Loss computation, the checkpointed training loop, and translation inference.

Labels are never read anywhere in this module: training and translation
operate purely on pixels, which is what makes the whole target-domain phase
unsupervised.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from ..errors import DataError
from ..imgio import load_batch, write_image
from ..manifest import (
    DatasetManifest,
    DatasetMeta,
    ImageSample,
    Split,
    write_sidecar,
)
from .backends import get_backend, load_checkpoint_payload
from .types import (
    CheckpointRecord,
    DomainCode,
    LossWeights,
    UI2IConfig,
    checkpoint_filename,
    plan_checkpoints,
)

META_NAME = "ckpt_meta.json"


def compute_losses(
    generator,
    discriminator,
    batch_src: torch.Tensor,
    batch_tgt: torch.Tensor,
    weights: LossWeights,
) -> dict[str, torch.Tensor]:
    """Generator-side loss components for the conditional backend.

    cycle     - MAE between x and G(G(x, other), own), both directions
    identity  - MAE between x and G(x, own), both domains
    adversarial - negated critic score of translations (unbounded sign)
    domain_classification - cross-entropy of the critic's domain head on
        translations against the requested domain
    total     - weighted sum of the four components
    """
    if batch_src.numel() == 0 or batch_tgt.numel() == 0:
        raise DataError("empty batch")

    fake_tgt = generator(batch_src, DomainCode.TARGET)
    fake_src = generator(batch_tgt, DomainCode.SOURCE)

    score_tgt, dom_tgt = discriminator(fake_tgt)
    score_src, dom_src = discriminator(fake_src)
    adversarial = -(score_tgt.mean() + score_src.mean()) / 2.0

    tgt_code = torch.ones(fake_tgt.size(0), dtype=torch.long)
    src_code = torch.zeros(fake_src.size(0), dtype=torch.long)
    domain_classification = (
        F.cross_entropy(dom_tgt, tgt_code) + F.cross_entropy(dom_src, src_code)
    ) / 2.0

    cycle = (
        (generator(fake_tgt, DomainCode.SOURCE) - batch_src).abs().mean()
        + (generator(fake_src, DomainCode.TARGET) - batch_tgt).abs().mean()
    ) / 2.0
    identity = (
        (generator(batch_src, DomainCode.SOURCE) - batch_src).abs().mean()
        + (generator(batch_tgt, DomainCode.TARGET) - batch_tgt).abs().mean()
    ) / 2.0

    total = (
        weights.adversarial * adversarial
        + weights.domain * domain_classification
        + weights.cycle * cycle
        + weights.identity * identity
    )
    return {
        "adversarial": adversarial,
        "domain_classification": domain_classification,
        "cycle": cycle,
        "identity": identity,
        "total": total,
    }


def _training_pool(manifest: DatasetManifest, train_split_only: bool) -> DatasetManifest:
    if train_split_only and manifest.is_split:
        return manifest.subset(Split.TRAIN)
    return manifest


def _save_checkpoint(path: Path, iteration: int, backend, config: UI2IConfig,
                     rng: np.random.Generator) -> None:
    """Atomic write: temp file then rename."""
    payload = {
        "format_version": 1,
        "iteration": iteration,
        "backend_id": config.backend_id,
        "hyper": backend.hyper(),
        "state": backend.state(),
        "numpy_rng_state": rng.bit_generator.state,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)


def _write_meta(out_dir: Path, iteration: int, config: UI2IConfig,
                iterations_saved: list[int]) -> None:
    meta = {
        "iteration": iteration,
        "backend_id": config.backend_id,
        "config_hash": config.digest(),
        "iterations_saved": iterations_saved,
        "checkpoint_every": config.checkpoint_every,
        "total_iterations": config.total_iterations,
    }
    tmp = out_dir / (META_NAME + ".tmp")
    tmp.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    tmp.replace(out_dir / META_NAME)


def list_checkpoints(ckpt_dir: Path) -> list[CheckpointRecord]:
    """Discover saved checkpoints in iteration order."""
    ckpt_dir = Path(ckpt_dir)
    meta_path = ckpt_dir / META_NAME
    backend_id = "cond_cycle"
    if meta_path.exists():
        backend_id = json.loads(meta_path.read_text(encoding="utf-8"))["backend_id"]
    records = []
    for path in sorted(ckpt_dir.glob("ckpt_*.bin")):
        iteration = int(path.stem.split("_")[1])
        records.append(
            CheckpointRecord(
                iteration=iteration,
                path=path,
                backend_id=backend_id,
                order_index=len(records),
            )
        )
    return records


def train_ui2i(
    source: DatasetManifest,
    target_train: DatasetManifest,
    config: UI2IConfig,
    out_dir: Path,
    log_every: int = 0,
) -> list[CheckpointRecord]:
    """Adversarial translation training with periodic checkpointing.

    Consumes 100% of the source manifest and, when the target manifest carries
    split tags, only its TRAIN split. Resumes from the last checkpoint in
    ``out_dir`` when one exists for the same config.
    """
    out_dir = Path(out_dir)
    if len(source) == 0:
        raise DataError("source manifest is empty")
    target_pool = _training_pool(target_train, train_split_only=True)
    if len(target_pool) == 0:
        raise DataError("target manifest has no training samples")

    src_images = torch.from_numpy(load_batch(source, config.input_size))
    tgt_images = torch.from_numpy(load_batch(target_pool, config.input_size))

    torch.manual_seed(config.seed)
    backend = get_backend(config.backend_id).build(config)
    rng = np.random.default_rng(config.seed)

    start_iteration = 0
    existing = list_checkpoints(out_dir)
    meta_path = out_dir / META_NAME
    if existing and meta_path.exists():
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        if meta.get("config_hash") == config.digest():
            payload = load_checkpoint_payload(existing[-1].path)
            backend.restore(payload["state"])
            rng.bit_generator.state = payload["numpy_rng_state"]
            start_iteration = payload["iteration"]

    def sample(images: torch.Tensor) -> torch.Tensor:
        n = images.shape[0]
        replace = n < config.batch_size
        idx = rng.choice(n, size=config.batch_size, replace=replace)
        return images[torch.from_numpy(idx)]

    iterations_saved = [r.iteration for r in existing if r.iteration <= start_iteration]
    for iteration in range(start_iteration + 1, config.total_iterations + 1):
        stats = backend.train_step(sample(src_images), sample(tgt_images), iteration)
        if log_every and iteration % log_every == 0:
            pretty = " ".join(f"{k}={v:.4f}" for k, v in sorted(stats.items()))
            print(f"[ui2i] iter {iteration}/{config.total_iterations} {pretty}")
        if iteration % config.checkpoint_every == 0:
            _save_checkpoint(
                out_dir / checkpoint_filename(iteration), iteration, backend, config, rng
            )
            iterations_saved.append(iteration)
            _write_meta(out_dir, iteration, config, iterations_saved)

    records = list_checkpoints(out_dir)
    expected = plan_checkpoints(config)
    got = [r.iteration for r in records]
    if got != expected:
        raise DataError(f"checkpoint plan {expected} does not match saved {got}")
    return records


def load_translator(checkpoint: CheckpointRecord):
    """Instantiate the backend a checkpoint was trained with."""
    backend_cls = get_backend(checkpoint.backend_id)
    return backend_cls.load(checkpoint.path)


def translate(
    checkpoint: CheckpointRecord,
    images: DatasetManifest,
    to: DomainCode,
    out_dir: Path,
    batch_size: int = 16,
) -> DatasetManifest:
    """Run every manifest image through a checkpoint's generator.

    Output images are written as 8-bit PNGs in input order; the returned
    manifest carries no labels (translation is a pixel-level operation).
    """
    out_dir = Path(out_dir)
    domain_id = f"{images.domain_id}_to_{to.name.lower()}"
    if len(images) == 0:
        return DatasetManifest(samples=[], domain_id=domain_id)

    model = load_translator(checkpoint)
    size = getattr(model, "input_size", 0) or images.samples[0].width or 128
    batch = load_batch(images, size)

    out_dir.mkdir(parents=True, exist_ok=True)
    samples: list[ImageSample] = []
    for start in range(0, batch.shape[0], batch_size):
        chunk = torch.from_numpy(batch[start : start + batch_size])
        translated = model.translate(chunk, to).numpy()
        for offset in range(translated.shape[0]):
            index = start + offset
            path = out_dir / f"gen_{index:06d}.png"
            write_image(path, translated[offset, 0], bit_depth=8)
            samples.append(
                ImageSample(
                    path=path,
                    domain_id=domain_id,
                    label=None,
                    frame_index=index,
                    width=size,
                    height=size,
                )
            )
    write_sidecar(out_dir, DatasetMeta(bit_depth=8, width=size, height=size))
    return DatasetManifest(samples=samples, domain_id=domain_id)
