"""Deterministic synthetic two-domain, two-class image generator.

Class identity is carried by geometry alone (discrete bubbles for PRE_CHF, a
contiguous vapor band plus merged blobs for CHF); the two domains differ only
in photometric style (background level, contrast gain, gamma, blur, noise).
That separation is what lets a style translation recover class identity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .errors import SpecError
from .imgio import write_image
from .manifest import (
    DatasetManifest,
    DatasetMeta,
    ImageSample,
    RegimeLabel,
    save_manifest,
    write_sidecar,
)


@dataclass(frozen=True)
class BlobParams:
    """PRE_CHF geometry: discrete bright blobs rising from the bottom edge."""

    count_range: tuple[int, int] = (6, 14)
    radius_range: tuple[float, float] = (0.035, 0.075)  # fraction of image size
    rise: float = 0.85  # how far up the column bubbles may reach


@dataclass(frozen=True)
class BandParams:
    """CHF geometry: contiguous bottom band plus large merged blobs."""

    band_height_range: tuple[float, float] = (0.12, 0.2)
    blob_count_range: tuple[int, int] = (2, 5)
    blob_radius_range: tuple[float, float] = (0.1, 0.18)


@dataclass(frozen=True)
class DomainStyle:
    """Photometric rendering of the shared geometry.

    ``contrast_gain`` may be negative, producing dark structures on a bright
    background (inverted polarity).
    """

    background: float = 0.06
    contrast_gain: float = 0.92
    gamma: float = 1.0
    blur_sigma: float = 0.5
    noise_level: float = 0.02

    def fields(self) -> tuple:
        return (
            self.background,
            self.contrast_gain,
            self.gamma,
            self.blur_sigma,
            self.noise_level,
        )

    def n_differences(self, other: "DomainStyle") -> int:
        return sum(a != b for a, b in zip(self.fields(), other.fields()))


DEFAULT_STYLE_A = DomainStyle(
    background=0.06, contrast_gain=0.92, gamma=1.0, blur_sigma=0.5, noise_level=0.02
)
DEFAULT_STYLE_B = DomainStyle(
    background=0.85, contrast_gain=-0.78, gamma=1.3, blur_sigma=1.1, noise_level=0.04
)


@dataclass(frozen=True)
class SynthConfig:
    image_size: int = 64
    n_per_class_per_domain: int = 200
    pre_chf: BlobParams = field(default_factory=BlobParams)
    chf: BandParams = field(default_factory=BandParams)
    style_a: DomainStyle = field(default_factory=lambda: DEFAULT_STYLE_A)
    style_b: DomainStyle = field(default_factory=lambda: DEFAULT_STYLE_B)
    seed: int = 0
    domain_a_id: str = "synthA"
    domain_b_id: str = "synthB"
    separability_margin: float = 0.2
    domain_gap_floor: float = 0.1

    def __post_init__(self) -> None:
        if self.n_per_class_per_domain < 1:
            raise SpecError(
                f"n_per_class_per_domain must be >= 1, got {self.n_per_class_per_domain}"
            )
        if self.image_size < 16:
            raise SpecError(f"image_size must be >= 16, got {self.image_size}")
        if self.style_a.n_differences(self.style_b) < 2:
            raise SpecError(
                "domain styles must differ in at least two style parameters"
            )

    def to_dict(self) -> dict:
        return {
            "image_size": self.image_size,
            "n_per_class_per_domain": self.n_per_class_per_domain,
            "pre_chf": {
                "count_range": list(self.pre_chf.count_range),
                "radius_range": list(self.pre_chf.radius_range),
                "rise": self.pre_chf.rise,
            },
            "chf": {
                "band_height_range": list(self.chf.band_height_range),
                "blob_count_range": list(self.chf.blob_count_range),
                "blob_radius_range": list(self.chf.blob_radius_range),
            },
            "style_a": vars(self.style_a).copy(),
            "style_b": vars(self.style_b).copy(),
            "seed": self.seed,
            "domain_a_id": self.domain_a_id,
            "domain_b_id": self.domain_b_id,
            "separability_margin": self.separability_margin,
            "domain_gap_floor": self.domain_gap_floor,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "SynthConfig":
        kwargs = dict(raw)
        if "pre_chf" in kwargs:
            p = kwargs["pre_chf"]
            kwargs["pre_chf"] = BlobParams(
                count_range=tuple(p["count_range"]),
                radius_range=tuple(p["radius_range"]),
                rise=p.get("rise", 0.85),
            )
        if "chf" in kwargs:
            c = kwargs["chf"]
            kwargs["chf"] = BandParams(
                band_height_range=tuple(c["band_height_range"]),
                blob_count_range=tuple(c["blob_count_range"]),
                blob_radius_range=tuple(c["blob_radius_range"]),
            )
        for key in ("style_a", "style_b"):
            if key in kwargs:
                kwargs[key] = DomainStyle(**kwargs[key])
        return cls(**kwargs)


def _blob(canvas: np.ndarray, cx: float, cy: float, radius: float) -> None:
    """Max-blend a soft round bump onto the canvas."""
    size = canvas.shape[0]
    yy, xx = np.mgrid[0:size, 0:size]
    bump = np.exp(-(((xx - cx) ** 2 + (yy - cy) ** 2) / (2.0 * radius**2)))
    np.maximum(canvas, np.clip(bump * 1.4, 0.0, 1.0), out=canvas)


def _content(rng: np.random.Generator, size: int, label: RegimeLabel,
             pre_chf: BlobParams, chf: BandParams) -> np.ndarray:
    """Class geometry as a [0,1] intensity mask, independent of domain style."""
    canvas = np.zeros((size, size), dtype=np.float64)
    if label is RegimeLabel.PRE_CHF:
        count = int(rng.integers(pre_chf.count_range[0], pre_chf.count_range[1] + 1))
        for _ in range(count):
            cx = rng.uniform(0.05, 0.95) * size
            # Bubbles concentrate near the bottom edge and thin out upward.
            cy = size * (1.0 - pre_chf.rise * rng.uniform(0.0, 1.0) ** 1.6) - 1
            radius = rng.uniform(*pre_chf.radius_range) * size
            _blob(canvas, cx, cy, radius)
    else:
        height = rng.uniform(*chf.band_height_range) * size
        phase = rng.uniform(0, 2 * np.pi)
        freq = rng.uniform(1.0, 3.0)
        xs = np.arange(size)
        top = size - height * (1.0 + 0.3 * np.sin(2 * np.pi * freq * xs / size + phase))
        yy = np.arange(size)[:, None]
        canvas = np.maximum(canvas, np.clip((yy - top[None, :]) / 2.0 + 0.5, 0, 1))
        count = int(rng.integers(chf.blob_count_range[0], chf.blob_count_range[1] + 1))
        for _ in range(count):
            cx = rng.uniform(0.1, 0.9) * size
            cy = size - rng.uniform(0.0, 0.35) * size
            radius = rng.uniform(*chf.blob_radius_range) * size
            _blob(canvas, cx, cy, radius)
    return np.clip(canvas, 0.0, 1.0)


def _stylize(content: np.ndarray, style: DomainStyle, rng: np.random.Generator) -> np.ndarray:
    img = np.clip(style.background + style.contrast_gain * content, 0.0, 1.0)
    img = np.power(img, style.gamma)
    if style.blur_sigma > 0:
        img = cv2.GaussianBlur(img, ksize=(0, 0), sigmaX=style.blur_sigma)
    if style.noise_level > 0:
        img = img + rng.normal(0.0, style.noise_level, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def render_sample(
    config: SynthConfig, domain: str, label: RegimeLabel, index: int
) -> np.ndarray:
    """Render one image deterministically from (seed, domain, class, index).

    Each image has its own RNG substream, so generation order and parallelism
    cannot change the output.
    """
    domain_idx = 0 if domain == config.domain_a_id else 1
    class_idx = 0 if label is RegimeLabel.CHF else 1
    rng = np.random.default_rng([config.seed, domain_idx, class_idx, index])
    content = _content(rng, config.image_size, label, config.pre_chf, config.chf)
    style = config.style_a if domain_idx == 0 else config.style_b
    return _stylize(content, style, rng)


def generate_domain_pair(
    config: SynthConfig, out_dir: Path
) -> tuple[DatasetManifest, DatasetManifest]:
    """Write both labeled domain datasets (images, sidecar, manifest CSV)."""
    out_dir = Path(out_dir)
    manifests = []
    for domain in (config.domain_a_id, config.domain_b_id):
        domain_dir = out_dir / domain
        domain_dir.mkdir(parents=True, exist_ok=True)
        samples: list[ImageSample] = []
        frame = 0
        for label in (RegimeLabel.CHF, RegimeLabel.PRE_CHF):
            for i in range(config.n_per_class_per_domain):
                img = render_sample(config, domain, label, i)
                name = f"{label.value.lower()}_{i:05d}.png"
                path = domain_dir / name
                write_image(path, img.astype(np.float32), bit_depth=8)
                samples.append(
                    ImageSample(
                        path=path,
                        domain_id=domain,
                        label=label,
                        frame_index=frame,
                        width=config.image_size,
                        height=config.image_size,
                    )
                )
                frame += 1
        write_sidecar(
            domain_dir,
            DatasetMeta(bit_depth=8, width=config.image_size, height=config.image_size),
        )
        manifest = DatasetManifest(samples=samples, domain_id=domain)
        save_manifest(manifest, domain_dir / "manifest.csv")
        manifests.append(manifest)
    (out_dir / "synth_config.json").write_text(
        json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    return manifests[0], manifests[1]


def bottom_band_occupancy(
    image: np.ndarray, band_frac: float = 0.15, deviation: float = 0.15
) -> float:
    """Fraction of bottom-band pixels deviating from the background level.

    The background is estimated from the top half, so the statistic works for
    both polarities (bright-on-dark and dark-on-bright).
    """
    h = image.shape[0]
    background = float(np.median(image[: h // 2]))
    band = image[h - max(1, int(round(band_frac * h))) :]
    return float(np.mean(np.abs(band - background) > deviation))


def intensity_histogram_gap(
    images_a: np.ndarray, images_b: np.ndarray, bins: int = 32
) -> float:
    """Chi-square statistic between pooled pixel-intensity histograms."""
    ha, _ = np.histogram(images_a, bins=bins, range=(0.0, 1.0), density=False)
    hb, _ = np.histogram(images_b, bins=bins, range=(0.0, 1.0), density=False)
    pa = ha / max(ha.sum(), 1)
    pb = hb / max(hb.sum(), 1)
    denom = pa + pb
    mask = denom > 0
    return float(0.5 * np.sum((pa[mask] - pb[mask]) ** 2 / denom[mask]))
