"""Dataset manifests: the unit of exchange between all pipeline stages.

A manifest is an ordered list of image records belonging to one domain.
On disk it is a UTF-8 CSV with header ``path,domain_id,label,frame_index,split``
(paths relative to the CSV location) plus a per-directory sidecar
``dataset_meta.json`` declaring bit depth and image geometry.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

from .errors import DataError, LabelingError, SpecError

SIDECAR_NAME = "dataset_meta.json"
CSV_HEADER = ["path", "domain_id", "label", "frame_index", "split"]


class RegimeLabel(Enum):
    """The two boiling regimes. CHF is the positive class everywhere."""

    CHF = "CHF"
    PRE_CHF = "PRE_CHF"


# Fixed ordering used in every confusion matrix and probability row.
CLASS_ORDER = (RegimeLabel.CHF, RegimeLabel.PRE_CHF)


class Split(Enum):
    TRAIN = "TRAIN"
    VAL = "VAL"
    TEST = "TEST"


@dataclass
class ImageSample:
    """One image record inside a manifest.

    width/height of 0 mean "not yet known" (manifest loaded without its
    sidecar); ingestion and generation always fill real dimensions.
    """

    path: Path
    domain_id: str
    label: RegimeLabel | None = None
    frame_index: int = 0
    width: int = 0
    height: int = 0
    channels: int = 1
    split: Split | None = None

    def __post_init__(self) -> None:
        self.path = Path(self.path)
        if self.frame_index < 0:
            raise SpecError(f"frame_index must be nonnegative, got {self.frame_index}")
        if self.width < 0 or self.height < 0 or self.channels < 1:
            raise SpecError(
                f"invalid geometry {self.width}x{self.height}x{self.channels} "
                f"for {self.path}"
            )


@dataclass
class DatasetManifest:
    """Ordered image records sharing one domain id."""

    samples: list[ImageSample]
    domain_id: str

    def __post_init__(self) -> None:
        for s in self.samples:
            if s.domain_id != self.domain_id:
                raise SpecError(
                    f"sample domain {s.domain_id!r} does not match manifest "
                    f"domain {self.domain_id!r}"
                )

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    @property
    def is_labeled(self) -> bool:
        return all(s.label is not None for s in self.samples)

    @property
    def is_split(self) -> bool:
        return all(s.split is not None for s in self.samples)

    def labels(self) -> list[RegimeLabel]:
        """Labels in sample order; raises if any sample is unlabeled."""
        out = []
        for s in self.samples:
            if s.label is None:
                raise LabelingError(f"sample {s.path} has no label")
            out.append(s.label)
        return out

    def subset(self, split: Split) -> "DatasetManifest":
        """Samples carrying the given split tag, order preserved."""
        kept = [s for s in self.samples if s.split is split]
        return DatasetManifest(samples=kept, domain_id=self.domain_id)

    def class_counts(self) -> dict[RegimeLabel, int]:
        counts: dict[RegimeLabel, int] = {}
        for s in self.samples:
            if s.label is None:
                raise LabelingError(f"sample {s.path} has no label")
            counts[s.label] = counts.get(s.label, 0) + 1
        return counts

    def without_labels(self) -> "DatasetManifest":
        stripped = [replace(s, label=None) for s in self.samples]
        return DatasetManifest(samples=stripped, domain_id=self.domain_id)


@dataclass(frozen=True)
class SplitSpec:
    """Train/val/test fractions plus the seed driving the shuffle."""

    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0
    stratified: bool = False

    def __post_init__(self) -> None:
        if len(self.fractions) != 3:
            raise SpecError("fractions must be a (train, val, test) triple")
        if any(f < 0 for f in self.fractions):
            raise SpecError(f"fractions must be nonnegative, got {self.fractions}")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise SpecError(f"fractions must sum to 1, got {self.fractions}")


@dataclass(frozen=True)
class DatasetMeta:
    """Per-directory sidecar: pixel bit depth and canonical geometry."""

    bit_depth: int = 8
    width: int = 0
    height: int = 0

    def __post_init__(self) -> None:
        if self.bit_depth not in (8, 16):
            raise SpecError(f"bit_depth must be 8 or 16, got {self.bit_depth}")


def write_sidecar(directory: Path, meta: DatasetMeta) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / SIDECAR_NAME
    payload = {"bit_depth": meta.bit_depth, "width": meta.width, "height": meta.height}
    path.write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_sidecar(directory: Path) -> DatasetMeta:
    path = Path(directory) / SIDECAR_NAME
    if not path.exists():
        # Default: 8-bit, geometry unknown.
        return DatasetMeta()
    raw = json.loads(path.read_text(encoding="utf-8"))
    return DatasetMeta(
        bit_depth=int(raw.get("bit_depth", 8)),
        width=int(raw.get("width", 0)),
        height=int(raw.get("height", 0)),
    )


def save_manifest(manifest: DatasetManifest, csv_path: Path) -> Path:
    """Write a manifest CSV with paths relative to the CSV location."""
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    base = csv_path.parent.resolve()
    with csv_path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for s in manifest.samples:
            try:
                rel = s.path.resolve().relative_to(base)
            except ValueError:
                # Outside the manifest directory: fall back to the raw path.
                rel = s.path
            writer.writerow(
                [
                    rel.as_posix(),
                    s.domain_id,
                    s.label.value if s.label is not None else "",
                    s.frame_index,
                    s.split.value if s.split is not None else "",
                ]
            )
    return csv_path


def load_manifest(csv_path: Path) -> DatasetManifest:
    """Read a manifest CSV; paths are resolved relative to the CSV location."""
    csv_path = Path(csv_path)
    if not csv_path.exists():
        raise DataError(f"manifest not found: {csv_path}")
    base = csv_path.parent.resolve()
    meta = read_sidecar(base)
    samples: list[ImageSample] = []
    domain_id = ""
    with csv_path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise DataError(
                f"unexpected manifest header {reader.fieldnames} in {csv_path}"
            )
        for row in reader:
            domain_id = row["domain_id"]
            samples.append(
                ImageSample(
                    path=(base / row["path"]).resolve(),
                    domain_id=domain_id,
                    label=RegimeLabel(row["label"]) if row["label"] else None,
                    frame_index=int(row["frame_index"]),
                    width=meta.width,
                    height=meta.height,
                    channels=1,
                    split=Split(row["split"]) if row["split"] else None,
                )
            )
    if not samples:
        raise DataError(f"manifest {csv_path} contains no samples")
    return DatasetManifest(samples=samples, domain_id=domain_id)


class AccessAudit:
    """Counts label and path reads on wrapped manifests.

    The unsupervised stages (UI2I training, FID sweep) must never read the
    ``label`` field; the target TEST split must not be loaded before the final
    stage. Wrapping a manifest with an audit makes both claims checkable.
    """

    def __init__(self) -> None:
        self.label_reads = 0
        self.path_reads = 0

    def wrap(self, manifest: DatasetManifest) -> DatasetManifest:
        audited = [_AuditedSample(s, self) for s in manifest.samples]
        wrapped = DatasetManifest.__new__(DatasetManifest)
        wrapped.samples = audited  # bypass __post_init__: proxies are not ImageSample
        wrapped.domain_id = manifest.domain_id
        return wrapped


class _AuditedSample:
    """Proxy recording attribute reads on one sample."""

    __slots__ = ("_sample", "_audit")

    def __init__(self, sample: ImageSample, audit: AccessAudit) -> None:
        object.__setattr__(self, "_sample", sample)
        object.__setattr__(self, "_audit", audit)

    def __getattr__(self, name: str):
        if name == "label":
            self._audit.label_reads += 1
        elif name == "path":
            self._audit.path_reads += 1
        return getattr(self._sample, name)

    def __repr__(self) -> str:
        return f"_AuditedSample({self._sample!r})"
