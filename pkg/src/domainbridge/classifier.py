"""Source-domain regime classifier: training with best-epoch selection,
persistence, batched inference, and evaluation."""

from __future__ import annotations

import copy
import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import DataError, LabelingError, ShapeError, SpecError
from .imgio import load_batch
from .manifest import CLASS_ORDER, DatasetManifest, RegimeLabel
from .metrics import EvalReport, classification_report, register_extractor

PREDICT_BATCH = 64


@dataclass(frozen=True)
class ClassifierConfig:
    architecture_id: str = "custom_cnn"
    epochs: int = 100
    learning_rate: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    batch_size: int = 32
    seed: int = 0
    input_size: int = 128

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise SpecError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise SpecError(f"learning_rate must be > 0, got {self.learning_rate}")

    def to_dict(self) -> dict:
        return {
            "architecture_id": self.architecture_id,
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "betas": list(self.betas),
            "batch_size": self.batch_size,
            "seed": self.seed,
            "input_size": self.input_size,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ClassifierConfig":
        raw = dict(raw)
        if "betas" in raw:
            raw["betas"] = tuple(raw["betas"])
        return cls(**raw)


class CustomCNN(nn.Module):
    """Three conv blocks (16 -> 32 -> 64, each with 2x downsampling), one
    128-unit hidden layer with dropout, two-way output."""

    def __init__(self, input_size: int):
        super().__init__()
        if input_size < 8 or input_size % 8:
            raise SpecError(
                f"custom_cnn needs input_size divisible by 8, got {input_size}"
            )
        self.conv = nn.Sequential(
            nn.Conv2d(1, 16, 3, 1, 1),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(2),
            nn.Conv2d(16, 32, 3, 1, 1),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(2),
            nn.Conv2d(32, 64, 3, 1, 1),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(2),
        )
        feat = input_size // 8
        self.hidden = nn.Linear(64 * feat * feat, 128)
        self.dropout = nn.Dropout(0.5)
        self.head = nn.Linear(128, len(CLASS_ORDER))

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """Penultimate-layer activations, the default FID embedding."""
        h = self.conv(x)
        h = h.flatten(1)
        return F.relu(self.hidden(h))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.dropout(self.features(x)))


# architecture_id -> builder(input_size) -> nn.Module. The module must expose
# features() returning the embedding used by the penultimate extractor.
ARCHITECTURE_REGISTRY: dict[str, Callable[[int], nn.Module]] = {
    "custom_cnn": CustomCNN,
}


def register_architecture(architecture_id: str, builder: Callable[[int], nn.Module]) -> None:
    ARCHITECTURE_REGISTRY[architecture_id] = builder


def _build_architecture(architecture_id: str, input_size: int) -> nn.Module:
    if architecture_id not in ARCHITECTURE_REGISTRY:
        raise SpecError(
            f"unknown architecture {architecture_id!r}; registered: "
            f"{sorted(ARCHITECTURE_REGISTRY)}"
        )
    return ARCHITECTURE_REGISTRY[architecture_id](input_size)


@dataclass
class TrainingLog:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_balanced_accuracy: list[float] = field(default_factory=list)
    best_epoch: int = 0  # 1-based; argmin of val_loss, earliest on ties

    def to_dict(self) -> dict:
        return {
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "val_balanced_accuracy": self.val_balanced_accuracy,
            "best_epoch": self.best_epoch,
        }


@dataclass
class TrainedClassifier:
    architecture_id: str
    module: nn.Module
    class_order: tuple[RegimeLabel, ...]
    input_size: int
    training_fingerprint: dict[str, str]

    def state_bytes(self) -> bytes:
        buf = io.BytesIO()
        torch.save(self.module.state_dict(), buf)
        return buf.getvalue()

    def weights_digest(self) -> str:
        """SHA-256 over the serialized weights; the no-retraining witness."""
        return hashlib.sha256(self.state_bytes()).hexdigest()


def _labels_to_indices(manifest: DatasetManifest) -> np.ndarray:
    index = {cls: i for i, cls in enumerate(CLASS_ORDER)}
    return np.array([index[lab] for lab in manifest.labels()], dtype=np.int64)


def _config_digest(config: ClassifierConfig) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _data_digest(manifest: DatasetManifest) -> str:
    h = hashlib.sha256()
    for s in manifest:
        h.update(Path(s.path).name.encode())
        h.update((s.label.value if s.label is not None else "").encode())
    return h.hexdigest()


def _epoch_validation(
    module: nn.Module, val_x: torch.Tensor, val_y: torch.Tensor
) -> tuple[float, float]:
    """Mean cross-entropy and balanced accuracy on the validation set.

    Module-level so tests can induce a synthetic val-loss series.
    """
    module.eval()
    with torch.no_grad():
        logits = module(val_x)
        loss = F.cross_entropy(logits, val_y).item()
        pred = logits.argmax(dim=1)
        recalls = []
        for cls in range(len(CLASS_ORDER)):
            mask = val_y == cls
            if mask.any():
                recalls.append((pred[mask] == cls).float().mean().item())
        balanced = float(np.mean(recalls)) if recalls else 0.0
    return loss, balanced


def train_classifier(
    train: DatasetManifest, val: DatasetManifest, config: ClassifierConfig
) -> tuple[TrainedClassifier, TrainingLog]:
    """Train on the train split, returning the weights of the epoch with the
    lowest validation loss (earliest epoch on ties), not the final epoch."""
    if len(val) == 0:
        raise DataError("validation set is empty")
    if len(train) == 0:
        raise DataError("training set is empty")
    train_y = _labels_to_indices(train)
    val_y_np = _labels_to_indices(val)
    if len(set(train_y.tolist())) < len(CLASS_ORDER):
        raise DataError("training set does not contain both classes")

    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    module = _build_architecture(config.architecture_id, config.input_size)

    train_x = torch.from_numpy(load_batch(train, config.input_size))
    val_x = torch.from_numpy(load_batch(val, config.input_size))
    train_y_t = torch.from_numpy(train_y)
    val_y_t = torch.from_numpy(val_y_np)

    optimizer = torch.optim.Adam(
        module.parameters(), lr=config.learning_rate, betas=config.betas
    )
    log = TrainingLog()
    best_loss = float("inf")
    best_state = None
    n = len(train)
    for epoch in range(1, config.epochs + 1):
        module.train()
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, config.batch_size):
            idx = torch.from_numpy(order[start : start + config.batch_size].copy())
            optimizer.zero_grad()
            logits = module(train_x[idx])
            loss = F.cross_entropy(logits, train_y_t[idx])
            loss.backward()
            optimizer.step()
            epoch_losses.append(loss.item())
        val_loss, val_bal = _epoch_validation(module, val_x, val_y_t)
        log.train_loss.append(float(np.mean(epoch_losses)))
        log.val_loss.append(val_loss)
        log.val_balanced_accuracy.append(val_bal)
        if val_loss < best_loss:
            best_loss = val_loss
            log.best_epoch = epoch
            best_state = copy.deepcopy(module.state_dict())

    module.load_state_dict(best_state)
    module.eval()
    model = TrainedClassifier(
        architecture_id=config.architecture_id,
        module=module,
        class_order=CLASS_ORDER,
        input_size=config.input_size,
        training_fingerprint={
            "config": _config_digest(config),
            "data": _data_digest(train),
        },
    )
    return model, log


def predict(model: TrainedClassifier, images: DatasetManifest) -> np.ndarray:
    """Per-sample class probabilities, rows ordered (CHF, PRE_CHF)."""
    if len(images) == 0:
        raise DataError("empty input manifest")
    x = load_batch(images, model.input_size)
    if x.shape[2] != model.input_size or x.shape[3] != model.input_size:
        raise ShapeError(f"batch shape {x.shape} does not match model input size")
    model.module.eval()
    probs = []
    with torch.no_grad():
        for start in range(0, x.shape[0], PREDICT_BATCH):
            chunk = torch.from_numpy(x[start : start + PREDICT_BATCH])
            probs.append(F.softmax(model.module(chunk), dim=1).numpy())
    return np.concatenate(probs, axis=0).astype(np.float64)


def evaluate(model: TrainedClassifier, labeled: DatasetManifest) -> EvalReport:
    """Classify a labeled manifest and report all five metrics."""
    if not labeled.is_labeled:
        raise LabelingError("evaluation requires a fully labeled manifest")
    probs = predict(model, labeled)
    return classification_report(probs, labeled.labels())


def save_classifier(model: TrainedClassifier, out_dir: Path) -> Path:
    """Persist the model bundle: weights.pt plus model.json metadata."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.save(model.module.state_dict(), out_dir / "weights.pt")
    meta = {
        "architecture_id": model.architecture_id,
        "class_order": [c.value for c in model.class_order],
        "input_size": model.input_size,
        "training_fingerprint": model.training_fingerprint,
    }
    (out_dir / "model.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return out_dir


def load_classifier(bundle_dir: Path) -> TrainedClassifier:
    bundle_dir = Path(bundle_dir)
    meta = json.loads((bundle_dir / "model.json").read_text(encoding="utf-8"))
    module = _build_architecture(meta["architecture_id"], meta["input_size"])
    module.load_state_dict(torch.load(bundle_dir / "weights.pt", weights_only=True))
    module.eval()
    return TrainedClassifier(
        architecture_id=meta["architecture_id"],
        module=module,
        class_order=tuple(RegimeLabel(v) for v in meta["class_order"]),
        input_size=meta["input_size"],
        training_fingerprint=meta["training_fingerprint"],
    )


class ClassifierEmbedding:
    """Penultimate-layer activations of a trained classifier, used as the
    default FID feature space.

    Vectors are L2-normalized: raw ReLU activations have unbounded scale,
    which makes covariance traces so large that the Fréchet trace term drowns
    in square-root-amplified float noise. Unit-norm features bound the
    spectrum, and distances between them rank checkpoints just as well.
    """

    def __init__(self, model: TrainedClassifier):
        self.model = model
        self.extractor_id = "classifier_penultimate"
        with torch.no_grad():
            probe = torch.zeros(1, 1, model.input_size, model.input_size)
            self.embedding_dim = int(model.module.features(probe).shape[1])

    def embed(self, manifest: DatasetManifest) -> np.ndarray:
        if len(manifest) == 0:
            raise DataError("cannot embed an empty manifest")
        x = load_batch(manifest, self.model.input_size)
        self.model.module.eval()
        chunks = []
        with torch.no_grad():
            for start in range(0, x.shape[0], PREDICT_BATCH):
                chunk = torch.from_numpy(x[start : start + PREDICT_BATCH])
                chunks.append(self.model.module.features(chunk).numpy())
        features = np.concatenate(chunks, axis=0).astype(np.float64)
        norms = np.linalg.norm(features, axis=1, keepdims=True)
        return features / np.maximum(norms, 1e-12)


class InceptionEmbedding:
    """Torchvision InceptionV3 pooled features (2048-d), the conventional FID
    embedding. Optional: needs pretrained weights, either a local state-dict
    file or a torchvision download."""

    def __init__(self, model: TrainedClassifier | None = None,
                 weights_path: Path | None = None):
        try:
            from torchvision.models import Inception_V3_Weights, inception_v3
        except ImportError as exc:
            raise SpecError("inception_v3 extractor requires torchvision") from exc
        self.extractor_id = "inception_v3"
        self.embedding_dim = 2048
        try:
            if weights_path is not None:
                net = inception_v3(weights=None, init_weights=False)
                net.load_state_dict(torch.load(weights_path, weights_only=True))
            else:
                net = inception_v3(weights=Inception_V3_Weights.DEFAULT)
        except Exception as exc:
            raise SpecError(
                "inception_v3 extractor needs pretrained weights (pass "
                "weights_path or allow the torchvision download); "
                f"loading failed with: {exc}"
            ) from exc
        net.fc = torch.nn.Identity()
        net.eval()
        self.net = net

    def embed(self, manifest: DatasetManifest) -> np.ndarray:
        if len(manifest) == 0:
            raise DataError("cannot embed an empty manifest")
        x = load_batch(manifest, 299)
        chunks = []
        with torch.no_grad():
            for start in range(0, x.shape[0], 16):
                chunk = torch.from_numpy(x[start : start + 16])
                chunk = chunk.repeat(1, 3, 1, 1)  # grayscale -> 3 channels
                chunks.append(self.net(chunk).numpy())
        return np.concatenate(chunks, axis=0).astype(np.float64)


register_extractor("classifier_penultimate", ClassifierEmbedding)
register_extractor("inception_v3", InceptionEmbedding)
