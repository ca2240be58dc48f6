"""Measurement mathematics: SSIM, classification metrics, embedding Gaussians,
and the Fréchet distance between them.

Conventions fixed here and used everywhere: CHF is the positive class,
probability rows are ordered (CHF, PRE_CHF), confusion matrices are laid out
row = true class, column = predicted class in that same order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

import numpy as np
from scipy.stats import rankdata

from .errors import DataError, NumericalError, ShapeError
from .manifest import CLASS_ORDER, DatasetManifest, RegimeLabel

SSIM_WINDOW = 7
SSIM_K1 = 0.01
SSIM_K2 = 0.03

# Fréchet-distance stabilization: ridge added to both covariances when the
# square root of their product shows imaginary components above the residue
# threshold; residue below it is discarded as numerical noise.
FID_EPS = 1e-6
FID_IMAG_RESIDUE = 1e-3
# Eigenvalues of the covariance product below this fraction of the largest one
# are float noise around zero (rank-deficient covariances produce thousands of
# them); sqrt would amplify that noise into a visible trace bias, so they are
# zeroed instead.
FID_EIG_CUTOFF = 1e-10


def _window_sums(x: np.ndarray, win: int) -> np.ndarray:
    """Sliding-window sums over all fully-contained win x win windows."""
    c = np.zeros((x.shape[0] + 1, x.shape[1] + 1), dtype=np.float64)
    np.cumsum(np.cumsum(x, axis=0), axis=1, out=c[1:, 1:])
    return c[win:, win:] - c[:-win, win:] - c[win:, :-win] + c[:-win, :-win]


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Structural similarity between two [0,1] grayscale images.

    Uniform 7x7 window, sample covariance, C1=(0.01*L)^2, C2=(0.03*L)^2 with
    L=1: the same algorithm scikit-image uses by default, so values agree with
    it to floating-point accuracy.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 2 or min(a.shape) < SSIM_WINDOW:
        raise ShapeError(
            f"images must be 2-D with sides >= {SSIM_WINDOW}, got {a.shape}"
        )
    np_win = SSIM_WINDOW * SSIM_WINDOW
    cov_norm = np_win / (np_win - 1)  # sample covariance
    ua = _window_sums(a, SSIM_WINDOW) / np_win
    ub = _window_sums(b, SSIM_WINDOW) / np_win
    uaa = _window_sums(a * a, SSIM_WINDOW) / np_win
    ubb = _window_sums(b * b, SSIM_WINDOW) / np_win
    uab = _window_sums(a * b, SSIM_WINDOW) / np_win
    va = cov_norm * (uaa - ua * ua)
    vb = cov_norm * (ubb - ub * ub)
    vab = cov_norm * (uab - ua * ub)
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    s = ((2 * ua * ub + c1) * (2 * vab + c2)) / (
        (ua * ua + ub * ub + c1) * (va + vb + c2)
    )
    return float(s.mean())


@dataclass(frozen=True)
class ConfusionMatrix:
    """Two-class counts with CHF as the positive class."""

    tp: int
    fn: int
    fp: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.fp + self.tn

    def as_array(self) -> np.ndarray:
        """Rows = true (CHF, PRE_CHF), columns = predicted (CHF, PRE_CHF)."""
        return np.array([[self.tp, self.fn], [self.fp, self.tn]], dtype=np.int64)


@dataclass(frozen=True)
class EvalReport:
    confusion: ConfusionMatrix
    balanced_accuracy: float
    f1_weighted: float
    precision_weighted: float
    recall_weighted: float
    roc_auc: float | None

    def to_dict(self) -> dict:
        return {
            "confusion": [
                [self.confusion.tp, self.confusion.fn],
                [self.confusion.fp, self.confusion.tn],
            ],
            "balanced_accuracy": self.balanced_accuracy,
            "f1_weighted": self.f1_weighted,
            "precision_weighted": self.precision_weighted,
            "recall_weighted": self.recall_weighted,
            "roc_auc": self.roc_auc,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "EvalReport":
        (tp, fn), (fp, tn) = raw["confusion"]
        return cls(
            confusion=ConfusionMatrix(tp=tp, fn=fn, fp=fp, tn=tn),
            balanced_accuracy=raw["balanced_accuracy"],
            f1_weighted=raw["f1_weighted"],
            precision_weighted=raw["precision_weighted"],
            recall_weighted=raw["recall_weighted"],
            roc_auc=raw["roc_auc"],
        )


def _safe_div(num: float, den: float) -> float:
    return num / den if den else 0.0


def report_from_counts(
    tp: int, fn: int, fp: int, tn: int, roc_auc: float | None = None
) -> EvalReport:
    """All confusion-derived metrics from raw counts.

    ROC AUC cannot be recovered from counts, so it is passed through (or left
    undefined).
    """
    support_pos = tp + fn
    support_neg = fp + tn
    total = support_pos + support_neg
    if total == 0:
        raise DataError("empty confusion matrix")
    recall_pos = _safe_div(tp, support_pos)
    recall_neg = _safe_div(tn, support_neg)
    precision_pos = _safe_div(tp, tp + fp)
    precision_neg = _safe_div(tn, tn + fn)
    f1_pos = _safe_div(2 * precision_pos * recall_pos, precision_pos + recall_pos)
    f1_neg = _safe_div(2 * precision_neg * recall_neg, precision_neg + recall_neg)

    # Balanced accuracy averages recall over classes actually present.
    recalls = []
    if support_pos:
        recalls.append(recall_pos)
    if support_neg:
        recalls.append(recall_neg)
    balanced = float(np.mean(recalls))

    w_pos = support_pos / total
    w_neg = support_neg / total
    return EvalReport(
        confusion=ConfusionMatrix(tp=tp, fn=fn, fp=fp, tn=tn),
        balanced_accuracy=balanced,
        f1_weighted=w_pos * f1_pos + w_neg * f1_neg,
        precision_weighted=w_pos * precision_pos + w_neg * precision_neg,
        recall_weighted=w_pos * recall_pos + w_neg * recall_neg,
        roc_auc=roc_auc,
    )


def classification_report(
    probabilities: np.ndarray, labels: Sequence[RegimeLabel]
) -> EvalReport:
    """Score per-sample class probabilities against true labels.

    Hard labels come from argmax with ties resolved to CHF. ROC AUC ranks the
    CHF probability with average ranks for ties; it is reported as None when
    the labels contain a single class.
    """
    probs = np.asarray(probabilities, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[1] != len(CLASS_ORDER):
        raise ShapeError(f"expected (n, 2) probabilities, got {probs.shape}")
    if len(labels) != probs.shape[0]:
        raise ShapeError(
            f"{probs.shape[0]} probability rows vs {len(labels)} labels"
        )
    if probs.shape[0] == 0:
        raise DataError("no samples to score")

    true_pos = np.array([lab is RegimeLabel.CHF for lab in labels])
    # argmax returns the first maximal column; CHF is column 0, so ties go CHF.
    pred_pos = np.argmax(probs, axis=1) == 0
    tp = int(np.sum(true_pos & pred_pos))
    fn = int(np.sum(true_pos & ~pred_pos))
    fp = int(np.sum(~true_pos & pred_pos))
    tn = int(np.sum(~true_pos & ~pred_pos))

    roc_auc: float | None = None
    n_pos = int(true_pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos and n_neg:
        ranks = rankdata(probs[:, 0], method="average")
        u = float(ranks[true_pos].sum()) - n_pos * (n_pos + 1) / 2.0
        roc_auc = u / (n_pos * n_neg)
    return report_from_counts(tp, fn, fp, tn, roc_auc=roc_auc)


@dataclass(frozen=True)
class GaussianSummary:
    """Mean vector and covariance matrix fitted to a set of embeddings.

    ``factor`` is the centered data scaled by 1/sqrt(n-1), so C = factor^T
    factor. When both operands of a Fréchet distance carry it, the trace term
    is computed from singular values of the small n x n cross-product, which
    avoids the float-noise amplification of eigendecomposing the d x d
    covariance product. Summaries built directly from (m, C) leave it None.
    """

    m: np.ndarray
    C: np.ndarray
    n: int
    factor: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.m.shape[0]


def fit_gaussian(embeddings: np.ndarray) -> GaussianSummary:
    """Column mean and unbiased (n-1 divisor) covariance of an n x d matrix."""
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim != 2:
        raise ShapeError(f"expected an (n, d) matrix, got shape {emb.shape}")
    n = emb.shape[0]
    if n < 2:
        raise DataError(f"need at least 2 embeddings to fit a Gaussian, got {n}")
    m = emb.mean(axis=0)
    centered = emb - m
    c = centered.T @ centered / (n - 1)
    c = (c + c.T) / 2.0  # enforce exact symmetry
    return GaussianSummary(m=m, C=c, n=n, factor=centered / np.sqrt(n - 1))


@dataclass(frozen=True)
class FIDScore:
    value: float
    mean_term: float
    trace_term: float


def _trace_sqrt_factored(f1: np.ndarray, f2: np.ndarray) -> float:
    """Tr((C1 C2)^(1/2)) from data factors: the nonzero eigenvalues of C1 C2
    are the squared singular values of f1 f2^T, so the trace of the square
    root is just their sum. Exact up to SVD accuracy, with no dynamic-range
    squaring."""
    return float(np.linalg.svd(f1 @ f2.T, compute_uv=False).sum())


def _trace_sqrt_product(c1: np.ndarray, c2: np.ndarray) -> float:
    """Tr((c1 c2)^(1/2)) via eigendecomposition, with ridge stabilization."""

    def attempt(a: np.ndarray, b: np.ndarray) -> tuple[float, float, complex]:
        eigvals = np.linalg.eigvals(a @ b)
        cutoff = max(float(eigvals.real.max(initial=0.0)), 0.0) * FID_EIG_CUTOFF
        kept = np.where(np.abs(eigvals) > cutoff, eigvals, 0.0)
        roots = np.sqrt(kept.astype(np.complex128))
        worst = int(np.argmax(np.abs(roots.imag)))
        return float(roots.real.sum()), float(np.abs(roots.imag).max()), eigvals[worst]

    trace, residue, offender = attempt(c1, c2)
    if residue <= FID_IMAG_RESIDUE:
        return trace
    ridge = FID_EPS * np.eye(c1.shape[0])
    trace, residue, offender = attempt(c1 + ridge, c2 + ridge)
    if residue <= FID_IMAG_RESIDUE:
        return trace
    raise NumericalError(
        f"matrix square root did not converge after stabilization: eigenvalue "
        f"{offender} leaves imaginary residue {residue:.3g}"
    )


def frechet_distance(g1: GaussianSummary, g2: GaussianSummary) -> FIDScore:
    """Squared Fréchet (Wasserstein-2) distance between two Gaussians:
    |m1 - m2|^2 + Tr(C1 + C2 - 2 (C1 C2)^(1/2))."""
    if g1.dim != g2.dim:
        raise ShapeError(f"dimension mismatch: {g1.dim} vs {g2.dim}")
    if g1.C.shape != (g1.dim, g1.dim) or g2.C.shape != (g2.dim, g2.dim):
        raise ShapeError("covariance shape does not match mean dimension")
    for name, c in (("first", g1.C), ("second", g2.C)):
        spectrum = np.linalg.eigvalsh(c)
        tolerance = 1e-8 * max(1.0, float(spectrum.max(initial=0.0)))
        if float(spectrum.min()) < -tolerance:
            raise NumericalError(
                f"{name} covariance is not PSD within tolerance "
                f"(min eigenvalue {spectrum.min():.3g})"
            )
    diff = g1.m - g2.m
    mean_term = float(diff @ diff)
    if g1.factor is not None and g2.factor is not None:
        trace_sqrt = _trace_sqrt_factored(g1.factor, g2.factor)
    else:
        trace_sqrt = _trace_sqrt_product(g1.C, g2.C)
    trace_term = float(np.trace(g1.C)) + float(np.trace(g2.C)) - 2.0 * trace_sqrt
    if trace_term < -FID_EPS:
        raise NumericalError(
            f"trace term {trace_term:.3g} below tolerance; covariances are "
            "inconsistent"
        )
    trace_term = max(trace_term, 0.0)
    return FIDScore(value=mean_term + trace_term, mean_term=mean_term, trace_term=trace_term)


@runtime_checkable
class FeatureExtractor(Protocol):
    """Maps a manifest of images to an (n, embedding_dim) float matrix.

    A single FID computation must use the same extractor instance for both
    image sets.
    """

    extractor_id: str
    embedding_dim: int

    def embed(self, manifest: DatasetManifest) -> np.ndarray: ...


# Registry of extractor factories keyed by extractor id. The classifier module
# registers "classifier_penultimate" (the default) and the optional
# "inception_v3" on import; anything else can be plugged in the same way.
EXTRACTOR_REGISTRY: dict[str, type] = {}


def register_extractor(extractor_id: str, factory: type) -> None:
    EXTRACTOR_REGISTRY[extractor_id] = factory


def fid_between_sets(
    real: DatasetManifest, generated: DatasetManifest, extractor: FeatureExtractor
) -> FIDScore:
    """Embed both image sets with one extractor and take the Fréchet distance
    between the fitted Gaussians."""
    if len(real) < 2 or len(generated) < 2:
        raise DataError(
            f"need >= 2 images per set, got {len(real)} and {len(generated)}"
        )
    e_real = extractor.embed(real)
    e_gen = extractor.embed(generated)
    return frechet_distance(fit_gaussian(e_real), fit_gaussian(e_gen))


def save_embeddings(path: Path, embeddings: np.ndarray, extractor_id: str) -> Path:
    """Cache an embedding matrix as raw float32 with a JSON sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    emb = np.ascontiguousarray(embeddings, dtype=np.float32)
    path.write_bytes(emb.tobytes())
    sidecar = {"extractor_id": extractor_id, "n": emb.shape[0], "d": emb.shape[1]}
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(sidecar, sort_keys=True) + "\n", encoding="utf-8"
    )
    return path


def load_embeddings(path: Path) -> tuple[np.ndarray, str]:
    path = Path(path)
    sidecar = json.loads(
        path.with_suffix(path.suffix + ".json").read_text(encoding="utf-8")
    )
    raw = np.frombuffer(path.read_bytes(), dtype=np.float32)
    emb = raw.reshape(sidecar["n"], sidecar["d"]).copy()
    return emb, sidecar["extractor_id"]
