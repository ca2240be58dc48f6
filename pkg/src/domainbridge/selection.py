"""Checkpoint-selection sweep: score every saved generator by FID on translated
validation data, pick the best without labels, and optionally compute the
label-based oracle pick for comparison."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .classifier import TrainedClassifier, predict
from .errors import DataError, DomainBridgeError, SweepError
from .manifest import DatasetManifest
from .metrics import (
    EvalReport,
    FeatureExtractor,
    FIDScore,
    classification_report,
    fit_gaussian,
    frechet_distance,
)
from .ui2i import CheckpointRecord, DomainCode, translate


@dataclass
class SweepRow:
    iteration: int
    fid: FIDScore | None = None
    balanced_accuracy: float | None = None
    error: str | None = None


@dataclass
class SweepResult:
    rows: list[SweepRow] = field(default_factory=list)
    selected_by_fid: int | None = None
    selected_by_oracle: int | None = None

    def row(self, iteration: int) -> SweepRow:
        for r in self.rows:
            if r.iteration == iteration:
                return r
        raise KeyError(f"no sweep row for iteration {iteration}")

    def to_dict(self) -> dict:
        return {
            "rows": [
                {
                    "iteration": r.iteration,
                    "fid": r.fid.value if r.fid is not None else None,
                    "fid_mean_term": r.fid.mean_term if r.fid is not None else None,
                    "fid_trace_term": r.fid.trace_term if r.fid is not None else None,
                    "balanced_accuracy": r.balanced_accuracy,
                    "error": r.error,
                }
                for r in self.rows
            ],
            "selected_by_fid": self.selected_by_fid,
            "selected_by_oracle": self.selected_by_oracle,
        }


def sweep(
    checkpoints: list[CheckpointRecord],
    target_val: DatasetManifest,
    source_reference: DatasetManifest,
    extractor: FeatureExtractor,
    work_dir: Path,
) -> SweepResult:
    """One FID row per checkpoint; the minimum (earliest iteration on exact
    ties) wins. A failing row is recorded and skipped rather than aborting the
    sweep; only an all-rows-failed sweep raises.
    """
    if not checkpoints:
        raise DataError("no checkpoints to sweep")
    if len(target_val) == 0 or len(source_reference) == 0:
        raise DataError("sweep requires non-empty validation and reference sets")
    work_dir = Path(work_dir)
    ordered = sorted(checkpoints, key=lambda c: c.iteration)

    # The reference Gaussian is the same for every row; fit it once.
    reference = fit_gaussian(extractor.embed(source_reference))

    result = SweepResult()
    best_fid = math.inf  # explicit initialization before the scan
    for record in ordered:
        row = SweepRow(iteration=record.iteration)
        try:
            translated = translate(
                record, target_val, DomainCode.SOURCE, work_dir / f"it_{record.iteration:07d}"
            )
            if len(translated) < 2:
                raise DataError("translated validation set has fewer than 2 images")
            row.fid = frechet_distance(
                reference, fit_gaussian(extractor.embed(translated))
            )
        except (DomainBridgeError, OSError) as exc:
            row.error = f"{type(exc).__name__}: {exc}"
            result.rows.append(row)
            continue
        if row.fid.value < best_fid:
            best_fid = row.fid.value
            result.selected_by_fid = record.iteration
        result.rows.append(row)
    if result.selected_by_fid is None:
        raise SweepError("every sweep row failed")
    return result


def oracle_select(
    checkpoints: list[CheckpointRecord],
    labeled_val: DatasetManifest,
    classifier: TrainedClassifier,
    work_dir: Path,
) -> SweepResult:
    """Label-based audit of the sweep: per checkpoint, translate, classify with
    the frozen source classifier, and score balanced accuracy; the maximum
    (earliest iteration on ties) wins."""
    if not checkpoints:
        raise DataError("no checkpoints to sweep")
    labels = labeled_val.labels()  # raises LabelingError when labels missing
    work_dir = Path(work_dir)
    ordered = sorted(checkpoints, key=lambda c: c.iteration)

    result = SweepResult()
    best_acc = -math.inf
    for record in ordered:
        row = SweepRow(iteration=record.iteration)
        try:
            translated = translate(
                record, labeled_val, DomainCode.SOURCE, work_dir / f"it_{record.iteration:07d}"
            )
            probs = predict(classifier, translated)
            row.balanced_accuracy = classification_report(probs, labels).balanced_accuracy
        except (DomainBridgeError, OSError) as exc:
            row.error = f"{type(exc).__name__}: {exc}"
            result.rows.append(row)
            continue
        if row.balanced_accuracy > best_acc:
            best_acc = row.balanced_accuracy
            result.selected_by_oracle = record.iteration
        result.rows.append(row)
    if result.selected_by_oracle is None:
        raise SweepError("every oracle row failed")
    return result


def combine_sweeps(fid_result: SweepResult, oracle_result: SweepResult) -> SweepResult:
    """Merge FID and oracle rows over the same checkpoint set."""
    merged = SweepResult(
        selected_by_fid=fid_result.selected_by_fid,
        selected_by_oracle=oracle_result.selected_by_oracle,
    )
    oracle_rows = {r.iteration: r for r in oracle_result.rows}
    for fid_row in fid_result.rows:
        other = oracle_rows.get(fid_row.iteration)
        merged.rows.append(
            SweepRow(
                iteration=fid_row.iteration,
                fid=fid_row.fid,
                balanced_accuracy=other.balanced_accuracy if other else None,
                error=fid_row.error or (other.error if other else None),
            )
        )
    return merged


def compare(
    fid_selected: CheckpointRecord,
    oracle_selected: CheckpointRecord,
    test: DatasetManifest,
    classifier: TrainedClassifier,
    work_dir: Path,
) -> dict:
    """Side-by-side test-set evaluation of both selected checkpoints."""
    labels = test.labels()
    work_dir = Path(work_dir)

    def score(record: CheckpointRecord, tag: str) -> EvalReport:
        translated = translate(
            record, test, DomainCode.SOURCE, work_dir / f"{tag}_{record.iteration:07d}"
        )
        return classification_report(predict(classifier, translated), labels)

    fid_report = score(fid_selected, "fid")
    if oracle_selected.iteration == fid_selected.iteration:
        oracle_report = fid_report
    else:
        oracle_report = score(oracle_selected, "oracle")
    return {
        "fid_selected": {
            "iteration": fid_selected.iteration,
            "report": fid_report.to_dict(),
        },
        "oracle_selected": {
            "iteration": oracle_selected.iteration,
            "report": oracle_report.to_dict(),
        },
    }


def save_sweep_csv(result: SweepResult, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "fid", "balanced_accuracy"])
        for r in result.rows:
            writer.writerow(
                [
                    r.iteration,
                    f"{r.fid.value:.9g}" if r.fid is not None else "",
                    f"{r.balanced_accuracy:.9g}" if r.balanced_accuracy is not None else "",
                ]
            )
    return path


def save_sweep_json(result: SweepResult, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return path


def plot_fid_curve(result: SweepResult, path: Path) -> Path:
    """FID (and oracle accuracy when present) against training iteration."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    iters = [r.iteration for r in result.rows if r.fid is not None]
    fids = [r.fid.value for r in result.rows if r.fid is not None]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(iters, fids, marker="o", label="FID")
    if result.selected_by_fid is not None:
        ax.axvline(result.selected_by_fid, color="tab:green", ls="--", label="FID pick")
    acc_rows = [(r.iteration, r.balanced_accuracy) for r in result.rows
                if r.balanced_accuracy is not None]
    if acc_rows:
        ax2 = ax.twinx()
        ax2.plot(*zip(*acc_rows), marker="s", color="tab:orange",
                 label="balanced accuracy")
        ax2.set_ylabel("balanced accuracy")
        if result.selected_by_oracle is not None:
            ax.axvline(result.selected_by_oracle, color="tab:orange", ls=":",
                       label="oracle pick")
    ax.set_xlabel("iteration")
    ax.set_ylabel("FID")
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
