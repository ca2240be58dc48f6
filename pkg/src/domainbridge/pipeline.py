"""End-to-end orchestration: source classifier training, translation training,
FID checkpoint selection, and final blind-vs-translated evaluation, with
resumable content-addressed stage artifacts."""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classifier import (
    ClassifierConfig,
    TrainedClassifier,
    evaluate,
    load_classifier,
    predict,
    save_classifier,
    train_classifier,
)
from .datakit import balance_undersample, split
from .errors import ConfigError, PipelineError, ReportError
from .imgio import read_image
from .manifest import (
    AccessAudit,
    DatasetManifest,
    RegimeLabel,
    Split,
    SplitSpec,
    load_manifest,
    read_sidecar,
    save_manifest,
)
from .metrics import EXTRACTOR_REGISTRY, EvalReport, classification_report, report_from_counts
from .selection import (
    combine_sweeps,
    compare,
    oracle_select,
    plot_fid_curve,
    save_sweep_csv,
    save_sweep_json,
    sweep,
)
from .ui2i import DomainCode, UI2IConfig, list_checkpoints, train_ui2i, translate

CACHE_ENV_VAR = "DOMAINBRIDGE_CACHE"
RUN_RECORD_NAME = "run.json"
STAGES = ("prepare", "classifier", "ui2i", "sweep", "final")


@dataclass(frozen=True)
class PipelineConfig:
    source_manifest: Path
    target_manifest: Path
    output_dir: Path
    seed: int = 0
    balance_source: bool = True
    source_split: SplitSpec = field(default_factory=lambda: SplitSpec(stratified=True))
    target_split: SplitSpec = field(default_factory=SplitSpec)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    ui2i: UI2IConfig = field(default_factory=UI2IConfig)
    extractor_id: str = "classifier_penultimate"
    oracle: bool = True

    def to_dict(self) -> dict:
        return {
            "source_manifest": str(self.source_manifest),
            "target_manifest": str(self.target_manifest),
            "output_dir": str(self.output_dir),
            "seed": self.seed,
            "balance_source": self.balance_source,
            "source_split": _split_dict(self.source_split),
            "target_split": _split_dict(self.target_split),
            "classifier": self.classifier.to_dict(),
            "ui2i": self.ui2i.to_dict(),
            "extractor_id": self.extractor_id,
            "oracle": self.oracle,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        kwargs = dict(raw)
        kwargs["source_manifest"] = Path(kwargs["source_manifest"])
        kwargs["target_manifest"] = Path(kwargs["target_manifest"])
        kwargs["output_dir"] = Path(kwargs["output_dir"])
        for key in ("source_split", "target_split"):
            if key in kwargs:
                d = dict(kwargs[key])
                d["fractions"] = tuple(d["fractions"])
                kwargs[key] = SplitSpec(**d)
        if "classifier" in kwargs:
            kwargs["classifier"] = ClassifierConfig.from_dict(kwargs["classifier"])
        if "ui2i" in kwargs:
            kwargs["ui2i"] = UI2IConfig.from_dict(kwargs["ui2i"])
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path: Path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def digest(self) -> str:
        """Content hash of everything that affects artifacts (output location
        excluded, so moving a run does not invalidate it)."""
        payload = self.to_dict()
        payload.pop("output_dir")
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def validate(self) -> None:
        for name, p in (
            ("source_manifest", self.source_manifest),
            ("target_manifest", self.target_manifest),
        ):
            if not Path(p).exists():
                raise ConfigError(f"{name} does not exist: {p}")
        if self.extractor_id not in EXTRACTOR_REGISTRY:
            raise ConfigError(
                f"unknown extractor_id {self.extractor_id!r}; registered: "
                f"{sorted(EXTRACTOR_REGISTRY)}"
            )


def _split_dict(spec: SplitSpec) -> dict:
    return {
        "fractions": list(spec.fractions),
        "seed": spec.seed,
        "stratified": spec.stratified,
    }


@dataclass
class RunRecord:
    config_hash: str
    run_dir: Path
    stages: dict[str, dict] = field(default_factory=dict)
    artifacts: dict[str, str] = field(default_factory=dict)
    audit: dict[str, int] = field(default_factory=dict)

    def stage_complete(self, stage: str) -> bool:
        return self.stages.get(stage, {}).get("status") == "complete"

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "stages": self.stages,
            "artifacts": self.artifacts,
            "audit": self.audit,
        }

    def save(self) -> None:
        path = self.run_dir / RUN_RECORD_NAME
        tmp = path.with_suffix(".tmp")
        tmp.write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        os.replace(tmp, path)

    @classmethod
    def load(cls, run_dir: Path) -> "RunRecord":
        path = Path(run_dir) / RUN_RECORD_NAME
        raw = json.loads(path.read_text(encoding="utf-8"))
        return cls(
            config_hash=raw["config_hash"],
            run_dir=Path(run_dir),
            stages=raw["stages"],
            artifacts=raw["artifacts"],
            audit=raw["audit"],
        )


def run_directory(config: PipelineConfig) -> Path:
    """Stage artifacts are content-addressed by config hash under the cache
    root; DOMAINBRIDGE_CACHE overrides the root."""
    root = Path(os.environ.get(CACHE_ENV_VAR, config.output_dir))
    return root / f"run_{config.digest()[:12]}"


class _RunContext:
    """Lazy artifact access so completed stages can be skipped on re-runs."""

    def __init__(self, config: PipelineConfig, run_dir: Path):
        self.config = config
        self.run_dir = run_dir
        self._source: DatasetManifest | None = None
        self._target: DatasetManifest | None = None
        self._classifier: TrainedClassifier | None = None
        self._target_test_wrapped: DatasetManifest | None = None
        self.test_audit = AccessAudit()

    @property
    def source(self) -> DatasetManifest:
        if self._source is None:
            self._source = load_manifest(self.run_dir / "prepared" / "source.csv")
        return self._source

    @property
    def target(self) -> DatasetManifest:
        if self._target is None:
            self._target = load_manifest(self.run_dir / "prepared" / "target.csv")
        return self._target

    @property
    def target_test(self) -> DatasetManifest:
        """Audited view of the target TEST split; reads are counted."""
        if self._target_test_wrapped is None:
            self._target_test_wrapped = self.test_audit.wrap(
                self.target.subset(Split.TEST)
            )
        return self._target_test_wrapped

    @property
    def classifier(self) -> TrainedClassifier:
        if self._classifier is None:
            self._classifier = load_classifier(self.run_dir / "classifier")
        return self._classifier

    @property
    def checkpoints(self):
        return list_checkpoints(self.run_dir / "checkpoints")

    def sweep_summary(self) -> dict:
        return json.loads(
            (self.run_dir / "sweep" / "sweep.json").read_text(encoding="utf-8")
        )


def _stage_prepare(ctx: _RunContext, record: RunRecord) -> None:
    cfg = ctx.config
    source = load_manifest(cfg.source_manifest)
    if cfg.balance_source:
        source = balance_undersample(source, seed=cfg.seed)
    source = split(source, cfg.source_split)
    target = load_manifest(cfg.target_manifest)
    target = split(target, cfg.target_split)
    prepared = ctx.run_dir / "prepared"
    save_manifest(source, prepared / "source.csv")
    save_manifest(target, prepared / "target.csv")
    record.artifacts["source_manifest"] = str(prepared / "source.csv")
    record.artifacts["target_manifest"] = str(prepared / "target.csv")
    ctx._source = source
    ctx._target = target


def _stage_classifier(ctx: _RunContext, record: RunRecord) -> None:
    cfg = ctx.config
    train_set = ctx.source.subset(Split.TRAIN)
    val_set = ctx.source.subset(Split.VAL)
    model, log = train_classifier(train_set, val_set, cfg.classifier)
    bundle = save_classifier(model, ctx.run_dir / "classifier")
    (bundle / "training_log.json").write_text(
        json.dumps(log.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    source_test = ctx.source.subset(Split.TEST)
    report = evaluate(model, source_test)
    (bundle / "source_test_report.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    record.artifacts["classifier"] = str(bundle)
    record.artifacts["source_test_report"] = str(bundle / "source_test_report.json")
    record.audit["weights_digest_before"] = _file_digest(bundle / "weights.pt")
    ctx._classifier = model


def _stage_ui2i(ctx: _RunContext, record: RunRecord) -> None:
    cfg = ctx.config
    label_audit = AccessAudit()
    target_wrapped = label_audit.wrap(ctx.target)
    train_ui2i(
        ctx.source,
        target_wrapped,
        cfg.ui2i,
        ctx.run_dir / "checkpoints",
        log_every=max(cfg.ui2i.total_iterations // 10, 1),
    )
    record.artifacts["checkpoints"] = str(ctx.run_dir / "checkpoints")
    record.audit["label_reads_ui2i"] = label_audit.label_reads


def _stage_sweep(ctx: _RunContext, record: RunRecord) -> None:
    cfg = ctx.config
    extractor = EXTRACTOR_REGISTRY[cfg.extractor_id](ctx.classifier)
    label_audit = AccessAudit()
    target_val = label_audit.wrap(ctx.target.subset(Split.VAL))
    sweep_dir = ctx.run_dir / "sweep"
    fid_result = sweep(
        ctx.checkpoints, target_val, ctx.source, extractor, sweep_dir / "fid_work"
    )
    record.audit["label_reads_sweep"] = label_audit.label_reads
    result = fid_result
    if cfg.oracle:
        oracle_result = oracle_select(
            ctx.checkpoints,
            ctx.target.subset(Split.VAL),
            ctx.classifier,
            sweep_dir / "oracle_work",
        )
        result = combine_sweeps(fid_result, oracle_result)
    save_sweep_csv(result, sweep_dir / "sweep.csv")
    save_sweep_json(result, sweep_dir / "sweep.json")
    plot_fid_curve(result, sweep_dir / "fid_curve.png")
    record.artifacts["sweep"] = str(sweep_dir)


def _stage_final(ctx: _RunContext, record: RunRecord) -> None:
    cfg = ctx.config
    record.audit["test_path_reads_before_final"] = ctx.test_audit.path_reads
    summary = ctx.sweep_summary()
    selected_fid = summary["selected_by_fid"]
    selected_oracle = summary["selected_by_oracle"]
    by_iter = {c.iteration: c for c in ctx.checkpoints}

    target_test = ctx.target_test
    translated = translate(
        by_iter[selected_fid], target_test, DomainCode.SOURCE,
        ctx.run_dir / "translated_test",
    )
    probs = predict(ctx.classifier, translated)
    _write_predictions_csv(translated, probs, ctx.run_dir / "predictions.csv")

    blind_report = translated_report = None
    comparison = None
    if target_test.is_labeled:
        # Labels on the target exist only to assess the framework; blind and
        # translated evaluations are emitted side by side.
        blind_report = evaluate(ctx.classifier, target_test)
        translated_report = classification_report(probs, target_test.labels())
        if cfg.oracle and selected_oracle is not None:
            comparison = compare(
                by_iter[selected_fid],
                by_iter[selected_oracle],
                target_test,
                ctx.classifier,
                ctx.run_dir / "compare_work",
            )

    digest_after = _file_digest(ctx.run_dir / "classifier" / "weights.pt")
    record.audit["weights_digest_after"] = digest_after
    source_report = json.loads(
        Path(record.artifacts["source_test_report"]).read_text(encoding="utf-8")
    )
    final = {
        "source_test": source_report,
        "blind": blind_report.to_dict() if blind_report else None,
        "translated": translated_report.to_dict() if translated_report else None,
        "selected_by_fid": selected_fid,
        "selected_by_oracle": selected_oracle,
        "comparison": comparison,
        "weights_digest_before": record.audit["weights_digest_before"],
        "weights_digest_after": digest_after,
    }
    out = ctx.run_dir / "final_report.json"
    out.write_text(json.dumps(final, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    record.artifacts["final_report"] = str(out)
    record.artifacts["predictions"] = str(ctx.run_dir / "predictions.csv")
    record.artifacts["translated_test"] = str(ctx.run_dir / "translated_test")


def _write_predictions_csv(
    manifest: DatasetManifest, probs: np.ndarray, path: Path
) -> Path:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "p_chf", "p_pre_chf", "predicted"])
        for sample, row in zip(manifest.samples, probs):
            predicted = RegimeLabel.CHF if row[0] >= row[1] else RegimeLabel.PRE_CHF
            writer.writerow(
                [Path(sample.path).name, f"{row[0]:.9g}", f"{row[1]:.9g}", predicted.value]
            )
    return Path(path)


_STAGE_FUNCS = {
    "prepare": _stage_prepare,
    "classifier": _stage_classifier,
    "ui2i": _stage_ui2i,
    "sweep": _stage_sweep,
    "final": _stage_final,
}


def run_all(config: PipelineConfig) -> RunRecord:
    """Execute every stage in order, skipping stages already completed for the
    same config hash. Any stage error halts the run with the stage name while
    preserving completed artifacts."""
    config.validate()
    run_dir = run_directory(config)
    run_dir.mkdir(parents=True, exist_ok=True)

    record_path = run_dir / RUN_RECORD_NAME
    if record_path.exists():
        record = RunRecord.load(run_dir)
        if record.config_hash != config.digest():
            raise ConfigError(
                f"run directory {run_dir} belongs to a different config hash"
            )
    else:
        record = RunRecord(config_hash=config.digest(), run_dir=run_dir)
        (run_dir / "pipeline_config.json").write_text(
            json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )

    ctx = _RunContext(config, run_dir)
    for stage in STAGES:
        if record.stage_complete(stage):
            continue
        started = time.monotonic()
        try:
            _STAGE_FUNCS[stage](ctx, record)
        except Exception as exc:
            record.stages[stage] = {
                "status": "failed",
                "seconds": round(time.monotonic() - started, 3),
                "error": f"{type(exc).__name__}: {exc}",
            }
            record.save()
            raise PipelineError(stage, str(exc)) from exc
        record.stages[stage] = {
            "status": "complete",
            "seconds": round(time.monotonic() - started, 3),
        }
        record.save()
    return record


def _file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_confusion_csv(report: dict, path: Path) -> Path:
    (tp, fn), (fp, tn) = report["confusion"]
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["", "pred_CHF", "pred_PRE_CHF"])
        writer.writerow(["true_CHF", tp, fn])
        writer.writerow(["true_PRE_CHF", fp, tn])
    return Path(path)


def read_confusion_csv(path: Path) -> tuple[int, int, int, int]:
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    tp, fn = int(rows[1][1]), int(rows[1][2])
    fp, tn = int(rows[2][1]), int(rows[2][2])
    return tp, fn, fp, tn


def rescore_confusion_csv(path: Path) -> EvalReport:
    """Re-derive all count-based metrics from a confusion CSV."""
    tp, fn, fp, tn = read_confusion_csv(path)
    return report_from_counts(tp, fn, fp, tn)


def _sample_grid(
    real: DatasetManifest,
    translated: DatasetManifest,
    label: RegimeLabel,
    path: Path,
    max_cols: int = 6,
) -> Path | None:
    """Two-row strip: real target images on top, their translations below."""
    from PIL import Image

    indices = [i for i, s in enumerate(real.samples) if s.label is label][:max_cols]
    if not indices:
        return None
    meta = read_sidecar(Path(real.samples[0].path).parent)
    cell = 0
    tiles = []
    for i in indices:
        top = read_image(real.samples[i].path, bit_depth=meta.bit_depth)
        bottom = read_image(translated.samples[i].path, bit_depth=8)
        cell = max(cell, top.shape[0], bottom.shape[0])
        tiles.append((top, bottom))
    grid = Image.new("L", (cell * len(tiles), cell * 2), color=32)
    for col, (top, bottom) in enumerate(tiles):
        grid.paste(Image.fromarray((top * 255).astype(np.uint8)), (col * cell, 0))
        grid.paste(Image.fromarray((bottom * 255).astype(np.uint8)), (col * cell, cell))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    grid.save(path, format="PNG")
    return path


def render_report(run_dir: Path) -> Path:
    """Materialize the report bundle: metrics JSON, per-condition confusion
    CSVs, the FID curve, and real-vs-translated sample grids per class.

    Regeneration from the same run record is byte-identical for JSON and CSV
    outputs.
    """
    run_dir = Path(run_dir)
    record = RunRecord.load(run_dir)
    if "final_report" not in record.artifacts:
        completed = [s for s in STAGES if record.stage_complete(s)]
        if "classifier" not in completed:
            raise ReportError(
                f"no completed evaluation stage to report (completed: {completed})"
            )
    report_dir = run_dir / "report"
    report_dir.mkdir(parents=True, exist_ok=True)

    bundle: dict = {"config_hash": record.config_hash, "conditions": {}}
    source_report_path = record.artifacts.get("source_test_report")
    if source_report_path and Path(source_report_path).exists():
        bundle["conditions"]["source_test"] = json.loads(
            Path(source_report_path).read_text(encoding="utf-8")
        )
    final_path = record.artifacts.get("final_report")
    if final_path and Path(final_path).exists():
        final = json.loads(Path(final_path).read_text(encoding="utf-8"))
        if final["blind"] is not None:
            bundle["conditions"]["blind"] = final["blind"]
        if final["translated"] is not None:
            bundle["conditions"]["translated"] = final["translated"]
        bundle["selected_by_fid"] = final["selected_by_fid"]
        bundle["selected_by_oracle"] = final["selected_by_oracle"]
        bundle["comparison"] = final["comparison"]
        bundle["weights_digest_before"] = final["weights_digest_before"]
        bundle["weights_digest_after"] = final["weights_digest_after"]

    for condition, report in bundle["conditions"].items():
        _write_confusion_csv(report, report_dir / f"confusion_{condition}.csv")
    (report_dir / "report.json").write_text(
        json.dumps(bundle, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    sweep_dir = record.artifacts.get("sweep")
    if sweep_dir and (Path(sweep_dir) / "fid_curve.png").exists():
        data = (Path(sweep_dir) / "fid_curve.png").read_bytes()
        (report_dir / "fid_curve.png").write_bytes(data)

    translated_dir = record.artifacts.get("translated_test")
    if translated_dir and Path(translated_dir).exists():
        target = load_manifest(Path(record.artifacts["target_manifest"]))
        test = target.subset(Split.TEST)
        if test.is_labeled:
            translated_samples = _translated_manifest(Path(translated_dir), test)
            for label in RegimeLabel:
                _sample_grid(
                    test,
                    translated_samples,
                    label,
                    report_dir / f"grid_{label.value.lower()}.png",
                )
    return report_dir


def _translated_manifest(directory: Path, reference: DatasetManifest) -> DatasetManifest:
    """Rebuild the translated-test manifest from its directory, aligned with
    the reference order (gen_NNNNNN.png naming)."""
    from .manifest import ImageSample

    samples = []
    for i, ref in enumerate(reference.samples):
        samples.append(
            ImageSample(
                path=directory / f"gen_{i:06d}.png",
                domain_id=f"{reference.domain_id}_to_source",
                label=None,
                frame_index=i,
                width=ref.width,
                height=ref.height,
            )
        )
    return DatasetManifest(samples=samples, domain_id=f"{reference.domain_id}_to_source")
