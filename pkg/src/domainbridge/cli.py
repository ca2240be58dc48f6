"""Command-line entry points for every pipeline stage."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import DomainBridgeError


def _cmd_ingest(args: argparse.Namespace) -> int:
    from .datakit import extract_frames
    from .manifest import save_manifest

    manifest = extract_frames(args.video, args.out, domain_id=args.domain_id)
    path = save_manifest(manifest, Path(args.out) / "manifest.csv")
    print(f"extracted {len(manifest)} frames -> {path}")
    return 0


def _cmd_dedup(args: argparse.Namespace) -> int:
    from .datakit import dedup_consecutive
    from .manifest import load_manifest, save_manifest

    manifest = load_manifest(args.manifest)
    deduped = dedup_consecutive(manifest, threshold=args.threshold)
    out = Path(args.out) if args.out else Path(args.manifest)
    save_manifest(deduped, out)
    removed = len(manifest) - len(deduped)
    print(f"kept {len(deduped)} frames ({removed} near-duplicates removed) -> {out}")
    return 0


def _cmd_split(args: argparse.Namespace) -> int:
    from .datakit import split
    from .manifest import SplitSpec, load_manifest, save_manifest

    manifest = load_manifest(args.manifest)
    spec = SplitSpec(
        fractions=(args.train, args.val, args.test),
        seed=args.seed,
        stratified=args.stratified,
    )
    tagged = split(manifest, spec)
    out = Path(args.out) if args.out else Path(args.manifest)
    save_manifest(tagged, out)
    counts = {tag.value: 0 for tag in set(s.split for s in tagged.samples)}
    for s in tagged.samples:
        counts[s.split.value] += 1
    print(f"split {counts} -> {out}")
    return 0


def _cmd_balance(args: argparse.Namespace) -> int:
    from .datakit import balance_undersample
    from .manifest import load_manifest, save_manifest

    manifest = load_manifest(args.manifest)
    balanced = balance_undersample(manifest, seed=args.seed)
    out = Path(args.out) if args.out else Path(args.manifest)
    save_manifest(balanced, out)
    counts = {k.value: v for k, v in balanced.class_counts().items()}
    print(f"balanced to {counts} -> {out}")
    return 0


def _cmd_synth(args: argparse.Namespace) -> int:
    from .synthgen import SynthConfig, generate_domain_pair

    if args.config:
        config = SynthConfig.from_dict(
            json.loads(Path(args.config).read_text(encoding="utf-8"))
        )
    else:
        config = SynthConfig()
    a, b = generate_domain_pair(config, args.out)
    print(
        f"generated {len(a)} images for {a.domain_id} and {len(b)} for "
        f"{b.domain_id} under {args.out}"
    )
    return 0


def _cmd_train_classifier(args: argparse.Namespace) -> int:
    from .classifier import ClassifierConfig, save_classifier, train_classifier
    from .manifest import Split, load_manifest

    config = ClassifierConfig.from_dict(
        json.loads(Path(args.config).read_text(encoding="utf-8"))
    )
    train_manifest = load_manifest(args.train)
    val_manifest = load_manifest(args.val)
    if train_manifest.is_split:
        train_manifest = train_manifest.subset(Split.TRAIN)
    if val_manifest.is_split:
        val_manifest = val_manifest.subset(Split.VAL)
    model, log = train_classifier(train_manifest, val_manifest, config)
    bundle = save_classifier(model, args.out)
    (bundle / "training_log.json").write_text(
        json.dumps(log.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(
        f"best epoch {log.best_epoch} (val loss {log.val_loss[log.best_epoch - 1]:.4f})"
        f" -> {bundle}"
    )
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    from .classifier import evaluate, load_classifier
    from .manifest import load_manifest

    model = load_classifier(args.model)
    manifest = load_manifest(args.data)
    report = evaluate(model, manifest)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(f"balanced accuracy {report.balanced_accuracy:.4f} -> {args.out}")
    return 0


def _cmd_train_ui2i(args: argparse.Namespace) -> int:
    from .manifest import load_manifest
    from .ui2i import UI2IConfig, train_ui2i

    config = UI2IConfig.from_dict(
        json.loads(Path(args.config).read_text(encoding="utf-8"))
    )
    source = load_manifest(args.source)
    target = load_manifest(args.target)
    records = train_ui2i(source, target, config, args.out, log_every=args.log_every)
    print(f"saved {len(records)} checkpoints under {args.out}")
    return 0


def _cmd_translate(args: argparse.Namespace) -> int:
    from .manifest import load_manifest, save_manifest
    from .ui2i import CheckpointRecord, DomainCode, load_checkpoint_payload, translate

    ckpt_path = Path(args.checkpoint)
    payload = load_checkpoint_payload(ckpt_path)
    record = CheckpointRecord(
        iteration=payload["iteration"],
        path=ckpt_path,
        backend_id=payload["backend_id"],
        order_index=0,
    )
    manifest = load_manifest(args.data)
    to = DomainCode.SOURCE if args.to == "source" else DomainCode.TARGET
    out_manifest = translate(record, manifest, to, args.out)
    save_manifest(out_manifest, Path(args.out) / "manifest.csv")
    print(f"translated {len(out_manifest)} images -> {args.out}")
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    from .classifier import ClassifierEmbedding, load_classifier
    from .manifest import load_manifest
    from .selection import (
        combine_sweeps,
        oracle_select,
        plot_fid_curve,
        save_sweep_csv,
        save_sweep_json,
        sweep,
    )
    from .ui2i import list_checkpoints

    checkpoints = list_checkpoints(args.checkpoints)
    target_val = load_manifest(args.target_val)
    source_ref = load_manifest(args.source_ref)
    classifier = load_classifier(args.classifier)
    extractor = ClassifierEmbedding(classifier)
    out = Path(args.out)
    result = sweep(
        checkpoints, target_val.without_labels(), source_ref, extractor, out / "fid_work"
    )
    if args.oracle:
        oracle_result = oracle_select(
            checkpoints, target_val, classifier, out / "oracle_work"
        )
        result = combine_sweeps(result, oracle_result)
    save_sweep_csv(result, out / "sweep.csv")
    save_sweep_json(result, out / "sweep.json")
    plot_fid_curve(result, out / "fid_curve.png")
    print(
        f"selected_by_fid={result.selected_by_fid} "
        f"selected_by_oracle={result.selected_by_oracle} -> {out}"
    )
    return 0


def _cmd_run_all(args: argparse.Namespace) -> int:
    from .pipeline import PipelineConfig, render_report, run_all

    config = PipelineConfig.from_json(args.config)
    record = run_all(config)
    render_report(record.run_dir)
    print(f"run complete: {record.run_dir}")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    from .pipeline import render_report

    report_dir = render_report(args.run)
    print(f"report bundle: {report_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="domainbridge",
        description=(
            "Generalize a frozen image classifier to a foreign domain by "
            "translating foreign images into the training domain."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="extract video frames into a manifest")
    p.add_argument("video")
    p.add_argument("--out", required=True)
    p.add_argument("--domain-id", default=None)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("dedup", help="drop near-duplicate consecutive frames")
    p.add_argument("manifest")
    p.add_argument("--threshold", type=float, default=3e-4)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_dedup)

    p = sub.add_parser("split", help="assign train/val/test tags")
    p.add_argument("manifest")
    p.add_argument("--train", type=float, default=0.8)
    p.add_argument("--val", type=float, default=0.1)
    p.add_argument("--test", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stratified", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("balance", help="undersample to the minority class")
    p.add_argument("manifest")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_balance)

    p = sub.add_parser("synth", help="generate the synthetic two-domain benchmark")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train-classifier", help="train the source classifier")
    p.add_argument("--config", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train_classifier)

    p = sub.add_parser("evaluate", help="evaluate a classifier on a labeled manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("train-ui2i", help="train the translation model")
    p.add_argument("--config", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(func=_cmd_train_ui2i)

    p = sub.add_parser("translate", help="translate a manifest with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--to", choices=["source", "target"], default="source")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_translate)

    p = sub.add_parser("sweep", help="score checkpoints by FID and select")
    p.add_argument("--checkpoints", required=True)
    p.add_argument("--target-val", required=True)
    p.add_argument("--source-ref", required=True)
    p.add_argument("--classifier", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--oracle", action="store_true")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("run-all", help="run the whole pipeline from a config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_run_all)

    p = sub.add_parser("report", help="render the report bundle for a run")
    p.add_argument("--run", required=True)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DomainBridgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
