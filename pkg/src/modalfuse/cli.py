"""Command-line interface.

Subcommands cover the pipeline end to end: `ingest` scans the dataset
and writes manifests plus train/validation splits, `train` fits one
model per modality, `evaluate` scores a stored model, `fuse` combines
the three models into the accuracy-weighted ensemble, and `predict`
fuses a single sample from three image paths.

Exit codes: 0 success, 2 configuration or data problems, 3 training
divergence, 4 artifact problems.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import fusion
from .backbones import create_backbone
from .config import ENV_CONFIG, RunConfig, load_config
from .errors import ArtifactError, ConfigError, DataError, TrainingDivergedError
from .ingest import (
    DatasetSplit,
    load_pixels,
    read_manifest,
    scan_dataset,
    split_dataset,
    write_manifest,
)
from .modality import MODALITIES, Modality, parse_modality
from .seeding import derive_seed
from .train import TrainedModel, evaluate_model, load_model, save_epoch_logs, save_model, train_modality

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DIVERGED = 3
EXIT_ARTIFACT = 4


def _manifest_path(cfg: RunConfig, modality: Modality) -> Path:
    return cfg.output_dir / "manifests" / f"{modality}.tsv"


def _split_path(cfg: RunConfig, modality: Modality, part: str) -> Path:
    return cfg.output_dir / "splits" / f"{modality}.{part}.tsv"


def _model_dir(cfg: RunConfig, modality: Modality) -> Path:
    return cfg.output_dir / "models" / str(modality)


def _read_split(cfg: RunConfig, modality: Modality) -> DatasetSplit:
    train_path = _split_path(cfg, modality, "train")
    val_path = _split_path(cfg, modality, "val")
    for path in (train_path, val_path):
        if not path.is_file():
            raise DataError(f"no ingested split at {path}; run ingest first")
    return DatasetSplit(
        train=read_manifest(train_path),
        validation=read_manifest(val_path),
        seed=cfg.seed,
        ratio=cfg.split_ratio,
    )


def _selected_modalities(name: str) -> tuple[Modality, ...]:
    if name == "all":
        return MODALITIES
    return (parse_modality(name),)


def cmd_ingest(args: argparse.Namespace) -> int:
    no_source = args.config is None and not os.environ.get(ENV_CONFIG)
    cfg = RunConfig() if no_source and args.root is not None else load_config(args.config)
    overrides: dict[str, object] = {}
    if args.root is not None:
        overrides["dataset_root"] = Path(args.root)
    if args.split is not None:
        if not 0.0 < args.split < 1.0:
            raise ConfigError(f"--split must be in (0, 1), got {args.split}")
        overrides["split_ratio"] = args.split
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    root = cfg.require_dataset_root()
    manifest_dir = cfg.output_dir / "manifests"
    split_dir = cfg.output_dir / "splits"
    manifest_dir.mkdir(parents=True, exist_ok=True)
    split_dir.mkdir(parents=True, exist_ok=True)
    for modality in _selected_modalities(args.modality):
        manifest = scan_dataset(root / str(modality), modality)
        split = split_dataset(manifest, ratio=cfg.split_ratio, seed=cfg.seed)
        write_manifest(manifest, _manifest_path(cfg, modality))
        write_manifest(split.train, _split_path(cfg, modality, "train"))
        write_manifest(split.validation, _split_path(cfg, modality, "val"))
        print(
            f"{modality}: {len(manifest.records)} records "
            f"(train {len(split.train.records)} / val {len(split.validation.records)})"
        )
    return EXIT_OK


def _build_backbone(cfg: RunConfig, seed: int, frozen: bool):
    weights = cfg.backbone_weights if cfg.backbone_weights else "DEFAULT"
    return create_backbone(
        cfg.backbone_name,
        seed=derive_seed(seed, "backbone-init"),
        frozen=frozen,
        weights=weights,
    )


def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    header_printed = False
    for modality in _selected_modalities(args.modality):
        split = _read_split(cfg, modality)
        train_config = cfg.train_config(modality)
        extractor = _build_backbone(
            cfg, train_config.seed, train_config.freeze_backbone
        )
        model, logs = train_modality(split, train_config, extractor)
        model_dir = _model_dir(cfg, modality)
        save_model(model, model_dir)
        save_epoch_logs(logs, model_dir)
        if not header_printed:
            print(
                f"{'modality':<18} {'best_epoch':>10} {'val_accuracy':>12} "
                f"{'val_precision':>13} {'val_recall':>10} {'val_f1':>8} {'val_loss':>10}"
            )
            header_printed = True
        meta = model.metadata
        epoch = f"{meta['epoch_selected']}/{train_config.epochs}"
        print(
            f"{str(modality):<18} {epoch:>10} {meta['val_accuracy']:>12.4f} "
            f"{meta['val_precision']:>13.4f} {meta['val_recall']:>10.4f} "
            f"{meta['val_f1']:>8.4f} {meta['val_loss']:>10.4f}"
        )
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    modality = parse_modality(args.modality)
    model = load_model(_model_dir(cfg, modality))
    manifest_path = (
        Path(args.manifest) if args.manifest else _split_path(cfg, modality, "val")
    )
    if not manifest_path.is_file():
        raise DataError(f"manifest not found: {manifest_path}")
    report = evaluate_model(model, read_manifest(manifest_path))
    print(json.dumps({"modality": str(modality), **report.to_record()}))
    return EXIT_OK


def _load_models(
    cfg: RunConfig, allow_partial: bool
) -> tuple[dict[Modality, TrainedModel], list[Modality]]:
    models: dict[Modality, TrainedModel] = {}
    absent: list[Modality] = []
    last_error: ArtifactError | None = None
    for modality in MODALITIES:
        try:
            models[modality] = load_model(_model_dir(cfg, modality))
        except ArtifactError as exc:
            if not allow_partial:
                raise
            absent.append(modality)
            last_error = exc
    if not models:
        raise last_error if last_error is not None else ArtifactError("no models")
    return models, absent


def cmd_fuse(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    models, absent = _load_models(cfg, args.allow_partial)
    if absent:
        print(
            "WARNING: degraded fusion, missing modalities: "
            + ", ".join(str(m) for m in absent)
        )
    accuracies = {m: model.metadata["val_accuracy"] for m, model in models.items()}

    if absent:
        total = sum(accuracies.values())
        if total <= 0.0:
            raise DataError("cannot derive fusion weights: no positive accuracy")
        weights = accuracies
        recorded = {m: accuracies[m] / total for m in models}
    else:
        try:
            weights = fusion.derive_weights(accuracies)
        except ValueError as exc:
            raise DataError(f"cannot derive fusion weights: {exc}") from None
        recorded = {m: weights[m] for m in models}

    manifests = {m: read_manifest(_read_split_manifest(cfg, m)) for m in MODALITIES}
    paired = fusion.build_multimodal_manifest(
        manifests, cfg.pairing_strategy, seed=cfg.seed
    )
    predictions = fusion.fuse_samples(
        paired.samples, models, weights,
        mode=cfg.fusion_mode, allow_partial=args.allow_partial,
    )
    report = fusion.evaluate_fused(paired.samples, predictions)

    ensemble_dir = cfg.output_dir / "ensemble"
    ensemble_dir.mkdir(parents=True, exist_ok=True)
    _write_weights_record(
        ensemble_dir / "weights", models, accuracies, recorded, paired
    )
    with open(ensemble_dir / "predictions.jsonl", "w", encoding="utf-8") as fh:
        for prediction in predictions:
            fh.write(json.dumps(prediction.to_record()) + "\n")
    report_record = {
        **report.to_record(),
        "mode": cfg.fusion_mode,
        "strategy": paired.strategy,
        "seed": paired.seed,
        "degraded": bool(absent),
    }
    (ensemble_dir / "report.json").write_text(
        json.dumps(report_record, indent=2) + "\n", encoding="utf-8"
    )

    for modality in models:
        print(
            f"{modality}: val_accuracy {accuracies[modality]:.4f}, "
            f"weight {recorded[modality]:.4f}"
        )
    print(
        f"fused ({cfg.fusion_mode}): accuracy {report.accuracy:.4f}, "
        f"precision {report.precision:.4f}, recall {report.recall:.4f}, "
        f"f1 {report.f1:.4f} over {report.confusion.total} samples"
    )
    return EXIT_OK


def _read_split_manifest(cfg: RunConfig, modality: Modality) -> Path:
    path = _split_path(cfg, modality, "val")
    if not path.is_file():
        raise DataError(f"no ingested split at {path}; run ingest first")
    return path


def _write_weights_record(path, models, accuracies, recorded, paired) -> None:
    if len(models) == len(MODALITIES):
        fusion.write_ensemble_weights(
            path,
            fusion.EnsembleWeights(
                w_clinical=recorded[Modality.CLINICAL],
                w_radiological=recorded[Modality.RADIOLOGICAL],
                w_histopathological=recorded[Modality.HISTOPATHOLOGICAL],
            ),
            accuracies,
            paired.strategy,
            paired.seed,
        )
        return
    lines = [
        f"{m}\t{accuracies[m]:.10f}\t{recorded[m]:.10f}" for m in models
    ]
    lines.append(f"strategy\t{paired.strategy}")
    lines.append(f"seed\t{'' if paired.seed is None else paired.seed}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_predict(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    models, _ = _load_models(cfg, allow_partial=False)
    paths = {
        Modality.CLINICAL: args.clinical,
        Modality.RADIOLOGICAL: args.radiological,
        Modality.HISTOPATHOLOGICAL: args.histopathological,
    }
    scores = {}
    for modality, path in paths.items():
        if not Path(path).is_file():
            raise DataError(f"image not found: {path}")
        pixels = load_pixels(path, modality)
        scores[modality] = models[modality].scores(pixels[np.newaxis])[0]
    accuracies = {m: models[m].metadata["val_accuracy"] for m in MODALITIES}
    try:
        weights = fusion.derive_weights(accuracies)
    except ValueError as exc:
        raise DataError(f"cannot derive fusion weights: {exc}") from None
    prediction = fusion.fuse(scores, weights, mode=cfg.fusion_mode)
    print(json.dumps(prediction.to_record()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="modalfuse",
        description="Multi-modal cancer screening: per-modality training "
        "and accuracy-weighted late fusion.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config",
        help=f"path to the run configuration (falls back to ${ENV_CONFIG})",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common],
                       help="scan the dataset, write manifests and splits")
    p.add_argument("--root",
                   help="dataset root directory (overrides the config; "
                   "with no config, runs on defaults)")
    p.add_argument("--modality", default="all",
                   choices=[str(m) for m in MODALITIES] + ["all"])
    p.add_argument("--split", type=float,
                   help="training fraction in (0, 1) (overrides the config)")
    p.add_argument("--seed", type=int,
                   help="split seed (overrides the config)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", parents=[common],
                       help="train per-modality models")
    p.add_argument("--modality", default="all",
                   choices=[str(m) for m in MODALITIES] + ["all"])
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common],
                       help="evaluate a stored model on a manifest")
    p.add_argument("--modality", required=True,
                   choices=[str(m) for m in MODALITIES])
    p.add_argument("--manifest", help="manifest TSV (default: the validation split)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("fuse", parents=[common],
                       help="fuse the stored models into the weighted ensemble")
    p.add_argument("--allow-partial", action="store_true",
                   help="tolerate missing models; renormalize the weights")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("predict", parents=[common],
                       help="fuse one sample from three image paths")
    p.add_argument("--clinical", required=True)
    p.add_argument("--radiological", required=True)
    p.add_argument("--histopathological", required=True)
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    except (ConfigError, DataError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def entrypoint() -> None:
    sys.exit(main(sys.argv[1:]))
