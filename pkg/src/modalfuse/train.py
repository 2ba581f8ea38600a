"""Per-modality training, evaluation, and model persistence.

Each modality trains independently: Adam over shuffled mini-batches with
on-the-fly augmentation of training images only, metrics for both
partitions every epoch, and the checkpoint with the highest validation
accuracy kept (earlier epoch wins ties).  All randomness is derived from
the config seed through named purpose seeds, so a run is reproducible
bit for bit on one platform.

Artifacts are two files per model: `model.weights` (numpy archive) and
`metadata` (JSON carrying metrics, the full config, a checksum of the
weights blob, and a digest of the identity fields).  Writes go through a
temp file and rename, weights before metadata, so a crash never leaves a
loadable half-artifact.
"""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import AugmentationPolicy, apply_augmentation, policy_for
from .backbones import FeatureExtractor, TinyConvBackbone, create_backbone
from .errors import ArtifactError, DataError, TrainingDivergedError
from .ingest import DatasetManifest, DatasetSplit, load_record
from .metrics import EvaluationReport, report_from_predictions
from .model import (
    Head,
    HeadSpec,
    LayerSpec,
    build_head,
    categorical_cross_entropy,
    one_hot,
    predict_labels,
)
from .modality import Modality, parse_modality
from .seeding import derive_seed, rng_for

ADAM_EPS = 1e-8

WEIGHTS_FILE = "model.weights"
METADATA_FILE = "metadata"
EPOCH_LOG_FILE = "epochs.log"

ARTIFACT_FORMAT = 1


@dataclass(frozen=True)
class TrainConfig:
    modality: Modality
    epochs: int = 25
    batch_size: int = 32
    learning_rate: float = 1e-3
    adam_betas: tuple[float, float] = (0.9, 0.999)
    dropout_rate: float = 0.5
    seed: int = 0
    freeze_backbone: bool = True
    output_activation: str = "sigmoid"
    augmentation: AugmentationPolicy | None = None  # None -> policy_for(modality)

    def __post_init__(self):
        if self.epochs <= 0:
            raise ValueError(f"epochs must be positive, got {self.epochs}")
        if self.batch_size <= 0:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if self.learning_rate <= 0.0:
            raise ValueError(
                f"learning_rate must be positive, got {self.learning_rate}"
            )
        b1, b2 = self.adam_betas
        if not (0.0 < b1 < 1.0 and 0.0 < b2 < 1.0):
            raise ValueError(f"adam betas must lie in (0, 1), got {self.adam_betas}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(
                f"dropout_rate must lie in [0, 1), got {self.dropout_rate}"
            )

    def policy(self) -> AugmentationPolicy:
        return self.augmentation if self.augmentation is not None else policy_for(
            self.modality
        )


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    train: EvaluationReport
    validation: EvaluationReport

    def to_record(self) -> dict:
        return {
            "epoch": self.epoch,
            "train": self.train.to_record(),
            "validation": self.validation.to_record(),
        }


@dataclass
class TrainedModel:
    modality: Modality
    backbone: FeatureExtractor
    head: Head
    config: TrainConfig
    metadata: dict = field(default_factory=dict)

    def scores(self, pixels: np.ndarray) -> np.ndarray:
        from .model import forward

        return forward(self.backbone, self.head, pixels)


class Adam:
    """Adam on a flat parameter vector; epsilon fixed at 1e-8."""

    def __init__(self, n_params: int, learning_rate: float, betas: tuple[float, float]):
        self.lr = learning_rate
        self.b1, self.b2 = betas
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.b1 * self.m + (1.0 - self.b1) * grads
        self.v = self.b2 * self.v + (1.0 - self.b2) * grads * grads
        m_hat = self.m / (1.0 - self.b1**self.t)
        v_hat = self.v / (1.0 - self.b2**self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


def _load_pixel_matrix(manifest: DatasetManifest) -> tuple[np.ndarray, np.ndarray]:
    records = [load_record(ref) for ref in manifest.records]
    pixels = np.stack([r.pixels for r in records])
    labels = np.array([r.label for r in records], dtype=np.int64)
    return pixels, labels


def _digest_array(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()


def train_modality(
    split: DatasetSplit,
    config: TrainConfig,
    extractor: FeatureExtractor,
    head: Head | None = None,
) -> tuple[TrainedModel, list[EpochLog]]:
    """Train one modality model and return the best-validation checkpoint.

    Training metrics in the epoch log are running aggregates over the
    optimization batches (augmentation and dropout active); validation
    metrics come from a clean inference pass.  Non-finite loss or
    parameters abort with a diagnostic naming the epoch and batch.
    """
    if not split.train.records or not split.validation.records:
        raise DataError("training needs non-empty train and validation partitions")
    if split.train.modality != config.modality:
        raise DataError(
            f"config is for {config.modality}, split is {split.train.modality}"
        )
    if head is None:
        spec = build_head(
            config.modality, config.dropout_rate, config.output_activation
        )
        head = Head(spec, extractor.output_dim, seed=derive_seed(config.seed, "head-init"))

    x_train, y_train = _load_pixel_matrix(split.train)
    x_val, y_val = _load_pixel_matrix(split.validation)
    onehot_val = one_hot(y_val)
    val_baseline = _digest_array(x_val)

    policy = config.policy()
    trainable = extractor.trainable
    n_backbone = extractor.get_params().size if trainable else 0
    params = head.get_params()
    if trainable:
        params = np.concatenate([params, extractor.get_params()])
    n_head = head.parameter_count
    adam = Adam(params.size, config.learning_rate, config.adam_betas)

    cached_val_features = None if trainable else extractor.features(x_val)

    logs: list[EpochLog] = []
    best = {"accuracy": -1.0, "epoch": -1, "params": None}
    n = len(y_train)
    for epoch in range(1, config.epochs + 1):
        shuffle_rng = rng_for(config.seed, f"shuffle-epoch{epoch}")
        augment_rng = rng_for(config.seed, f"augment-epoch{epoch}")
        dropout_rng = rng_for(config.seed, f"dropout-epoch{epoch}")
        order = shuffle_rng.permutation(n)

        loss_sum = 0.0
        train_preds = np.empty(n, dtype=np.int64)
        train_labels = np.empty(n, dtype=np.int64)
        cursor = 0
        for start in range(0, n, config.batch_size):
            batch_no = start // config.batch_size + 1
            idx = order[start : start + config.batch_size]
            if policy.enabled:
                batch = np.stack(
                    [apply_augmentation(x_train[i], policy, augment_rng) for i in idx]
                )
            else:
                batch = x_train[idx]
            labels = y_train[idx]
            onehot = one_hot(labels)

            if trainable:
                feats, cache = extractor.forward(batch)
            else:
                feats = extractor.features(batch)
            loss, grad_head, grad_feats, scores = head.loss_and_grads(
                feats, onehot, dropout_rng=dropout_rng, training=True
            )
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, batch_no, f"loss is {loss}")
            grads = grad_head
            if trainable:
                grads = np.concatenate([grads, extractor.backward(cache, grad_feats)])
            params = adam.step(params, grads)
            if not np.all(np.isfinite(params)):
                raise TrainingDivergedError(
                    epoch, batch_no, "parameters became non-finite after update"
                )
            head.set_params(params[:n_head])
            if trainable:
                extractor.set_params(params[n_head:])

            loss_sum += loss * len(idx)
            train_preds[cursor : cursor + len(idx)] = predict_labels(scores)
            train_labels[cursor : cursor + len(idx)] = labels
            cursor += len(idx)

        train_report = report_from_predictions(
            train_labels, train_preds, mean_loss=loss_sum / n
        )

        if _digest_array(x_val) != val_baseline:
            raise RuntimeError("validation pixels changed during training")
        if trainable:
            val_features = extractor.features(x_val)
        else:
            val_features = cached_val_features
        val_scores = head.scores(val_features)
        val_report = report_from_predictions(
            y_val,
            predict_labels(val_scores),
            mean_loss=categorical_cross_entropy(val_scores, onehot_val),
        )
        logs.append(EpochLog(epoch=epoch, train=train_report, validation=val_report))

        if val_report.accuracy > best["accuracy"]:
            best = {
                "accuracy": val_report.accuracy,
                "epoch": epoch,
                "params": params.copy(),
            }

    params = best["params"]
    head.set_params(params[:n_head])
    if trainable:
        extractor.set_params(params[n_head:])
    chosen = logs[best["epoch"] - 1]
    metadata = {
        "epoch_selected": best["epoch"],
        "val_accuracy": chosen.validation.accuracy,
        "val_precision": chosen.validation.precision,
        "val_recall": chosen.validation.recall,
        "val_f1": chosen.validation.f1,
        "val_loss": chosen.validation.mean_loss,
        "train_accuracy": chosen.train.accuracy,
        "train_precision": chosen.train.precision,
        "train_recall": chosen.train.recall,
        "train_f1": chosen.train.f1,
        "train_loss": chosen.train.mean_loss,
        "n_train": len(y_train),
        "n_validation": len(y_val),
        "seed": config.seed,
    }
    model = TrainedModel(
        modality=config.modality,
        backbone=extractor,
        head=head,
        config=config,
        metadata=metadata,
    )
    return model, logs


def evaluate_model(model: TrainedModel, manifest: DatasetManifest) -> EvaluationReport:
    """Clean inference over a manifest: no augmentation, no dropout, argmax labels."""
    if manifest.modality != model.modality:
        raise DataError(
            f"model is {model.modality}, evaluation manifest is {manifest.modality}"
        )
    if not manifest.records:
        raise DataError("empty evaluation set")
    pixels, labels = _load_pixel_matrix(manifest)
    scores = model.scores(pixels)
    return report_from_predictions(
        labels,
        predict_labels(scores),
        mean_loss=categorical_cross_entropy(scores, one_hot(labels)),
    )


def _config_record(config: TrainConfig) -> dict:
    record = dataclasses.asdict(config)
    record["modality"] = str(config.modality)
    record["adam_betas"] = list(config.adam_betas)
    return record


def _config_from_record(record: dict) -> TrainConfig:
    record = dict(record)
    record["modality"] = parse_modality(record["modality"])
    record["adam_betas"] = tuple(record["adam_betas"])
    if record.get("augmentation") is not None:
        record["augmentation"] = AugmentationPolicy(**record["augmentation"])
    return TrainConfig(**record)


def _head_record(spec: HeadSpec) -> dict:
    return {
        "modality": str(spec.modality),
        "output_activation": spec.output_activation,
        "layers": [dataclasses.asdict(layer) for layer in spec.layers],
    }


def _head_from_record(record: dict) -> HeadSpec:
    return HeadSpec(
        modality=parse_modality(record["modality"]),
        layers=tuple(LayerSpec(**layer) for layer in record["layers"]),
        output_activation=record["output_activation"],
    )


def _identity_record(model: TrainedModel) -> dict:
    backbone = model.backbone
    return {
        "modality": str(model.modality),
        "backbone": {
            "name": backbone.name,
            "output_dim": backbone.output_dim,
            "pretrained": backbone.pretrained,
            "frozen": backbone.frozen,
        },
        "head": _head_record(model.head.spec),
        "input_dim": model.head.input_dim,
        "config": _config_record(model.config),
    }


def _canonical_digest(record: dict) -> str:
    canonical = json.dumps(record, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(data)
        os.replace(tmp, path)
    finally:
        tmp.unlink(missing_ok=True)


def save_model(model: TrainedModel, directory: str | Path) -> tuple[Path, Path]:
    """Persist weights then metadata; returns the paths written."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    buffer = io.BytesIO()
    np.savez(
        buffer,
        head=model.head.get_params(),
        backbone=model.backbone.get_params(),
    )
    weights_bytes = buffer.getvalue()
    weights_path = directory / WEIGHTS_FILE
    _atomic_write(weights_path, weights_bytes)

    identity = _identity_record(model)
    record = {
        "format": ARTIFACT_FORMAT,
        **identity,
        "config_digest": _canonical_digest(identity),
        "weights_sha256": hashlib.sha256(weights_bytes).hexdigest(),
        "metrics": dict(model.metadata),
    }
    metadata_path = directory / METADATA_FILE
    _atomic_write(
        metadata_path, (json.dumps(record, indent=2) + "\n").encode("utf-8")
    )
    return weights_path, metadata_path


def save_epoch_logs(logs: list[EpochLog], directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / EPOCH_LOG_FILE
    lines = "".join(json.dumps(log.to_record()) + "\n" for log in logs)
    _atomic_write(path, lines.encode("utf-8"))
    return path


def load_model(directory: str | Path) -> TrainedModel:
    """Restore a persisted model, verifying checksums and identity digest."""
    directory = Path(directory)
    metadata_path = directory / METADATA_FILE
    weights_path = directory / WEIGHTS_FILE
    for path in (metadata_path, weights_path):
        if not path.is_file():
            raise ArtifactError(f"missing artifact file: {path}")
    try:
        record = json.loads(metadata_path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ArtifactError(f"corrupt artifact: unreadable metadata {metadata_path}") from exc

    identity = {
        key: record.get(key)
        for key in ("modality", "backbone", "head", "input_dim", "config")
    }
    if _canonical_digest(identity) != record.get("config_digest"):
        raise ArtifactError(f"config drift: {metadata_path} does not match its digest")

    weights_bytes = weights_path.read_bytes()
    if hashlib.sha256(weights_bytes).hexdigest() != record.get("weights_sha256"):
        raise ArtifactError(f"corrupt artifact: {weights_path} checksum mismatch")
    try:
        blob = np.load(io.BytesIO(weights_bytes))
        head_params = blob["head"]
        backbone_params = blob["backbone"]
    except Exception as exc:
        raise ArtifactError(f"corrupt artifact: unreadable weights {weights_path}") from exc

    config = _config_from_record(record["config"])
    backbone_info = record["backbone"]
    if backbone_info["name"] == TinyConvBackbone.name:
        backbone = TinyConvBackbone(seed=0, frozen=backbone_info["frozen"])
        backbone.set_params(backbone_params)
    else:
        backbone = create_backbone(backbone_info["name"], frozen=backbone_info["frozen"])
    spec = _head_from_record(record["head"])
    head = Head(spec, input_dim=record["input_dim"], seed=0)
    head.set_params(head_params)
    return TrainedModel(
        modality=config.modality,
        backbone=backbone,
        head=head,
        config=config,
        metadata=dict(record.get("metrics", {})),
    )
