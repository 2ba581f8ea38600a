"""Validation-accuracy-weighted late fusion.

Each modality model contributes its two class scores; fusion weights are
the validation accuracies normalized to sum to 1, so a stronger model
counts for more.  The fused label is the argmax over the weighted
per-class sums, with an exact tie going to 0 (non-cancerous).

A prediction normally requires all three modalities.  Partial fusion
(renormalizing over the modalities present) exists only behind an
explicit flag and marks its output as degraded.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .ingest import DatasetManifest, RecordRef, load_pixels
from .metrics import EvaluationReport, report_from_predictions
from .model import categorical_cross_entropy, one_hot
from .modality import MODALITIES, Modality, parse_modality
from .seeding import rng_for

log = logging.getLogger(__name__)

PAIRING_STRATEGIES = ("synthetic_by_label", "by_group_id")
FUSION_MODES = ("soft", "hard")


@dataclass(frozen=True)
class EnsembleWeights:
    w_clinical: float
    w_radiological: float
    w_histopathological: float

    def __post_init__(self):
        values = (self.w_clinical, self.w_radiological, self.w_histopathological)
        if any(w <= 0.0 for w in values):
            raise ValueError(f"weights must be positive, got {values}")
        if abs(sum(values) - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1 within 1e-9, got {sum(values)}")

    def __getitem__(self, modality: Modality) -> float:
        return {
            Modality.CLINICAL: self.w_clinical,
            Modality.RADIOLOGICAL: self.w_radiological,
            Modality.HISTOPATHOLOGICAL: self.w_histopathological,
        }[modality]

    def as_map(self) -> dict[Modality, float]:
        return {m: self[m] for m in MODALITIES}


@dataclass(frozen=True)
class MultimodalSample:
    sample_id: str
    refs: dict[Modality, RecordRef]
    label: int

    def __post_init__(self):
        if set(self.refs) != set(MODALITIES):
            missing = sorted(str(m) for m in set(MODALITIES) - set(self.refs))
            raise ValueError(f"sample {self.sample_id} missing modalities: {missing}")


@dataclass(frozen=True)
class MultimodalManifest:
    samples: tuple[MultimodalSample, ...]
    strategy: str
    seed: int | None = None

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class FusedPrediction:
    sample_id: str | None
    per_modality_scores: dict[Modality, tuple[float, float]]
    weighted_scores: tuple[float, float]
    label: int
    degraded: bool = False

    def to_record(self) -> dict:
        record: dict = {"sample_id": self.sample_id}
        for modality in MODALITIES:
            scores = self.per_modality_scores.get(modality)
            if scores is not None:
                record[f"{modality}_normal"] = scores[0]
                record[f"{modality}_cancer"] = scores[1]
        record["weighted_normal"] = self.weighted_scores[0]
        record["weighted_cancer"] = self.weighted_scores[1]
        record["label"] = self.label
        record["degraded"] = self.degraded
        return record


def derive_weights(val_acc: dict[Modality, float]) -> EnsembleWeights:
    """w_m = acc_m / sum of accuracies.

    The denominator is accumulated in sorted value order, so permuting
    the map permutes the weights bit-exactly.
    """
    missing = [str(m) for m in MODALITIES if m not in val_acc]
    if missing:
        raise ValueError(f"missing validation accuracy for: {missing}")
    for modality in MODALITIES:
        if val_acc[modality] <= 0.0:
            raise ValueError(
                f"validation accuracy for {modality} must be positive, "
                f"got {val_acc[modality]}"
            )
    total = 0.0
    for value in sorted(val_acc[m] for m in MODALITIES):
        total += value
    return EnsembleWeights(
        w_clinical=val_acc[Modality.CLINICAL] / total,
        w_radiological=val_acc[Modality.RADIOLOGICAL] / total,
        w_histopathological=val_acc[Modality.HISTOPATHOLOGICAL] / total,
    )


def _validate_scores(scores: dict[Modality, np.ndarray]) -> dict[Modality, np.ndarray]:
    out = {}
    for modality, vector in scores.items():
        vector = np.asarray(vector, dtype=np.float64).reshape(-1)
        if vector.shape != (2,):
            raise ValueError(
                f"{modality} score vector must have 2 components, got {vector.shape}"
            )
        if vector.min() < 0.0 or vector.max() > 1.0:
            raise ValueError(f"{modality} scores must lie in [0, 1], got {vector}")
        out[modality] = vector
    return out


def fuse(
    scores: dict[Modality, np.ndarray],
    weights: EnsembleWeights,
    mode: str = "soft",
    allow_partial: bool = False,
    sample_id: str | None = None,
) -> FusedPrediction:
    """Combine per-modality score vectors into one binary decision.

    soft mode weights the raw class scores; hard mode weights each
    modality's argmax vote instead.  A missing modality is an error
    unless allow_partial is set, in which case the remaining weights are
    renormalized and the prediction is marked degraded.
    """
    if mode not in FUSION_MODES:
        raise ValueError(f"fusion mode must be one of {FUSION_MODES}, got {mode!r}")
    scores = _validate_scores(scores)
    present = [m for m in MODALITIES if m in scores]
    absent = [str(m) for m in MODALITIES if m not in scores]
    if absent and not allow_partial:
        raise DataError(f"incomplete modality set: missing {absent}")
    if not present:
        raise DataError("incomplete modality set: no scores at all")

    weight_sum = sum(weights[m] for m in present)
    weighted = np.zeros(2, dtype=np.float64)
    for modality in present:
        w = weights[modality] / weight_sum
        if mode == "soft":
            contribution = scores[modality]
        else:
            vote = 1 if scores[modality][1] > scores[modality][0] else 0
            contribution = np.array([1.0 - vote, float(vote)])
        weighted += w * contribution
    label = int(weighted[1] > weighted[0])
    return FusedPrediction(
        sample_id=sample_id,
        per_modality_scores={m: (float(s[0]), float(s[1])) for m, s in scores.items()},
        weighted_scores=(float(weighted[0]), float(weighted[1])),
        label=label,
        degraded=bool(absent),
    )


def build_multimodal_manifest(
    manifests: dict[Modality, DatasetManifest],
    strategy: str = "synthetic_by_label",
    seed: int = 0,
) -> MultimodalManifest:
    """Pair records across the three per-modality manifests.

    synthetic_by_label randomly matches same-label records (seeded, each
    record used at most once); by_group_id inner-joins on group_id with
    lexicographically-first record per (group, modality) and skips groups
    whose labels disagree.
    """
    missing = [str(m) for m in MODALITIES if m not in manifests]
    if missing:
        raise DataError(f"missing manifests for: {missing}")
    for modality in MODALITIES:
        if not manifests[modality].records:
            raise DataError(f"manifest for {modality} is empty")
    if strategy == "synthetic_by_label":
        samples = _pair_by_label(manifests, seed)
    elif strategy == "by_group_id":
        samples = _pair_by_group(manifests)
    else:
        raise DataError(
            f"unknown pairing strategy {strategy!r}; known: {PAIRING_STRATEGIES}"
        )
    return MultimodalManifest(samples=tuple(samples), strategy=strategy, seed=seed)


def _pair_by_label(
    manifests: dict[Modality, DatasetManifest], seed: int
) -> list[MultimodalSample]:
    samples: list[MultimodalSample] = []
    for label in (0, 1):
        shuffled: dict[Modality, list[RecordRef]] = {}
        for modality in MODALITIES:
            members = [r for r in manifests[modality].records if r.label == label]
            rng = rng_for(seed, f"pairing:{label}:{modality}")
            shuffled[modality] = [members[i] for i in rng.permutation(len(members))]
        counts = {m: len(shuffled[m]) for m in MODALITIES}
        n = min(counts.values())
        if n < max(counts.values()):
            log.warning(
                "label %d: pairing truncated to %d samples (counts %s)",
                label,
                n,
                {str(m): c for m, c in counts.items()},
            )
        for k in range(n):
            samples.append(
                MultimodalSample(
                    sample_id=f"syn-{label}-{k:04d}",
                    refs={m: shuffled[m][k] for m in MODALITIES},
                    label=label,
                )
            )
    return samples


def _pair_by_group(
    manifests: dict[Modality, DatasetManifest]
) -> list[MultimodalSample]:
    per_modality: dict[Modality, dict[str, RecordRef]] = {}
    for modality in MODALITIES:
        chosen: dict[str, RecordRef] = {}
        for record in manifests[modality].records:
            if record.group_id is None:
                continue
            held = chosen.get(record.group_id)
            if held is None or record.id < held.id:
                chosen[record.group_id] = record
        per_modality[modality] = chosen
    common = set.intersection(*(set(per_modality[m]) for m in MODALITIES))
    if not common:
        raise DataError("by_group_id pairing found no group present in all modalities")
    samples = []
    for group in sorted(common):
        refs = {m: per_modality[m][group] for m in MODALITIES}
        labels = {r.label for r in refs.values()}
        if len(labels) != 1:
            log.warning("group %s has conflicting labels across modalities; skipped", group)
            continue
        samples.append(
            MultimodalSample(sample_id=group, refs=refs, label=labels.pop())
        )
    if not samples:
        raise DataError("by_group_id pairing left no label-consistent samples")
    return samples


def fuse_samples(
    samples: tuple[MultimodalSample, ...] | list[MultimodalSample],
    models: dict[Modality, object],
    weights: EnsembleWeights,
    mode: str = "soft",
    allow_partial: bool = False,
) -> list[FusedPrediction]:
    """Score every sample with its per-modality models and fuse.

    `models` values need `.modality` and `.scores(pixels)`; images are
    batched per modality for one inference pass each.  Missing models
    are fatal unless allow_partial is set, in which case fusion runs
    over the modalities that do have one.
    """
    if not samples:
        raise DataError("no multimodal samples to fuse")
    present = [m for m in MODALITIES if models.get(m) is not None]
    for modality in MODALITIES:
        if modality not in present and not allow_partial:
            raise DataError(f"incomplete modality set: no model for {modality}")
    if not present:
        raise DataError("incomplete modality set: no models at all")
    for modality in present:
        if models[modality].modality != modality:
            raise DataError(
                f"model registered for {modality} reports {models[modality].modality}"
            )
    score_rows: dict[Modality, np.ndarray] = {}
    for modality in present:
        pixels = np.stack(
            [load_pixels(s.refs[modality].path, modality) for s in samples]
        )
        score_rows[modality] = models[modality].scores(pixels)
    return [
        fuse(
            {m: score_rows[m][i] for m in present},
            weights,
            mode=mode,
            allow_partial=allow_partial,
            sample_id=sample.sample_id,
        )
        for i, sample in enumerate(samples)
    ]


def evaluate_fused(
    samples: tuple[MultimodalSample, ...] | list[MultimodalSample],
    predictions: list[FusedPrediction],
) -> EvaluationReport:
    """Confusion-based report for fused predictions against sample labels."""
    if len(samples) != len(predictions):
        raise ValueError(
            f"{len(predictions)} predictions for {len(samples)} samples"
        )
    labels = np.array([s.label for s in samples], dtype=np.int64)
    fused_labels = np.array([p.label for p in predictions], dtype=np.int64)
    weighted = np.array([p.weighted_scores for p in predictions], dtype=np.float64)
    return report_from_predictions(
        labels,
        fused_labels,
        mean_loss=categorical_cross_entropy(weighted, one_hot(labels)),
    )


def evaluate_ensemble(
    samples: tuple[MultimodalSample, ...] | list[MultimodalSample],
    models: dict[Modality, object],
    weights: EnsembleWeights,
    mode: str = "soft",
    allow_partial: bool = False,
) -> EvaluationReport:
    predictions = fuse_samples(
        samples, models, weights, mode=mode, allow_partial=allow_partial
    )
    return evaluate_fused(samples, predictions)


def write_ensemble_weights(
    path: str | Path,
    weights: EnsembleWeights,
    val_acc: dict[Modality, float],
    strategy: str,
    seed: int | None,
) -> None:
    """Line-oriented record: one `modality  val_accuracy  weight` row per
    modality, then `strategy` and `seed` rows."""
    lines = [
        f"{modality}\t{val_acc[modality]:.10f}\t{weights[modality]:.10f}"
        for modality in MODALITIES
    ]
    lines.append(f"strategy\t{strategy}")
    lines.append(f"seed\t{'' if seed is None else seed}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def read_ensemble_weights(
    path: str | Path,
) -> tuple[EnsembleWeights, dict[Modality, float], str, int | None]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"ensemble weights file not found: {path}")
    values: dict[Modality, float] = {}
    accuracies: dict[Modality, float] = {}
    strategy = ""
    seed: int | None = None
    for lineno, line in enumerate(
        path.read_text(encoding="utf-8").splitlines(), start=1
    ):
        if not line.strip():
            continue
        fields = line.split("\t")
        if fields[0] == "strategy" and len(fields) == 2:
            strategy = fields[1]
        elif fields[0] == "seed" and len(fields) == 2:
            seed = int(fields[1]) if fields[1] else None
        elif len(fields) == 3:
            modality = parse_modality(fields[0])
            accuracies[modality] = float(fields[1])
            values[modality] = float(fields[2])
        else:
            raise DataError(f"{path}:{lineno}: unrecognized ensemble weights line")
    missing = [str(m) for m in MODALITIES if m not in values]
    if missing:
        raise DataError(f"{path}: missing weight rows for {missing}")
    weights = EnsembleWeights(
        w_clinical=values[Modality.CLINICAL],
        w_radiological=values[Modality.RADIOLOGICAL],
        w_histopathological=values[Modality.HISTOPATHOLOGICAL],
    )
    return weights, accuracies, strategy, seed
