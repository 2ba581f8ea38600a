"""Run configuration parsed from a flat `key = value` text file.

Keys are dotted: global settings (`seed`, `dataset.root`, `split.ratio`,
...), per-modality training overrides (`train.clinical.epochs`), and
per-modality augmentation overrides (`augment.radiological.h_flip`).
Relative paths resolve against the directory containing the config file.
Unknown or malformed keys fail loudly with their location.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

from .augment import AugmentationPolicy, policy_for
from .errors import ConfigError
from .fusion import FUSION_MODES, PAIRING_STRATEGIES
from .modality import Modality, parse_modality
from .train import TrainConfig

ENV_CONFIG = "MODALFUSE_CONFIG"

_TRAIN_FIELDS = ("epochs", "batch_size", "learning_rate", "adam_betas",
                 "dropout_rate", "seed", "freeze_backbone")
_AUGMENT_FIELDS = {
    "h_flip": "horizontal_flip",
    "v_flip": "vertical_flip",
    "rotation_deg": "rotation_deg",
}
_ACTIVATIONS = ("sigmoid", "softmax")


@dataclass(frozen=True)
class RunConfig:
    source: Path | None = None
    seed: int = 0
    dataset_root: Path | None = None
    output_dir: Path = Path("output")
    split_ratio: float = 0.9
    backbone_name: str = "densenet121"
    backbone_weights: str | None = None
    output_activation: str = "sigmoid"
    pairing_strategy: str = "synthetic_by_label"
    fusion_mode: str = "soft"
    train_overrides: dict[Modality, dict[str, object]] = field(default_factory=dict)
    augment_overrides: dict[Modality, dict[str, object]] = field(default_factory=dict)

    def require_dataset_root(self) -> Path:
        if self.dataset_root is None:
            raise ConfigError("dataset.root is not set")
        return self.dataset_root

    def augmentation_policy(self, modality: Modality) -> AugmentationPolicy:
        base = policy_for(modality)
        kwargs = {
            "horizontal_flip": base.horizontal_flip,
            "vertical_flip": base.vertical_flip,
            "rotation_deg": base.rotation_deg,
        }
        kwargs.update(self.augment_overrides.get(modality, {}))
        try:
            return AugmentationPolicy(**kwargs)
        except ValueError as exc:
            raise ConfigError(f"invalid augment.{modality} setting: {exc}") from None

    def train_config(self, modality: Modality) -> TrainConfig:
        overrides = dict(self.train_overrides.get(modality, {}))
        kwargs = {
            "modality": modality,
            "seed": overrides.pop("seed", self.seed),
            "output_activation": self.output_activation,
            "augmentation": self.augmentation_policy(modality),
        }
        kwargs.update(overrides)
        try:
            return TrainConfig(**kwargs)
        except ValueError as exc:
            raise ConfigError(f"invalid train.{modality} setting: {exc}") from None


def _to_int(key: str, value: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{key} expects an integer, got {value!r}") from None


def _to_float(key: str, value: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{key} expects a number, got {value!r}") from None


def _to_bool(key: str, value: str) -> bool:
    lowered = value.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    raise ConfigError(f"{key} expects true or false, got {value!r}")


def _to_betas(key: str, value: str) -> tuple[float, float]:
    parts = [p.strip() for p in value.split(",")]
    if len(parts) != 2:
        raise ConfigError(f"{key} expects two comma-separated numbers, got {value!r}")
    return (_to_float(key, parts[0]), _to_float(key, parts[1]))


def _to_choice(key: str, value: str, choices: tuple[str, ...]) -> str:
    if value not in choices:
        raise ConfigError(f"{key} must be one of {', '.join(choices)}; got {value!r}")
    return value


def parse_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    base_dir = path.parent

    raw: dict[str, tuple[int, str]] = {}
    for lineno, line in enumerate(
        path.read_text(encoding="utf-8").splitlines(), start=1
    ):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        if key in raw:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        raw[key] = (lineno, value)

    fields: dict[str, object] = {"source": path}
    train_overrides: dict[Modality, dict[str, object]] = {}
    augment_overrides: dict[Modality, dict[str, object]] = {}

    for key, (lineno, value) in raw.items():
        where = f"{path}:{lineno}"
        if key == "seed":
            fields["seed"] = _to_int(key, value)
        elif key == "dataset.root":
            fields["dataset_root"] = base_dir / value
        elif key == "output.dir":
            fields["output_dir"] = base_dir / value
        elif key == "split.ratio":
            ratio = _to_float(key, value)
            if not 0.0 < ratio < 1.0:
                raise ConfigError(f"split.ratio must lie in (0, 1), got {ratio}")
            fields["split_ratio"] = ratio
        elif key == "backbone.name":
            fields["backbone_name"] = value
        elif key == "backbone.weights":
            fields["backbone_weights"] = str(base_dir / value)
        elif key == "head.output_activation":
            fields["output_activation"] = _to_choice(key, value, _ACTIVATIONS)
        elif key == "pairing.strategy":
            fields["pairing_strategy"] = _to_choice(key, value, PAIRING_STRATEGIES)
        elif key == "fusion.mode":
            fields["fusion_mode"] = _to_choice(key, value, FUSION_MODES)
        elif key.startswith("train.") or key.startswith("augment."):
            parts = key.split(".")
            if len(parts) != 3:
                raise ConfigError(f"{where}: unknown configuration key {key!r}")
            section, modality_name, setting = parts
            try:
                modality = parse_modality(modality_name)
            except ValueError:
                raise ConfigError(
                    f"{where}: unknown configuration key {key!r}"
                ) from None
            if section == "train":
                if setting not in _TRAIN_FIELDS:
                    raise ConfigError(f"{where}: unknown configuration key {key!r}")
                if setting in ("epochs", "batch_size", "seed"):
                    parsed: object = _to_int(key, value)
                elif setting in ("learning_rate", "dropout_rate"):
                    parsed = _to_float(key, value)
                elif setting == "adam_betas":
                    parsed = _to_betas(key, value)
                else:
                    parsed = _to_bool(key, value)
                train_overrides.setdefault(modality, {})[setting] = parsed
            else:
                if setting not in _AUGMENT_FIELDS:
                    raise ConfigError(f"{where}: unknown configuration key {key!r}")
                if setting == "rotation_deg":
                    parsed = _to_float(key, value)
                else:
                    parsed = _to_bool(key, value)
                augment_overrides.setdefault(modality, {})[
                    _AUGMENT_FIELDS[setting]
                ] = parsed
        else:
            raise ConfigError(f"{where}: unknown configuration key {key!r}")

    if "output_dir" not in fields:
        fields["output_dir"] = base_dir / "output"
    return RunConfig(
        train_overrides=train_overrides,
        augment_overrides=augment_overrides,
        **fields,
    )


def load_config(explicit_path: str | None = None, env=None) -> RunConfig:
    """Load from an explicit path, falling back to $MODALFUSE_CONFIG."""
    env = os.environ if env is None else env
    if explicit_path:
        return parse_config(explicit_path)
    fallback = env.get(ENV_CONFIG)
    if fallback:
        return parse_config(fallback)
    raise ConfigError(
        f"no configuration given: pass --config PATH or set {ENV_CONFIG}"
    )
