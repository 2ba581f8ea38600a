"""Classifier heads, loss, and scoring.

Each modality gets a small dense head on top of the feature extractor:

    clinical          dense(128, relu) - dropout - dense(32, relu) - dense(2)
    radiological      dense(128, relu) - dropout - dense(64, relu) - dense(2)
    histopathological dense(128, relu) - dense(2)

The 2-unit output layer uses independent sigmoids by default, so the two
class scores each lie in [0,1] but do not sum to 1; softmax is available
behind the output_activation switch.  Training minimizes categorical
cross-entropy on scores clipped to [eps, 1-eps], with gradients computed
analytically here (including through the clip, whose gradient is zero in
the saturated regions).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .backbones import FeatureExtractor
from .modality import TARGET_RESOLUTION, Modality

EPS = 1e-7

OUTPUT_ACTIVATIONS = ("sigmoid", "softmax")


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "dense" | "dropout"
    width: int = 0
    activation: str = ""  # "relu" | "sigmoid" | "softmax" for dense layers
    rate: float = 0.0


def dense(width: int, activation: str) -> LayerSpec:
    if width <= 0:
        raise ValueError(f"dense width must be positive, got {width}")
    return LayerSpec(kind="dense", width=width, activation=activation)


def dropout(rate: float) -> LayerSpec:
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    return LayerSpec(kind="dropout", rate=rate)


@dataclass(frozen=True)
class HeadSpec:
    modality: Modality
    layers: tuple[LayerSpec, ...]
    output_activation: str = "sigmoid"

    def __post_init__(self):
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(
                f"output_activation must be one of {OUTPUT_ACTIVATIONS}, "
                f"got {self.output_activation!r}"
            )
        if not self.layers:
            raise ValueError("head needs at least the output layer")
        last = self.layers[-1]
        if last.kind != "dense" or last.width != 2:
            raise ValueError("final head layer must be dense with 2 units")
        if last.activation != self.output_activation:
            raise ValueError("final layer activation must match output_activation")

    def parameter_count(self, input_dim: int) -> int:
        total = 0
        width = input_dim
        for layer in self.layers:
            if layer.kind == "dense":
                total += width * layer.width + layer.width
                width = layer.width
        return total


def build_head(
    modality: Modality,
    dropout_rate: float = 0.5,
    output_activation: str = "sigmoid",
) -> HeadSpec:
    out = dense(2, output_activation)
    if modality is Modality.CLINICAL:
        layers = (dense(128, "relu"), dropout(dropout_rate), dense(32, "relu"), out)
    elif modality is Modality.RADIOLOGICAL:
        layers = (dense(128, "relu"), dropout(dropout_rate), dense(64, "relu"), out)
    else:
        layers = (dense(128, "relu"), out)
    return HeadSpec(modality=modality, layers=layers, output_activation=output_activation)


def one_hot(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, 2), dtype=np.float64)
    out[np.arange(labels.size), labels] = 1.0
    return out


def categorical_cross_entropy(scores: np.ndarray, onehot: np.ndarray) -> float:
    """Mean over the batch of -sum_c y_c log(p_c), scores clipped to [eps, 1-eps]."""
    scores = np.asarray(scores, dtype=np.float64)
    onehot = np.asarray(onehot, dtype=np.float64)
    if scores.shape != onehot.shape:
        raise ValueError(
            f"scores shape {scores.shape} does not match labels shape {onehot.shape}"
        )
    clipped = np.clip(scores, EPS, 1.0 - EPS)
    return float(np.mean(-np.sum(onehot * np.log(clipped), axis=1)))


class Head:
    """A trainable dense head with explicit forward/backward."""

    def __init__(self, spec: HeadSpec, input_dim: int, seed: int = 0):
        self.spec = spec
        self.input_dim = input_dim
        rng = np.random.default_rng(seed)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        width = input_dim
        for layer in spec.layers:
            if layer.kind != "dense":
                continue
            limit = np.sqrt(6.0 / (width + layer.width))
            self.weights.append(rng.uniform(-limit, limit, size=(width, layer.width)))
            self.biases.append(np.zeros(layer.width))
            width = layer.width

    @property
    def parameter_count(self) -> int:
        return self.spec.parameter_count(self.input_dim)

    def get_params(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def set_params(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.parameter_count:
            raise ValueError(
                f"expected {self.parameter_count} parameters, got {flat.size}"
            )
        offset = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = flat[offset : offset + w.size].reshape(w.shape).copy()
            offset += w.size
            self.biases[i] = flat[offset : offset + b.size].copy()
            offset += b.size

    def _activate_output(self, z: np.ndarray) -> np.ndarray:
        if self.spec.output_activation == "sigmoid":
            return expit(z)
        shifted = z - z.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)

    def forward(
        self,
        features: np.ndarray,
        training: bool = False,
        dropout_rng: np.random.Generator | None = None,
    ):
        """Score a feature batch; returns (scores, cache).

        Dropout fires only when training=True, inverted-scaled by its keep
        probability, with masks drawn from dropout_rng.
        """
        a = np.asarray(features, dtype=np.float64)
        if a.ndim != 2 or a.shape[1] != self.input_dim:
            raise ValueError(
                f"expected (N, {self.input_dim}) features, got shape {a.shape}"
            )
        if training and any(l.kind == "dropout" and l.rate > 0 for l in self.spec.layers):
            if dropout_rng is None:
                raise ValueError("training forward with dropout needs dropout_rng")
        steps = []  # per layer: ("dense", a_in, z) | ("dropout", mask, keep)
        dense_i = 0
        for layer in self.spec.layers:
            if layer.kind == "dropout":
                if training and layer.rate > 0.0:
                    keep = 1.0 - layer.rate
                    mask = (dropout_rng.random(a.shape) >= layer.rate).astype(
                        np.float64
                    )
                    a = a * mask / keep
                    steps.append(("dropout", mask, keep))
                else:
                    steps.append(("dropout", None, 1.0))
                continue
            z = a @ self.weights[dense_i] + self.biases[dense_i]
            steps.append(("dense", a, z))
            dense_i += 1
            if dense_i == len(self.weights):  # output layer
                a = self._activate_output(z)
            elif layer.activation == "relu":
                a = np.maximum(z, 0.0)
            else:
                raise ValueError(f"unsupported hidden activation {layer.activation!r}")
        return a, steps

    def scores(self, features: np.ndarray) -> np.ndarray:
        """Inference-mode scoring: deterministic, dropout disabled."""
        out, _ = self.forward(features, training=False)
        return out

    def loss_and_grads(
        self,
        features: np.ndarray,
        onehot: np.ndarray,
        dropout_rng: np.random.Generator | None = None,
        training: bool = True,
    ):
        """Loss plus analytic gradients.

        Returns (loss, flat parameter gradient, gradient w.r.t. features,
        scores).  The feature gradient feeds backbone backprop when the
        backbone is unfrozen.
        """
        scores, steps = self.forward(
            features, training=training, dropout_rng=dropout_rng
        )
        onehot = np.asarray(onehot, dtype=np.float64)
        loss = categorical_cross_entropy(scores, onehot)
        n = scores.shape[0]

        clipped = np.clip(scores, EPS, 1.0 - EPS)
        grad_scores = np.where(
            (scores >= EPS) & (scores <= 1.0 - EPS), -onehot / clipped / n, 0.0
        )
        if self.spec.output_activation == "sigmoid":
            grad_z = grad_scores * scores * (1.0 - scores)
        else:
            inner = np.sum(grad_scores * scores, axis=1, keepdims=True)
            grad_z = scores * (grad_scores - inner)

        grad_w = [np.zeros_like(w) for w in self.weights]
        grad_b = [np.zeros_like(b) for b in self.biases]
        dense_i = len(self.weights) - 1
        grad = grad_z
        upstream_is_z = True  # grad currently w.r.t. the pre-activation
        for step in reversed(steps):
            if step[0] == "dropout":
                _, mask, keep = step
                if mask is not None:
                    grad = grad * mask / keep
                continue
            _, a_in, z = step
            if not upstream_is_z:
                grad = grad * (z > 0.0)  # relu
            grad_w[dense_i] = a_in.T @ grad
            grad_b[dense_i] = grad.sum(axis=0)
            grad = grad @ self.weights[dense_i].T
            dense_i -= 1
            upstream_is_z = False
        parts = []
        for gw, gb in zip(grad_w, grad_b):
            parts.append(gw.ravel())
            parts.append(gb)
        return loss, np.concatenate(parts), grad, scores


def forward(
    extractor: FeatureExtractor, head: Head, batch: np.ndarray
) -> np.ndarray:
    """Inference scores for a pixel batch: one (score_normal, score_cancer) row each."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.shape[0] == 0:
        return np.zeros((0, 2), dtype=np.float64)
    expected = TARGET_RESOLUTION[head.spec.modality]
    if batch.ndim != 4 or batch.shape[1] != expected or batch.shape[2] != expected:
        actual = tuple(batch.shape[1:3]) if batch.ndim == 4 else batch.shape
        raise ValueError(
            f"{head.spec.modality} expects {expected}x{expected} input, got {actual}"
        )
    return head.scores(extractor.features(batch))


def predict_labels(scores: np.ndarray) -> np.ndarray:
    """Argmax over the two class scores; an exact tie resolves to label 0."""
    scores = np.asarray(scores, dtype=np.float64)
    return (scores[:, 1] > scores[:, 0]).astype(np.int64)
