"""Feature-extraction backbones.

Models consume features through the FeatureExtractor contract: a named
extractor maps a batch of (N, H, W, 3) pixels in [0,1] to (N, output_dim)
features.  Production use targets a pretrained DenseNet-121 trunk (pooled
feature size 1024, loaded through torch, always frozen).  The test and
default backbone is a small deterministic convolutional stack with 64
output features that needs no pretrained weights and supports training,
so the full pipeline including an unfrozen backbone can be exercised
end to end in seconds.
"""

from __future__ import annotations

import abc

import numpy as np

from .errors import ConfigError

DENSENET_FEATURE_DIM = 1024
TINYCONV_FEATURE_DIM = 64


class FeatureExtractor(abc.ABC):
    """Maps pixel batches to fixed-width feature vectors."""

    name: str
    output_dim: int
    pretrained: bool
    frozen: bool

    @abc.abstractmethod
    def features(self, batch: np.ndarray) -> np.ndarray:
        """Compute (N, output_dim) float64 features for an (N, H, W, 3) batch."""

    @property
    def trainable(self) -> bool:
        return not self.frozen

    def get_params(self) -> np.ndarray:
        return np.empty(0, dtype=np.float64)

    def set_params(self, flat: np.ndarray) -> None:
        if flat.size:
            raise ValueError(f"{self.name} takes no parameters, got {flat.size}")

    def forward(self, batch: np.ndarray):
        """Training-mode forward; returns (features, cache) for backward."""
        return self.features(batch), None

    def backward(self, cache, grad_features: np.ndarray) -> np.ndarray:
        """Gradient of the loss w.r.t. the flat parameter vector."""
        raise NotImplementedError(f"{self.name} does not support training")


def _avgpool(x: np.ndarray, k: int) -> np.ndarray:
    n, h, w, c = x.shape
    hk, wk = h // k, w // k
    cropped = x[:, : hk * k, : wk * k, :]
    return cropped.reshape(n, hk, k, wk, k, c).mean(axis=(2, 4))


def _avgpool_backward(grad: np.ndarray, in_shape: tuple, k: int) -> np.ndarray:
    n, h, w, c = in_shape
    hk, wk = h // k, w // k
    out = np.zeros(in_shape, dtype=np.float64)
    spread = np.repeat(np.repeat(grad, k, axis=1), k, axis=2) / (k * k)
    out[:, : hk * k, : wk * k, :] = spread
    return out


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    # (N, H, W, C) -> (N, H-k+1, W-k+1, k*k*C), window index order (di, dj, c)
    view = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(1, 2))
    n, ho, wo = view.shape[:3]
    return np.ascontiguousarray(view.transpose(0, 1, 2, 4, 5, 3)).reshape(
        n, ho, wo, -1
    )


def _conv_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray):
    k = weight.shape[0]
    cols = _im2col(x, k)
    out = cols @ weight.reshape(-1, weight.shape[-1]) + bias
    return out, cols


def _conv_backward(grad_out: np.ndarray, x: np.ndarray, cols: np.ndarray, weight):
    k, _, c_in, c_out = weight.shape
    n, ho, wo, _ = grad_out.shape
    flat_cols = cols.reshape(-1, k * k * c_in)
    flat_grad = grad_out.reshape(-1, c_out)
    grad_w = (flat_cols.T @ flat_grad).reshape(weight.shape)
    grad_b = grad_out.sum(axis=(0, 1, 2))
    grad_cols = (flat_grad @ weight.reshape(-1, c_out).T).reshape(
        n, ho, wo, k, k, c_in
    )
    grad_x = np.zeros_like(x)
    for di in range(k):
        for dj in range(k):
            grad_x[:, di : di + ho, dj : dj + wo, :] += grad_cols[:, :, :, di, dj, :]
    return grad_x, grad_w, grad_b


def _glorot(rng: np.random.Generator, shape: tuple, fan_in: int, fan_out: int):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class TinyConvBackbone(FeatureExtractor):
    """Small deterministic conv stack: pool4 - conv3x3(16) - pool2 - conv3x3(64) - GAP.

    Initialized from an explicit seed; supports full backprop so the
    freeze switch can actually be exercised.
    """

    name = "tinyconv64"
    output_dim = TINYCONV_FEATURE_DIM
    pretrained = False

    def __init__(self, seed: int = 0, frozen: bool = True):
        self.frozen = frozen
        rng = np.random.default_rng(seed)
        self.w1 = _glorot(rng, (3, 3, 3, 16), fan_in=27, fan_out=144)
        self.b1 = np.zeros(16)
        self.w2 = _glorot(rng, (3, 3, 16, 64), fan_in=144, fan_out=576)
        self.b2 = np.zeros(64)

    def get_params(self) -> np.ndarray:
        return np.concatenate(
            [self.w1.ravel(), self.b1, self.w2.ravel(), self.b2]
        )

    def set_params(self, flat: np.ndarray) -> None:
        sizes = [self.w1.size, self.b1.size, self.w2.size, self.b2.size]
        if flat.size != sum(sizes):
            raise ValueError(
                f"expected {sum(sizes)} backbone parameters, got {flat.size}"
            )
        offset = 0
        for attr, size in zip(("w1", "b1", "w2", "b2"), sizes):
            shape = getattr(self, attr).shape
            setattr(self, attr, flat[offset : offset + size].reshape(shape).copy())
            offset += size

    def forward(self, batch: np.ndarray):
        x = np.asarray(batch, dtype=np.float64)
        if x.ndim != 4 or x.shape[-1] != 3:
            raise ValueError(f"expected (N, H, W, 3) batch, got shape {x.shape}")
        p1 = _avgpool(x, 4)
        z1, cols1 = _conv_forward(p1, self.w1, self.b1)
        a1 = np.maximum(z1, 0.0)
        p2 = _avgpool(a1, 2)
        z2, cols2 = _conv_forward(p2, self.w2, self.b2)
        a2 = np.maximum(z2, 0.0)
        feats = a2.mean(axis=(1, 2))
        cache = (x.shape, p1, z1, a1.shape, p2, z2, cols1, cols2, a2.shape)
        return feats, cache

    def features(self, batch: np.ndarray) -> np.ndarray:
        feats, _ = self.forward(batch)
        return feats

    def backward(self, cache, grad_features: np.ndarray) -> np.ndarray:
        x_shape, p1, z1, a1_shape, p2, z2, cols1, cols2, a2_shape = cache
        n, ho, wo, _ = a2_shape
        grad_a2 = np.broadcast_to(
            grad_features[:, None, None, :] / (ho * wo), a2_shape
        )
        grad_z2 = grad_a2 * (z2 > 0.0)
        grad_p2, grad_w2, grad_b2 = _conv_backward(grad_z2, p2, cols2, self.w2)
        grad_a1 = _avgpool_backward(grad_p2, a1_shape, 2)
        grad_z1 = grad_a1 * (z1 > 0.0)
        _, grad_w1, grad_b1 = _conv_backward(grad_z1, p1, cols1, self.w1)
        return np.concatenate(
            [grad_w1.ravel(), grad_b1, grad_w2.ravel(), grad_b2]
        )


class DenseNet121Backbone(FeatureExtractor):
    """Pretrained DenseNet-121 trunk via torchvision, pooled to 1024 features.

    Always frozen; inference only.  torch/torchvision are imported lazily
    so the rest of the package works without them.
    """

    name = "densenet121"
    output_dim = DENSENET_FEATURE_DIM
    pretrained = True
    frozen = True

    def __init__(self, weights: str | None = "DEFAULT"):
        try:
            import torch
            import torchvision
        except ImportError as exc:
            raise ConfigError(
                "backbone densenet121 needs the optional torch/torchvision "
                "dependencies (install the 'densenet' extra)"
            ) from exc
        self._torch = torch
        model = torchvision.models.densenet121(weights=weights)
        model.eval()
        for param in model.parameters():
            param.requires_grad_(False)
        self._trunk = model.features

    def features(self, batch: np.ndarray) -> np.ndarray:
        torch = self._torch
        x = np.asarray(batch, dtype=np.float32).transpose(0, 3, 1, 2)
        with torch.no_grad():
            maps = self._trunk(torch.from_numpy(x))
            maps = torch.nn.functional.relu(maps)
            pooled = torch.nn.functional.adaptive_avg_pool2d(maps, (1, 1))
        return pooled.flatten(1).numpy().astype(np.float64)


def create_backbone(
    name: str, seed: int = 0, frozen: bool = True, weights: str | None = "DEFAULT"
) -> FeatureExtractor:
    if name == TinyConvBackbone.name:
        return TinyConvBackbone(seed=seed, frozen=frozen)
    if name == DenseNet121Backbone.name:
        if not frozen:
            raise ConfigError("backbone densenet121 is inference-only; it cannot be unfrozen")
        return DenseNet121Backbone(weights=weights)
    raise ConfigError(
        f"unknown backbone {name!r}; known: "
        f"{TinyConvBackbone.name}, {DenseNet121Backbone.name}"
    )
