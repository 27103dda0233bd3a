"""Frozen VGG-style convolutional extractor and a trainable softmax head."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensorio
from .dataset import ClassLabel

log = logging.getLogger(__name__)

N_CLASSES = len(ClassLabel)

DESK_CHANNELS = (8, 16, 32, 64, 64)
VGG16_CHANNELS = (64, 128, 256, 512, 512)
VGG16_CONVS = (2, 2, 3, 3, 3)


class WeightLoadError(ValueError):
    pass


@dataclass(frozen=True)
class ConvBlockSpec:
    n_convs: int
    out_channels: int

    def __post_init__(self):
        if self.n_convs < 1 or self.out_channels < 1:
            raise ValueError("a block needs at least one conv and one channel")


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FeatureExtractor:
    """Five conv blocks with fixed weights.

    ``layers[b][c]`` is a ``(kernel, bias)`` pair with kernel shape
    ``[3, 3, c_in, c_out]``. All arrays are read-only.
    """

    blocks: tuple
    layers: tuple
    in_channels: int
    source: str
    input_size: tuple = (256, 256)
    frozen: bool = field(default=True, init=False)

    def __post_init__(self):
        if len(self.blocks) != 5:
            raise ValueError(f"extractor needs exactly 5 blocks, got {len(self.blocks)}")
        for convs in self.layers:
            for k, b in convs:
                if k.flags.writeable or b.flags.writeable:
                    raise ValueError("extractor weights must be read-only")
                if not (np.all(np.isfinite(k)) and np.all(np.isfinite(b))):
                    raise ValueError("extractor weights must be finite")

    @property
    def output_dim(self) -> int:
        h, w = self.input_size
        for _ in range(5):
            h, w = (h + 1) // 2, (w + 1) // 2
        return h * w * self.blocks[-1].out_channels

    def tensors(self) -> dict:
        out = {}
        for bi, convs in enumerate(self.layers, 1):
            for ci, (k, b) in enumerate(convs, 1):
                out[f"block{bi}.conv{ci}.weight"] = k
                out[f"block{bi}.conv{ci}.bias"] = b
        return out

    def save(self, path) -> None:
        tensorio.write_weights(path, self.tensors())


@dataclass(frozen=True, eq=False)
class ClassifierHead:
    W: np.ndarray  # [4, D]
    b: np.ndarray  # [4]
    history: tuple = ()  # mean training loss after each epoch

    @classmethod
    def zeros(cls, dim: int) -> "ClassifierHead":
        return cls(np.zeros((N_CLASSES, dim)), np.zeros(N_CLASSES))

    @property
    def dim(self) -> int:
        return self.W.shape[1]

    def tensors(self) -> dict:
        return {"head.W": self.W, "head.b": self.b}

    def save(self, path) -> None:
        tensorio.write_weights(path, self.tensors())

    @classmethod
    def load(cls, path) -> "ClassifierHead":
        t = tensorio.read_weights(path)
        try:
            W, b = t["head.W"], t["head.b"]
        except KeyError as exc:
            raise WeightLoadError(f"{path}: missing tensor {exc.args[0]}") from None
        if W.ndim != 2 or W.shape[0] != N_CLASSES or b.shape != (N_CLASSES,):
            raise WeightLoadError(f"{path}: head tensors have shapes {W.shape}, {b.shape}")
        return cls(W.astype(np.float64), b.astype(np.float64))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    l2: float = 1e-4

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 0 or self.l2 < 0:
            raise ValueError("need batch_size >= 1, epochs >= 0, l2 >= 0")


def conv2d(x, kernels, bias) -> np.ndarray:
    """3x3 'same' cross-correlation, stride 1.

    Args:
        x: input of shape [H, W, C_in].
        kernels: [3, 3, C_in, C_out].
        bias: [C_out].
    """
    x = np.asarray(x, dtype=np.float64)
    kernels = np.asarray(kernels, dtype=np.float64)
    if x.ndim != 3 or kernels.ndim != 4 or kernels.shape[:2] != (3, 3):
        raise ValueError(f"bad shapes: input {x.shape}, kernels {kernels.shape}")
    if kernels.shape[2] != x.shape[2] or np.shape(bias) != (kernels.shape[3],):
        raise ValueError(
            f"shape mismatch: input channels {x.shape[2]}, kernels {kernels.shape}, bias {np.shape(bias)}")
    h, w, cin = x.shape
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    # [H, W, C_in, 3, 3] -> [H*W, 3*3*C_in] in (dy, dx, c) order
    patches = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(0, 1))
    cols = patches.transpose(0, 1, 3, 4, 2).reshape(h * w, 9 * cin)
    out = cols @ kernels.reshape(9 * cin, -1)
    out += bias
    return out.reshape(h, w, -1)


def relu(t) -> np.ndarray:
    return np.maximum(t, 0.0)


def maxpool2(t) -> np.ndarray:
    """2x2 max pool, stride 2; odd edges are padded by replicating the last row/column."""
    t = np.asarray(t)
    h, w = t.shape[:2]
    if h < 1 or w < 1:
        raise ValueError("cannot pool an empty tensor")
    if h % 2 or w % 2:
        t = np.pad(t, ((0, h % 2), (0, w % 2)) + ((0, 0),) * (t.ndim - 2), mode="edge")
    h2, w2 = t.shape[0] // 2, t.shape[1] // 2
    return t.reshape(h2, 2, w2, 2, *t.shape[2:]).max(axis=(1, 3))


def _block_specs(channels: Sequence[int], n_convs: Sequence[int]):
    if len(channels) != 5 or len(n_convs) != 5:
        raise ValueError("channel plan and conv counts need 5 entries each")
    return tuple(ConvBlockSpec(int(n), int(c)) for c, n in zip(channels, n_convs))


def _layer_shapes(blocks, in_channels: int):
    cin = in_channels
    for bi, spec in enumerate(blocks, 1):
        for ci in range(1, spec.n_convs + 1):
            yield f"block{bi}.conv{ci}", (3, 3, cin, spec.out_channels)
            cin = spec.out_channels


def build_extractor(source: str | int = 0, channels: Sequence[int] = DESK_CHANNELS,
                    n_convs: Sequence[int] = VGG16_CONVS, in_channels: int = 3,
                    input_size=(256, 256)) -> FeatureExtractor:
    """Create a frozen extractor from a seed or an LSWT weight file.

    ``source`` is an int seed, a ``"seed:<n>"`` token, or a file path.
    Seeded weights use He-normal initialisation rounded to float32 (so a
    save/load round trip is exact) and zero biases.
    """
    blocks = _block_specs(channels, n_convs)
    shapes = list(_layer_shapes(blocks, in_channels))
    if isinstance(source, str) and source.startswith("seed:"):
        source = int(source[5:])
    if isinstance(source, (int, np.integer)):
        rng = np.random.default_rng(int(source))
        params = []
        for _, shape in shapes:
            std = np.sqrt(2.0 / (9 * shape[2]))
            k = (rng.standard_normal(shape) * std).astype(np.float32)
            params.append((k, np.zeros(shape[3], dtype=np.float32)))
        provenance = f"seed:{int(source)}"
    else:
        tensors = tensorio.read_weights(source)
        params, problems = [], []
        for name, shape in shapes:
            k = tensors.get(f"{name}.weight")
            b = tensors.get(f"{name}.bias")
            if k is None or k.shape != shape:
                problems.append(f"{name}.weight: expected {shape}, got {None if k is None else k.shape}")
            if b is None or b.shape != (shape[3],):
                problems.append(f"{name}.bias: expected {(shape[3],)}, got {None if b is None else b.shape}")
            params.append((k, b))
        expected = {f"{n}.{s}" for n, _ in shapes for s in ("weight", "bias")}
        problems += [f"{n}: unexpected tensor" for n in sorted(set(tensors) - expected)]
        if problems:
            raise WeightLoadError(f"{source}: " + "; ".join(problems))
        provenance = f"file:{source}"
    it = iter(params)
    layers = tuple(
        tuple((_readonly(k), _readonly(b)) for k, b in (next(it) for _ in range(spec.n_convs)))
        for spec in blocks
    )
    return FeatureExtractor(blocks, layers, in_channels, provenance, tuple(input_size))


def extract_features(img, fx: FeatureExtractor) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    expected = (*fx.input_size, fx.in_channels)
    if img.shape != expected:
        raise ValueError(f"image shape {img.shape} does not match extractor input {expected}")
    t = img
    for convs in fx.layers:
        for k, b in convs:
            t = relu(conv2d(t, k, b))
        t = maxpool2(t)
    return t.reshape(-1)


def softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(p, y) -> float:
    return float(-np.log(max(float(p[int(y)]), 1e-12)))


def head_loss(x, y, head: ClassifierHead, l2: float = 0.0) -> float:
    """Cross-entropy of one sample plus ``l2/2 * ||W||^2``."""
    p = softmax(head.W @ x + head.b)
    return cross_entropy(p, y) + 0.5 * l2 * float(np.sum(head.W ** 2))


def head_gradient(x, y, head: ClassifierHead, l2: float = 0.0):
    """Gradient of ``head_loss`` with respect to (W, b)."""
    x = np.asarray(x, dtype=np.float64)
    delta = softmax(head.W @ x + head.b)
    delta[int(y)] -= 1.0
    return np.outer(delta, x) + l2 * head.W, delta


def _mean_loss(X, y, W, b) -> float:
    p = softmax(X @ W.T + b)
    return float(np.mean(-np.log(np.maximum(p[np.arange(len(y)), y], 1e-12))))


def train_head(features, labels, cfg: TrainConfig = TrainConfig()) -> ClassifierHead:
    """Mini-batch SGD on softmax cross-entropy with L2 on the weights.

    SGD runs on per-dimension standardised features (training-set mean and
    std); the learned affine map is folded back into ``W`` and ``b`` so the
    returned head acts on raw extractor output. The rectified features share
    a large positive mean, and without this rescaling plain SGD at a stable
    step size barely moves within a few dozen epochs.

    The head starts at zero. Samples are reshuffled each epoch with a
    generator seeded by ``cfg.seed``. ``history`` holds the mean training
    cross-entropy over the whole set after each epoch.
    """
    try:
        X = np.asarray(features, dtype=np.float64)
    except ValueError:
        raise ValueError("feature vectors have inconsistent dimensions") from None
    y = np.asarray(labels, dtype=np.intp)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError(f"expected a non-empty [N, D] feature matrix, got shape {X.shape}")
    if len(y) != len(X):
        raise ValueError(f"{len(X)} feature vectors but {len(y)} labels")
    if np.any((y < 0) | (y >= N_CLASSES)):
        raise ValueError("labels must be class indices 0..3")
    n, d = X.shape
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd < 1e-12] = 1.0
    Z = (X - mu) / sd
    W = np.zeros((N_CLASSES, d))
    b = np.zeros(N_CLASSES)
    rng = np.random.default_rng(cfg.seed)
    eye = np.eye(N_CLASSES)
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            delta = softmax(Z[idx] @ W.T + b) - eye[y[idx]]
            gW = delta.T @ Z[idx] / len(idx) + cfg.l2 * W
            gb = delta.mean(axis=0)
            W -= cfg.learning_rate * gW
            b -= cfg.learning_rate * gb
        history.append(_mean_loss(Z, y, W, b))
        log.debug("epoch %d loss %.6f", epoch + 1, history[-1])
    W_raw = W / sd
    return ClassifierHead(W_raw, b - W_raw @ mu, tuple(history))


def predict_proba(features, head: ClassifierHead) -> np.ndarray:
    X = np.asarray(features, dtype=np.float64)
    if X.shape[-1] != head.dim:
        raise ValueError(f"feature dimension {X.shape[-1]} does not match head ({head.dim})")
    return softmax(X @ head.W.T + head.b)


def predict(img, fx: FeatureExtractor, head: ClassifierHead):
    """Classify one image. Ties go to the lowest class index."""
    p = predict_proba(extract_features(img, fx), head)
    return ClassLabel(int(np.argmax(p))), p
