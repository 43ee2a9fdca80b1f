"""1D LeNet-style convolutional network used as an 84-feature extractor.

Layout is channel-last throughout: activations have shape
``(batch, length, channels)``. Gradients are written out by hand.
"""

from __future__ import annotations

import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._conv import conv_backward, conv_forward, relu_pool_backward, relu_pool_forward
from .spectra_io import LabeledDataset


class ArchitectureError(ValueError):
    """Raised when a layer would have no output positions."""


class ShapeError(ValueError):
    """Raised when an input does not match the network's input length."""


WEIGHT_NAMES = ("conv1_w", "conv2_w", "fc1_w", "fc2_w")
PARAM_NAMES = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "fc1_w", "fc1_b", "fc2_w", "fc2_b")


@dataclass(frozen=True)
class CnnArchitecture:
    input_length: int = 1024
    kernel: int = 3
    stride: int = 2
    conv1_filters: int = 10
    conv2_filters: int = 20
    pool: int = 2
    fc_features: int = 84
    output_classes: int = 14

    def as_ints(self) -> list[int]:
        return [self.input_length, self.kernel, self.stride, self.conv1_filters,
                self.conv2_filters, self.pool, self.fc_features, self.output_classes]


def _conv_len(n: int, kernel: int, stride: int) -> int:
    return (n - kernel) // stride + 1 if n >= kernel else 0


def compute_shapes(arch: CnnArchitecture) -> dict[str, int]:
    """Output lengths of every layer under valid (unpadded) convolution.

    ``L_out = floor((L_in - kernel) / stride) + 1``; pooling uses window and
    stride ``arch.pool``.
    """
    shapes = {}
    n = arch.input_length
    for name, k, s in (("conv1", arch.kernel, arch.stride), ("pool1", arch.pool, arch.pool),
                       ("conv2", arch.kernel, arch.stride), ("pool2", arch.pool, arch.pool)):
        n = _conv_len(n, k, s)
        if n < 1:
            raise ArchitectureError(
                f"input length {arch.input_length} leaves no positions at {name} "
                f"(partial table: {shapes})"
            )
        shapes[name] = n
    shapes["flatten"] = shapes["pool2"] * arch.conv2_filters
    return shapes


def _glorot(rng, shape, fan_in, fan_out):
    r = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-r, r, size=shape)


@dataclass(eq=False)
class CnnModel:
    arch: CnnArchitecture
    params: dict[str, np.ndarray]

    @classmethod
    def initialize(cls, arch: CnnArchitecture, rng) -> "CnnModel":
        """Scaled-uniform random kernels and weights, zero biases."""
        shapes = compute_shapes(arch)
        k, f1, f2 = arch.kernel, arch.conv1_filters, arch.conv2_filters
        flat, h, out = shapes["flatten"], arch.fc_features, arch.output_classes
        params = {
            "conv1_w": _glorot(rng, (k, 1, f1), k, k * f1),
            "conv1_b": np.zeros(f1),
            "conv2_w": _glorot(rng, (k, f1, f2), k * f1, k * f2),
            "conv2_b": np.zeros(f2),
            "fc1_w": _glorot(rng, (flat, h), flat, h),
            "fc1_b": np.zeros(h),
            "fc2_w": _glorot(rng, (h, out), h, out),
            "fc2_b": np.zeros(out),
        }
        return cls(arch, params)

    def copy(self) -> "CnnModel":
        return CnnModel(self.arch, {k: v.copy() for k, v in self.params.items()})

    def weight_sq_sum(self) -> float:
        return float(sum(np.sum(self.params[n] ** 2) for n in WEIGHT_NAMES))

    def forward(self, x):
        """Return ``(features, class_probabilities)`` for one spectrum or a batch."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        out = _forward(self, np.atleast_2d(x))
        feats, probs = out["feat"], out["probs"]
        return (feats[0], probs[0]) if single else (feats, probs)

    def predict(self, x) -> np.ndarray:
        """Softmax-head class ids (1-based)."""
        _, probs = self.forward(np.atleast_2d(x))
        return probs.argmax(axis=1) + 1


def _forward(model: CnnModel, x: np.ndarray) -> dict:
    arch, prm = model.arch, model.params
    if x.shape[1] != arch.input_length:
        raise ShapeError(f"expected spectra of length {arch.input_length}, got {x.shape[1]}")
    n = x.shape[0]
    x3 = np.ascontiguousarray(x, dtype=np.float64)[:, :, None]
    z1 = conv_forward(x3, prm["conv1_w"], prm["conv1_b"], arch.stride)
    m1, arg1 = relu_pool_forward(z1, arch.pool)
    z2 = conv_forward(m1, prm["conv2_w"], prm["conv2_b"], arch.stride)
    m2, arg2 = relu_pool_forward(z2, arch.pool)

    flat = m2.reshape(n, -1)
    z3 = flat @ prm["fc1_w"] + prm["fc1_b"]
    feat = np.maximum(z3, 0.0)
    logits = feat @ prm["fc2_w"] + prm["fc2_b"]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return dict(x3=x3, z1=z1, arg1=arg1, m1=m1, z2=z2, arg2=arg2, m2=m2, flat=flat,
                z3=z3, feat=feat, log_probs=log_probs, probs=np.exp(log_probs))


def _check_batch(x, labels):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if x.shape[0] == 0:
        raise ValueError("batch must be non-empty")
    return x, labels


def loss(model: CnnModel, x, labels, l2_lambda: float = 0.0) -> float:
    """Mean cross-entropy over the batch plus ``l2_lambda * sum(w**2)``.

    ``labels`` are 1-based class ids. Biases are not penalized.
    """
    x, labels = _check_batch(x, labels)
    out = _forward(model, x)
    ce = -out["log_probs"][np.arange(x.shape[0]), labels - 1].mean()
    return float(ce + l2_lambda * model.weight_sq_sum())


def backward(model: CnnModel, x, labels, l2_lambda: float = 0.0, _out=None):
    """Gradients of :func:`loss` with respect to every parameter.

    Returns ``(loss_value, grads)`` where ``grads`` mirrors ``model.params``.
    """
    x, labels = _check_batch(x, labels)
    arch, prm = model.arch, model.params
    out = _out if _out is not None else _forward(model, x)
    n = x.shape[0]
    rows = np.arange(n)
    ce = -out["log_probs"][rows, labels - 1].mean()

    g = {}
    dlogits = out["probs"].copy()
    dlogits[rows, labels - 1] -= 1.0
    dlogits /= n
    g["fc2_w"] = out["feat"].T @ dlogits
    g["fc2_b"] = dlogits.sum(axis=0)

    dz3 = (dlogits @ prm["fc2_w"].T) * (out["z3"] > 0)
    g["fc1_w"] = out["flat"].T @ dz3
    g["fc1_b"] = dz3.sum(axis=0)

    dm2 = (dz3 @ prm["fc1_w"].T).reshape(out["m2"].shape)
    dz2 = relu_pool_backward(dm2, out["arg2"], out["z2"], arch.pool)
    g["conv2_w"], g["conv2_b"], dm1 = conv_backward(dz2, out["m1"], prm["conv2_w"], arch.stride, True)
    dz1 = relu_pool_backward(dm1, out["arg1"], out["z1"], arch.pool)
    g["conv1_w"], g["conv1_b"], _ = conv_backward(dz1, out["x3"], prm["conv1_w"], arch.stride, False)

    if l2_lambda:
        for name in WEIGHT_NAMES:
            g[name] = g[name] + 2.0 * l2_lambda * prm[name]
    value = float(ce + l2_lambda * model.weight_sq_sum())
    return value, g


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.007
    l2_lambda: float = 0.005
    momentum: float = 0.9
    max_epochs: int = 80
    batch_size: int = 35
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0 or self.l2_lambda < 0:
            raise ValueError("learning_rate and l2_lambda must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.max_epochs < 1 or self.batch_size < 1:
            raise ValueError("max_epochs and batch_size must be positive")


@dataclass
class TrainingCurves:
    mean_loss: list[float] = field(default_factory=list)
    min_batch_loss: list[float] = field(default_factory=list)
    max_batch_loss: list[float] = field(default_factory=list)
    test_accuracy: list[float] = field(default_factory=list)

    def rows(self):
        for i, row in enumerate(zip(self.mean_loss, self.min_batch_loss,
                                    self.max_batch_loss, self.test_accuracy), start=1):
            yield (i, *row)


def train(d_train: LabeledDataset, d_test: LabeledDataset | None, cfg: TrainConfig = TrainConfig(),
          arch: CnnArchitecture | None = None):
    """Mini-batch SGD with classical momentum: ``v = mu*v - lr*g; w = w + v``.

    Returns ``(model, curves)``. The test set is only used to fill the
    per-epoch accuracy curve.
    """
    if arch is None:
        arch = CnnArchitecture(input_length=d_train.channel_count, output_classes=d_train.class_count)
    elif arch.input_length != d_train.channel_count:
        raise ShapeError("architecture input_length does not match the training spectra")
    rng = np.random.default_rng(cfg.seed)
    model = CnnModel.initialize(arch, rng)
    velocity = {name: np.zeros_like(v) for name, v in model.params.items()}
    curves = TrainingCurves()
    x_all, y_all = d_train.spectra, d_train.labels
    n = len(d_train)

    for _ in range(cfg.max_epochs):
        order = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            value, grads = backward(model, x_all[idx], y_all[idx], cfg.l2_lambda)
            batch_losses.append(value)
            for name, v in velocity.items():
                v *= cfg.momentum
                v -= cfg.learning_rate * grads[name]
                model.params[name] += v
        curves.mean_loss.append(float(np.mean(batch_losses)))
        curves.min_batch_loss.append(float(np.min(batch_losses)))
        curves.max_batch_loss.append(float(np.max(batch_losses)))
        acc = float(np.mean(model.predict(d_test.spectra) == d_test.labels)) if d_test is not None else float("nan")
        curves.test_accuracy.append(acc)
    return model, curves


def extract_features(model: CnnModel, d: LabeledDataset, chunk: int = 512) -> LabeledDataset:
    """Map every spectrum to its FC-layer activation vector; labels unchanged."""
    if d.channel_count != model.arch.input_length:
        raise ShapeError(f"expected spectra of length {model.arch.input_length}, got {d.channel_count}")
    feats = [model.forward(d.spectra[i:i + chunk])[0] for i in range(0, len(d), chunk)]
    return d.with_spectra(np.vstack(feats))


def save_model(model: CnnModel, path) -> None:
    """``.npz`` archive: architecture integers, then parameters in declaration order.

    Entries carry a fixed timestamp so equal models give byte-identical files.
    """
    arrays = [("architecture", np.array(model.arch.as_ints(), dtype=np.int64))]
    arrays += [(name, model.params[name]) for name in PARAM_NAMES]
    with zipfile.ZipFile(Path(path), "w", zipfile.ZIP_STORED) as zf:
        for name, arr in arrays:
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w") as fh:
                np.lib.format.write_array(fh, np.ascontiguousarray(arr), allow_pickle=False)


def load_model(path) -> CnnModel:
    with np.load(Path(path)) as z:
        arch = CnnArchitecture(*(int(v) for v in z["architecture"]))
        params = {name: z[name].copy() for name in PARAM_NAMES}
    model = CnnModel(arch, params)
    ref = CnnModel.initialize(arch, np.random.default_rng(0))
    for name in PARAM_NAMES:
        if params[name].shape != ref.params[name].shape:
            raise ShapeError(f"parameter {name} has shape {params[name].shape}, expected {ref.params[name].shape}")
    return model

