"""Minimal feedforward classifier with training loop and FGSM attack.

The network is a plain ReLU MLP (default 784 -> 128 -> 64 -> 10) trained
with label-smoothed cross-entropy and bias-corrected Adam. Everything is
dense numpy with exact, hand-derived gradients; there is no autograd and
no GPU path. Inference functions (forward, accuracy, fgsm) never mutate
the network and are safe to call concurrently; train() updates the passed
network in place and is single-threaded and deterministic under its seed.

Checkpoint format ("VCG-MLP-1", all integers and floats big-endian):

    bytes 0..8   magic ASCII "VCG-MLP-1"
    uint32       L, number of layer dimensions
    L * uint32   layer dimensions d_0 .. d_{L-1}
    then for each layer i in 0..L-2:
        d_i * d_{i+1} float64   weight matrix W_i, row-major (input-major)
        d_{i+1} float64         bias vector b_i
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datasets import LabeledDataset
from .errors import DegenerateMetricError, DivergenceError, InputError
from .metric import ProbabilityMatrix, log_vc as _log_vc, vc as _vc

CHECKPOINT_MAGIC = b"VCG-MLP-1"

DEFAULT_LAYER_DIMS = (784, 128, 64, 10)


@dataclass
class Mlp:
    """Dense ReLU network: affine + ReLU chain, final layer affine only.

    ``weights[i]`` has shape (layer_dims[i], layer_dims[i+1]) and
    ``biases[i]`` shape (layer_dims[i+1],).
    """

    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self) -> None:
        dims = tuple(int(d) for d in self.layer_dims)
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise InputError(f"invalid layer dims {dims}")
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise InputError("parameter count does not match layer dims")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[i], dims[i + 1]) or b.shape != (dims[i + 1],):
                raise InputError(
                    f"layer {i}: expected W {(dims[i], dims[i + 1])} and "
                    f"b {(dims[i + 1],)}, got W {w.shape} and b {b.shape}"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise InputError(f"layer {i}: non-finite parameters")
        self.layer_dims = dims

    @classmethod
    def init(cls, layer_dims=DEFAULT_LAYER_DIMS, seed: int = 42) -> "Mlp":
        """He-style uniform fan-in initialisation, zero biases, seeded."""
        dims = tuple(int(d) for d in layer_dims)
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            limit = math.sqrt(6.0 / d_in)
            weights.append(rng.uniform(-limit, limit, size=(d_in, d_out)))
            biases.append(np.zeros(d_out))
        return cls(layer_dims=dims, weights=weights, biases=biases)

    @property
    def n_classes(self) -> int:
        return self.layer_dims[-1]


@dataclass(frozen=True)
class TrainConfig:
    """Optimiser and loop settings (defaults follow the ANN recipe)."""

    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    label_smoothing: float = 0.1
    batch_size: int = 128
    epochs: int = 5
    seed: int = 42

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise InputError("learning_rate must be positive")
        if not (0.0 <= self.label_smoothing < 1.0):
            raise InputError("label_smoothing must be in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise InputError("batch_size must be >= 1 and epochs >= 0")


@dataclass(frozen=True)
class FgsmConfig:
    """Perturbation magnitude and the pixel box to clip back into."""

    epsilon: float
    clip_min: float = 0.0
    clip_max: float = 1.0

    def __post_init__(self) -> None:
        if self.epsilon < 0:
            raise InputError("epsilon must be >= 0")
        if not self.clip_min < self.clip_max:
            raise InputError("clip_min must be below clip_max")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_accuracy: float
    val_accuracy: float
    val_log_vcs: tuple[float, ...]


@dataclass(frozen=True)
class TrainTrajectory:
    """Per-epoch accuracy and validation log-VC samples."""

    records: tuple[EpochRecord, ...]

    def __post_init__(self) -> None:
        epochs = [r.epoch for r in self.records]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise InputError("trajectory epochs must be strictly increasing")

    def to_payload(self) -> dict:
        return {
            "epochs": [
                {
                    "epoch": r.epoch,
                    "train_accuracy": r.train_accuracy,
                    "validation_accuracy": r.val_accuracy,
                    "validation_log_vc": list(r.val_log_vcs),
                }
                for r in self.records
            ]
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "TrainTrajectory":
        try:
            records = tuple(
                EpochRecord(
                    epoch=int(e["epoch"]),
                    train_accuracy=float(e["train_accuracy"]),
                    val_accuracy=float(e["validation_accuracy"]),
                    val_log_vcs=tuple(float(v) for v in e["validation_log_vc"]),
                )
                for e in payload["epochs"]
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed trajectory payload: {exc}") from exc
        return cls(records=records)


@dataclass
class AdamState:
    """First/second moment accumulators and the step counter."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros(cls, params: list[np.ndarray]) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            step=0,
        )


def _forward_cached(net: Mlp, batch: np.ndarray):
    """Forward pass keeping pre-activations and layer inputs for backprop."""
    if batch.ndim != 2 or batch.shape[1] != net.layer_dims[0]:
        raise InputError(
            f"batch has width {batch.shape[-1] if batch.ndim else '?'}, "
            f"network expects {net.layer_dims[0]}"
        )
    inputs = [batch]
    pre: list[np.ndarray] = []
    h = batch
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w + b
        pre.append(z)
        h = z if i == last else np.maximum(z, 0.0)
        inputs.append(h)
    return h, pre, inputs


def forward(net: Mlp, batch: np.ndarray) -> np.ndarray:
    """Logits for a [B x d] batch (affine + ReLU chain, last layer affine)."""
    batch = np.asarray(batch, dtype=np.float64)
    squeeze = batch.ndim == 1
    if squeeze:
        batch = batch[None, :]
    logits, _, _ = _forward_cached(net, batch)
    return logits[0] if squeeze else logits


def _softmax_raw(z: np.ndarray) -> np.ndarray:
    # No finiteness check: the training loop needs NaN to flow into the
    # loss so the divergence guard can fire.
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-subtracted exponential normalisation along the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise InputError("softmax needs finite logits")
    return _softmax_raw(z)


def _smoothed_targets(labels: np.ndarray, n_classes: int, smoothing: float) -> np.ndarray:
    q = np.full((labels.size, n_classes), smoothing / n_classes)
    q[np.arange(labels.size), labels] += 1.0 - smoothing
    return q


def smoothed_cross_entropy(probs: np.ndarray, labels, smoothing: float) -> float:
    """Mean label-smoothed cross-entropy of predicted probabilities.

    Targets are (1 - s) * onehot + s / C; probabilities are clamped at
    1e-12 before the log.
    """
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if p.ndim != 2 or y.ndim != 1 or p.shape[0] != y.size:
        raise InputError("probs must be [B x C] with one label per row")
    if np.any(y < 0) or np.any(y >= p.shape[1]):
        raise InputError("label out of range")
    q = _smoothed_targets(y, p.shape[1], smoothing)
    return float(-(q * np.log(np.clip(p, 1e-12, None))).sum(axis=1).mean())


def _loss_and_grads(net: Mlp, batch: np.ndarray, labels: np.ndarray, cfg: TrainConfig):
    logits, pre, inputs = _forward_cached(net, batch)
    p = _softmax_raw(logits)
    q = _smoothed_targets(labels, net.n_classes, cfg.label_smoothing)
    loss = float(-(q * np.log(np.clip(p, 1e-12, None))).sum(axis=1).mean())
    dz = (p - q) / batch.shape[0]
    d_weights = [np.empty(0)] * len(net.weights)
    d_biases = [np.empty(0)] * len(net.biases)
    for i in range(len(net.weights) - 1, -1, -1):
        d_weights[i] = inputs[i].T @ dz
        d_biases[i] = dz.sum(axis=0)
        if i > 0:
            dz = (dz @ net.weights[i].T) * (pre[i - 1] > 0.0)
    return loss, d_weights, d_biases


def backward(net: Mlp, batch, labels, cfg: TrainConfig):
    """Exact parameter gradients of the smoothed cross-entropy.

    Returns (weight_grads, bias_grads) with the same shapes as the
    network's parameters.
    """
    x = np.asarray(batch, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.size:
        raise InputError("batch must be [B x d] with one label per row")
    if np.any(y < 0) or np.any(y >= net.n_classes):
        raise InputError("label out of range")
    _, d_weights, d_biases = _loss_and_grads(net, x, y, cfg)
    return d_weights, d_biases


def adam_step(
    state: AdamState,
    params: list[np.ndarray],
    grads: list[np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
):
    """One bias-corrected Adam update; returns (new_params, new_state)."""
    t = state.step + 1
    new_m = [beta1 * m + (1 - beta1) * g for m, g in zip(state.m, grads)]
    new_v = [beta2 * v + (1 - beta2) * g * g for v, g in zip(state.v, grads)]
    c1 = 1 - beta1**t
    c2 = 1 - beta2**t
    new_params = [
        p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        for p, m, v in zip(params, new_m, new_v)
    ]
    return new_params, AdamState(m=new_m, v=new_v, step=t)


def input_gradient(net: Mlp, x, y) -> np.ndarray:
    """Per-sample gradient of the plain (unsmoothed) cross-entropy w.r.t. x.

    Accepts a single sample or a batch; each row's gradient depends only on
    that row. Training-time label smoothing deliberately does not apply here.
    """
    arr = np.asarray(x, dtype=np.float64)
    squeeze = arr.ndim == 1
    if squeeze:
        arr = arr[None, :]
    labels = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if labels.size != arr.shape[0]:
        raise InputError("one label per sample required")
    if np.any(labels < 0) or np.any(labels >= net.n_classes):
        raise InputError("label out of range")
    logits, pre, _ = _forward_cached(net, arr)
    dz = softmax(logits)
    dz[np.arange(labels.size), labels] -= 1.0
    for i in range(len(net.weights) - 1, 0, -1):
        dz = (dz @ net.weights[i].T) * (pre[i - 1] > 0.0)
    dx = dz @ net.weights[0].T
    return dx[0] if squeeze else dx


def fgsm(x, grad, cfg: FgsmConfig) -> np.ndarray:
    """x + epsilon * sign(grad), clipped into [clip_min, clip_max].

    sign(0) = 0, so zero-gradient pixels stay untouched.
    """
    arr = np.asarray(x, dtype=np.float64)
    g = np.asarray(grad, dtype=np.float64)
    if arr.shape != g.shape:
        raise InputError(f"shape mismatch: x {arr.shape} vs grad {g.shape}")
    return np.clip(arr + cfg.epsilon * np.sign(g), cfg.clip_min, cfg.clip_max)


def accuracy(net: Mlp, dataset: LabeledDataset) -> float:
    """Fraction of argmax-correct predictions (ties go to the lowest class)."""
    if len(dataset) == 0:
        raise InputError("empty dataset")
    preds = np.argmax(forward(net, dataset.images), axis=1)
    return float(np.mean(preds == dataset.labels))


VAL_VC_SUBSETS = 10
VAL_VC_SUBSET_SIZE = 1000


def _val_log_vcs(net: Mlp, val: LabeledDataset, rng: np.random.Generator) -> tuple[float, ...]:
    size = min(VAL_VC_SUBSET_SIZE, len(val))
    out = []
    for _ in range(VAL_VC_SUBSETS):
        idx = rng.choice(len(val), size=size, replace=False)
        probs = ProbabilityMatrix(softmax(forward(net, val.images[idx])))
        try:
            out.append(_log_vc(_vc(probs)))
        except DegenerateMetricError:
            out.append(math.nan)
    return tuple(out)


def train(
    net: Mlp,
    train_set: LabeledDataset,
    val_set: LabeledDataset,
    cfg: TrainConfig,
) -> TrainTrajectory:
    """Seeded mini-batch training; updates ``net`` in place.

    Each epoch shuffles the training set, steps Adam over batches of
    ``cfg.batch_size``, then records train/validation accuracy and log-VC
    on ten random validation subsets (of up to 1000 samples each). Aborts
    with DivergenceError the moment a batch loss goes non-finite. The whole
    trajectory is bitwise reproducible for a fixed config.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise InputError("train and validation sets must be non-empty")
    if np.any(train_set.labels >= net.n_classes) or np.any(val_set.labels >= net.n_classes):
        raise InputError("label out of range for the network's output width")
    rng = np.random.default_rng(cfg.seed)
    params = list(net.weights) + list(net.biases)
    state = AdamState.zeros(params)
    n_layers = len(net.weights)
    records: list[EpochRecord] = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_set))
        for start in range(0, len(train_set), cfg.batch_size):
            sel = order[start : start + cfg.batch_size]
            # Overflow here is the divergence guard's job to report, not
            # numpy's.
            with np.errstate(over="ignore", invalid="ignore"):
                loss, dw, db = _loss_and_grads(
                    net, train_set.images[sel], train_set.labels[sel], cfg
                )
            if not math.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss {loss} at epoch {epoch}, batch offset {start}"
                )
            params, state = adam_step(
                state, params, dw + db, cfg.learning_rate,
                cfg.beta1, cfg.beta2, cfg.adam_eps,
            )
            net.weights = params[:n_layers]
            net.biases = params[n_layers:]
        records.append(
            EpochRecord(
                epoch=epoch,
                train_accuracy=accuracy(net, train_set),
                val_accuracy=accuracy(net, val_set),
                val_log_vcs=_val_log_vcs(net, val_set, rng),
            )
        )
    return TrainTrajectory(records=tuple(records))


def save_checkpoint(net: Mlp, path) -> None:
    """Write the network in the VCG-MLP-1 layout (see module docstring)."""
    chunks = [CHECKPOINT_MAGIC, struct.pack(">I", len(net.layer_dims))]
    chunks.append(struct.pack(f">{len(net.layer_dims)}I", *net.layer_dims))
    for w, b in zip(net.weights, net.biases):
        chunks.append(np.ascontiguousarray(w, dtype=">f8").tobytes())
        chunks.append(np.ascontiguousarray(b, dtype=">f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> Mlp:
    """Read a VCG-MLP-1 checkpoint; errors cleanly on any layout violation."""
    data = Path(path).read_bytes()
    if len(data) < len(CHECKPOINT_MAGIC) or data[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise InputError(f"not a {CHECKPOINT_MAGIC.decode()} checkpoint: {path}")
    off = len(CHECKPOINT_MAGIC)
    if len(data) < off + 4:
        raise InputError("truncated checkpoint: missing layer count")
    (n_dims,) = struct.unpack_from(">I", data, off)
    off += 4
    if n_dims < 2 or len(data) < off + 4 * n_dims:
        raise InputError("truncated checkpoint: missing layer dims")
    dims = struct.unpack_from(f">{n_dims}I", data, off)
    off += 4 * n_dims
    expected = off + 8 * sum(
        d_in * d_out + d_out for d_in, d_out in zip(dims[:-1], dims[1:])
    )
    if len(data) != expected:
        raise InputError(
            f"checkpoint payload is {len(data)} bytes, layout requires {expected}"
        )
    weights, biases = [], []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        w = np.frombuffer(data, dtype=">f8", count=d_in * d_out, offset=off)
        off += 8 * d_in * d_out
        b = np.frombuffer(data, dtype=">f8", count=d_out, offset=off)
        off += 8 * d_out
        weights.append(w.reshape(d_in, d_out).astype(np.float64))
        biases.append(b.astype(np.float64))
    return Mlp(layer_dims=dims, weights=weights, biases=biases)
