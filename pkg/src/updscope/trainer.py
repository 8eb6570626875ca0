"""Linear classification head trained with cross-entropy and Adam.

The backbone stays frozen; only the final linear map from pooled
features to two logits is fitted. By default the optimizer works on
standardized features (training-split mean and std) and the scaling is
folded back into the returned weights, so the result applies to raw
pooled features directly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fileio import write_csv
from .swin import INIT_STD, softmax, trunc_normal


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 200
    batch_size: int = 16
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    train_fraction: float = 0.7
    standardize: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise TrainingError("learning_rate must be non-negative")
        if not 0.0 < self.train_fraction < 1.0:
            raise TrainingError("train_fraction must lie strictly between 0 and 1")
        if self.epochs < 0 or self.batch_size < 1:
            raise TrainingError("epochs must be >= 0 and batch_size >= 1")


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    peak = z.max(axis=-1, keepdims=True)
    return z - peak - np.log(np.exp(z - peak).sum(axis=-1, keepdims=True))


def cross_entropy(logits, label) -> float | np.ndarray:
    """-log softmax(logits)[label]; vectorized over a leading batch axis."""
    z = np.asarray(logits, dtype=np.float64)
    lab = np.asarray(label)
    if z.ndim == 1:
        return float(-log_softmax(z)[int(lab)])
    return -np.take_along_axis(log_softmax(z), lab.astype(np.intp)[:, None], axis=1)[:, 0]


def head_loss_and_grad(weight: np.ndarray, bias: np.ndarray, features: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy of ``features @ weight + bias`` and its gradients."""
    logits = features @ weight + bias
    n = len(labels)
    loss = float(np.mean(cross_entropy(logits, labels)))
    delta = softmax(logits, axis=-1)
    delta[np.arange(n), labels] -= 1.0
    delta /= n
    return loss, features.T @ delta, delta.sum(axis=0)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params) -> AdamState:
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, cfg: TrainConfig):
    """One bias-corrected Adam update; returns new params and state."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise TrainingError("params, grads and optimizer state differ in length")
    step = state.step + 1
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise TrainingError(f"shape mismatch: param {p.shape}, grad {g.shape}")
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g
        m_hat = m / (1.0 - cfg.beta1 ** step)
        v_hat = v / (1.0 - cfg.beta2 ** step)
        new_params.append(p - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(new_m, new_v, step)


def stratified_split(labels, train_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices of a class-stratified train/validation split."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    train, val = [], []
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(len(idx))]
        n_train = int(round(train_fraction * len(idx)))
        if len(idx) > 1:
            n_train = min(max(n_train, 1), len(idx) - 1)
        train.append(idx[:n_train])
        val.append(idx[n_train:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(val))


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float


@dataclass
class TrainResult:
    weight: np.ndarray
    bias: np.ndarray
    history: list[EpochRecord] = field(default_factory=list)
    train_index: np.ndarray | None = None
    val_index: np.ndarray | None = None

    def predict(self, features: np.ndarray) -> np.ndarray:
        return np.argmax(features @ self.weight + self.bias, axis=1)

    def accuracy(self, features: np.ndarray, labels: np.ndarray) -> float:
        return float(np.mean(self.predict(features) == labels))


def _check_dataset(features: np.ndarray, labels: np.ndarray) -> None:
    if features.ndim != 2 or len(features) != len(labels):
        raise TrainingError("features must be (n, d) with one label per row")
    if not np.all(np.isfinite(features)):
        raise TrainingError("features contain NaN or Inf")
    if not np.all(np.isin(labels, (0, 1))):
        raise TrainingError("labels must be 0 or 1")


def train_head(
    features,
    labels,
    cfg: TrainConfig = TrainConfig(),
    init: tuple[np.ndarray, np.ndarray] | None = None,
    split: tuple[np.ndarray, np.ndarray] | None = None,
) -> TrainResult:
    """Fit the linear head with minibatch Adam.

    The per-epoch ``train_loss`` is the full training-set loss after the
    epoch's updates, so a zero learning rate yields a flat curve.

    Raises:
        TrainingError: if the training split lacks one of the classes.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels).astype(np.int64)
    _check_dataset(x, y)
    if split is None:
        train_idx, val_idx = stratified_split(y, cfg.train_fraction, cfg.seed)
    else:
        train_idx, val_idx = (np.asarray(s, dtype=np.intp) for s in split)
    present = set(np.unique(y[train_idx]).tolist())
    if present != {0, 1}:
        raise TrainingError(
            f"training split needs both classes; found only {sorted(present)} "
            f"among {len(train_idx)} samples"
        )

    if cfg.standardize:
        mean = x[train_idx].mean(axis=0)
        scale = x[train_idx].std(axis=0)
        scale[scale < 1e-12] = 1.0
    else:
        mean, scale = np.zeros(x.shape[1]), np.ones(x.shape[1])
    if init is None:
        # the default head is drawn directly on standardized inputs
        weight = trunc_normal(cfg.seed, "head.weight", (x.shape[1], 2), INIT_STD)
        bias = np.zeros(2)
    else:
        # the same linear head expressed on standardized inputs
        weight, bias = (np.array(a, dtype=np.float64) for a in init)
        bias = bias + mean @ weight
        weight = weight * scale[:, None]
    z = (x - mean) / scale

    xt, yt = z[train_idx], y[train_idx]
    xv, yv = z[val_idx], y[val_idx]
    state = AdamState.zeros_like([weight, bias])
    rng = np.random.default_rng(cfg.seed + 1)
    result = TrainResult(weight, bias, train_index=train_idx, val_index=val_idx)

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(xt))
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            _, gw, gb = head_loss_and_grad(weight, bias, xt[batch], yt[batch])
            (weight, bias), state = adam_step([weight, bias], [gw, gb], state, cfg)
        train_loss = head_loss_and_grad(weight, bias, xt, yt)[0]
        if len(xv):
            logits = xv @ weight + bias
            val_loss = float(np.mean(cross_entropy(logits, yv)))
            val_acc = float(np.mean(np.argmax(logits, axis=1) == yv))
        else:
            val_loss = val_acc = float("nan")
        result.history.append(EpochRecord(epoch, train_loss, val_loss, val_acc))

    result.weight = weight / scale[:, None]
    result.bias = bias - (mean / scale) @ weight
    return result


LOSS_COLUMNS = ["epoch", "train_loss", "val_loss", "val_accuracy"]


def write_loss_curve(history: list[EpochRecord], path) -> None:
    rows = (
        {"epoch": r.epoch, "train_loss": repr(r.train_loss), "val_loss": repr(r.val_loss),
         "val_accuracy": repr(r.val_accuracy)}
        for r in history
    )
    write_csv(path, LOSS_COLUMNS, rows)
