"""Loss, Adam, dataset splitting, augmentation, and the training loop."""

from __future__ import annotations

import random
from dataclasses import dataclass, field

import numpy as np

from .config import ModelConfig
from .errors import ConfigError, ContractError, DimensionError
from .images import resize_nearest
from .metrics import MetricsReport, evaluate_predictions
from .model import STMAParams, forward_trace, stma_forward, trainable_parameters
from .tensor import GradGraph, REAL, Tensor, concat, log, mul, reshape, scale, sum_all


@dataclass
class Hyperparams:
    epochs: int
    batch_size: int
    learning_rate: float
    optimizer: str = "adam"
    seed: int = 0
    augment: bool = False

    def __post_init__(self):
        # lr == 0 is permitted: it makes no-op training runs expressible
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate < 0:
            raise ConfigError("hyperparameters must be positive")
        if self.optimizer != "adam":
            raise ConfigError(f"unsupported optimizer {self.optimizer!r}")


# Per-dataset training profiles; the toy profile is for the bundled
# synthetic confounder set.
PROFILES: dict[str, Hyperparams] = {
    "mmhs150k": Hyperparams(epochs=10, batch_size=32, learning_rate=0.0001,
                            optimizer="adam", augment=True),
    "multioff": Hyperparams(epochs=40, batch_size=8, learning_rate=0.001,
                            optimizer="adam", augment=True),
    "hmc": Hyperparams(epochs=25, batch_size=16, learning_rate=0.0001,
                       optimizer="adam", augment=True),
    "toy": Hyperparams(epochs=50, batch_size=16, learning_rate=0.001,
                       optimizer="adam", augment=False),
}


def cross_entropy_loss(probs: Tensor, labels) -> Tensor:
    """Mean of -log p[label] over the batch, with p clamped at 1e-12."""
    labels = list(labels)
    if probs.ndim != 2 or probs.shape[1] != 2 or probs.shape[0] != len(labels):
        raise ContractError(
            f"probs {probs.shape} inconsistent with {len(labels)} labels")
    if any(y not in (0, 1) for y in labels):
        raise ContractError("labels must be 0 or 1")
    onehot = np.zeros(probs.shape, dtype=REAL)
    onehot[np.arange(len(labels)), labels] = 1.0
    picked = mul(log(probs, floor=1e-12), Tensor(onehot))
    return scale(sum_all(picked), -1.0 / len(labels))


@dataclass
class OptimizerState:
    """Adam moments per registered parameter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: dict[str, Tensor]) -> "OptimizerState":
        return cls(m={k: np.zeros(p.shape, dtype=REAL) for k, p in params.items()},
                   v={k: np.zeros(p.shape, dtype=REAL) for k, p in params.items()})


def adam_step(params: dict[str, Tensor], state: OptimizerState, lr: float) -> None:
    """Bias-corrected Adam update in place; grads are cleared afterwards."""
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        if p.grad is None:
            raise ContractError(f"parameter {name} has no gradient")
        g = p.grad
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= (lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)).astype(REAL)
        p.grad = None


def split_dataset(samples: list, seed: int) -> tuple[list, list, list]:
    """Seeded-shuffle 8:1:1 split: floor(0.8n) train, floor(0.1n) val,
    remainder test. Disjoint and covering."""
    n = len(samples)
    if n < 10:
        raise ContractError(f"need at least 10 samples to split, got {n}")
    order = list(range(n))
    random.Random(seed).shuffle(order)
    n_train = int(0.8 * n)
    n_val = int(0.1 * n)
    train = [samples[i] for i in order[:n_train]]
    val = [samples[i] for i in order[n_train:n_train + n_val]]
    test = [samples[i] for i in order[n_train + n_val:]]
    return train, val, test


def augment(img: Tensor, rng: random.Random) -> Tensor:
    """Independent coin flips: horizontal flip; rotation from
    {90, 180, 270}; center zoom (crop to 0.8, resize back). Shape kept."""
    data = img.data
    if rng.random() < 0.5:
        data = data[:, :, ::-1]
    if rng.random() < 0.5:
        k = rng.choice([1, 2, 3])
        if k != 2 and data.shape[1] != data.shape[2]:
            raise DimensionError("90/270 degree rotation needs a square image")
        data = np.rot90(data, k, axes=(1, 2))
    if rng.random() < 0.5:
        c, h, w = data.shape
        ch, cw = int(0.8 * h), int(0.8 * w)
        r0, c0 = (h - ch) // 2, (w - cw) // 2
        data = resize_nearest(
            np.ascontiguousarray(data[:, r0:r0 + ch, c0:c0 + cw]), (h, w))
    return Tensor(np.ascontiguousarray(data))


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_accuracy: float

    def to_dict(self) -> dict:
        return {"epoch": self.epoch, "train_loss": self.train_loss,
                "val_accuracy": self.val_accuracy}


def _predict_scores(samples, cfg, params) -> np.ndarray:
    return np.array([stma_forward(s, cfg, params).data[1] for s in samples],
                    dtype=np.float64)


def evaluate_split(samples, cfg: ModelConfig, params: STMAParams) -> MetricsReport:
    """Table-style metrics over one labeled split."""
    if not samples:
        raise ContractError("cannot evaluate an empty split")
    scores = _predict_scores(samples, cfg, params)
    return evaluate_predictions([s.label for s in samples], scores)


def train(cfg: ModelConfig, params: STMAParams, train_split, val_split,
          hp: Hyperparams) -> tuple[STMAParams, list[EpochRecord]]:
    """Epoch loop over shuffled batches; returns params restored to the
    best-validation-accuracy snapshot plus the per-epoch loss curve.

    The recorded epoch loss is the sample-indexed mean of per-sample
    losses (order-independent accumulation), so an lr=0 run without
    augmentation has an exactly constant curve.
    """
    if not train_split:
        raise ContractError("empty train split")
    engaged = trainable_parameters(params, cfg)
    state = OptimizerState.for_params(engaged)
    rng = random.Random(hp.seed)
    history: list[EpochRecord] = []
    best_acc = -1.0
    best_snapshot: dict[str, np.ndarray] = {}
    n = len(train_split)

    for epoch in range(hp.epochs):
        order = list(range(n))
        rng.shuffle(order)
        sample_losses = np.zeros(n, dtype=np.float64)
        for start in range(0, n, hp.batch_size):
            batch_idx = order[start:start + hp.batch_size]
            with GradGraph() as graph:
                rows = []
                for i in batch_idx:
                    s = train_split[i]
                    image = s.image
                    if hp.augment and image is not None:
                        image = augment(image, rng)
                    probs, _ = forward_trace(image, getattr(s, "token_ids", None),
                                             cfg, params)
                    rows.append(reshape(probs, (1, 2)))
                batch = rows[0] if len(rows) == 1 else concat(rows, axis=0)
                labels = [train_split[i].label for i in batch_idx]
                loss = cross_entropy_loss(batch, labels)
                graph.backward(loss)
            for row, i in enumerate(batch_idx):
                p = np.float64(batch.data[row, labels[row]])
                sample_losses[i] = -np.log(max(p, 1e-12))
            adam_step(engaged, state, hp.learning_rate)

        val_scores = _predict_scores(val_split, cfg, params)
        val_labels = np.array([s.label for s in val_split], dtype=int)
        val_acc = float(((val_scores > 0.5).astype(int) == val_labels).mean()) \
            if len(val_split) else 0.0
        history.append(EpochRecord(epoch=epoch,
                                   train_loss=float(sample_losses.mean()),
                                   val_accuracy=val_acc))
        # ties keep the later epoch: a saturated desk-scale val split would
        # otherwise freeze an undertrained snapshot
        if val_acc >= best_acc:
            best_acc = val_acc
            best_snapshot = {k: t.data.copy() for k, t in engaged.items()}

    for k, t in engaged.items():
        t.data[:] = best_snapshot[k]
    return params, history
