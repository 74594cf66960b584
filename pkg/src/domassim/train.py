"""End-to-end training with the combined cross-entropy + texture loss and early stopping."""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .models import VARIANTS, ModelStack
from .tensor import Adam, Tensor, no_grad, softmax_cross_entropy
from .texture import soft_glcm_loss

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 32
    lr: float = 1e-4
    patience: int = 30
    alpha: float = 0.98
    glcm_levels: int = 16
    glcm_distance: int = 3
    glcm_tau: float = 0.5
    glcm_subsample: int = 8
    seed: int = 0
    variant: str = "tc_glcm"
    train_fraction: float = 0.8
    input_size: int = 32
    width: int = 8
    dropout: float = 0.5
    hidden: int = 128
    n_per_class: int = 200

    def __post_init__(self):
        self.variant = self.variant.replace("-", "_")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.patience > self.epochs:
            raise ConfigError("patience must not exceed epochs")
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ConfigError("epochs, batch_size and patience must be >= 1")
        if self.glcm_tau <= 0:
            raise ConfigError("glcm_tau must be > 0")

    @classmethod
    def from_file(cls, path, **overrides) -> "TrainConfig":
        """Read ``key = value`` lines (``#`` starts a comment); unknown keys are an error."""
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        values = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                key, sep, value = line.partition("=")
                key, value = key.strip(), value.strip()
                if not sep or not key:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
                if key not in types:
                    raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
                try:
                    values[key] = _convert(types[key], value)
                except ValueError:
                    raise ConfigError(f"{path}:{lineno}: bad value {value!r} for {key}") from None
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


def _convert(typ, value):
    if typ in (int, "int"):
        return int(value)
    if typ in (float, "float"):
        return float(value)
    return value


@dataclass
class BatchRecord:
    epoch: int
    batch: int
    ce: float
    glcm: Optional[float]
    combined: float


@dataclass
class EpochRecord:
    epoch: int
    train_ce: float
    train_glcm: Optional[float]
    train_loss: float
    train_acc: float
    val_acc: float


@dataclass
class TrainHistory:
    records: List[EpochRecord] = field(default_factory=list)
    batches: List[BatchRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_acc: float = -1.0
    stop_reason: str = ""


def combined_loss(logits, y, colorized, original, alpha, levels=16, distance=3, tau=0.5):
    """alpha * CE + (1 - alpha) * soft GLCM loss. Returns (total, ce, glcm) with the terms as floats."""
    ce = softmax_cross_entropy(logits, y)
    if alpha == 1.0:
        return ce, ce.item(), 0.0
    g = soft_glcm_loss(colorized, original, distance, levels, tau)
    total = ce * alpha + g * (1.0 - alpha)
    return total, ce.item(), g.item()


def predict(stack: ModelStack, x, batch_size=128) -> np.ndarray:
    stack.eval()
    out = []
    with no_grad():
        for s in range(0, len(x), batch_size):
            out.append(np.argmax(stack(Tensor(x[s:s + batch_size]))[0].data, axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def accuracy(stack: ModelStack, x, y, batch_size=128) -> float:
    if len(y) == 0:
        return 0.0
    return float(np.mean(predict(stack, x, batch_size) == np.asarray(y)))


def train(stack: ModelStack, train_ds, val_ds, cfg: TrainConfig,
          on_epoch: Optional[Callable[[EpochRecord], None]] = None):
    """Train ``stack`` in place and return ``(stack, history)`` with the best-validation weights restored."""
    if len(train_ds) == 0 or len(val_ds) == 0:
        raise ValueError("training and validation sets must be non-empty")
    x_train, y_train = train_ds.batch(), train_ds.labels
    x_val, y_val = val_ds.batch(), val_ds.labels
    if tuple(x_train.shape[2:]) != stack.input_size:
        raise ValueError(f"dataset images are {x_train.shape[2:]}, stack expects {stack.input_size}")

    use_glcm = stack.variant == "tc_glcm"
    rng = np.random.default_rng(cfg.seed)
    stack.classifier.drop.reseed(cfg.seed)
    opt = Adam(stack.parameters(), lr=cfg.lr)
    hist = TrainHistory()
    best_state = stack.state_dict()
    n = len(x_train)

    for epoch in range(1, cfg.epochs + 1):
        stack.train()
        perm = rng.permutation(n)
        sums = {"ce": 0.0, "glcm": 0.0, "loss": 0.0, "correct": 0}
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = perm[start:start + cfg.batch_size]
            xb, yb = x_train[idx], y_train[idx]
            opt.zero_grad()
            logits, colorized = stack(Tensor(xb))
            if use_glcm:
                k = min(cfg.glcm_subsample, len(idx))
                total, ce, g = combined_loss(logits, yb, colorized[:k], xb[:k], cfg.alpha,
                                             cfg.glcm_levels, cfg.glcm_distance, cfg.glcm_tau)
            else:
                total = softmax_cross_entropy(logits, yb)
                ce, g = total.item(), None
            value = total.item()
            if not math.isfinite(value):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, batch {b}")
            total.backward()
            opt.step()
            hist.batches.append(BatchRecord(epoch, b, ce, g, value))
            w = len(idx)
            sums["ce"] += ce * w
            sums["glcm"] += (g or 0.0) * w
            sums["loss"] += value * w
            sums["correct"] += int((np.argmax(logits.data, axis=1) == yb).sum())

        val_acc = accuracy(stack, x_val, y_val)
        rec = EpochRecord(epoch, sums["ce"] / n, sums["glcm"] / n if use_glcm else None, sums["loss"] / n,
                          sums["correct"] / n, val_acc)
        hist.records.append(rec)
        log.info("epoch %d loss %.4f train_acc %.3f val_acc %.3f", epoch, rec.train_loss, rec.train_acc, val_acc)
        if on_epoch is not None:
            on_epoch(rec)
        if val_acc > hist.best_val_acc:
            hist.best_val_acc, hist.best_epoch = val_acc, epoch
            best_state = stack.state_dict()
        elif epoch - hist.best_epoch >= cfg.patience:
            hist.stop_reason = "early_stopping"
            break
    else:
        hist.stop_reason = "max_epochs"

    stack.load_state_dict(best_state)
    stack.eval()
    return stack, hist
