"""Signed-gradient L-infinity attacks: FGSM, BIM, MIFGSM and PGD.

All attacks maximise plain cross-entropy of the true labels, run the model in
eval mode with parameter gradients switched off, and return a fresh float32
array. Passing a list as ``trace`` records every iterate, starting with the
initial point.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .tensor import DTYPE, Tensor, softmax_cross_entropy

ATTACKS = ("fgsm", "bim", "mifgsm", "pgd")


@dataclass
class AttackConfig:
    kind: str
    epsilon: float
    alpha: Optional[float] = None
    steps: int = 10
    mu: float = 1.0
    random_start: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ATTACKS:
            raise ValueError(f"unknown attack {self.kind!r}; valid: {', '.join(ATTACKS)}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.alpha is not None and self.alpha <= 0:
            raise ValueError("alpha must be > 0")


@contextlib.contextmanager
def _frozen(model):
    """Eval mode and no parameter grads for the duration of an attack."""
    if not hasattr(model, "train"):
        yield
        return
    was_training = model.training
    flags = [p.requires_grad for p in model.parameters()]
    model.eval()
    model.requires_grad_(False)
    try:
        yield
    finally:
        for p, f in zip(model.parameters(), flags):
            p.requires_grad = f
        model.train(was_training)


def _logits(model, x):
    out = model(x)
    return out[0] if isinstance(out, tuple) else out


def input_gradient(model, x: np.ndarray, y) -> np.ndarray:
    """d CE(model(x), y) / dx."""
    xt = Tensor(x, requires_grad=True)
    loss = softmax_cross_entropy(_logits(model, xt), y)
    loss.backward()
    return xt.grad


def _as_array(x) -> np.ndarray:
    x = x.data if isinstance(x, Tensor) else x
    return np.array(x, dtype=DTYPE, copy=True)


def _record(trace, x):
    if trace is not None:
        trace.append(x.copy())


def fgsm(model, x, y, epsilon, trace=None):
    x = _as_array(x)
    _record(trace, x)
    with _frozen(model):
        g = input_gradient(model, x, y)
    adv = np.clip(x + DTYPE(epsilon) * np.sign(g), 0.0, 1.0).astype(DTYPE)
    _record(trace, adv)
    return adv


def _signed_ascent(model, x, y, epsilon, alpha, steps, start, trace):
    eps = DTYPE(epsilon)
    lo = np.maximum(x - eps, 0.0).astype(DTYPE)
    hi = np.minimum(x + eps, 1.0).astype(DTYPE)
    adv = start
    _record(trace, adv)
    with _frozen(model):
        for _ in range(steps):
            g = input_gradient(model, adv, y)
            adv = np.clip(adv + DTYPE(alpha) * np.sign(g), lo, hi).astype(DTYPE)
            _record(trace, adv)
    return adv


def bim(model, x, y, epsilon, alpha=None, steps=10, trace=None):
    """Iterated FGSM with clipping to the epsilon-ball and [0,1] after each step (alpha defaults to eps/steps)."""
    x = _as_array(x)
    alpha = epsilon / steps if alpha is None else alpha
    return _signed_ascent(model, x, y, epsilon, alpha, steps, x.copy(), trace)


def pgd(model, x, y, epsilon, alpha=None, steps=10, random_start=True, seed=0, trace=None):
    """Projected signed-gradient ascent with optional seeded uniform start in the epsilon-ball."""
    x = _as_array(x)
    alpha = 2.5 * epsilon / steps if alpha is None else alpha
    start = x.copy()
    if random_start and epsilon > 0:
        noise = np.random.default_rng(seed).uniform(-epsilon, epsilon, size=x.shape).astype(DTYPE)
        start = np.clip(x + noise, np.maximum(x - DTYPE(epsilon), 0.0), np.minimum(x + DTYPE(epsilon), 1.0))
        start = start.astype(DTYPE)
    return _signed_ascent(model, x, y, epsilon, alpha, steps, start, trace)


def mifgsm(model, x, y, epsilon, steps=10, mu=1.0, trace=None):
    """Momentum iterative FGSM with step eps/steps and per-sample L1-normalised gradients.

    There is no per-step epsilon-ball clip; iterates are only clamped to [0,1].
    A zero gradient normalises to zero.
    """
    x = _as_array(x)
    alpha = DTYPE(epsilon / steps)
    adv = x.copy()
    momentum = np.zeros_like(x)
    _record(trace, adv)
    axes = tuple(range(1, x.ndim))
    with _frozen(model):
        for _ in range(steps):
            g = input_gradient(model, adv, y)
            norm = np.abs(g).sum(axis=axes, keepdims=True)
            unit = np.divide(g, norm, out=np.zeros_like(g), where=norm > 0)
            momentum = DTYPE(mu) * momentum + unit
            adv = np.clip(adv + alpha * np.sign(momentum), 0.0, 1.0).astype(DTYPE)
            _record(trace, adv)
    return adv


def run_attack(model, x, y, cfg: AttackConfig, trace=None):
    if cfg.kind == "fgsm":
        return fgsm(model, x, y, cfg.epsilon, trace=trace)
    if cfg.kind == "bim":
        return bim(model, x, y, cfg.epsilon, cfg.alpha, cfg.steps, trace=trace)
    if cfg.kind == "mifgsm":
        return mifgsm(model, x, y, cfg.epsilon, cfg.steps, cfg.mu, trace=trace)
    return pgd(model, x, y, cfg.epsilon, cfg.alpha, cfg.steps, cfg.random_start, cfg.seed, trace=trace)
