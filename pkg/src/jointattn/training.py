"""Composite loss, Adam and the minibatch training loop."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as tf
from .dataset import Dataset, stack_positions
from .model import Network, forward
from .tensor import GradTape, Tensor

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    gamma: float = 0.0005
    lam: float = 0.0001
    alpha: tuple[float, ...] = (1.0, 1.0)

    def __post_init__(self):
        if self.gamma < 0 or self.lam < 0:
            raise ValueError("gamma and lambda must be non-negative")
        if any(a <= 0 for a in self.alpha):
            raise ValueError(f"class weights must be positive, got {self.alpha}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 400
    learning_rate: float = 0.0003
    batch_size: int = 3
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # literal ||w||_2 by default; True gives conventional squared weight decay
    squared_norm: bool = False
    # batch reduction of the attention term: "mean" or "sum"
    attention_reduction: str = "mean"

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("epochs >= 0, batch_size >= 1 and learning_rate > 0 required")
        if self.attention_reduction not in ("mean", "sum"):
            raise ValueError(f"attention_reduction must be 'mean' or 'sum', got {self.attention_reduction!r}")


def class_weights(n: int, counts: Sequence[int], n_classes: int = 2) -> np.ndarray:
    """Per-class weights ``sqrt(n / (n_classes * n_i))``."""
    counts = list(counts)
    if len(counts) != n_classes:
        raise ValueError(f"expected {n_classes} class counts, got {len(counts)}")
    if any(c < 1 for c in counts):
        raise ValueError(f"every class needs at least one sample, got counts {counts}")
    if sum(counts) != n:
        raise ValueError(f"class counts {counts} do not sum to n={n}")
    return np.sqrt(n / (n_classes * np.asarray(counts, dtype=np.float64)))


def cross_entropy_weighted(probs: Tensor, labels, alpha) -> Tensor:
    """Batch mean of ``-alpha[y] * ln(max(p[y], 1e-12))``."""
    single = probs.ndim == 1
    P = tf.reshape(probs, (1,) + probs.shape) if single else probs
    labels = np.atleast_1d(np.asarray(labels))
    n_classes = P.shape[1]
    if labels.shape != (P.shape[0],):
        raise ValueError(f"{labels.size} labels for a batch of {P.shape[0]}")
    if labels.dtype.kind not in "iu" or (labels < 0).any() or (labels >= n_classes).any():
        raise ValueError(f"labels {labels.tolist()} out of range for {n_classes} classes")
    alpha = np.asarray(alpha, dtype=np.float64)
    picks = np.zeros(P.shape)
    picks[np.arange(len(labels)), labels] = alpha[labels]
    nll = tf.sum_(tf.mul(tf.log(P, floor=PROB_FLOOR), Tensor(picks)))
    return tf.scale(nll, -1.0 / len(labels))


def attention_loss(A: Tensor, reduction: str = "mean") -> Tensor:
    """Sum of attention values per sample; batches are averaged (or summed)."""
    total = tf.sum_(A)
    if A.ndim == 2 and reduction == "mean":
        return tf.scale(total, 1.0 / A.shape[0])
    return total


def total_loss(l_cep: Tensor, l_att: Tensor | None, params, weights: LossWeights, squared_norm: bool = False):
    """``L_cep + gamma * L_att + lambda * ||w||``; returns ``(L, ||w||)``."""
    norm = tf.global_norm(list(params), squared=squared_norm)
    loss = l_cep
    if l_att is not None and weights.gamma != 0.0:
        loss = tf.add(loss, tf.scale(l_att, weights.gamma))
    if weights.lam != 0.0:
        loss = tf.add(loss, tf.scale(norm, weights.lam))
    return loss, norm


@dataclass
class LossBreakdown:
    total: Tensor
    cep: Tensor
    att: Tensor | None
    weight_norm: Tensor


def batch_loss(net: Network, S: Tensor, labels, weights: LossWeights, cfg: TrainConfig = TrainConfig()) -> LossBreakdown:
    probs, A = forward(net, S)
    l_cep = cross_entropy_weighted(probs, labels, weights.alpha)
    l_att = attention_loss(A, cfg.attention_reduction) if A is not None else None
    total, norm = total_loss(l_cep, l_att, net.parameters(), weights, cfg.squared_norm)
    return LossBreakdown(total, l_cep, l_att, norm)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls(0, [np.zeros(np.shape(p)) for p in params], [np.zeros(np.shape(p)) for p in params])


def adam_step(params, grads, state: AdamState, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``."""
    b1, b2 = betas
    if not state.m:
        state = AdamState.zeros_like(params)
    if len(state.m) != len(params) or len(grads) != len(params):
        raise ValueError("parameter, gradient and state lists differ in length")
    t = state.step + 1
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        p = np.asarray(p)
        if m.shape != p.shape or np.shape(g) != p.shape:
            raise ValueError(f"state/gradient shape does not match parameter shape {p.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new_params.append(p - lr * (m / c1) / (np.sqrt(v / c2) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(t, new_m, new_v)


# ---------------------------------------------------------------------------
# training loop


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    total: float
    cep: float
    att: float
    weight_norm: float


def train(
    net: Network,
    train_set: Dataset,
    cfg: TrainConfig = TrainConfig(),
    weights: LossWeights = LossWeights(),
    rng: np.random.Generator | None = None,
) -> tuple[Network, list[EpochRecord]]:
    """Minibatch Adam over ``cfg.epochs`` shuffled epochs.

    ``rng`` drives the per-epoch shuffle; defaults to one seeded by
    ``cfg.seed``. The input network is left untouched.
    """
    if train_set.n == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    X = stack_positions(train_set.samples)
    y = np.array([s.label for s in train_set.samples])
    names = list(net.params)
    arrays = [p.data for p in net.parameters()]
    state = AdamState.zeros_like(arrays)
    history: list[EpochRecord] = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(train_set.n)
        sums = np.zeros(4)
        for start in range(0, train_set.n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            current = net.with_params(arrays)
            with GradTape() as tape:
                parts = batch_loss(current, Tensor(X[idx]), y[idx], weights, cfg)
            grads = tape.gradient(parts.total, current.parameters())
            arrays, state = adam_step(arrays, grads, state, cfg.learning_rate, (cfg.beta1, cfg.beta2), cfg.eps)
            att = parts.att.item() if parts.att is not None else 0.0
            sums += len(idx) * np.array([parts.total.item(), parts.cep.item(), att, parts.weight_norm.item()])
        rec = EpochRecord(epoch, *(sums / train_set.n).tolist())
        if not all(math.isfinite(x) for x in (rec.total, rec.cep, rec.att, rec.weight_norm)):
            raise FloatingPointError(f"non-finite loss at epoch {epoch}")
        history.append(rec)
        if epoch == 1 or epoch % 100 == 0:
            logger.debug("epoch %d loss %.6f", epoch, rec.total)
    trained = Network(net.config, dict(zip(names, net.with_params(arrays).parameters())))
    return trained, history


def write_loss_history(history: Sequence[EpochRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "L_total", "L_cep", "L_att", "weight_norm"])
        for r in history:
            w.writerow([r.epoch, repr(r.total), repr(r.cep), repr(r.att), repr(r.weight_norm)])


def read_config(path) -> dict[str, str]:
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    kv = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        kv[key.strip()] = val.strip()
    return kv


def apply_overrides(obj, kv: dict[str, str]):
    """Return a copy of dataclass ``obj`` with matching keys from ``kv`` applied."""
    updates = {}
    for f in fields(obj):
        if f.name not in kv or f.name == "alpha":
            continue
        default = getattr(obj, f.name)
        raw = kv[f.name]
        if isinstance(default, bool):
            updates[f.name] = raw.lower() in ("1", "true", "yes")
        elif isinstance(default, int):
            updates[f.name] = int(raw)
        elif isinstance(default, float):
            updates[f.name] = float(raw)
        else:
            updates[f.name] = raw
    return replace(obj, **updates)
