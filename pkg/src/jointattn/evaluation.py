"""Leave-one-out cross-validation and attention statistics."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .dataset import Dataset, stack_positions
from .model import ModelConfig, forward, init_network
from .runtime import keep_freed_memory
from .tensor import Tensor
from .training import EpochRecord, LossWeights, TrainConfig, class_weights, train

logger = logging.getLogger(__name__)

THRESHOLDS = (0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
# sigmoid never reaches 1.0 exactly, so "= 1.0" is counted as saturation
SATURATION_TOL = 1e-9


class FoldError(ValueError):
    pass


@dataclass
class FoldReport:
    fold_index: int
    held_out_id: str
    true_label: int
    predicted_label: int
    probs: list[float]
    attention: list[float] | None
    train_attention_mean: list[float] | None
    class_weights: list[float]
    train_ids: list[str]
    final_loss: dict[str, float | None]
    history: list[EpochRecord] = field(default_factory=list, repr=False, compare=False)

    @property
    def correct(self) -> bool:
        return self.predicted_label == self.true_label

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("history")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FoldReport":
        return cls(**{k: d[k] for k in d if k != "history"})


@dataclass
class RunReport:
    folds: list[FoldReport]
    joint_names: list[str]
    config: dict
    accuracy: float
    attention_stats: dict | None

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "n_folds": len(self.folds),
            "n_correct": sum(f.correct for f in self.folds),
            "joint_names": list(self.joint_names),
            "config": self.config,
            "attention_stats": self.attention_stats,
            "folds": [f.to_dict() for f in self.folds],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        return cls(
            folds=[FoldReport.from_dict(f) for f in d["folds"]],
            joint_names=list(d["joint_names"]),
            config=d["config"],
            accuracy=d["accuracy"],
            attention_stats=d["attention_stats"],
        )

    def attention_matrix(self) -> np.ndarray | None:
        if self.folds and self.folds[0].attention is not None:
            return np.array([f.attention for f in self.folds])
        return None


def fold_rngs(global_seed: int, fold_index: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent (init, shuffle) generators for one fold."""
    init_ss, shuffle_ss = np.random.SeedSequence([global_seed, fold_index]).spawn(2)
    return np.random.default_rng(init_ss), np.random.default_rng(shuffle_ss)


def fold_splits(n: int) -> list[tuple[list[int], int]]:
    return [([i for i in range(n) if i != k], k) for k in range(n)]


def run_fold(
    dataset: Dataset,
    k: int,
    cfg: TrainConfig,
    weights: LossWeights,
    model_cfg: ModelConfig,
) -> FoldReport:
    train_idx = [i for i in range(dataset.n) if i != k]
    train_set = dataset.subset(train_idx)
    counts = train_set.class_counts
    if min(counts) == 0:
        raise FoldError(f"fold {k}: training split has a single class (counts {counts})")
    alpha = class_weights(train_set.n, counts, dataset.n_classes)
    w = replace(weights, alpha=tuple(alpha.tolist()))
    init_rng, shuffle_rng = fold_rngs(cfg.seed, k)
    net = init_network(model_cfg, init_rng)
    net, history = train(net, train_set, cfg, w, rng=shuffle_rng)

    held = dataset.samples[k]
    probs, attn = forward(net, held.positions)
    train_attn = None
    if attn is not None:
        _, batch_attn = forward(net, Tensor(stack_positions(train_set.samples)))
        train_attn = batch_attn.data.mean(axis=0).tolist()
    last = history[-1] if history else None
    final = {
        key: (getattr(last, key) if last else None) for key in ("total", "cep", "att", "weight_norm")
    }
    pred = int(np.argmax(probs.data))  # ties go to class 0
    logger.info("fold %d (%s): true %d pred %d", k, held.id, held.label, pred)
    return FoldReport(
        fold_index=k,
        held_out_id=held.id,
        true_label=held.label,
        predicted_label=pred,
        probs=probs.data.tolist(),
        attention=None if attn is None else attn.data.tolist(),
        train_attention_mean=train_attn,
        class_weights=alpha.tolist(),
        train_ids=[s.id for s in train_set.samples],
        final_loss=final,
        history=history,
    )


def _run_fold_args(args):
    return run_fold(*args)


def loocv(
    dataset: Dataset,
    cfg: TrainConfig = TrainConfig(),
    weights: LossWeights = LossWeights(),
    model_cfg: ModelConfig | None = None,
    jobs: int = 1,
) -> RunReport:
    """Train one fresh network per held-out sample and aggregate."""
    if dataset.n < 2:
        raise FoldError("leave-one-out needs at least 2 samples")
    for train_idx, k in fold_splits(dataset.n):
        counts = dataset.subset(train_idx).class_counts
        if min(counts) == 0:
            raise FoldError(f"fold {k}: training split has a single class (counts {counts})")
    if model_cfg is None:
        model_cfg = ModelConfig(n_joints=len(dataset.joint_names))
    tasks = [(dataset, k, cfg, weights, model_cfg) for k in range(dataset.n)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs, initializer=keep_freed_memory) as pool:
            folds = list(pool.map(_run_fold_args, tasks))
    else:
        folds = [run_fold(*t) for t in tasks]
    return summarize(folds, dataset.joint_names, _config_dict(cfg, weights, model_cfg))


def _config_dict(cfg: TrainConfig, weights: LossWeights, model_cfg: ModelConfig) -> dict:
    d = asdict(cfg)
    d.update(gamma=weights.gamma, lam=weights.lam, attention=model_cfg.attention)
    d["channels"] = list(model_cfg.channels)
    d["reduction"] = model_cfg.reduction
    return d


def summarize(folds: Sequence[FoldReport], joint_names, config: dict) -> RunReport:
    folds = sorted(folds, key=lambda f: f.fold_index)
    if not folds:
        raise FoldError("no folds")
    acc = sum(f.correct for f in folds) / len(folds)
    stats = None
    if folds[0].attention is not None:
        stats = attention_statistics(np.array([f.attention for f in folds]), joint_names)
    return RunReport(list(folds), list(joint_names), config, acc, stats)


def threshold_counts(attention: np.ndarray, thresholds: Sequence[float] = THRESHOLDS) -> list[float]:
    """Mean over folds of the number of joints with attention >= tau."""
    A = np.atleast_2d(attention)
    out = []
    for tau in thresholds:
        cut = tau - SATURATION_TOL if tau >= 1.0 else tau
        out.append(float((A >= cut).sum(axis=1).mean()))
    return out


def attention_statistics(attention: np.ndarray, joint_names=None, thresholds: Sequence[float] = THRESHOLDS) -> dict:
    """Threshold table plus per-joint five-number summary across folds.

    ``attention`` is ``folds x J``.
    """
    A = np.atleast_2d(np.asarray(attention, dtype=np.float64))
    if A.shape[0] < 1:
        raise FoldError("attention statistics need at least one fold")
    names = list(joint_names) if joint_names is not None else [str(j) for j in range(A.shape[1])]
    q = np.percentile(A, [0, 25, 50, 75, 100], axis=0)
    per_joint = [
        {"joint": name, "min": q[0, j], "q1": q[1, j], "median": q[2, j], "q3": q[3, j], "max": q[4, j]}
        for j, name in enumerate(names)
    ]
    per_joint = [{k: (float(v) if k != "joint" else v) for k, v in row.items()} for row in per_joint]
    return {
        "thresholds": list(thresholds),
        "counts": threshold_counts(A, thresholds),
        "average_attention": float(A.mean()),
        "per_joint": per_joint,
    }


def ablation_attention_loss(
    dataset: Dataset,
    cfg: TrainConfig = TrainConfig(),
    weights: LossWeights = LossWeights(),
    gamma: float = 0.0005,
    jobs: int = 1,
) -> tuple[RunReport, RunReport]:
    """LOOCV without and with the attention term, otherwise identical."""
    without = loocv(dataset, cfg, replace(weights, gamma=0.0), jobs=jobs)
    with_ = loocv(dataset, cfg, replace(weights, gamma=gamma), jobs=jobs)
    return without, with_


def ablation_no_attention(
    dataset: Dataset,
    cfg: TrainConfig = TrainConfig(),
    weights: LossWeights = LossWeights(),
    jobs: int = 1,
) -> RunReport:
    """LOOCV with the attention stage bypassed (constant unit gates)."""
    model_cfg = ModelConfig(n_joints=len(dataset.joint_names), attention=False)
    return loocv(dataset, cfg, weights, model_cfg=model_cfg, jobs=jobs)
