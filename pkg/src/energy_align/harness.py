"""End-to-end procedures: long-tailed training and class-incremental learning.

Both finish by estimating shift scalars on a balanced, jittered sample of the
training data and adding them to the logits at inference time.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import metrics
from .aligning import (
    ClusterAssignment,
    ShiftVector,
    apply_shifts,
    cluster_shifts,
    jenks_breaks,
    select_num_clusters,
)
from .data import LabeledDataset, balanced_holdout, make_incremental_splits, make_long_tailed, synth_gaussians
from .errors import ConfigError, ContractError
from .model import MlpClassifier, expand_classes, forward_logits, init_params
from .numerics import LogitMatrix, neg_free_energies
from .training import CilConfig, SgdConfig, Teacher, distill_weight, step_weight_decay, train

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SynthConfig:
    num_classes: int = 10
    dim: int = 8
    spread: float = 1.0
    sigma: float = 1.0
    n_train: int = 500
    n_test: int = 100
    imbalance_ratio: float = 1.0
    data_seed: int = 0


@dataclass(frozen=True)
class ModelConfig:
    hidden: tuple = ()
    head: str = "affine"
    scale: float = 16.0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))


@dataclass(frozen=True)
class EaConfig:
    """Sampling-set and clustering settings for energy aligning.

    ``jitter`` is the noise scale as a fraction of the per-dimension training
    standard deviation; ``replication`` is the number of jittered copies.
    """

    ea_per_class: int = 20
    jitter: float = 0.1
    replication: int = 8
    candidate_ms: tuple = (1, 2, 3, 4, 5)
    many_threshold: int = 100
    few_threshold: int = 20
    use_ea: bool = True

    def __post_init__(self):
        if self.jitter < 0:
            raise ConfigError("jitter must be non-negative")
        if self.replication < 1 or self.ea_per_class < 1:
            raise ConfigError("replication and ea_per_class must be >= 1")
        object.__setattr__(self, "candidate_ms", tuple(int(m) for m in self.candidate_ms))

    @property
    def thresholds(self) -> metrics.ShotThresholds:
        return metrics.ShotThresholds(self.many_threshold, self.few_threshold)


# --- sampling set --------------------------------------------------------------


@dataclass(frozen=True)
class EaSampleSet:
    features: np.ndarray
    labels: np.ndarray
    per_class: int
    replication: int


def build_ea_sampleset(
    features,
    labels,
    classes,
    per_class: int,
    sigma,
    replication: int,
    seed: int,
) -> EaSampleSet:
    """Balanced sample of ``classes`` with Gaussian feature jitter.

    For each class, ``min(per_class, available)`` rows are drawn without
    replacement and each is emitted ``replication`` times with
    ``N(0, sigma^2)`` noise added (``sigma`` scalar or per dimension).
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if (sigma < 0).any():
        raise ContractError("jitter sigma must be non-negative")
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for c in classes:
        rows = np.flatnonzero(y == c)
        if rows.size == 0:
            raise ContractError(f"class {c} has no data for the sampling set")
        take = np.sort(rng.choice(rows, min(per_class, rows.size), replace=False))
        base = np.repeat(x[take], replication, axis=0)
        xs.append(base + rng.standard_normal(base.shape) * sigma)
        ys.append(np.full(base.shape[0], c))
    return EaSampleSet(np.vstack(xs), np.concatenate(ys), per_class, replication)


# --- rehearsal ---------------------------------------------------------------------


def rehearsal_quotas(capacity: int, classes) -> dict:
    """``capacity // n`` per class, remainder to the lowest class indices."""
    classes = sorted(int(c) for c in classes)
    if not classes:
        return {}
    base, rem = divmod(capacity, len(classes))
    return {c: base + (1 if k < rem else 0) for k, c in enumerate(classes)}


@dataclass
class RehearsalBuffer:
    """Stored exemplar row indices (into the training pool) per old class."""

    capacity: int
    exemplars: dict = field(default_factory=dict)

    @property
    def classes(self) -> list:
        return sorted(self.exemplars)

    def indices(self) -> np.ndarray:
        if not self.exemplars:
            return np.empty(0, dtype=np.int64)
        return np.concatenate([self.exemplars[c] for c in self.classes])

    def __len__(self) -> int:
        return sum(len(v) for v in self.exemplars.values())


def rehearsal_update(buffer: RehearsalBuffer, new_rows: dict, seed: int) -> RehearsalBuffer:
    """Re-split the budget over old plus new classes, sampling randomly.

    ``new_rows`` maps each new class to the row indices available for it.
    """
    overlap = set(buffer.exemplars) & set(new_rows)
    if overlap:
        raise ConfigError(f"classes {sorted(overlap)} already in the rehearsal buffer")
    rng = np.random.default_rng(seed)
    quotas = rehearsal_quotas(buffer.capacity, list(buffer.exemplars) + list(new_rows))
    out = {}
    for c in sorted(quotas):
        pool = buffer.exemplars[c] if c in buffer.exemplars else np.asarray(new_rows[c], dtype=np.int64)
        q = min(quotas[c], pool.size)
        if q == 0:
            continue
        out[c] = np.sort(rng.choice(pool, q, replace=False))
    return RehearsalBuffer(buffer.capacity, out)


# --- long-tailed recognition -----------------------------------------------------------


def lt_datasets(synth: SynthConfig):
    """Balanced synthetic data, a balanced test holdout and a long-tailed train split."""
    full = synth_gaussians(
        synth.num_classes,
        synth.dim,
        synth.spread,
        synth.sigma,
        synth.n_train + synth.n_test,
        synth.data_seed,
    )
    train_set, test_set = balanced_holdout(full, synth.n_test, synth.data_seed + 1)
    train_set = make_long_tailed(train_set, synth.imbalance_ratio, synth.data_seed + 2)
    return train_set, test_set


@dataclass
class LtResult:
    model: MlpClassifier
    shifts: ShiftVector
    clusters: ClusterAssignment
    sample_logits: LogitMatrix
    nfe_before: np.ndarray
    nfe_after: np.ndarray
    report: dict
    trace: list
    confusion_before: np.ndarray
    confusion_after: np.ndarray


def _jitter_sigma(x: np.ndarray, jitter: float) -> np.ndarray:
    return jitter * x.std(axis=0)


def run_lt(
    train_set: LabeledDataset,
    test_set: LabeledDataset,
    sgd: SgdConfig,
    model_cfg: ModelConfig = ModelConfig(),
    ea: EaConfig = EaConfig(),
) -> LtResult:
    """Train with cross-entropy, then correct with cluster-wise energy aligning."""
    counts = train_set.counts
    if counts.min() == 0:
        raise ConfigError(f"classes {np.flatnonzero(counts == 0).tolist()} have no training data")
    c = train_set.num_classes
    model = init_params([train_set.dim, *model_cfg.hidden, c], model_cfg.head, sgd.seed, model_cfg.scale)
    res = train(model, train_set.features, train_set.labels, sgd)

    per_class = min(ea.ea_per_class, int(counts.min()))
    sample = build_ea_sampleset(
        train_set.features,
        train_set.labels,
        range(c),
        per_class,
        _jitter_sigma(train_set.features, ea.jitter),
        ea.replication,
        sgd.seed + 7,
    )
    sample_logits = LogitMatrix(forward_logits(model, sample.features), sample.labels)
    distinct = np.unique(counts).size
    feasible = [m for m in ea.candidate_ms if 1 <= m <= distinct] or [1]
    m = select_num_clusters(feasible, sample_logits, counts)
    clusters = jenks_breaks(counts, m)
    shifts = cluster_shifts(sample_logits, clusters)
    if not ea.use_ea:
        shifts = ShiftVector.zeros(c)

    nfe_before = neg_free_energies(sample_logits)
    nfe_after = neg_free_energies(LogitMatrix(apply_shifts(sample_logits.values, shifts)))

    test_logits = forward_logits(model, test_set.features)
    raw = metrics.evaluate(test_logits, test_set.labels, c, counts, ea.thresholds)
    fixed = metrics.evaluate(apply_shifts(test_logits, shifts), test_set.labels, c, counts, ea.thresholds)
    diag = metrics.energy_bias_diagnostic(counts, nfe_before, nfe_after)
    report = {
        "mode": "train-lt",
        "train_counts": counts.tolist(),
        "candidate_ms": list(feasible),
        "num_clusters": m,
        "cluster_of": clusters.cluster_of.tolist(),
        "anchor_cluster": clusters.anchor_cluster,
        "alphas": shifts.alphas.tolist(),
        "uncorrected": raw,
        "corrected": fixed,
        "spearman_before": diag["spearman_before"],
        "spearman_after": diag["spearman_after"],
        "final_loss": res.trace[-1][2] if res.trace else None,
    }
    return LtResult(
        model=model,
        shifts=shifts,
        clusters=clusters,
        sample_logits=sample_logits,
        nfe_before=nfe_before,
        nfe_after=nfe_after,
        report=report,
        trace=res.trace,
        confusion_before=np.asarray(raw["confusion"]),
        confusion_after=np.asarray(fixed["confusion"]),
    )


# --- class-incremental learning ----------------------------------------------------------


@dataclass
class CilStep:
    step: int
    model: MlpClassifier
    shifts: ShiftVector | None
    metrics: dict
    confusion_before: np.ndarray
    confusion_after: np.ndarray
    train_counts: np.ndarray
    sample_logits: LogitMatrix | None = None


@dataclass
class CilResult:
    steps: list
    teacher: Teacher
    report: dict
    trace: list
    class_order: np.ndarray


def cil_datasets(synth: SynthConfig):
    full = synth_gaussians(
        synth.num_classes,
        synth.dim,
        synth.spread,
        synth.sigma,
        synth.n_train + synth.n_test,
        synth.data_seed,
    )
    return balanced_holdout(full, synth.n_test, synth.data_seed + 1)


def _relabel(ds: LabeledDataset, order: np.ndarray) -> LabeledDataset:
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    return LabeledDataset(ds.features, rank[ds.labels], ds.num_classes, ds.split)


def run_cil(
    train_set: LabeledDataset,
    test_set: LabeledDataset,
    cil: CilConfig,
    sgd: SgdConfig,
    model_cfg: ModelConfig = ModelConfig(),
    ea: EaConfig = EaConfig(),
    class_seed: int = 0,
) -> CilResult:
    """Class-incremental learning with rehearsal, corrected-teacher distillation
    and a two-cluster (old = anchor, new) shift after every step but the first.

    Classes are relabelled in arrival order, so after step ``b`` the seen
    classes are ``0 .. b*k - 1`` and the old ones always lead the logit vector.
    """
    c_total = train_set.num_classes
    groups = make_incremental_splits(c_total, cil.steps, class_seed)
    order = np.concatenate(groups)
    if np.unique(order).size != c_total:
        raise ConfigError("incremental class groups overlap")
    train_set = _relabel(train_set, order)
    test_set = _relabel(test_set, order)
    k = c_total // cil.steps
    x, y = train_set.features, train_set.labels
    sigma = _jitter_sigma(x, ea.jitter)

    buffer = RehearsalBuffer(cil.budget)
    teacher = None
    model = None
    steps, trace = [], []
    for b in range(1, cil.steps + 1):
        c_old, c_seen = (b - 1) * k, b * k
        new_classes = range(c_old, c_seen)
        if model is None:
            model = init_params([train_set.dim, *model_cfg.hidden, k], model_cfg.head, sgd.seed, model_cfg.scale)
        else:
            model = expand_classes(model, k, sgd.seed + 1000 * b)
        new_idx = np.flatnonzero((y >= c_old) & (y < c_seen))
        idx = np.concatenate([buffer.indices(), new_idx])
        lam = distill_weight(cil.lambda_base, c_old, k) if teacher is not None else 0.0
        sgd_b = replace(
            sgd,
            weight_decay=step_weight_decay(cil.weight_decay_base, cil.decay_factor, b),
            seed=sgd.seed + b,
        )
        res = train(model, x[idx], y[idx], sgd_b, teacher=teacher, lam=lam, split=f"train/step{b}")
        trace.extend(res.trace)

        shifts = None
        sample_logits = None
        if b > 1:
            old_min = min(len(buffer.exemplars[c]) for c in range(c_old)) if len(buffer) else 0
            per_class = max(1, min(ea.ea_per_class, old_min)) if old_min else ea.ea_per_class
            present = [c for c in range(c_seen) if np.any(y[idx] == c)]
            sample = build_ea_sampleset(x[idx], y[idx], present, per_class, sigma, ea.replication, sgd.seed + 100 * b)
            clusters = ClusterAssignment((np.arange(c_seen) >= c_old).astype(np.int64), anchor_cluster=0)
            sample_logits = LogitMatrix(forward_logits(model, sample.features), sample.labels)
            shifts = cluster_shifts(sample_logits, clusters)
        teacher_shifts = shifts if (shifts is not None and ea.use_ea) else ShiftVector.zeros(c_seen)
        teacher = Teacher(model.frozen_copy(), teacher_shifts)

        buffer = rehearsal_update(
            buffer, {c: new_idx[y[new_idx] == c] for c in new_classes}, sgd.seed + 10 * b
        )
        if len(buffer) > cil.budget:
            raise AssertionError("rehearsal buffer exceeded its budget")

        seen = np.flatnonzero(test_set.labels < c_seen)
        tl = forward_logits(model, test_set.features[seen])
        ty = test_set.labels[seen]
        corr = apply_shifts(tl, shifts) if shifts is not None else tl
        cm_raw = metrics.confusion_matrix(np.argmax(tl, axis=1), ty, c_seen)
        cm_ea = metrics.confusion_matrix(np.argmax(corr, axis=1), ty, c_seen)
        topk = min(5, c_seen)
        step_metrics = {
            "step": b,
            "classes_seen": c_seen,
            "lambda": lam,
            "weight_decay": sgd_b.weight_decay,
            "buffer_size": len(buffer),
            "alpha": float(shifts.alphas[-1]) if shifts is not None else None,
            "top1_uncorrected": metrics.topk_accuracy(tl, ty, 1),
            "top1_corrected": metrics.topk_accuracy(corr, ty, 1),
            f"top{topk}_uncorrected": metrics.topk_accuracy(tl, ty, topk),
            f"top{topk}_corrected": metrics.topk_accuracy(corr, ty, topk),
            "old_to_new_uncorrected": metrics.old_to_new_mass(tl, ty, c_old),
            "old_to_new_corrected": metrics.old_to_new_mass(corr, ty, c_old),
        }
        log.info("step %d: %s", b, step_metrics)
        counts = np.bincount(y[idx], minlength=c_seen)
        steps.append(CilStep(b, teacher.model, shifts, step_metrics, cm_raw, cm_ea, counts, sample_logits))

    key = "top1_corrected" if ea.use_ea else "top1_uncorrected"
    acc = [s.metrics[key] for s in steps]
    report = {
        "mode": "train-cil",
        "use_ea": ea.use_ea,
        "class_order": order.tolist(),
        "steps": [s.metrics for s in steps],
        "step_accuracy": acc,
        "avg": metrics.avg_incremental(acc),
        "avg_uncorrected": metrics.avg_incremental([s.metrics["top1_uncorrected"] for s in steps]),
    }
    return CilResult(steps, teacher, report, trace, order)

