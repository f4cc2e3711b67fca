"""Losses, learning-rate schedules and optimizers for the training recipes."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .aligning import ShiftVector, apply_shifts
from .errors import ConfigError, ContractError
from .model import MlpClassifier, backward, forward_logits
from .numerics import log_softmax, softmax

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SgdConfig:
    """Optimiser and schedule settings.

    ``schedule`` is one of ``constant``, ``step`` (multiply by ``gamma`` at
    each epoch in ``milestones``) or ``cosine`` (decay from ``lr`` to 0).
    ``warmup_epochs`` prepends a linear ramp to any of them.
    ``optimizer`` selects ``sgd`` (momentum may be 0) or ``adam``.
    """

    lr: float = 0.1
    schedule: str = "cosine"
    milestones: tuple = ()
    gamma: float = 0.1
    warmup_epochs: int = 0
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    temperature: float = 2.0
    optimizer: str = "sgd"

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError("learning rate must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight decay must be non-negative")
        if self.temperature <= 0:
            raise ConfigError("distillation temperature must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if self.schedule not in ("constant", "step", "cosine"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))


@dataclass(frozen=True)
class CilConfig:
    lambda_base: float = 1.0
    weight_decay_base: float = 5e-4
    decay_factor: float = 0.5
    budget: int = 50
    steps: int = 5

    def __post_init__(self):
        if self.budget < 0:
            raise ConfigError("rehearsal budget must be non-negative")
        if self.steps < 1:
            raise ConfigError("need at least one incremental step")
        if not 0.0 < self.decay_factor <= 1.0:
            raise ConfigError("weight-decay factor must lie in (0, 1]")
        if self.lambda_base < 0:
            raise ConfigError("lambda_base must be non-negative")


def learning_rate(cfg: SgdConfig, epoch: int) -> float:
    """Learning rate used throughout ``epoch`` (0-based)."""
    if cfg.warmup_epochs and epoch < cfg.warmup_epochs:
        return cfg.lr * (epoch + 1) / cfg.warmup_epochs
    if cfg.schedule == "constant":
        return cfg.lr
    if cfg.schedule == "step":
        passed = sum(1 for m in cfg.milestones if epoch >= m)
        return cfg.lr * cfg.gamma**passed
    span = max(cfg.epochs - cfg.warmup_epochs, 1)
    t = (epoch - cfg.warmup_epochs) / span
    return 0.5 * cfg.lr * (1.0 + math.cos(math.pi * t))


def step_weight_decay(r_base: float, eta: float, step: int) -> float:
    """Weight decay for incremental step ``step`` (1-based): ``r_base * eta**(step-1)``."""
    if step < 1:
        raise ContractError("incremental steps are numbered from 1")
    return r_base * eta ** (step - 1)


def distill_weight(lambda_base: float, old_classes: int, new_classes: int) -> float:
    total = old_classes + new_classes
    if total == 0:
        return 0.0
    return lambda_base * old_classes / total


# --- losses ------------------------------------------------------------------


def cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. the logits.

    Accepts a single logit row with an int label, or a batch with a label array.
    """
    z = np.asarray(logits, dtype=np.float64)
    single = z.ndim == 1
    z2 = z[None, :] if single else z
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if y.shape[0] != z2.shape[0]:
        raise ContractError("one label per logit row required")
    if y.min() < 0 or y.max() >= z2.shape[1]:
        raise ContractError("label out of range")
    n = z2.shape[0]
    lp = log_softmax(z2)
    loss = -lp[np.arange(n), y].mean()
    grad = np.exp(lp)
    grad[np.arange(n), y] -= 1.0
    grad /= n
    return float(loss), (grad[0] if single else grad)


def kd_loss(student_old, teacher_old, temperature: float):
    """Distillation from a (shift-corrected) teacher over the old-class slice.

    ``sum_i -q_teacher(i) log q_student(i)`` with both distributions at
    temperature ``T``; batch mean. The gradient is w.r.t. the student's
    untempered old-class logits, ``(q_student - q_teacher) / T``.
    """
    s = np.asarray(student_old, dtype=np.float64)
    t = np.asarray(teacher_old, dtype=np.float64)
    if s.shape != t.shape:
        raise ContractError("student and teacher slices differ in shape")
    if s.shape[-1] == 0:
        return 0.0, np.zeros_like(s)
    single = s.ndim == 1
    s2 = s[None, :] if single else s
    t2 = t[None, :] if single else t
    n = s2.shape[0]
    q_t = softmax(t2 / temperature)
    log_q_s = log_softmax(s2 / temperature)
    loss = -(q_t * log_q_s).sum(axis=1).mean()
    grad = (np.exp(log_q_s) - q_t) / (temperature * n)
    return float(loss), (grad[0] if single else grad)


def compound_loss(logits, labels, teacher_logits_old, lam: float, temperature: float):
    """``(1 - lam) * CE(all classes) + lam * KD(old classes)``.

    ``teacher_logits_old`` holds the corrected teacher logits; its width is
    the number of old classes, which occupy the leading logit columns.
    """
    if not 0.0 <= lam <= 1.0:
        raise ContractError("lambda must lie in [0, 1]")
    z = np.asarray(logits, dtype=np.float64)
    ce, g_ce = cross_entropy(z, labels)
    t = np.asarray(teacher_logits_old, dtype=np.float64)
    c_old = t.shape[-1]
    if c_old == 0 or lam == 0.0:
        return (1.0 - lam) * ce, (1.0 - lam) * g_ce
    kd, g_kd = kd_loss(z[..., :c_old], t, temperature)
    grad = (1.0 - lam) * g_ce
    grad[..., :c_old] += lam * g_kd
    return (1.0 - lam) * ce + lam * kd, grad


# --- optimisers ----------------------------------------------------------------


class Sgd:
    """``v <- mu v + g``; ``theta <- theta - lr (v + r theta)``."""

    def __init__(self, params, decay_mask, momentum: float, weight_decay: float):
        self.params = params
        self.decay = [weight_decay if d else 0.0 for d in decay_mask]
        self.momentum = momentum
        self.velocity = [np.zeros_like(p) for p in params]

    def step(self, grads, lr: float) -> None:
        for p, g, v, r in zip(self.params, grads, self.velocity, self.decay):
            v *= self.momentum
            v += g
            p -= lr * (v + r * p) if r else lr * v


class Adam:
    def __init__(self, params, decay_mask, weight_decay: float, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.decay = [weight_decay if d else 0.0 for d in decay_mask]
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v, r in zip(self.params, grads, self.m, self.v, self.decay):
            g = g + r * p
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(model: MlpClassifier, cfg: SgdConfig):
    if cfg.optimizer == "adam":
        return Adam(model.parameters(), model.decay_mask(), cfg.weight_decay)
    return Sgd(model.parameters(), model.decay_mask(), cfg.momentum, cfg.weight_decay)


@dataclass
class Teacher:
    """Frozen previous-step model together with the shifts that correct it."""

    model: MlpClassifier
    shifts: ShiftVector

    def corrected_logits(self, x) -> np.ndarray:
        return apply_shifts(forward_logits(self.model, x), self.shifts)


@dataclass
class TrainResult:
    model: MlpClassifier
    trace: list = field(default_factory=list)  # (epoch, split, value)


class DivergenceError(RuntimeError):
    pass


def train(
    model: MlpClassifier,
    features,
    labels,
    cfg: SgdConfig,
    teacher: Teacher | None = None,
    lam: float = 0.0,
    split: str = "train",
) -> TrainResult:
    """Mini-batch training in place; returns the model and a per-epoch loss trace.

    Without a teacher the objective is plain cross-entropy. With one, each
    batch uses :func:`compound_loss` against the teacher's corrected logits.
    Shuffling is driven by ``cfg.seed`` so reruns are bit-identical.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.shape[0] == 0:
        raise ContractError("cannot train on an empty dataset")
    if model.frozen:
        raise ContractError("cannot train a frozen model")
    teacher_logits = teacher.corrected_logits(x) if teacher is not None else None
    opt = make_optimizer(model, cfg)
    rng = np.random.default_rng(cfg.seed)
    n = x.shape[0]
    trace = []
    for epoch in range(cfg.epochs):
        lr = learning_rate(cfg, epoch)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            with np.errstate(over="ignore", invalid="ignore"):
                logits = forward_logits(model, x[idx])
            if not np.isfinite(logits).all():
                raise DivergenceError(f"non-finite logits at epoch {epoch}, batch starting {start} (lr={lr:g})")
            if teacher_logits is None:
                loss, g = cross_entropy(logits, y[idx])
            else:
                loss, g = compound_loss(logits, y[idx], teacher_logits[idx], lam, cfg.temperature)
            if not math.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, batch starting {start} (lr={lr:g})"
                )
            opt.step(backward(model, x[idx], g), lr)
            model.step += 1
            total += loss * idx.size
        trace.append((epoch, split, total / n))
        log.debug("epoch %d %s loss %.5f lr %.4g", epoch, split, total / n, lr)
    return TrainResult(model, trace)
