"""Stable log-sum-exp, softmax and the Monte Carlo free-energy estimator.

A classifier logit ``f(x)[y]`` is read as a negative energy ``-E(x, y)``.
The negative free energy of class ``y`` is ``log \\int exp f(x)[y] dx``; over a
sampling set drawn uniformly from the region of interest the integral is
estimated by a sum, so ``-E(y)`` becomes a log-sum-exp over one logit column.

The estimator drops the ``1 / (S q(x))`` normaliser. It is the same for every
class, so only differences between classes carry meaning.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError


def _as_float_array(values, name: str = "values") -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if np.isnan(arr).any():
        raise ContractError(f"{name} contains NaN")
    return arr


def log_sum_exp(values, axis: int | None = None):
    """Return ``log(sum(exp(values)))`` without overflow.

    With ``axis=None`` the whole input is reduced to a float; otherwise the
    reduction runs along ``axis`` and an array is returned.
    """
    arr = _as_float_array(values)
    if arr.size == 0:
        raise ContractError("log_sum_exp of an empty sequence")
    if not np.isfinite(arr).all():
        raise ContractError("log_sum_exp requires finite values")
    if axis is None:
        m = arr.max()
        return float(m + np.log(np.exp(arr - m).sum()))
    m = arr.max(axis=axis, keepdims=True)
    out = m + np.log(np.exp(arr - m).sum(axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def softmax(logits, axis: int = -1) -> np.ndarray:
    arr = _as_float_array(logits, "logits")
    if not np.isfinite(arr).all():
        raise ContractError("softmax requires finite logits")
    z = arr - arr.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits, axis: int = -1) -> np.ndarray:
    arr = _as_float_array(logits, "logits")
    z = arr - arr.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


@dataclass(frozen=True)
class LogitMatrix:
    """Raw classifier outputs over a sampling set, one row per sample.

    ``labels`` is optional and only present when the sampling set is labeled
    (needed to pick a cluster count by sampling-set accuracy).
    """

    values: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64, copy=True)
        if vals.ndim != 2:
            raise ContractError(f"logit matrix must be 2-D, got shape {vals.shape}")
        if vals.shape[0] < 1 or vals.shape[1] < 2:
            raise ContractError(f"logit matrix needs S >= 1 and C >= 2, got {vals.shape}")
        if not np.isfinite(vals).all():
            raise ContractError("logit matrix contains non-finite entries")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if self.labels is not None:
            labels = np.array(self.labels, dtype=np.int64, copy=True).reshape(-1)
            if labels.shape[0] != vals.shape[0]:
                raise ContractError("labels length does not match sample count")
            if labels.size and (labels.min() < 0 or labels.max() >= vals.shape[1]):
                raise ContractError("label out of range [0, C)")
            labels.setflags(write=False)
            object.__setattr__(self, "labels", labels)

    @property
    def sample_count(self) -> int:
        return self.values.shape[0]

    @property
    def class_count(self) -> int:
        return self.values.shape[1]


def neg_free_energy(logits: LogitMatrix, class_index: int) -> float:
    """Estimate ``-E(y = class_index)`` as the LSE of that logit column."""
    if not 0 <= class_index < logits.class_count:
        raise ContractError(f"class index {class_index} out of range [0, {logits.class_count})")
    return log_sum_exp(logits.values[:, class_index])


def neg_free_energies(logits: LogitMatrix) -> np.ndarray:
    """Column-wise LSE for every class at once."""
    return log_sum_exp(logits.values, axis=0)
