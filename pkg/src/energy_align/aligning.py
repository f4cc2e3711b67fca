"""Shift scalars that equalize class free energies, and class clustering.

Two flavours of shift are computed from a :class:`LogitMatrix`:

* per class: ``alpha_j = LSE(col anchor) - LSE(col j)``;
* per cluster: every class in cluster ``j`` shares
  ``alpha_j = mean_{i in anchor} LSE(col i) - mean_{k in j} LSE(col k)``.

Adding ``alpha`` to the logits of the matching classes moves each (cluster
average) negative free energy onto the anchor's. Classes are clustered by
training frequency with an exact 1-D natural-breaks dynamic program.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ContractError, ParseError
from .numerics import LogitMatrix, neg_free_energies

PER_CLASS = "per-class"
PER_CLUSTER = "per-cluster"


@dataclass(frozen=True)
class ShiftVector:
    """Additive logit corrections.

    ``anchor`` is a class index in per-class mode and a cluster index in
    per-cluster mode. ``cluster_of`` is kept for per-cluster vectors so the
    anchor's members can be recovered.
    """

    alphas: np.ndarray
    anchor: int
    mode: str = PER_CLASS
    cluster_of: np.ndarray | None = None

    def __post_init__(self):
        alphas = np.array(self.alphas, dtype=np.float64, copy=True).reshape(-1)
        if not np.isfinite(alphas).all():
            raise ContractError("shift scalars must be finite")
        if self.mode not in (PER_CLASS, PER_CLUSTER):
            raise ContractError(f"unknown shift mode {self.mode!r}")
        alphas.setflags(write=False)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "anchor", int(self.anchor))
        if self.cluster_of is not None:
            cl = np.array(self.cluster_of, dtype=np.int64, copy=True).reshape(-1)
            if cl.shape != alphas.shape:
                raise ContractError("cluster_of length does not match alphas")
            cl.setflags(write=False)
            object.__setattr__(self, "cluster_of", cl)

    @property
    def class_count(self) -> int:
        return self.alphas.shape[0]

    @classmethod
    def zeros(cls, class_count: int) -> ShiftVector:
        return cls(np.zeros(class_count), anchor=0, mode=PER_CLASS)

    def to_dict(self) -> dict:
        doc = {"mode": self.mode, "anchor": self.anchor, "alphas": [float(a) for a in self.alphas]}
        if self.cluster_of is not None:
            doc["cluster_of"] = [int(c) for c in self.cluster_of]
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> ShiftVector:
        try:
            return cls(
                np.asarray(doc["alphas"], dtype=np.float64),
                anchor=int(doc["anchor"]),
                mode=doc["mode"],
                cluster_of=doc.get("cluster_of"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed shift document: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> ShiftVector:
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_dict(doc)


@dataclass(frozen=True)
class ClusterAssignment:
    """Map from class to cluster, plus the anchor cluster.

    Clusters produced by :func:`jenks_breaks` are numbered from the most to
    the least frequent group.
    """

    cluster_of: np.ndarray
    anchor_cluster: int = 0

    def __post_init__(self):
        cl = np.array(self.cluster_of, dtype=np.int64, copy=True).reshape(-1)
        if cl.size == 0:
            raise ContractError("cluster assignment over zero classes")
        m = int(cl.max()) + 1
        if cl.min() < 0 or np.bincount(cl, minlength=m).min() == 0:
            raise ContractError("clusters must be labelled 0..M-1 and all non-empty")
        if not 0 <= self.anchor_cluster < m:
            raise ContractError(f"anchor cluster {self.anchor_cluster} out of range [0, {m})")
        cl.setflags(write=False)
        object.__setattr__(self, "cluster_of", cl)
        object.__setattr__(self, "anchor_cluster", int(self.anchor_cluster))

    @property
    def num_clusters(self) -> int:
        return int(self.cluster_of.max()) + 1

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.cluster_of, minlength=self.num_clusters)

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.cluster_of == cluster)

    @classmethod
    def singletons(cls, class_count: int, anchor_class: int = 0) -> ClusterAssignment:
        return cls(np.arange(class_count), anchor_cluster=anchor_class)


def per_class_shifts(logits: LogitMatrix, anchor: int) -> ShiftVector:
    if not 0 <= anchor < logits.class_count:
        raise ContractError(f"anchor class {anchor} out of range [0, {logits.class_count})")
    nfe = neg_free_energies(logits)
    alphas = nfe[anchor] - nfe
    alphas[anchor] = 0.0
    return ShiftVector(alphas, anchor=anchor, mode=PER_CLASS)


def cluster_shifts(logits: LogitMatrix, clusters: ClusterAssignment) -> ShiftVector:
    if clusters.cluster_of.shape[0] != logits.class_count:
        raise ContractError(
            f"cluster assignment covers {clusters.cluster_of.shape[0]} classes, "
            f"logits have {logits.class_count}"
        )
    nfe = neg_free_energies(logits)
    m = clusters.num_clusters
    means = np.bincount(clusters.cluster_of, weights=nfe, minlength=m) / clusters.sizes
    per_cluster = means[clusters.anchor_cluster] - means
    per_cluster[clusters.anchor_cluster] = 0.0
    return ShiftVector(
        per_cluster[clusters.cluster_of],
        anchor=clusters.anchor_cluster,
        mode=PER_CLUSTER,
        cluster_of=clusters.cluster_of,
    )


def apply_shifts(logits, shifts: ShiftVector) -> np.ndarray:
    """Add shift scalars to one logit row or to every row of a batch."""
    arr = np.asarray(logits, dtype=np.float64)
    if arr.shape[-1] != shifts.class_count:
        raise ContractError(
            f"logit width {arr.shape[-1]} does not match {shifts.class_count} shift scalars"
        )
    return arr + shifts.alphas


def _segment_costs(values: np.ndarray, weights: np.ndarray):
    """Prefix sums giving the weighted SSD of any contiguous run in O(1)."""
    w = np.concatenate([[0.0], np.cumsum(weights)])
    s = np.concatenate([[0.0], np.cumsum(weights * values)])
    q = np.concatenate([[0.0], np.cumsum(weights * values * values)])

    def cost(a, b):
        # runs [a, b) with a, b broadcastable index arrays
        n = w[b] - w[a]
        t = s[b] - s[a]
        return np.maximum((q[b] - q[a]) - t * t / n, 0.0)

    return cost


def jenks_breaks(counts, num_clusters: int) -> ClusterAssignment:
    """Cluster classes by training count with exact Fisher-Jenks DP.

    Breaks only fall between distinct count values, so classes with equal
    counts always share a cluster. The anchor is set by :func:`select_anchor`
    (the least frequent cluster); callers may override it.
    """
    counts = np.asarray(counts, dtype=np.float64).reshape(-1)
    if counts.size == 0:
        raise ContractError("no classes to cluster")
    distinct, inverse, mult = np.unique(counts, return_inverse=True, return_counts=True)
    k = distinct.size
    if not 1 <= num_clusters <= k:
        raise ContractError(
            f"cannot form {num_clusters} clusters from {k} distinct count values"
        )
    cost = _segment_costs(distinct, mult.astype(np.float64))

    # best[m, e]: minimal cost of splitting the first e distinct values into m+1 groups
    best = np.full((num_clusters, k + 1), np.inf)
    start = np.zeros((num_clusters, k + 1), dtype=np.int64)
    ends = np.arange(1, k + 1)
    best[0, 1:] = cost(np.zeros_like(ends), ends)
    for m in range(1, num_clusters):
        for e in range(m + 1, k + 1):
            splits = np.arange(m, e)
            cand = best[m - 1, splits] + cost(splits, np.full_like(splits, e))
            j = int(np.argmin(cand))  # first minimum: earliest break on ties
            best[m, e] = cand[j]
            start[m, e] = splits[j]

    group_of_distinct = np.empty(k, dtype=np.int64)
    e = k
    for m in range(num_clusters - 1, -1, -1):
        s = start[m, e] if m > 0 else 0
        group_of_distinct[s:e] = m
        e = s
    # groups were built ascending in count; number clusters from most frequent
    cluster_of = (num_clusters - 1) - group_of_distinct[inverse]
    assignment = ClusterAssignment(cluster_of, anchor_cluster=0)
    return replace(assignment, anchor_cluster=select_anchor(counts, assignment))


def within_cluster_ssd(counts, clusters: ClusterAssignment) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    total = 0.0
    for c in range(clusters.num_clusters):
        v = counts[clusters.members(c)]
        total += float(((v - v.mean()) ** 2).sum())
    return total


def select_anchor(counts, clusters: ClusterAssignment) -> int:
    """Cluster with the smallest mean training count; ties go to the lower index."""
    counts = np.asarray(counts, dtype=np.float64).reshape(-1)
    if counts.shape[0] != clusters.cluster_of.shape[0]:
        raise ContractError("counts and cluster assignment disagree on class count")
    means = np.bincount(clusters.cluster_of, weights=counts) / clusters.sizes
    return int(np.argmin(means))


def _top1(values: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(values, axis=1) == labels))


def select_num_clusters(candidates, logits: LogitMatrix, counts) -> int:
    """Pick the cluster count whose correction scores best on the sampling set.

    ``logits`` must carry the sampling-set labels. Ties go to the smaller M.
    """
    candidates = sorted({int(m) for m in candidates})
    if not candidates:
        raise ContractError("no candidate cluster counts")
    if len(candidates) == 1:
        return candidates[0]
    if logits.labels is None:
        raise ContractError("selecting a cluster count needs a labeled sampling set")
    best_m, best_acc = None, -1.0
    for m in candidates:
        shifts = cluster_shifts(logits, jenks_breaks(counts, m))
        acc = _top1(apply_shifts(logits.values, shifts), logits.labels)
        if acc > best_acc:
            best_m, best_acc = m, acc
    return best_m
