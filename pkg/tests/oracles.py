"""Independent reference implementations used by the tests.

None of these import the package under test.
"""

from __future__ import annotations

import itertools

import mpmath
import numpy as np

mpmath.mp.dps = 50


def lse(values) -> float:
    """Naive log(sum(exp(v))) in 50-digit arithmetic."""
    return float(mpmath.log(mpmath.fsum(mpmath.exp(mpmath.mpf(float(v))) for v in np.ravel(values))))


def column_lse(matrix) -> np.ndarray:
    m = np.asarray(matrix, dtype=np.float64)
    return np.array([lse(m[:, j]) for j in range(m.shape[1])])


def per_class_alphas(matrix, anchor: int) -> np.ndarray:
    e = column_lse(matrix)
    return e[anchor] - e


def cluster_alphas(matrix, cluster_of, anchor_cluster: int) -> np.ndarray:
    e = column_lse(matrix)
    cluster_of = np.asarray(cluster_of)
    mean = {c: float(np.mean(e[cluster_of == c])) for c in np.unique(cluster_of)}
    return np.array([mean[anchor_cluster] - mean[c] for c in cluster_of])


def ssd(values) -> float:
    v = np.asarray(values, dtype=np.float64)
    return float(((v - v.mean()) ** 2).sum())


def brute_force_partition(counts, m: int):
    """Every way to cut the sorted counts into ``m`` contiguous non-empty runs.

    Returns (best cost, list of optimal cluster labelings) where clusters are
    numbered from the largest counts (0) to the smallest.
    """
    counts = np.asarray(counts, dtype=np.float64)
    order = np.argsort(-counts, kind="stable")
    ranked = counts[order]
    n = ranked.size
    results = []
    for cuts in itertools.combinations(range(1, n), m - 1):
        bounds = (0, *cuts, n)
        cost = sum(ssd(ranked[a:b]) for a, b in zip(bounds, bounds[1:]))
        labels = np.empty(n, dtype=np.int64)
        for k, (a, b) in enumerate(zip(bounds, bounds[1:])):
            labels[order[a:b]] = k
        results.append((cost, labels))
    best = min(c for c, _ in results)
    tol = 1e-9 * max(1.0, best)
    return best, [lab for c, lab in results if c <= best + tol]


def central_difference(f, params, eps: float = 1e-5):
    """Numerical gradient of scalar ``f()`` w.r.t. each array in ``params`` (mutated in place)."""
    out = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + eps
            hi = f()
            p[i] = old - eps
            lo = f()
            p[i] = old
            g[i] = (hi - lo) / (2 * eps)
        out.append(g)
    return out


def rel_error(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def spearman_distinct(a, b) -> float:
    """Textbook rank formula, valid when neither side has ties."""
    ra = np.argsort(np.argsort(a))
    rb = np.argsort(np.argsort(b))
    n = len(a)
    d = ra - rb
    return 1.0 - 6.0 * float((d * d).sum()) / (n * (n * n - 1))
