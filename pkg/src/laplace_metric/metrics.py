"""Retrieval and uncertainty metrics on unit-sphere embeddings."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from laplace_metric.vmf import K_MAX

MAP_VARIANT = "ap@k normalized by min(R, k)"
ECE_WEIGHTED = "weighted"
ECE_INVERSE_BIN = "inverse-bin-size"


@dataclass
class RetrievalIndex:
    """Exhaustive nearest-neighbour index over unit vectors."""

    embeddings: np.ndarray
    labels: np.ndarray
    exhaustive: bool = True

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] != self.labels.shape[0]:
            raise ValueError("embeddings and labels disagree in length")
        if not np.allclose(np.linalg.norm(self.embeddings, axis=1), 1.0, atol=1e-6):
            raise ValueError("index entries must be unit vectors")

    def __len__(self) -> int:
        return self.labels.shape[0]

    def sq_distances(self, queries) -> np.ndarray:
        # |q - x|^2 = 2 - 2 q.x on the sphere
        Q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        return np.maximum(2.0 - 2.0 * Q @ self.embeddings.T, 0.0)

    def knn(self, queries, k: int, exclude_self: bool = False) -> np.ndarray:
        """Indices of the k nearest entries per query, ties broken by index.

        With ``exclude_self`` the queries must be the indexed points in order;
        query q never retrieves entry q.
        """
        limit = len(self) - 1 if exclude_self else len(self)
        if not 1 <= k <= limit:
            raise ValueError(f"k={k} outside [1, {limit}]")
        D = self.sq_distances(queries)
        if exclude_self:
            if D.shape[0] != len(self):
                raise ValueError("exclude_self requires queries equal to the index")
            np.fill_diagonal(D, np.inf)
        return np.argsort(D, axis=1, kind="stable")[:, :k]


def _relevance(query_labels, index: RetrievalIndex, k: int, exclude_self: bool, queries):
    nn = index.knn(queries, k, exclude_self)
    q = np.asarray(query_labels)[:, None]
    return index.labels[nn] == q


def recall_at_k(queries, query_labels, index: RetrievalIndex, k: int, exclude_self: bool = False) -> float:
    rel = _relevance(query_labels, index, k, exclude_self, queries)
    return float(rel.any(axis=1).mean())


def average_precision_at_k(queries, query_labels, index: RetrievalIndex, k: int,
                           exclude_self: bool = False) -> np.ndarray:
    """Per-query ``(1/min(R, k)) * sum_{r<=k} precision@r * rel(r)``; R = relevant items in the index."""
    rel = _relevance(query_labels, index, k, exclude_self, queries).astype(np.float64)
    prec = np.cumsum(rel, axis=1) / np.arange(1, k + 1)
    ql = np.asarray(query_labels)
    n_rel = (index.labels[None, :] == ql[:, None]).sum(axis=1) - (1 if exclude_self else 0)
    denom = np.minimum(n_rel, k).astype(np.float64)
    num = (prec * rel).sum(axis=1)
    return np.divide(num, denom, out=np.zeros_like(num), where=denom > 0)


def map_at_k(queries, query_labels, index: RetrievalIndex, k: int, exclude_self: bool = False) -> float:
    return float(average_precision_at_k(queries, query_labels, index, k, exclude_self).mean())


def sparsification_ausc(uncertainty, metric, n_steps: int | None = None) -> tuple[np.ndarray, np.ndarray, float]:
    """Sparsification curve and its normalized area.

    Queries are removed most-uncertain first (ties by index). Grid point
    ``t_s = s / n_steps`` drops ``floor(t_s * n)`` queries and records the mean
    metric of the rest. The area is the trapezoid over the grid divided by
    its span, so a flat curve at 1 scores 1.

    Returns:
        (grid, curve, ausc)
    """
    u = np.asarray(uncertainty, dtype=np.float64)
    m = np.asarray(metric, dtype=np.float64)
    n = u.shape[0]
    if n == 0 or m.shape != u.shape:
        raise ValueError("need matching, non-empty uncertainty and metric arrays")
    n_steps = n if n_steps is None else int(n_steps)
    if not 1 <= n_steps <= n:
        raise ValueError("n_steps must be in [1, n]")
    order = np.argsort(-u, kind="stable")
    tail = np.cumsum(m[order][::-1])[::-1]          # tail[r] = sum of metric after removing r queries
    grid = np.arange(n_steps) / n_steps
    removed = np.floor(grid * n + 1e-9).astype(int)
    curve = tail[removed] / (n - removed)
    if n_steps == 1:
        return grid, curve, float(curve[0])
    area = np.sum((curve[1:] + curve[:-1]) * np.diff(grid)) / 2.0
    return grid, curve, float(area / (grid[-1] - grid[0]))


def ece_retrieval(latents, query_labels, index: RetrievalIndex, bins: int = 15,
                  inverse_bin_weight: bool = False) -> tuple[float, dict]:
    """Calibration of the mode of 1-NN labels across sampled query embeddings.

    Args:
        latents: (n_queries, n_samples, d) unit vectors.
        query_labels: true label per query.
        index: database to classify each sample against.
        bins: equal-width confidence bins on [0, 1]; empty bins are skipped.
        inverse_bin_weight: weight bins by ``1/|B|`` instead of ``|B|/N``.

    Returns:
        (ece, curve) with per-bin ``confidence``, ``accuracy`` and ``count``.
    """
    L = np.asarray(latents, dtype=np.float64)
    if L.ndim != 3:
        raise ValueError("latents must be (n_queries, n_samples, d)")
    nq, ns, d = L.shape
    nn = index.knn(L.reshape(-1, d), 1)[:, 0]
    votes = index.labels[nn].reshape(nq, ns).astype(np.int64)
    n_labels = int(max(votes.max(), np.max(query_labels))) + 1
    counts = np.zeros((nq, n_labels), dtype=np.int64)
    np.add.at(counts, (np.repeat(np.arange(nq), ns), votes.ravel()), 1)
    pred = counts.argmax(axis=1)                       # ties go to the smaller label
    conf = counts[np.arange(nq), pred] / ns
    correct = (pred == np.asarray(query_labels)).astype(np.float64)
    b = np.minimum((conf * bins).astype(int), bins - 1)
    ece = 0.0
    curve = {"confidence": [], "accuracy": [], "count": [], "bin": []}
    for i in range(bins):
        sel = b == i
        cnt = int(sel.sum())
        if cnt == 0:
            continue
        acc, cf = float(correct[sel].mean()), float(conf[sel].mean())
        w = 1.0 / cnt if inverse_bin_weight else cnt / nq
        ece += w * abs(acc - cf)
        curve["bin"].append(i)
        curve["confidence"].append(cf)
        curve["accuracy"].append(acc)
        curve["count"].append(cnt)
    return float(ece), curve


def ood_auroc_auprc(scores, is_ood) -> tuple[float, float]:
    """AUROC (rank statistic, ties averaged) and AUPRC (average precision) with OoD as positive."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(is_ood, dtype=bool)
    n1 = int(y.sum())
    n0 = y.size - n1
    if n1 == 0 or n0 == 0:
        raise ValueError("need both in-distribution and OoD items")
    ranks = rankdata(s)
    auroc = (ranks[y].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0)
    # step-interpolated precision-recall over distinct thresholds, highest first
    order = np.argsort(-s, kind="stable")
    s_sorted, y_sorted = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s_sorted)), s.size - 1]
    tp = np.cumsum(y_sorted)[last]
    precision = tp / (last + 1)
    recall = tp / n1
    auprc = float(np.sum(np.diff(np.r_[0.0, recall]) * precision))
    return float(auroc), auprc


def uncertainty_from_kappa(kappa) -> np.ndarray:
    """``1/kappa`` with kappa clamped to ``[1/K_MAX, K_MAX]``; ranks like ``-kappa``."""
    return 1.0 / np.clip(np.asarray(kappa, dtype=np.float64), 1.0 / K_MAX, K_MAX)


@dataclass
class MetricsReport:
    recall: dict = field(default_factory=dict)
    map: dict = field(default_factory=dict)
    ausc: float | None = None
    ausc_shuffled: float | None = None
    ece: float | None = None
    auroc: float | None = None
    auprc: float | None = None
    counts: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)
