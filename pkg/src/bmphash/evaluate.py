"""Hamming ranking and retrieval metrics (mAP, mAP@K, NDCG@K)."""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import UndefinedMetricError

AP_NORMS = ("min", "retrieved")
GAINS = ("linear", "exp")


@dataclass
class RankingTask:
    """Query and database codes with per-pair relevance.

    ``relevance[q, j]`` is the relevance level of database item ``j`` for
    query ``q`` (0/1 for mAP, non-negative integers for NDCG). ``alpha``
    holds optional bit weights; ``None`` means ordinary Hamming distance.
    """

    query_codes: np.ndarray
    db_codes: np.ndarray
    relevance: np.ndarray
    alpha: np.ndarray | None = None
    cutoff: int | None = None

    def __post_init__(self):
        self.query_codes = np.atleast_2d(np.asarray(self.query_codes))
        self.db_codes = np.atleast_2d(np.asarray(self.db_codes))
        self.relevance = np.atleast_2d(np.asarray(self.relevance, dtype=np.float64))
        if self.query_codes.shape[1] != self.db_codes.shape[1]:
            raise ValueError("query and database code widths differ")
        if self.relevance.shape != (self.query_codes.shape[0], self.db_codes.shape[0]):
            raise ValueError("relevance must be (n_queries, n_db)")
        if not np.all(np.isfinite(self.relevance)) or np.any(self.relevance < 0):
            raise ValueError("relevance levels must be finite and non-negative")
        if self.alpha is not None:
            self.alpha = np.asarray(self.alpha, dtype=np.float64).ravel()
            if self.alpha.size != self.query_codes.shape[1]:
                raise ValueError("alpha length differs from code width")
        if self.cutoff is not None and self.cutoff < 1:
            raise ValueError("cutoff must be >= 1")

    @property
    def n_queries(self):
        return self.query_codes.shape[0]

    def distances(self):
        return hamming_distances(self.query_codes, self.db_codes, self.alpha)


@dataclass
class MetricResult:
    metric: str
    value: float
    cutoff: int | None
    n_queries: int
    n_skipped: int
    per_query: np.ndarray


def hamming_distances(query_codes, db_codes, alpha=None):
    """``sum_k alpha_k [q_k != d_k]`` for every query/database pair."""
    q = np.atleast_2d(query_codes)
    d = np.atleast_2d(db_codes)
    w = np.ones(q.shape[1]) if alpha is None else np.asarray(alpha, dtype=np.float64)
    out = np.empty((q.shape[0], d.shape[0]))
    step = max(1, 2**22 // max(1, d.size))
    for s in range(0, q.shape[0], step):
        mismatch = (q[s:s + step, None, :] != d[None, :, :]).astype(np.float64)
        out[s:s + step] = mismatch @ w
    return out


def _order(dist_row):
    # stable sort: equal distances keep ascending database index
    return np.argsort(dist_row, kind="stable")


def rank(task, query_index):
    """Database indices by ascending weighted Hamming distance to one query."""
    q = task.query_codes[query_index][None, :]
    return _order(hamming_distances(q, task.db_codes, task.alpha)[0])


def average_precision(rel_sorted, cutoff=None, norm="min"):
    """AP of one ranked binary relevance list, or ``None`` if nothing is relevant.

    ``norm="min"`` divides by ``min(K, #relevant)``; ``"retrieved"`` divides
    by the number of relevant items inside the top K.
    """
    rel = np.asarray(rel_sorted) > 0
    total = int(rel.sum())
    if total == 0:
        return None
    k = rel.size if cutoff is None else min(cutoff, rel.size)
    top = rel[:k]
    hits = np.cumsum(top)
    prec_sum = float(np.sum((hits / np.arange(1, k + 1))[top]))
    if norm == "min":
        denom = min(k, total) if cutoff is not None else total
    elif norm == "retrieved":
        denom = int(top.sum())
        if denom == 0:
            return 0.0
    else:
        raise ValueError(f"norm must be one of {AP_NORMS}")
    return prec_sum / denom


def mean_average_precision(task, norm="min"):
    """mAP (or mAP@K when ``task.cutoff`` is set) over queries with a relevant item.

    Queries without any relevant database item are skipped and counted.
    """
    dist = task.distances()
    scores = []
    skipped = 0
    for qi in range(task.n_queries):
        ap = average_precision(task.relevance[qi, _order(dist[qi])], task.cutoff, norm)
        if ap is None:
            skipped += 1
        else:
            scores.append(ap)
    if not scores:
        raise UndefinedMetricError("mAP undefined: no query has a relevant item")
    scores = np.array(scores)
    return MetricResult("map", float(scores.mean()), task.cutoff, task.n_queries,
                        skipped, scores)


def dcg(rel_sorted, cutoff=None, gain="linear"):
    rel = np.asarray(rel_sorted, dtype=np.float64)
    if cutoff is not None:
        rel = rel[:cutoff]
    if gain == "exp":
        rel = np.power(2.0, rel) - 1.0
    elif gain != "linear":
        raise ValueError(f"gain must be one of {GAINS}")
    return float(np.sum(rel / np.log2(np.arange(2, rel.size + 2))))


def ndcg(task, gain="linear"):
    """Mean NDCG@K; queries whose ideal DCG is zero are skipped and counted."""
    dist = task.distances()
    scores = []
    skipped = 0
    for qi in range(task.n_queries):
        rel = task.relevance[qi]
        ideal = dcg(np.sort(rel)[::-1], task.cutoff, gain)
        if ideal == 0.0:
            skipped += 1
            continue
        scores.append(dcg(rel[_order(dist[qi])], task.cutoff, gain) / ideal)
    if not scores:
        raise UndefinedMetricError("NDCG undefined: every query has zero ideal DCG")
    scores = np.array(scores)
    return MetricResult("ndcg", float(scores.mean()), task.cutoff, task.n_queries,
                        skipped, scores)


def class_relevance(query_labels, db_labels):
    """Binary relevance: 1 where query and database item share a class id."""
    q = np.asarray(query_labels)
    d = np.asarray(db_labels)
    return (q[:, None] == d[None, :]).astype(np.float64)


def shared_label_counts(query_sets, db_sets):
    """Number of common labels for every query/database pair."""
    universe = sorted(set().union(*query_sets, *db_sets))
    col = {v: j for j, v in enumerate(universe)}

    def onehot(sets):
        m = np.zeros((len(sets), len(universe)))
        for i, s in enumerate(sets):
            m[i, [col[v] for v in s]] = 1.0
        return m

    return onehot(query_sets) @ onehot(db_sets).T


def write_metrics(results, path):
    """CSV with columns metric, cutoff, value, n_queries, n_skipped."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "cutoff", "value", "n_queries", "n_skipped"])
        for r in results:
            w.writerow([r.metric, "" if r.cutoff is None else r.cutoff,
                        f"{r.value:.10f}", r.n_queries, r.n_skipped])
