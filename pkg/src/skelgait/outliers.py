"""Outlier removal for per-frame feature records.

Two procedures are provided.  Scalar (length-based) records first pass a
global upper threshold read off the histogram of their most dispersed
column and then per-column Tukey fences.  Vector-based records are compared
slot by slot with their marginal median through cosine similarity, and
Tukey fences are applied to each slot's similarities.  In both cases a
record survives only if no column or slot flags it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateVectorError, InvalidInputError
from .jointseq import tukey_mask


@dataclass
class RemovalReport:
    kept_mask: np.ndarray
    t_upper: float = math.nan
    zero_vector_records: int = 0

    @property
    def removed_count(self) -> int:
        return int(np.count_nonzero(~self.kept_mask))

    @property
    def removal_fraction(self) -> float:
        n = self.kept_mask.size
        return self.removed_count / n if n else 0.0

    def combine(self, other: "RemovalReport") -> "RemovalReport":
        """Conjunction of two reports over the same records."""
        t = other.t_upper if math.isnan(self.t_upper) else self.t_upper
        return RemovalReport(self.kept_mask & other.kept_mask, t,
                             self.zero_vector_records + other.zero_vector_records)

    def to_dict(self):
        return {
            "records": int(self.kept_mask.size),
            "removed_count": self.removed_count,
            "removal_fraction": self.removal_fraction,
            "t_upper": None if math.isnan(self.t_upper) else self.t_upper,
            "zero_vector_records": self.zero_vector_records,
        }


def compute_upper_threshold(features, alpha=0.1, bins=50):
    """Upper cut-off for length features from the histogram tail.

    The column with the largest standard deviation is histogrammed over its
    range.  Among the bins above the modal bin whose count is at most
    ``alpha`` times the modal count, the largest upper edge is returned;
    ``inf`` when no bin qualifies.
    """
    x = np.asarray(features, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InvalidInputError("at least two records are required")
    column = x[:, int(np.argmax(np.std(x, axis=0)))]
    if column.min() == column.max():
        return math.inf
    counts, edges = np.histogram(column, bins=bins)
    mode = int(np.argmax(counts))
    tail = np.flatnonzero((counts <= alpha * counts[mode]) & (edges[:-1] >= edges[mode + 1]))
    if tail.size == 0:
        return math.inf
    return float(edges[tail.max() + 1])


def threshold_filter(features, t_upper):
    """Keep records whose every entry is at most ``t_upper``."""
    x = np.asarray(features, dtype=float)
    return RemovalReport(np.all(x <= t_upper, axis=1), float(t_upper))


def tukey_scalar_removal(features, k=1.5, method="linear"):
    """Drop records that fall outside the Tukey fences of any column."""
    x = np.asarray(features, dtype=float)
    if x.ndim != 2 or x.shape[0] < 4:
        raise InvalidInputError("Tukey removal needs at least 4 records")
    flagged = np.zeros(x.shape[0], dtype=bool)
    for c in range(x.shape[1]):
        flagged |= tukey_mask(x[:, c], k, method)
    return RemovalReport(~flagged)


def length_outlier_removal(features, alpha=0.1, bins=50, k=1.5, method="linear"):
    """Histogram threshold followed by per-column Tukey on the survivors."""
    x = np.asarray(features, dtype=float)
    t_upper = compute_upper_threshold(x, alpha, bins)
    first = threshold_filter(x, t_upper)
    kept = first.kept_mask.copy()
    survivors = np.flatnonzero(kept)
    if survivors.size >= 4:
        second = tukey_scalar_removal(x[survivors], k, method)
        kept[survivors] = second.kept_mask
    return RemovalReport(kept, t_upper)


def marginal_median(records):
    """Componentwise median of ``(N, 12, 3)`` vector records."""
    r = np.asarray(records, dtype=float)
    if r.shape[0] == 0:
        raise InvalidInputError("marginal median of no records")
    return np.median(r, axis=0)


def cosine_similarity(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DegenerateVectorError("cosine similarity of a zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def similarity_matrix(records, median=None):
    """Slot-by-record cosine similarities with the marginal median, ``(Q, N)``."""
    r = np.asarray(records, dtype=float)
    if median is None:
        median = marginal_median(r)
    norms = np.linalg.norm(r, axis=2)
    mnorm = np.linalg.norm(median, axis=1)
    if np.any(norms == 0) or np.any(mnorm == 0):
        raise DegenerateVectorError("zero vector in similarity computation")
    s = np.einsum("nqk,qk->qn", r, median) / (norms.T * mnorm[:, None])
    return np.clip(s, -1.0, 1.0)


def as_vector_records(records):
    r = np.asarray(records, dtype=float)
    if r.ndim == 2:
        r = r.reshape(r.shape[0], -1, 3)
    if r.ndim != 3 or r.shape[2] != 3:
        raise InvalidInputError(f"expected (N, Q, 3) vector records, got {r.shape}")
    return r


def tukey_vector_removal(records, k=1.5, method="linear"):
    """Marginal-median cosine test for 3-D vector feature records.

    Records containing a zero vector are removed before the median is taken.
    ``records`` may be ``(N, 12, 3)`` or flattened ``(N, 36)``.
    """
    r = as_vector_records(records)
    if r.shape[0] < 4:
        raise InvalidInputError("vector Tukey removal needs at least 4 records")
    nonzero = np.all(np.linalg.norm(r, axis=2) > 0, axis=1)
    kept = np.zeros(r.shape[0], dtype=bool)
    live = np.flatnonzero(nonzero)
    if live.size:
        s = similarity_matrix(r[live])
        flagged = np.zeros(live.size, dtype=bool)
        for row in s:
            flagged |= tukey_mask(row, k, method)
        kept[live] = ~flagged
    return RemovalReport(kept, zero_vector_records=int(r.shape[0] - live.size))


def remove_outliers(records, kind, alpha=0.1, bins=50, k=1.5, method="linear"):
    """Dispatch to the procedure that matches the feature kind."""
    if kind == "length":
        return length_outlier_removal(records, alpha, bins, k, method)
    if kind == "vector":
        return tukey_vector_removal(records, k, method)
    raise InvalidInputError(f"unknown feature kind {kind!r}")
