"""RBF-kernel SVM trained by SMO, the pattern-disjoint split and metrics.

Each class pair gets its own binary machine.  The binary dual

    min  0.5 a^T Q a - e^T a,   0 <= a <= C,   y^T a = 0,   Q_ij = y_i y_j K_ij

is solved by SMO with second-order working-set selection.  Prediction is
a one-vs-one vote.
"""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (ConfigurationError, ConvergenceWarning, InvalidDatasetError,
                     InvalidInputError)

log = logging.getLogger(__name__)

MODEL_FORMAT = "skelgait-svm"
MODEL_VERSION = 1
_TAU = 1e-12


def rbf_kernel(a, b, gamma):
    """``exp(-gamma * |a - b|^2)`` for two vectors."""
    if not gamma > 0:
        raise ConfigurationError("gamma must be > 0")
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return float(np.exp(-gamma * np.dot(d, d)))


def rbf_gram(A, B, gamma):
    """Kernel matrix between the rows of ``A`` and ``B``."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    sq = (np.einsum("ij,ij->i", A, A)[:, None] + np.einsum("ij,ij->i", B, B)[None, :]
          - 2.0 * A @ B.T)
    return np.exp(-gamma * np.maximum(sq, 0.0))


@dataclass
class BinarySolution:
    alpha: np.ndarray
    rho: float
    iterations: int
    converged: bool
    objective: float


def smo_binary(K, y, C, tol=1e-3, max_iter=100000):
    """Solve one binary dual given its kernel matrix and +-1 labels.

    Returns the dual variables and ``rho``; the decision function is
    ``sum_i alpha_i y_i K(x_i, x) - rho``.  Stops when the maximal KKT
    violation ``m(a) - M(a)`` drops below ``tol``.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    Q = K * np.outer(y, y)
    diag = np.diag(Q).copy()
    alpha = np.zeros(n)
    grad = -np.ones(n)
    converged = False
    it = 0
    while it < max_iter:
        at_upper = alpha >= C
        at_lower = alpha <= 0
        up = np.where(y > 0, ~at_upper, ~at_lower)
        low = np.where(y > 0, ~at_lower, ~at_upper)
        score = -y * grad
        if not up.any() or not low.any():
            converged = True
            break
        i = int(np.flatnonzero(up)[np.argmax(score[up])])
        m_val = score[i]
        M_val = score[low].min()
        if m_val - M_val < tol:
            converged = True
            break
        # second-order choice of j among violating low indices
        cand = low & (score < m_val)
        b = m_val - score[cand]
        a = diag[i] + diag[cand] - 2.0 * y[i] * y[cand] * Q[i, cand]
        a = np.where(a > 0, a, _TAU)
        j = int(np.flatnonzero(cand)[np.argmin(-(b * b) / a)])
        _update_pair(i, j, alpha, grad, Q, y, diag, C)
        it += 1
    rho = _rho(alpha, grad, y, C)
    objective = 0.5 * float(alpha @ (grad + 1.0)) - float(alpha.sum())
    return BinarySolution(alpha, rho, it, converged, objective)


def _update_pair(i, j, alpha, grad, Q, y, diag, C):
    """Analytic two-variable step, clipped to the box (libsvm form)."""
    old_i, old_j = alpha[i], alpha[j]
    qij = Q[i, j]
    if y[i] != y[j]:
        quad = diag[i] + diag[j] + 2.0 * qij
        quad = quad if quad > 0 else _TAU
        delta = (-grad[i] - grad[j]) / quad
        diff = old_i - old_j
        ai, aj = old_i + delta, old_j + delta
        if diff > 0:
            if aj < 0:
                aj, ai = 0.0, diff
        elif ai < 0:
            ai, aj = 0.0, -diff
        if diff > 0:
            if ai > C:
                ai, aj = C, C - diff
        elif aj > C:
            aj, ai = C, C + diff
    else:
        quad = diag[i] + diag[j] - 2.0 * qij
        quad = quad if quad > 0 else _TAU
        delta = (grad[i] - grad[j]) / quad
        total = old_i + old_j
        ai, aj = old_i - delta, old_j + delta
        if total > C:
            if ai > C:
                ai, aj = C, total - C
        elif aj < 0:
            aj, ai = 0.0, total
        if total > C:
            if aj > C:
                aj, ai = C, total - C
        elif ai < 0:
            ai, aj = 0.0, total
    alpha[i], alpha[j] = ai, aj
    grad += Q[:, i] * (ai - old_i) + Q[:, j] * (aj - old_j)


def _rho(alpha, grad, y, C):
    yg = y * grad
    free = (alpha > 0) & (alpha < C)
    if free.any():
        return float(yg[free].mean())
    at_upper = alpha >= C
    at_lower = alpha <= 0
    # bounds from the KKT conditions when no variable is free
    ub_mask = (at_upper & (y < 0)) | (at_lower & (y > 0))
    lb_mask = (at_upper & (y > 0)) | (at_lower & (y < 0))
    ub = yg[ub_mask].min() if ub_mask.any() else math.inf
    lb = yg[lb_mask].max() if lb_mask.any() else -math.inf
    if math.isinf(ub) or math.isinf(lb):
        return float(ub if math.isfinite(ub) else lb if math.isfinite(lb) else 0.0)
    return float((ub + lb) / 2)


def dual_objective(alpha, K, y):
    """``0.5 a^T Q a - sum(a)`` for checking a solution."""
    ay = np.asarray(alpha) * np.asarray(y, dtype=float)
    return float(0.5 * ay @ K @ ay - np.sum(alpha))


@dataclass
class PairMachine:
    positive: object        # class voted for when the decision is > 0
    negative: object
    sv_index: np.ndarray    # rows of SvmModel.support_vectors
    coef: np.ndarray        # alpha_i * y_i
    rho: float


@dataclass
class SvmModel:
    classes: list
    gamma: float
    C: float
    mean: np.ndarray
    scale: np.ndarray
    support_vectors: np.ndarray
    pairs: list = field(default_factory=list)
    converged: bool = True

    @property
    def n_features(self):
        return self.mean.size

    def standardize(self, X):
        return (np.asarray(X, dtype=float) - self.mean) / self.scale

    def decision_values(self, X):
        """Pairwise decision values, shape ``(N, n_pairs)``."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise InvalidInputError(
                f"expected {self.n_features} features, got shape {X.shape}")
        K = rbf_gram(self.standardize(X), self.support_vectors, self.gamma)
        out = np.empty((X.shape[0], len(self.pairs)))
        for p, pm in enumerate(self.pairs):
            out[:, p] = K[:, pm.sv_index] @ pm.coef - pm.rho
        return out

    def to_dict(self):
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "classes": [_jsonable(c) for c in self.classes],
            "gamma": self.gamma,
            "C": self.C,
            "converged": self.converged,
            "standardization": {"mean": self.mean.tolist(), "scale": self.scale.tolist()},
            "support_vectors": self.support_vectors.tolist(),
            "pairs": [{
                "positive": _jsonable(pm.positive),
                "negative": _jsonable(pm.negative),
                "sv_index": pm.sv_index.tolist(),
                "coef": pm.coef.tolist(),
                "rho": pm.rho,
            } for pm in self.pairs],
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != MODEL_FORMAT:
            raise InvalidInputError("not an SVM model file")
        if d.get("version") != MODEL_VERSION:
            raise InvalidInputError(f"unsupported model version {d.get('version')}")
        std = d["standardization"]
        n = len(std["mean"])
        svs = np.asarray(d["support_vectors"], dtype=float).reshape(-1, n)
        pairs = [PairMachine(p["positive"], p["negative"],
                             np.asarray(p["sv_index"], dtype=int),
                             np.asarray(p["coef"], dtype=float), float(p["rho"]))
                 for p in d["pairs"]]
        return cls(list(d["classes"]), float(d["gamma"]), float(d["C"]),
                   np.asarray(std["mean"], dtype=float), np.asarray(std["scale"], dtype=float),
                   svs, pairs, bool(d.get("converged", True)))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _jsonable(v):
    return v.item() if isinstance(v, np.generic) else v


def train_svm(X, y, C=10.0, gamma=None, tol=1e-3, max_passes=100, seed=0):
    """One-vs-one RBF SVM.

    Parameters
    ----------
    X : ndarray, shape (N, D)
    y : array_like, shape (N,)
    C : float
        Box constraint.
    gamma : float, optional
        Kernel width on standardized features; defaults to ``1 / D``.
    tol : float
        KKT violation at which SMO stops.
    max_passes : int
        Iteration cap per pair, in multiples of the pair's record count.
        Hitting it emits :class:`ConvergenceWarning` and keeps the current
        solution.
    seed : int
        Seeds the record order handed to each pair.

    Returns
    -------
    SvmModel
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise InvalidInputError("X must be (N, D) with one label per row")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("features must be finite")
    if not C > 0:
        raise ConfigurationError("C must be > 0")
    classes, counts = np.unique(y, return_counts=True)
    if classes.size < 2:
        raise InvalidDatasetError("at least two classes are required")
    if np.any(counts < 2):
        bad = classes[counts < 2].tolist()
        raise InvalidDatasetError(f"classes with fewer than 2 records: {bad}")
    gamma = 1.0 / X.shape[1] if gamma is None else float(gamma)
    if not gamma > 0:
        raise ConfigurationError("gamma must be > 0")

    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    Z = (X - mean) / scale
    rng = np.random.default_rng(seed)

    sv_rows = {}
    pairs = []
    all_converged = True
    for a in range(classes.size):
        for b in range(a + 1, classes.size):
            idx = np.flatnonzero((y == classes[a]) | (y == classes[b]))
            idx = idx[rng.permutation(idx.size)]
            yy = np.where(y[idx] == classes[a], 1.0, -1.0)
            K = rbf_gram(Z[idx], Z[idx], gamma)
            sol = smo_binary(K, yy, C, tol, max_iter=max_passes * idx.size)
            if not sol.converged:
                all_converged = False
                warnings.warn(f"SMO for classes ({classes[a]}, {classes[b]}) stopped after "
                              f"{sol.iterations} iterations", ConvergenceWarning, stacklevel=2)
            keep = sol.alpha > 0
            rows = idx[keep]
            order = np.argsort(rows, kind="stable")
            sv_local = []
            for r in rows[order]:
                sv_local.append(sv_rows.setdefault(int(r), len(sv_rows)))
            coef = (sol.alpha * yy)[keep][order]
            pairs.append(PairMachine(_jsonable(classes[a]), _jsonable(classes[b]),
                                     np.asarray(sv_local, dtype=int), coef, sol.rho))
            log.debug("pair (%s, %s): %d SVs, %d iterations", classes[a], classes[b],
                      keep.sum(), sol.iterations)
    pool = np.empty((len(sv_rows), X.shape[1]))
    for r, k in sv_rows.items():
        pool[k] = Z[r]
    return SvmModel([_jsonable(c) for c in classes], gamma, float(C), mean, scale,
                    pool, pairs, all_converged)


def predict(model: SvmModel, X):
    """One-vs-one vote; ties go to the larger summed decision value, then
    the class listed first."""
    dv = model.decision_values(X)
    n_cls = len(model.classes)
    pos = {c: k for k, c in enumerate(model.classes)}
    votes = np.zeros((dv.shape[0], n_cls))
    margin = np.zeros((dv.shape[0], n_cls))
    for p, pm in enumerate(model.pairs):
        a, b = pos[pm.positive], pos[pm.negative]
        win = dv[:, p] > 0
        votes[win, a] += 1
        votes[~win, b] += 1
        margin[:, a] += dv[:, p]
        margin[:, b] -= dv[:, p]
    # lexicographic (votes, margin) maximum; argmax keeps the first class on ties
    best = np.empty(dv.shape[0], dtype=int)
    for r in range(dv.shape[0]):
        top = np.flatnonzero(votes[r] == votes[r].max())
        best[r] = top[np.argmax(margin[r, top])]
    return np.asarray(model.classes)[best]


# -- data split ------------------------------------------------------------

@dataclass
class Dataset:
    """Feature records with their class, walking pattern and sequence id."""

    X: np.ndarray
    y: np.ndarray
    pattern: np.ndarray
    sequence: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y)
        self.pattern = np.asarray(self.pattern)
        self.sequence = np.asarray(self.sequence)
        n = self.X.shape[0]
        if not (self.y.shape[0] == self.pattern.shape[0] == self.sequence.shape[0] == n):
            raise InvalidInputError("dataset fields disagree on record count")

    def __len__(self):
        return self.X.shape[0]

    def subset(self, mask):
        return Dataset(self.X[mask], self.y[mask], self.pattern[mask], self.sequence[mask])


def split_by_pattern(sequences, train_fraction=0.75, seed=0):
    """Sequence-level train/test split with held-out walking patterns.

    Parameters
    ----------
    sequences : list of (sequence_id, subject, pattern)
    train_fraction : float
    seed : int

    Returns
    -------
    (train_ids, test_ids) : tuple of sorted lists

    Subjects are visited in a seeded order; each visited subject contributes
    all its sequences of one randomly chosen pattern to the test side while
    that keeps the test count at most ``N - round(train_fraction * N)``.
    A subject never has its training and test patterns overlap.
    """
    if not 0 < train_fraction < 1:
        raise ConfigurationError("train_fraction must lie in (0, 1)")
    by_subject = {}
    for sid, subject, pattern in sequences:
        by_subject.setdefault(subject, {}).setdefault(pattern, []).append(sid)
    for subject, pats in by_subject.items():
        if len(pats) < 2:
            raise ConfigurationError(
                f"subject {subject} has a single walking pattern; no disjoint split exists")
    n = len(sequences)
    target = n - int(round(train_fraction * n))
    rng = np.random.default_rng(seed)
    subjects = sorted(by_subject)
    test = []
    for k in rng.permutation(len(subjects)):
        if len(test) >= target:
            break
        pats = by_subject[subjects[k]]
        names = sorted(pats)
        group = pats[names[int(rng.integers(len(names)))]]
        if len(test) + len(group) <= target:
            test.extend(group)
    test_set = set(test)
    train = sorted(s for s, _, _ in sequences if s not in test_set)
    return train, sorted(test_set)


# -- metrics ---------------------------------------------------------------

@dataclass
class EvalReport:
    accuracy: float
    macro_f: float
    classes: list
    per_class_accuracy: dict
    per_class_f: dict
    excluded_classes: list

    def to_dict(self):
        return {
            "accuracy": self.accuracy,
            "macro_f": self.macro_f,
            "per_class_accuracy": {str(k): v for k, v in self.per_class_accuracy.items()},
            "per_class_f": {str(k): v for k, v in self.per_class_f.items()},
            "excluded_classes": [str(c) for c in self.excluded_classes],
        }


def evaluate(pred, truth):
    """Accuracy, per-class recall and F-score, and macro F.

    Classes are those present in ``truth``; predicted classes that never
    occur in ``truth`` are listed in ``excluded_classes``.
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise InvalidInputError("pred and truth differ in length")
    if truth.size == 0:
        raise InvalidInputError("nothing to evaluate")
    classes = [_jsonable(c) for c in np.unique(truth)]
    excluded = [_jsonable(c) for c in np.unique(pred) if c not in set(classes)]
    acc, fs = {}, {}
    for c in classes:
        tp = int(np.count_nonzero((pred == c) & (truth == c)))
        n_true = int(np.count_nonzero(truth == c))
        n_pred = int(np.count_nonzero(pred == c))
        recall = tp / n_true
        precision = tp / n_pred if n_pred else 0.0
        acc[c] = recall
        fs[c] = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return EvalReport(float(np.mean(pred == truth)), float(np.mean(list(fs.values()))),
                      classes, acc, fs, excluded)
