"""Joint-coordinate time series and their three-stage correction filter.

A sequence of ``F`` skeletons becomes a ``39 x F`` matrix whose rows are the
x, y and z trajectories of the 13 joints (joint-major).  Each row is
corrected independently:

1. Tukey fences over the whole row flag outlying samples;
2. every flagged sample takes the value of its nearest non-outlier sample;
3. missing samples are filled with a monotone piecewise cubic Hermite
   interpolant;
4. a robust locally weighted linear smoother removes the remaining small
   spikes.

Missing samples are NaN throughout.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from .errors import ConfigurationError, InvalidInputError, UnfixableRowError

logger = logging.getLogger(__name__)

N_JOINTS = 13
N_ROWS = 3 * N_JOINTS
AXES = ("x", "y", "z")

QUANTILE_METHODS = (
    "linear", "lower", "higher", "midpoint", "nearest",
    "hazen", "weibull", "median_unbiased", "normal_unbiased",
)


@dataclass
class JointMatrix:
    """``39 x F`` joint trajectories, NaN where a joint is missing."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[0] != N_ROWS:
            raise InvalidInputError(f"joint matrix must have {N_ROWS} rows, got {self.values.shape}")

    @property
    def frame_count(self) -> int:
        return self.values.shape[1]

    @staticmethod
    def row_label(row):
        return row // 3, AXES[row % 3]

    @staticmethod
    def row_index(joint, axis):
        return 3 * int(joint) + AXES.index(axis)

    def missing_rows(self):
        return [r for r in range(N_ROWS) if np.all(np.isnan(self.values[r]))]

    def to_frames(self):
        """Back to an ``(F, 13, 3)`` array."""
        return self.values.T.reshape(self.frame_count, N_JOINTS, 3).copy()

    def copy(self):
        return JointMatrix(self.values.copy())


def build_joint_matrix(frames):
    """Stack skeletons into a :class:`JointMatrix`.

    ``frames`` is an ``(F, 13, 3)`` array or a sequence whose items are
    ``(13, 3)`` arrays or ``None`` for frames without a skeleton.  A joint
    with any non-finite axis is treated as missing on all three axes.
    """
    if frames is None or len(frames) == 0:
        raise InvalidInputError("at least one frame is required")
    stacked = np.full((len(frames), N_JOINTS, 3), np.nan)
    for t, frame in enumerate(frames):
        if frame is None:
            continue
        frame = np.asarray(frame, dtype=float)
        if frame.shape != (N_JOINTS, 3):
            raise InvalidInputError(f"frame {t} has shape {frame.shape}, expected (13, 3)")
        stacked[t] = frame
    bad = ~np.all(np.isfinite(stacked), axis=2)
    stacked[bad] = np.nan
    return JointMatrix(stacked.reshape(len(frames), N_ROWS).T.copy())


# -- robust statistics ------------------------------------------------------

def quartiles(samples, method="linear"):
    """Lower quartile, median and upper quartile of ``samples``.

    With the default ``"linear"`` method the ``p`` quantile of the sorted
    sample ``s_0..s_{n-1}`` is read at fractional rank ``p * (n - 1)``.
    """
    s = np.asarray(samples, dtype=float).ravel()
    if s.size == 0:
        raise InvalidInputError("quartiles of an empty sample")
    if not np.all(np.isfinite(s)):
        raise InvalidInputError("quartiles require finite samples")
    if method not in QUANTILE_METHODS:
        raise ConfigurationError(f"unknown quantile method {method!r}")
    q1, q2, q3 = np.quantile(s, [0.25, 0.5, 0.75], method=method)
    return float(q1), float(q2), float(q3)


def tukey_fences(samples, k=1.5, method="linear"):
    q1, _, q3 = quartiles(samples, method)
    iqr = q3 - q1
    return q1 - k * iqr, q3 + k * iqr


def tukey_mask(values, k=1.5, method="linear"):
    """Boolean mask of values strictly outside the Tukey fences.

    NaN entries are ignored when computing the quartiles and never flagged.
    """
    values = np.asarray(values, dtype=float)
    present = ~np.isnan(values)
    mask = np.zeros(values.shape, dtype=bool)
    if not present.any():
        return mask
    low, high = tukey_fences(values[present], k, method)
    mask[present] = (values[present] < low) | (values[present] > high)
    return mask


def tukey_outliers(row, k=1.5, method="linear", min_present=4):
    """Indices of a row's outlying samples, in increasing order.

    Rows with fewer than ``min_present`` present samples yield no outliers.
    """
    if k <= 0:
        raise ConfigurationError("tukey_k must be > 0")
    row = np.asarray(row, dtype=float)
    if np.count_nonzero(~np.isnan(row)) < min_present:
        return np.empty(0, dtype=int)
    return np.flatnonzero(tukey_mask(row, k, method))


def replace_with_nearest_nonoutlier(row, outliers, rng=None):
    """Overwrite each outlier with its temporally nearest clean sample.

    Candidates are present samples that are not themselves outliers.  When
    two candidates are equally near, one is drawn with ``rng``.
    """
    row = np.array(row, dtype=float)
    outliers = np.asarray(outliers, dtype=int)
    if outliers.size == 0:
        return row
    if rng is None:
        rng = np.random.default_rng(0)
    clean = ~np.isnan(row)
    clean[outliers] = False
    candidates = np.flatnonzero(clean)
    if candidates.size == 0:
        raise UnfixableRowError("no present non-outlier sample to copy from")
    source = row.copy()
    pos = np.searchsorted(candidates, outliers)
    for o, p in zip(outliers, pos):
        left = candidates[p - 1] if p > 0 else None
        right = candidates[p] if p < candidates.size else None
        if left is None:
            pick = right
        elif right is None:
            pick = left
        elif o - left < right - o:
            pick = left
        elif right - o < o - left:
            pick = right
        else:
            pick = left if rng.random() < 0.5 else right
        row[o] = source[pick]
    return row


# -- monotone cubic Hermite interpolation ----------------------------------

def pchip_slopes(x, y):
    """Knot derivatives of the Fritsch-Carlson monotone cubic interpolant.

    Interior slopes are the weighted harmonic mean of the adjacent secants
    (zero at local extrema); end slopes use the shape-preserving three-point
    formula.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.size
    h = np.diff(x)
    delta = np.diff(y) / h
    d = np.zeros(n)
    if n == 2:
        d[:] = delta[0]
        return d
    h0, h1 = h[:-1], h[1:]
    d0, d1 = delta[:-1], delta[1:]
    w1 = 2 * h1 + h0
    w2 = h1 + 2 * h0
    same = (np.sign(d0) == np.sign(d1)) & (d0 != 0) & (d1 != 0)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        interior = (w1 + w2) / (w1 / d0 + w2 / d1)
    d[1:-1] = np.where(same, interior, 0.0)
    d[0] = _end_slope(h[0], h[1], delta[0], delta[1])
    d[-1] = _end_slope(h[-1], h[-2], delta[-1], delta[-2])
    return d


def _end_slope(h0, h1, m0, m1):
    d = ((2 * h0 + h1) * m0 - h0 * m1) / (h0 + h1)
    if np.sign(d) != np.sign(m0):
        return 0.0
    if np.sign(m0) != np.sign(m1) and abs(d) > abs(3 * m0):
        return 3 * m0
    return d


def hermite_eval(x, y, d, xq):
    """Evaluate the cubic Hermite interpolant with knot slopes ``d`` at ``xq``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xq = np.asarray(xq, dtype=float)
    k = np.clip(np.searchsorted(x, xq, side="right") - 1, 0, x.size - 2)
    h = x[k + 1] - x[k]
    s = (xq - x[k]) / h
    s2 = s * s
    s3 = s2 * s
    h00 = 2 * s3 - 3 * s2 + 1
    h10 = s3 - 2 * s2 + s
    h01 = -2 * s3 + 3 * s2
    h11 = s3 - s2
    return h00 * y[k] + h10 * h * d[k] + h01 * y[k + 1] + h11 * h * d[k + 1]


def pchip_interpolate(x, y, xq):
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        raise InvalidInputError("pchip needs at least two knots")
    if np.any(np.diff(x) <= 0):
        raise InvalidInputError("pchip knots must be strictly increasing")
    return hermite_eval(x, y, pchip_slopes(x, y), xq)


def pchip_fill(row):
    """Fill the missing samples of a row.

    Interior gaps use the monotone Hermite interpolant through the present
    samples; leading and trailing gaps repeat the nearest present value.
    """
    row = np.array(row, dtype=float)
    present = np.flatnonzero(~np.isnan(row))
    if present.size < 2:
        raise UnfixableRowError(f"{present.size} present sample(s); at least 2 needed")
    missing = np.flatnonzero(np.isnan(row))
    if missing.size == 0:
        return row
    first, last = present[0], present[-1]
    row[:first] = row[first]
    row[last + 1:] = row[last]
    inner = missing[(missing > first) & (missing < last)]
    if inner.size:
        row[inner] = pchip_interpolate(present.astype(float), row[present], inner.astype(float))
    return row


# -- robust LOWESS ----------------------------------------------------------

def lowess_window(n, span=None, min_points=5):
    """Number of neighbours used by each local fit."""
    k = min_points if span is None else max(int(math.ceil(span * n - 1e-9)), min_points)
    return min(k, n)


@lru_cache(maxsize=64)
def _uniform_neighbourhoods(n, k):
    x = np.arange(n, dtype=float)
    idx, dist = _neighbourhoods(x, k)
    idx.setflags(write=False)
    dist.setflags(write=False)
    return idx, dist


def _neighbourhoods(x, k):
    """Index windows of the ``k`` nearest neighbours and tricube weights.

    The window slides right while the point beyond its right end is strictly
    closer than its left end, so ties keep the left neighbour.
    """
    n = x.size
    left = np.empty(n, dtype=int)
    lo = 0
    for i in range(n):
        while lo + k < n and x[i] > (x[lo] + x[lo + k]) / 2.0:
            lo += 1
        left[i] = lo
    idx = left[:, None] + np.arange(k)[None, :]
    gaps = np.abs(x[idx] - x[:, None])
    radius = np.maximum(x - x[left], x[left + k - 1] - x)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(radius[:, None] > 0, gaps / radius[:, None], 0.0)
    w = np.where(u < 1.0, (1.0 - u ** 3) ** 3, 0.0)
    return idx, w


def _local_linear(xw, yw, w, x0):
    """Weighted least-squares line through the rows of ``(xw, yw, w)`` at ``x0``."""
    sw = w.sum(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        wn = w / sw[..., None]
        xbar = np.sum(wn * xw, axis=-1)
        dx = xw - xbar[..., None]
        var = np.sum(wn * dx * dx, axis=-1)
        ybar = np.sum(wn * yw, axis=-1)
        cov = np.sum(wn * dx * yw, axis=-1)
        slope = np.where(var > 0, cov / var, 0.0)
    return ybar + slope * (x0 - xbar)


def _bisquare_weights(residuals):
    r = np.abs(residuals)
    mad = np.median(r)
    if mad == 0.0:
        # Limit of the bisquare as the scale shrinks to zero.
        return (r == 0.0).astype(float)
    u = r / (6.0 * mad)
    return np.where(u < 1.0, (1.0 - u * u) ** 2, 0.0)


def rlowess_smooth(row, span=None, iterations=3, min_points=5, x=None):
    """Robust locally weighted degree-1 smoothing.

    Each output sample is the value at its abscissa of a weighted
    least-squares line over its ``k`` nearest neighbours, with tricube
    distance weights.  After the initial fit, ``iterations`` robustness
    passes multiply those weights by bisquare weights of the residuals
    scaled by six times their median absolute value.

    Parameters
    ----------
    row : array_like
        Fully present series.
    span : float, optional
        Fraction of the series in each window; ``None`` uses ``min_points``.
    iterations : int
        Number of robustness passes after the initial fit.
    min_points : int
        Lower bound on the window size.
    x : array_like, optional
        Sorted abscissae; defaults to ``0..F-1``.

    Notes
    -----
    When robustness weights leave fewer than two usable points in a window,
    that sample is refit from the ``k`` nearest points that still carry
    weight, so an isolated spike cannot survive by rejecting its own
    neighbourhood.
    """
    y = np.asarray(row, dtype=float)
    if y.ndim != 1:
        raise InvalidInputError("lowess expects a 1-D series")
    if np.any(~np.isfinite(y)):
        raise InvalidInputError("lowess input must be fully present")
    n = y.size
    k = lowess_window(n, span, min_points)
    if k < 3:
        raise ConfigurationError(f"lowess window of {k} points is smaller than 3")
    if x is None:
        idx, tw = _uniform_neighbourhoods(n, k)
        x = np.arange(n, dtype=float)
    else:
        x = np.asarray(x, dtype=float)
        if x.shape != y.shape or np.any(np.diff(x) < 0):
            raise InvalidInputError("x must be sorted and match the series")
        idx, tw = _neighbourhoods(x, k)
    xw = x[idx]
    fit = _local_linear(xw, y[idx], tw, x)
    for _ in range(int(iterations)):
        robust = _bisquare_weights(y - fit)
        w = tw * robust[idx]
        new = _local_linear(xw, y[idx], w, x)
        degenerate = np.flatnonzero(np.count_nonzero(w > 0, axis=1) < 2)
        if degenerate.size:
            new[degenerate] = _refit_from_survivors(x, y, robust, degenerate, k, fit)
        fit = new
    return fit


def _refit_from_survivors(x, y, robust, points, k, previous):
    alive = np.flatnonzero(robust > 0)
    out = previous[points].copy()
    if alive.size < 2:
        return out
    k = min(k, alive.size)
    # the k nearest survivors lie among the k on either side of the insertion point
    pos = np.searchsorted(x[alive], x[points])
    cand = pos[:, None] + np.arange(-k, k)[None, :]
    valid = (cand >= 0) & (cand < alive.size)
    cand = alive[np.clip(cand, 0, alive.size - 1)]
    gaps = np.where(valid, np.abs(x[cand] - x[points][:, None]), np.inf)
    order = np.argsort(gaps, axis=1, kind="stable")[:, :k]
    near = np.take_along_axis(cand, order, axis=1)
    gaps = np.take_along_axis(gaps, order, axis=1)
    radius = gaps.max(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(radius > 0, gaps / radius, 0.0)
    w = np.where(u < 1.0, (1.0 - u ** 3) ** 3, 0.0) * robust[near]
    fit = _local_linear(x[near], y[near], w, x[points])
    thin = np.count_nonzero(w > 0, axis=1) < 2
    out[~thin] = fit[~thin]
    out[thin] = y[near[thin, 0]]
    return out


# -- whole-sequence correction ---------------------------------------------

@dataclass
class FilterConfig:
    """Parameters of the joint-trajectory correction filter.

    ``lowess_span`` is a fraction of the sequence length; ``None`` means a
    fixed ``lowess_min_points`` window.
    """

    tukey_k: float = 1.5
    lowess_span: Optional[float] = None
    lowess_min_points: int = 5
    lowess_iterations: int = 3
    quantile_method: str = "linear"
    rng_seed: int = 0
    min_present_for_tukey: int = 4

    def __post_init__(self):
        if not self.tukey_k > 0:
            raise ConfigurationError("tukey_k must be > 0")
        if self.lowess_span is not None and not (0 < self.lowess_span <= 1):
            raise ConfigurationError("lowess_span must lie in (0, 1]")
        if self.lowess_min_points < 3:
            raise ConfigurationError("lowess window must be at least 3 points")
        if self.lowess_iterations < 0:
            raise ConfigurationError("lowess_iterations must be >= 0")
        if self.quantile_method not in QUANTILE_METHODS:
            raise ConfigurationError(f"unknown quantile method {self.quantile_method!r}")


@dataclass
class CorrectionReport:
    frame_count: int = 0
    outliers_replaced: list = field(default_factory=lambda: [0] * N_ROWS)
    gaps_filled: list = field(default_factory=lambda: [0] * N_ROWS)
    missing_rows: list = field(default_factory=list)
    unfixable_rows: dict = field(default_factory=dict)

    @property
    def total_outliers(self):
        return int(sum(self.outliers_replaced))

    @property
    def total_filled(self):
        return int(sum(self.gaps_filled))

    def to_dict(self):
        d = asdict(self)
        d["unfixable_rows"] = {str(k): v for k, v in sorted(self.unfixable_rows.items())}
        d["total_outliers"] = self.total_outliers
        d["total_filled"] = self.total_filled
        return d


def correct_row(row, cfg: FilterConfig, rng):
    """Run the four correction stages on one row.

    Returns ``(corrected, n_outliers, n_filled)``.
    """
    row = np.asarray(row, dtype=float)
    out = tukey_outliers(row, cfg.tukey_k, cfg.quantile_method, cfg.min_present_for_tukey)
    fixed = replace_with_nearest_nonoutlier(row, out, rng)
    n_missing = int(np.count_nonzero(np.isnan(fixed)))
    filled = pchip_fill(fixed)
    smooth = rlowess_smooth(filled, cfg.lowess_span, cfg.lowess_iterations, cfg.lowess_min_points)
    return smooth, int(out.size), n_missing


def correct_sequence(m: JointMatrix, cfg: Optional[FilterConfig] = None):
    """Correct every row of a joint matrix.

    Rows that are entirely missing stay missing.  Rows that cannot be
    corrected (a single present sample, say) are blanked and listed in the
    report; the remaining rows are processed regardless.

    Returns
    -------
    (JointMatrix, CorrectionReport)
    """
    cfg = cfg or FilterConfig()
    values = np.full_like(m.values, np.nan)
    report = CorrectionReport(frame_count=m.frame_count)
    for r in range(N_ROWS):
        row = m.values[r]
        if np.all(np.isnan(row)):
            report.missing_rows.append(r)
            continue
        rng = np.random.default_rng([cfg.rng_seed, r])
        try:
            values[r], report.outliers_replaced[r], report.gaps_filled[r] = correct_row(row, cfg, rng)
        except UnfixableRowError as exc:
            logger.debug("row %d unfixable: %s", r, exc)
            report.unfixable_rows[r] = str(exc)
    # Keep the all-or-nothing invariant per joint.
    for r in list(report.unfixable_rows):
        j = r // 3
        values[3 * j:3 * j + 3] = np.nan
    return JointMatrix(values), report
