"""Gait-cycle segmentation and per-cycle feature statistics.

Cycles are cut from the ankle-to-ankle distance, which peaks once per step.
A full cycle (two steps) runs from one peak to the second-next peak.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.signal import find_peaks

from .errors import ConfigurationError, InvalidInputError, UnavailableSignalError
from .features import JointId
from .jointseq import JointMatrix, quartiles

STATS_THREE = ("mean", "std", "max")
STATS_SIX = ("mean", "std", "max", "median", "q_low", "q_up")
STAT_SETS = {"three": STATS_THREE, "six": STATS_SIX}


@dataclass(frozen=True)
class CycleSpan:
    start_frame: int
    end_frame: int  # exclusive

    @property
    def length(self):
        return self.end_frame - self.start_frame


@dataclass
class CycleConfig:
    smooth_window: int = 3
    prominence_iqr: float = 0.2
    min_separation: int = 4
    min_cycle_length: int = 8
    mode: str = "full"

    def __post_init__(self):
        if self.smooth_window < 1:
            raise ConfigurationError("smooth_window must be >= 1")
        if self.min_separation < 1:
            raise ConfigurationError("min_separation must be >= 1")
        if self.min_cycle_length < 2:
            raise ConfigurationError("min_cycle_length must be >= 2")
        if self.mode not in ("full", "half"):
            raise ConfigurationError(f"unknown cycle mode {self.mode!r}")


def ankle_distance_signal(frames):
    """Per-frame distance between the two ankles.

    ``frames`` is an ``(F, 13, 3)`` array or a :class:`JointMatrix`; frames
    missing either ankle give NaN.
    """
    if isinstance(frames, JointMatrix):
        frames = frames.to_frames()
    frames = np.asarray(frames, dtype=float)
    d = np.linalg.norm(frames[:, JointId.RAnkle] - frames[:, JointId.LAnkle], axis=1)
    if np.all(np.isnan(d)):
        raise UnavailableSignalError("ankle trajectories are entirely missing")
    return d


def detect_gait_cycles(signal, cfg: CycleConfig | None = None):
    """Cycle spans from the peaks of a step-periodic signal.

    Missing samples are bridged linearly for detection only.  The signal is
    smoothed with a moving average; peaks need a prominence of at least
    ``prominence_iqr`` times the signal IQR and must be ``min_separation``
    frames apart.  Fewer than three peaks (two in half mode) yield no cycles.
    """
    cfg = cfg or CycleConfig()
    x = np.asarray(signal, dtype=float)
    if x.size < 2 * cfg.min_cycle_length:
        raise InvalidInputError(
            f"signal of {x.size} samples is shorter than two minimum cycles")
    present = ~np.isnan(x)
    if np.count_nonzero(present) < 2:
        return []
    if not present.all():
        t = np.arange(x.size)
        x = np.interp(t, t[present], x[present])
    smooth = uniform_filter1d(x, cfg.smooth_window, mode="nearest")
    q1, _, q3 = quartiles(smooth)
    if q3 - q1 <= 0:
        return []
    peaks, _ = find_peaks(smooth, prominence=cfg.prominence_iqr * (q3 - q1),
                          distance=cfg.min_separation)
    stride = 2 if cfg.mode == "full" else 1
    min_len = cfg.min_cycle_length if cfg.mode == "full" else max(cfg.min_cycle_length // 2, 1)
    spans = []
    for i in range(0, len(peaks) - stride, stride):
        span = CycleSpan(int(peaks[i]), int(peaks[i + stride]))
        if span.length >= min_len:
            spans.append(span)
    return spans


def _stat_block(values, stat_names):
    """Statistics of each column of ``values``, NaN samples excluded."""
    cols = []
    for c in range(values.shape[1]):
        v = values[:, c]
        v = v[~np.isnan(v)]
        if v.size < 2:
            cols.append([np.nan] * len(stat_names))
            continue
        q_low, median, q_up = quartiles(v)
        table = {
            "mean": float(np.mean(v)),
            "std": float(np.std(v, ddof=1)),
            "max": float(np.max(v)),
            "median": median,
            "q_low": q_low,
            "q_up": q_up,
        }
        cols.append([table[s] for s in stat_names])
    return np.asarray(cols).reshape(-1)


def stat_columns(feature_names, stat_set):
    stats = STAT_SETS[stat_set]
    return tuple(f"{f}_{s}" for f in feature_names for s in stats)


@dataclass
class CycleTable:
    stats: np.ndarray           # (n_cycles, n_features * n_stats)
    spans: list                 # CycleSpan per row
    skipped: list               # spans with fewer than two records
    missing_samples: int = 0    # NaN samples excluded inside spans


def cycle_statistics(records, frame_index, spans, stat_set="six"):
    """Per-cycle statistics of time-indexed feature records.

    Parameters
    ----------
    records : ndarray, shape (N, D)
    frame_index : ndarray of int, shape (N,)
        Frame of each record.
    spans : list of CycleSpan
    stat_set : {"three", "six"}
        ``three`` is mean, std, max; ``six`` appends median, lower and
        upper quartile.  Columns are feature-major.

    Returns
    -------
    CycleTable
    """
    if stat_set not in STAT_SETS:
        raise ConfigurationError(f"unknown stat set {stat_set!r}")
    names = STAT_SETS[stat_set]
    records = np.asarray(records, dtype=float)
    frame_index = np.asarray(frame_index)
    rows, kept, skipped, missing = [], [], [], 0
    for span in spans:
        inside = (frame_index >= span.start_frame) & (frame_index < span.end_frame)
        block = records[inside]
        if block.shape[0] < 2:
            skipped.append(span)
            continue
        missing += int(np.count_nonzero(np.isnan(block)))
        rows.append(_stat_block(block, names))
        kept.append(span)
    width = records.shape[1] * len(names) if records.ndim == 2 else 0
    stats = np.vstack(rows) if rows else np.empty((0, width))
    return CycleTable(stats, kept, skipped, missing)
