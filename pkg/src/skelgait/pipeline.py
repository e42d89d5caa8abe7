"""In-process pipeline over the synthetic fixture.

A run simulates every fixture sequence, passes it through the sensor and
back, and then builds one classification experiment per combination of
treatment (none, remove, correct), feature kind (length, vector) and
statistic set (per frame, three, six).
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .camera import project_joints
from .classify import evaluate, predict, split_by_pattern, train_svm
from .config import PipelineConfig
from .cycles import (ankle_distance_signal, cycle_statistics, detect_gait_cycles)
from .errors import ConvergenceWarning, InvalidInputError, UnavailableSignalError
from .features import KINDS, feature_matrix
from .jointseq import build_joint_matrix, correct_sequence
from .outliers import remove_outliers
from .synth import PATTERNS, CorruptionSpec, corrupt, generate_walk, project_to_sensor, subject_walk

log = logging.getLogger(__name__)

TREATMENTS = ("none", "remove", "correct")
STAT_CHOICES = ("frame", "three", "six")
GRID_COLUMNS = ("treatment", "features", "stats", "accuracy", "macro_f",
                "train_samples", "test_samples", "removal_fraction")


@dataclass
class SimSequence:
    sequence: int
    subject: int
    pattern: str
    clean: np.ndarray        # (F, 13, 3)
    corrupted: np.ndarray    # (F, 13, 3), corrupted, before the sensor
    observed: np.ndarray     # (F, 13, 3), corrupted and seen through the sensor
    labels: np.ndarray       # (39, F) corruption labels
    pixels: np.ndarray       # (F, 13, 2)
    depth: np.ndarray        # (F, 13)


def fixture_plan(cfg: PipelineConfig):
    """(sequence id, subject, pattern) for every fixture sequence."""
    plan = []
    for subject in range(1, 11):
        pats = list(PATTERNS)
        if subject <= cfg.simulation.repeat_subjects:
            pats.append("FB")
        for p in pats:
            plan.append((len(plan), subject, p))
    return plan


def simulate_fixture(cfg: PipelineConfig):
    """Clean and corrupted fixture sequences for ``cfg.seed``.

    Corruption is injected on the 3-D trajectories; the result is then
    imaged by the sensor and back-projected, so spikes that leave the field
    of view come back as missing joints.
    """
    sim = cfg.simulation
    rng = np.random.default_rng([cfg.seed, 1])
    out = []
    for sid, subject, pattern in fixture_plan(cfg):
        phase = float(rng.uniform(0.0, 2.0 * math.pi))
        cseed = int(rng.integers(2**31))
        body, walk = subject_walk(subject, pattern, frame_rate=sim.frame_rate, phase=phase)
        clean, matrix = generate_walk(body, walk, sim.n_frames)
        spec = CorruptionSpec(sim.spike_prob, sim.spike_scale, sim.missing_joint_prob,
                              sim.missing_frame_prob, cseed)
        dirty, labels = corrupt(matrix, spec)
        sensor = project_to_sensor(dirty.to_frames(), cfg.camera)
        observed = project_joints(sensor.pixels.reshape(-1, 2), sensor.depth.reshape(-1),
                                  cfg.camera).reshape(clean.shape)
        out.append(SimSequence(sid, subject, pattern, clean, dirty.to_frames(), observed, labels,
                               sensor.pixels, sensor.depth))
    return out


def correct_frames(frames, cfg: PipelineConfig, sequence=0):
    """Correct one sequence; the filter seed derives from the run seed and
    the sequence id.  Returns ``(frames, CorrectionReport)``."""
    seed = int(np.random.default_rng([cfg.seed, 2, sequence]).integers(2**31))
    corrected, report = correct_sequence(build_joint_matrix(frames),
                                         replace(cfg.filter, rng_seed=seed))
    return corrected.to_frames(), report


def treat(frames, treatment, cfg: PipelineConfig, sequence=0):
    """Frames after the chosen treatment (``remove`` acts on features later)."""
    if treatment not in TREATMENTS:
        raise InvalidInputError(f"unknown treatment {treatment!r}")
    if treatment != "correct":
        return frames
    return correct_frames(frames, cfg, sequence)[0]


@dataclass
class SequenceSamples:
    X: np.ndarray
    removed: int = 0
    records: int = 0


def sequence_samples(frames, treatment, kind, stats, cfg: PipelineConfig):
    """Classification samples of one treated sequence."""
    records, index, _ = feature_matrix(frames, kind)
    n_records = records.shape[0]
    removed = 0
    if treatment == "remove" and n_records >= 4:
        o = cfg.outliers
        rep = remove_outliers(records, kind, o.alpha, o.bins, o.k, cfg.filter.quantile_method)
        records, index = records[rep.kept_mask], index[rep.kept_mask]
        removed = rep.removed_count
    elif treatment == "remove":
        removed, records, index = n_records, records[:0], index[:0]
    if stats == "frame":
        return SequenceSamples(records, removed, n_records)
    try:
        signal = ankle_distance_signal(frames)
        spans = detect_gait_cycles(signal, cfg.cycles)
    except (UnavailableSignalError, InvalidInputError):
        spans = []
    table = cycle_statistics(records, index, spans, stats)
    X = table.stats[np.all(np.isfinite(table.stats), axis=1)] if table.stats.size else table.stats
    return SequenceSamples(X, removed, n_records)


@dataclass
class GridRow:
    treatment: str
    features: str
    stats: str
    accuracy: float
    macro_f: float
    train_samples: int
    test_samples: int
    removal_fraction: float

    def as_row(self):
        return [self.treatment, self.features, self.stats, _fmt(self.accuracy),
                _fmt(self.macro_f), str(self.train_samples), str(self.test_samples),
                _fmt(self.removal_fraction)]


def _fmt(x):
    return "nan" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.6f}"


@dataclass
class Experiment:
    """Samples of every fixture sequence for one grid cell."""

    X: list
    y: list
    sequence: list
    removed: int
    records: int


def build_experiment(sequences, treated, treatment, kind, stats, cfg):
    X, y, seq = [], [], []
    removed = records = 0
    for s in sequences:
        smp = sequence_samples(treated[s.sequence], treatment, kind, stats, cfg)
        removed += smp.removed
        records += smp.records
        X.append(smp.X)
        y.append(np.full(smp.X.shape[0], s.subject))
        seq.append(np.full(smp.X.shape[0], s.sequence))
    return Experiment(X, y, seq, removed, records)


def _stack(exp, ids, width):
    rows = [exp.X[i] for i in ids if exp.X[i].shape[0]]
    if not rows:
        return np.empty((0, width)), np.empty(0, dtype=int)
    return np.vstack(rows), np.concatenate([exp.y[i] for i in ids if exp.X[i].shape[0]])


def fit_and_score(Xtr, ytr, Xte, yte, cfg: PipelineConfig):
    """Train on one side, evaluate on the other; ``None`` when impossible."""
    labels, counts = np.unique(ytr, return_counts=True)
    if Xte.shape[0] == 0 or labels.size < 2 or np.any(counts < 2):
        return None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        model = train_svm(Xtr, ytr, cfg.svm.C, cfg.svm.gamma, cfg.svm.tol,
                          cfg.svm.max_passes, seed=cfg.seed)
    return evaluate(predict(model, Xte), yte)


def run_grid(cfg: PipelineConfig, treatments=TREATMENTS, kinds=KINDS, stat_sets=STAT_CHOICES,
             sequences=None):
    """The treatment x feature x statistic comparison grid.

    Every cell shares one simulated fixture and one sequence-level split.
    """
    sequences = sequences if sequences is not None else simulate_fixture(cfg)
    plan = [(s.sequence, s.subject, s.pattern) for s in sequences]
    train_ids, test_ids = split_by_pattern(plan, cfg.split.train_fraction, cfg.seed)
    rows = []
    for treatment in treatments:
        treated = {s.sequence: treat(s.observed, treatment, cfg, s.sequence) for s in sequences}
        for kind in kinds:
            width = 19 if kind == "length" else 36
            for stats in stat_sets:
                exp = build_experiment(sequences, treated, treatment, kind, stats, cfg)
                w = width * {"frame": 1, "three": 3, "six": 6}[stats]
                Xtr, ytr = _stack(exp, train_ids, w)
                Xte, yte = _stack(exp, test_ids, w)
                rep = fit_and_score(Xtr, ytr, Xte, yte, cfg)
                frac = exp.removed / exp.records if treatment == "remove" and exp.records else math.nan
                rows.append(GridRow(treatment, kind, stats,
                                    rep.accuracy if rep else math.nan,
                                    rep.macro_f if rep else math.nan,
                                    int(Xtr.shape[0]), int(Xte.shape[0]), frac))
                log.info("%s/%s/%s: acc=%s", treatment, kind, stats, _fmt(rows[-1].accuracy))
    return rows


def stratified_order(y, rng):
    """Record indices dealt round-robin over the classes of ``y``.

    Every prefix of the result is as class-balanced as possible, so prefixes
    of increasing length form nested training sets.
    """
    y = np.asarray(y)
    pools = [list(rng.permutation(np.flatnonzero(y == c))) for c in np.unique(y)]
    order = []
    while any(pools):
        for pool in pools:
            if pool:
                order.append(pool.pop(0))
    return np.asarray(order, dtype=int)


def training_size_sweep(cfg: PipelineConfig, sizes=(100, 250, 500, 1000), treatment="correct",
                        kind="vector", stats="frame", sequences=None):
    """Accuracy against the number of training records at a fixed test set.

    Returns a list of ``(size, accuracy, macro_f)``.
    """
    sequences = sequences if sequences is not None else simulate_fixture(cfg)
    plan = [(s.sequence, s.subject, s.pattern) for s in sequences]
    train_ids, test_ids = split_by_pattern(plan, cfg.split.train_fraction, cfg.seed)
    treated = {s.sequence: treat(s.observed, treatment, cfg, s.sequence) for s in sequences}
    exp = build_experiment(sequences, treated, treatment, kind, stats, cfg)
    width = (19 if kind == "length" else 36) * {"frame": 1, "three": 3, "six": 6}[stats]
    Xtr, ytr = _stack(exp, train_ids, width)
    Xte, yte = _stack(exp, test_ids, width)
    rng = np.random.default_rng([cfg.seed, 3])
    order = stratified_order(ytr, rng)
    curve = []
    for n in sizes:
        idx = np.sort(order[:min(n, order.size)])
        rep = fit_and_score(Xtr[idx], ytr[idx], Xte, yte, cfg)
        curve.append((int(idx.size), rep.accuracy if rep else math.nan,
                      rep.macro_f if rep else math.nan))
    return curve
