"""Command-line interface.

Every command reads and writes the formats in :mod:`skelgait.formats`.
Exit status is 0 on success, 1 for bad input data (including any
malformed record line), 2 for usage errors and 3 for configuration errors.
The log level comes from ``SKELGAIT_LOG_LEVEL`` (default ``WARNING``).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import formats as fm
from .camera import project_joints, sample_range
from .classify import SvmModel, evaluate, predict, split_by_pattern, train_svm
from .config import PipelineConfig
from .cycles import (STAT_SETS, ankle_distance_signal, cycle_statistics, detect_gait_cycles,
                     stat_columns)
from .errors import ConfigurationError, InvalidInputError, SkelgaitError, UnavailableSignalError
from .features import KINDS, feature_matrix, feature_names
from .outliers import remove_outliers
from .pipeline import (GRID_COLUMNS, STAT_CHOICES, TREATMENTS, correct_frames, run_grid,
                       simulate_fixture, training_size_sweep)

log = logging.getLogger("skelgait")

EXIT_OK, EXIT_INPUT, EXIT_USAGE, EXIT_CONFIG = 0, 1, 2, 3
FRAME_META = ["sequence", "subject", "pattern", "frame"]
CYCLE_META = ["sequence", "subject", "pattern", "start_frame", "end_frame"]


class LineErrors(InvalidInputError):
    """Malformed lines were skipped; the command still wrote its output."""

    def __init__(self, path, errors):
        super().__init__(f"{len(errors)} malformed line(s) in {path}")
        self.path = path
        self.errors = errors


def _config(args):
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _read(path, fmt):
    if not os.path.exists(path):
        raise InvalidInputError(f"input file not found: {path}")
    records, errors = fm.read_frames(path, fmt)
    return records, errors


def _finish(path, errors):
    if errors:
        raise LineErrors(path, errors)
    return EXIT_OK


def _frame_records(seq, frames):
    return [fm.FrameRecord(seq.sequence, seq.subject, seq.pattern, r.frame, frames[k])
            for k, r in enumerate(seq.records)]


# -- commands --------------------------------------------------------------

def cmd_simulate(args):
    cfg = _config(args)
    sequences = simulate_fixture(cfg)
    records, clean = [], []
    out_dir = os.path.dirname(os.path.abspath(args.output))
    for s in sequences:
        ref_file = None
        if args.ranges:
            from .synth import SensorSequence
            stack = SensorSequence(s.pixels, s.depth, np.zeros(s.depth.shape, bool),
                                   cfg.camera).range_frames()
            os.makedirs(args.ranges, exist_ok=True)
            path = os.path.join(args.ranges, f"range_{s.sequence:04d}.npz")
            np.savez_compressed(path, ranges=stack)
            ref_file = os.path.relpath(path, out_dir)
        for t in range(s.observed.shape[0]):
            ref = {"file": ref_file, "index": t} if ref_file else None
            records.append(fm.FrameRecord(s.sequence, s.subject, s.pattern, t, s.pixels[t],
                                          None if ref else s.depth[t], ref))
            clean.append(fm.FrameRecord(s.sequence, s.subject, s.pattern, t, s.clean[t]))
    fm.write_frames(args.output, fm.FRAMES_2D, records)
    if args.clean:
        fm.write_frames(args.clean, fm.FRAMES_3D, clean)
    log.info("simulated %d sequences, %d frames", len(sequences), len(records))
    return EXIT_OK


def cmd_project(args):
    cfg = _config(args)
    records, errors = _read(args.input, fm.FRAMES_2D)
    store = fm.RangeStore(os.path.dirname(os.path.abspath(args.input)))
    out = []
    for r in records:
        if r.depth is not None:
            depth = r.depth
        else:
            depth = sample_range(r.joints, store.frame(r.range_ref), cfg.camera)
        xyz = project_joints(r.joints, depth, cfg.camera)
        out.append(fm.FrameRecord(r.sequence, r.subject, r.pattern, r.frame, xyz))
    fm.write_frames(args.output, fm.FRAMES_3D, out)
    return _finish(args.input, errors)


def cmd_correct(args):
    cfg = _config(args)
    records, errors = _read(args.input, fm.FRAMES_3D)
    out, reports = [], {}
    for seq in fm.group_sequences(records):
        corrected, rep = correct_frames(seq.joints(), cfg, seq.sequence)
        reports[str(seq.sequence)] = rep.to_dict()
        out.extend(_frame_records(seq, corrected))
    fm.write_frames(args.output, fm.FRAMES_3D, out)
    if args.report:
        with open(args.report, "w") as fh:
            json.dump(reports, fh, indent=1, sort_keys=True)
            fh.write("\n")
    return _finish(args.input, errors)


def _feature_rows(seq, kind):
    records, index, _ = feature_matrix(seq.joints(), kind)
    first = seq.records[0].frame if seq.records else 0
    return [[seq.sequence, seq.subject, seq.pattern, int(first + t), *rec]
            for t, rec in zip(index, records)]


def cmd_features(args):
    records, errors = _read(args.input, fm.FRAMES_3D)
    rows = []
    for seq in fm.group_sequences(records):
        rows.extend(_feature_rows(seq, args.features))
    fm.write_table(args.output, fm.FEATURES_CSV, FRAME_META + list(feature_names(args.features)),
                   rows)
    return _finish(args.input, errors)


def _kind_of(columns):
    for kind in KINDS:
        if list(columns) == list(feature_names(kind)):
            return kind
    raise InvalidInputError("feature columns match neither the length nor the vector layout")


def _group_rows(table):
    """Row indices per sequence id, in file order."""
    groups = {}
    for i, m in enumerate(table.meta):
        groups.setdefault(m[0], []).append(i)
    return groups


def cmd_remove_outliers(args):
    cfg = _config(args)
    table = fm.parse_feature_table(args.input, fm.FEATURES_CSV, len(FRAME_META))
    kind = _kind_of(table.feature_columns)
    if args.features and args.features != kind:
        raise InvalidInputError(f"table holds {kind} features, not {args.features}")
    keep = np.zeros(len(table.meta), dtype=bool)
    summary = {}
    o = cfg.outliers
    for sid, idx in _group_rows(table).items():
        idx = np.asarray(idx)
        if idx.size >= 4:
            rep = remove_outliers(table.X[idx], kind, o.alpha, o.bins, o.k,
                                  cfg.filter.quantile_method)
            keep[idx] = rep.kept_mask
            summary[str(sid)] = rep.to_dict()
        else:
            summary[str(sid)] = {"records": int(idx.size), "removed_count": int(idx.size),
                                 "removal_fraction": 1.0, "t_upper": None,
                                 "zero_vector_records": 0}
    rows = [[*table.meta[i], *table.X[i]] for i in np.flatnonzero(keep)]
    fm.write_table(args.output, fm.FEATURES_CSV, table.meta_columns + table.feature_columns, rows)
    if args.mask:
        fm.write_table(args.mask, fm.MASK_CSV, table.meta_columns + ["kept"],
                       [[*m, int(k)] for m, k in zip(table.meta, keep)])
    total = len(keep)
    summary["all"] = {"records": total, "removed_count": int(total - keep.sum()),
                      "removal_fraction": float((total - keep.sum()) / total) if total else 0.0}
    if args.report:
        with open(args.report, "w") as fh:
            json.dump(summary, fh, indent=1, sort_keys=True)
            fh.write("\n")
    log.info("removed %d of %d records", total - int(keep.sum()), total)
    return EXIT_OK


def cmd_cycles(args):
    cfg = _config(args)
    records, errors = _read(args.input, fm.FRAMES_3D)
    sequences = fm.group_sequences(records)
    table = None
    if args.table:
        table = fm.parse_feature_table(args.table, fm.FEATURES_CSV, len(FRAME_META))
        kind = _kind_of(table.feature_columns)
        groups = _group_rows(table)
    else:
        kind = args.features
    columns = stat_columns(feature_names(kind), args.stat_set)
    rows = []
    for seq in sequences:
        frames = seq.joints()
        first = seq.records[0].frame
        if table is None:
            recs, index, _ = feature_matrix(frames, kind)
        else:
            idx = groups.get(seq.sequence, [])
            recs = table.X[idx] if idx else np.empty((0, len(columns) // len(STAT_SETS[args.stat_set])))
            index = np.asarray([table.meta[i][3] - first for i in idx], dtype=int)
        try:
            spans = detect_gait_cycles(ankle_distance_signal(frames), cfg.cycles)
        except (UnavailableSignalError, InvalidInputError) as exc:
            log.warning("sequence %d: no cycles (%s)", seq.sequence, exc)
            spans = []
        ct = cycle_statistics(recs, index, spans, args.stat_set)
        for span, stats in zip(ct.spans, ct.stats):
            rows.append([seq.sequence, seq.subject, seq.pattern, first + span.start_frame,
                         first + span.end_frame, *stats])
        if ct.skipped:
            log.info("sequence %d: %d span(s) with fewer than 2 records skipped",
                     seq.sequence, len(ct.skipped))
    fm.write_table(args.output, fm.CYCLES_CSV, CYCLE_META + list(columns), rows)
    return _finish(args.input, errors)


def _load_samples(path):
    with open(path) as fh:
        first = fh.readline().strip()
    if first.startswith(f"# {fm.CYCLES_CSV} "):
        table = fm.parse_feature_table(path, fm.CYCLES_CSV, len(CYCLE_META))
    else:
        table = fm.parse_feature_table(path, fm.FEATURES_CSV, len(FRAME_META))
    finite = np.all(np.isfinite(table.X), axis=1)
    if not finite.all():
        log.warning("%s: dropping %d rows with non-finite values", path, int((~finite).sum()))
    return table, finite


def _split_mask(table, cfg, side, use_all):
    finite_rows = np.ones(len(table.meta), dtype=bool)
    if use_all:
        return finite_rows
    plan = sorted({(m[0], m[1], m[2]) for m in table.meta})
    train_ids, test_ids = split_by_pattern(plan, cfg.split.train_fraction, cfg.seed)
    chosen = set(train_ids if side == "train" else test_ids)
    return np.array([m[0] in chosen for m in table.meta], dtype=bool)


def cmd_train(args):
    cfg = _config(args)
    table, finite = _load_samples(args.input)
    mask = _split_mask(table, cfg, "train", args.all_rows) & finite
    y = np.asarray(table.column("subject"))[mask]
    model = train_svm(table.X[mask], y, cfg.svm.C, cfg.svm.gamma, cfg.svm.tol,
                      cfg.svm.max_passes, seed=cfg.seed)
    model.save(args.output)
    log.info("trained on %d samples, %d support vectors", int(mask.sum()),
             model.support_vectors.shape[0])
    return EXIT_OK


def _write_json(path, obj):
    text = json.dumps(obj, indent=1, sort_keys=True) + "\n"
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_evaluate(args):
    cfg = _config(args)
    if args.model:
        if not args.input:
            raise ConfigurationError("--model requires --input")
        model = SvmModel.load(args.model)
        table, finite = _load_samples(args.input)
        mask = _split_mask(table, cfg, "test", args.all_rows) & finite
        truth = np.asarray(table.column("subject"))[mask]
        report = evaluate(predict(model, table.X[mask]), truth)
        _write_json(args.output, report.to_dict())
        return EXIT_OK
    if not args.output:
        raise ConfigurationError("the comparison grid needs --output")
    treatments = [args.treatment] if args.treatment else TREATMENTS
    kinds = [args.features] if args.features else KINDS
    stats = [args.stat_set] if args.stat_set else STAT_CHOICES
    rows = run_grid(cfg, treatments, kinds, stats)
    fm.write_table(args.output, fm.GRID_CSV, list(GRID_COLUMNS), [r.as_row() for r in rows])
    return EXIT_OK


def cmd_sweep(args):
    cfg = _config(args)
    sizes = tuple(int(s) for s in args.sizes.split(","))
    curve = training_size_sweep(cfg, sizes, args.treatment or "correct",
                                args.features or "vector", args.stat_set or "frame")
    fm.write_table(args.output, fm.SWEEP_CSV, ["train_samples", "accuracy", "macro_f"],
                   [[n, float(a), float(f)] for n, a, f in curve])
    return EXIT_OK


# -- parser ----------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="skelgait",
                                description="Skeleton gait correction, features and recognition")
    sub = p.add_subparsers(dest="command", required=True)

    def command(name, func, help_text, inp=True, out=True, seed=True):
        c = sub.add_parser(name, help=help_text)
        c.add_argument("--config", help="pipeline configuration JSON")
        if inp:
            c.add_argument("--input", required=inp == "required", help="input file")
        if out:
            c.add_argument("--output", required=out == "required", help="output file")
        if seed:
            c.add_argument("--seed", type=int, help="override the configured seed")
        c.set_defaults(func=func)
        return c

    c = command("simulate", cmd_simulate, "synthetic fixture as 2-D frame records",
                inp=False, out="required")
    c.add_argument("--clean", help="also write the clean 3-D sequences here")
    c.add_argument("--ranges", help="directory for range-image stacks referenced by the records")

    command("project", cmd_project, "2-D joints + range to 3-D", "required", "required")
    c = command("correct", cmd_correct, "correct 3-D joint trajectories", "required", "required")
    c.add_argument("--report", help="write per-sequence correction reports (JSON)")

    c = command("features", cmd_features, "per-frame feature table", "required", "required",
                seed=False)
    c.add_argument("--features", choices=KINDS, default="vector")

    c = command("remove-outliers", cmd_remove_outliers, "drop outlying feature records",
                "required", "required")
    c.add_argument("--features", choices=KINDS)
    c.add_argument("--mask", help="write the kept mask CSV here")
    c.add_argument("--report", help="write removal reports (JSON)")

    c = command("cycles", cmd_cycles, "per-cycle feature statistics", "required", "required")
    c.add_argument("--features", choices=KINDS, default="vector")
    c.add_argument("--stat-set", choices=tuple(STAT_SETS), default="six")
    c.add_argument("--table", help="feature table to summarize instead of recomputing")

    c = command("train", cmd_train, "train the SVM on the training split", "required", "required")
    c.add_argument("--all-rows", action="store_true", help="train on every row, no split")

    c = command("evaluate", cmd_evaluate,
                "score a model on the test split, or run the comparison grid")
    c.add_argument("--model", help="model JSON; without it the full grid is run")
    c.add_argument("--all-rows", action="store_true", help="score every row, no split")
    c.add_argument("--treatment", choices=TREATMENTS)
    c.add_argument("--features", choices=KINDS)
    c.add_argument("--stat-set", choices=STAT_CHOICES)

    c = command("sweep", cmd_sweep, "accuracy against training-set size", False, "required")
    c.add_argument("--sizes", default="100,250,500,1000")
    c.add_argument("--treatment", choices=TREATMENTS)
    c.add_argument("--features", choices=KINDS)
    c.add_argument("--stat-set", choices=STAT_CHOICES)
    return p


def main(argv=None):
    level = os.environ.get("SKELGAIT_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except LineErrors as exc:
        for err in exc.errors:
            print(f"{exc.path}:{err}", file=sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SkelgaitError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
