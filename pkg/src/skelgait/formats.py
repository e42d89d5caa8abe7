"""File formats: JSONL frame streams and CSV tables, each with a version header.

Frame streams start with a header object ``{"format": ..., "version": 1}``
followed by one JSON object per frame.  Two-dimensional records carry
pixel joints as ``[x, y, present]`` triples plus either a per-joint
``depth`` list or a ``range`` reference ``{"file": ..., "index": ...}`` into
a ``.npy``/``.npz`` stack of range images.  Three-dimensional records carry
``[x, y, z]`` per joint or ``null`` for a missing joint.

CSV tables start with a ``# <format> v<version>`` comment line.  Floats are
written with ``repr`` so they read back bit-exactly.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InvalidInputError

FRAMES_2D = "skelgait-frames2d"
FRAMES_3D = "skelgait-frames3d"
FORMAT_VERSION = 1
N_JOINTS = 13


class LineError(InvalidInputError):
    """A malformed record, tagged with its 1-based line number."""

    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass
class FrameRecord:
    sequence: int
    subject: int
    pattern: str
    frame: int
    joints: np.ndarray                 # (13, 2) pixels or (13, 3) world, NaN if missing
    depth: np.ndarray | None = None    # (13,) per-joint depth for 2-D records
    range_ref: dict | None = None


@dataclass
class Sequence:
    """Consecutive records of one sequence."""

    sequence: int
    subject: int
    pattern: str
    records: list = field(default_factory=list)

    def joints(self):
        return np.stack([r.joints for r in self.records]) if self.records else np.empty((0, N_JOINTS, 3))


def _num(v):
    return None if v is None or not math.isfinite(v) else float(v)


def header(fmt):
    return json.dumps({"format": fmt, "version": FORMAT_VERSION})


def encode_2d(rec: FrameRecord):
    joints = []
    for x, y in rec.joints:
        present = bool(np.isfinite(x) and np.isfinite(y))
        joints.append([float(x) if present else 0.0, float(y) if present else 0.0, present])
    obj = {"sequence": rec.sequence, "subject": rec.subject, "pattern": rec.pattern,
           "frame": rec.frame, "joints": joints}
    if rec.depth is not None:
        obj["depth"] = [_num(d) for d in rec.depth]
    if rec.range_ref is not None:
        obj["range"] = rec.range_ref
    return json.dumps(obj)


def encode_3d(rec: FrameRecord):
    joints = [None if not np.all(np.isfinite(p)) else [float(v) for v in p] for p in rec.joints]
    return json.dumps({"sequence": rec.sequence, "subject": rec.subject, "pattern": rec.pattern,
                       "frame": rec.frame, "joints": joints})


def _meta(obj, line):
    try:
        seq, subj, pat, frame = obj["sequence"], obj["subject"], obj["pattern"], obj["frame"]
    except KeyError as exc:
        raise LineError(line, f"missing field {exc.args[0]!r}") from None
    for name, v in (("sequence", seq), ("subject", subj), ("frame", frame)):
        if not isinstance(v, int) or isinstance(v, bool):
            raise LineError(line, f"{name} must be an integer")
    if not isinstance(pat, str):
        raise LineError(line, "pattern must be a string")
    joints = obj.get("joints")
    if not isinstance(joints, list) or len(joints) != N_JOINTS:
        raise LineError(line, f"joints must be a list of {N_JOINTS} entries")
    return seq, subj, pat, frame, joints


def decode_2d(obj, line):
    seq, subj, pat, frame, joints = _meta(obj, line)
    pix = np.full((N_JOINTS, 2), np.nan)
    for j, item in enumerate(joints):
        if not (isinstance(item, list) and len(item) == 3 and isinstance(item[2], bool)):
            raise LineError(line, f"joint {j} must be [x, y, present]")
        if item[2]:
            try:
                pix[j] = [float(item[0]), float(item[1])]
            except (TypeError, ValueError):
                raise LineError(line, f"joint {j} has non-numeric coordinates") from None
    depth = None
    if "depth" in obj:
        d = obj["depth"]
        if not isinstance(d, list) or len(d) != N_JOINTS:
            raise LineError(line, f"depth must list {N_JOINTS} values")
        try:
            depth = np.array([np.nan if v is None else float(v) for v in d])
        except (TypeError, ValueError):
            raise LineError(line, "depth values must be numbers or null") from None
    ref = obj.get("range")
    if ref is not None and not (isinstance(ref, dict) and isinstance(ref.get("file"), str)
                                and isinstance(ref.get("index"), int)):
        raise LineError(line, "range must be {\"file\": str, \"index\": int}")
    if depth is None and ref is None:
        raise LineError(line, "record needs either depth or a range reference")
    return FrameRecord(seq, subj, pat, frame, pix, depth, ref)


def decode_3d(obj, line):
    seq, subj, pat, frame, joints = _meta(obj, line)
    xyz = np.full((N_JOINTS, 3), np.nan)
    for j, item in enumerate(joints):
        if item is None:
            continue
        if not (isinstance(item, list) and len(item) == 3):
            raise LineError(line, f"joint {j} must be [x, y, z] or null")
        try:
            xyz[j] = [float(v) for v in item]
        except (TypeError, ValueError):
            raise LineError(line, f"joint {j} has non-numeric coordinates") from None
    return FrameRecord(seq, subj, pat, frame, xyz)


def read_frames(path, fmt):
    """Parse a frame stream.

    Returns ``(records, errors)``: every well-formed record and a
    :class:`LineError` for every malformed line.  An empty file yields no
    records and no errors.
    """
    decode = decode_2d if fmt == FRAMES_2D else decode_3d
    records, errors = [], []
    with open(path) as fh:
        lines = fh.read().splitlines()
    start = 0
    for i, text in enumerate(lines, 1):
        if not text.strip():
            continue
        try:
            head = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"line {i}: header is not JSON: {exc.msg}") from None
        if not isinstance(head, dict) or head.get("format") != fmt:
            raise InvalidInputError(f"line {i}: expected a {fmt} header")
        if head.get("version") != FORMAT_VERSION:
            raise InvalidInputError(f"line {i}: unsupported version {head.get('version')}")
        start = i
        break
    for i, text in enumerate(lines[start:], start + 1):
        if not text.strip():
            continue
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            errors.append(LineError(i, f"invalid JSON: {exc.msg}"))
            continue
        if not isinstance(obj, dict):
            errors.append(LineError(i, "record must be a JSON object"))
            continue
        try:
            records.append(decode(obj, i))
        except LineError as exc:
            errors.append(exc)
    return records, errors


def group_sequences(records):
    """Group records by sequence id, checking frame contiguity."""
    seqs = {}
    for r in records:
        s = seqs.get(r.sequence)
        if s is None:
            s = seqs[r.sequence] = Sequence(r.sequence, r.subject, r.pattern)
        elif (s.subject, s.pattern) != (r.subject, r.pattern):
            raise InvalidInputError(f"sequence {r.sequence} changes subject or pattern")
        s.records.append(r)
    for s in seqs.values():
        s.records.sort(key=lambda r: r.frame)
        frames = [r.frame for r in s.records]
        if frames != list(range(frames[0], frames[0] + len(frames))):
            raise InvalidInputError(f"sequence {s.sequence} has non-contiguous frame indices")
    return [seqs[k] for k in sorted(seqs)]


def write_frames(path, fmt, records):
    encode = encode_2d if fmt == FRAMES_2D else encode_3d
    with open(path, "w") as fh:
        fh.write(header(fmt) + "\n")
        for r in records:
            fh.write(encode(r) + "\n")


class RangeStore:
    """Lazy loader for referenced range-image stacks."""

    def __init__(self, base_dir):
        self.base_dir = base_dir
        self._cache = {}

    def frame(self, ref):
        path = os.path.join(self.base_dir, ref["file"])
        if path not in self._cache:
            if not os.path.exists(path):
                raise ConfigurationError(f"range file not found: {path}")
            data = np.load(path)
            if isinstance(data, np.lib.npyio.NpzFile):
                data = data[data.files[0]]
            self._cache[path] = data
        stack = self._cache[path]
        if not 0 <= ref["index"] < stack.shape[0]:
            raise InvalidInputError(f"range index {ref['index']} out of bounds for {path}")
        return stack[ref["index"]]


# -- CSV tables ------------------------------------------------------------

FEATURES_CSV = "skelgait-features"
CYCLES_CSV = "skelgait-cycles"
MASK_CSV = "skelgait-mask"
GRID_CSV = "skelgait-grid"
SWEEP_CSV = "skelgait-sweep"


def fmt_float(v):
    v = float(v)
    return "nan" if math.isnan(v) else repr(v)


def write_table(path, fmt, columns, rows):
    with open(path, "w", newline="") as fh:
        fh.write(f"# {fmt} v{FORMAT_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt_float(v) if isinstance(v, (float, np.floating)) else v for v in row])


def read_table(path, fmt):
    """Return ``(columns, rows)`` with every cell as a string."""
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        expected = f"# {fmt} v{FORMAT_VERSION}"
        if first != expected:
            raise InvalidInputError(f"{path}: expected header {expected!r}, found {first!r}")
        reader = csv.reader(fh)
        try:
            columns = next(reader)
        except StopIteration:
            raise InvalidInputError(f"{path}: missing column row") from None
        rows = []
        for i, row in enumerate(reader, 3):
            if len(row) != len(columns):
                raise LineError(i, f"expected {len(columns)} cells, found {len(row)}")
            rows.append(row)
    return columns, rows


@dataclass
class FeatureTable:
    """Parsed feature or cycle table: metadata columns plus a numeric block."""

    meta_columns: list
    feature_columns: list
    meta: list          # list of tuples
    X: np.ndarray

    def column(self, name):
        k = self.meta_columns.index(name)
        return [m[k] for m in self.meta]


def parse_feature_table(path, fmt, n_meta):
    columns, rows = read_table(path, fmt)
    meta, X = [], np.empty((len(rows), len(columns) - n_meta))
    for i, row in enumerate(rows):
        try:
            meta.append(tuple(int(v) if c != "pattern" else v
                              for c, v in zip(columns[:n_meta], row[:n_meta])))
            X[i] = [float(v) for v in row[n_meta:]]
        except ValueError as exc:
            raise LineError(i + 3, str(exc)) from None
    return FeatureTable(columns[:n_meta], columns[n_meta:], meta, X)
