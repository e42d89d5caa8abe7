"""Per-frame length-based and vector-based skeleton features."""
from __future__ import annotations

from enum import IntEnum

import numpy as np

from .errors import InvalidInputError, MissingJointError


class JointId(IntEnum):
    Neck = 0
    RShoulder = 1
    RElbow = 2
    RWrist = 3
    LShoulder = 4
    LElbow = 5
    LWrist = 6
    RHip = 7
    RKnee = 8
    RAnkle = 9
    LHip = 10
    LKnee = 11
    LAnkle = 12


J = JointId
HIP_CENTER = "hip_center"

# (name, endpoint a, endpoint b); HIP_CENTER is the RHip/LHip midpoint.
LENGTH_FEATURES = (
    ("r_shoulder", J.Neck, J.RShoulder),
    ("l_shoulder", J.Neck, J.LShoulder),
    ("r_upper_arm", J.RShoulder, J.RElbow),
    ("l_upper_arm", J.LShoulder, J.LElbow),
    ("r_lower_arm", J.RElbow, J.RWrist),
    ("l_lower_arm", J.LElbow, J.LWrist),
    ("spine", J.Neck, HIP_CENTER),
    ("r_upper_leg", J.RHip, J.RKnee),
    ("l_upper_leg", J.LHip, J.LKnee),
    ("r_lower_leg", J.RKnee, J.RAnkle),
    ("l_lower_leg", J.LKnee, J.LAnkle),
    ("shoulder_to_shoulder", J.RShoulder, J.LShoulder),
    ("elbow_to_elbow", J.RElbow, J.LElbow),
    ("wrist_to_wrist", J.RWrist, J.LWrist),
    ("hip_to_hip", J.RHip, J.LHip),
    ("knee_to_knee", J.RKnee, J.LKnee),
    ("ankle_to_ankle", J.RAnkle, J.LAnkle),
    ("rshoulder_to_lankle", J.RShoulder, J.LAnkle),
    ("lshoulder_to_rankle", J.LShoulder, J.RAnkle),
)

# (name, source, destination); vectors point from source to destination.
VECTOR_FEATURES = (
    ("neck_rshoulder", J.Neck, J.RShoulder),
    ("neck_lshoulder", J.Neck, J.LShoulder),
    ("neck_rhip", J.Neck, J.RHip),
    ("neck_lhip", J.Neck, J.LHip),
    ("rshoulder_relbow", J.RShoulder, J.RElbow),
    ("lshoulder_lelbow", J.LShoulder, J.LElbow),
    ("rhip_rknee", J.RHip, J.RKnee),
    ("lhip_lknee", J.LHip, J.LKnee),
    ("relbow_rwrist", J.RElbow, J.RWrist),
    ("lelbow_lwrist", J.LElbow, J.LWrist),
    ("rknee_rankle", J.RKnee, J.RAnkle),
    ("lknee_lankle", J.LKnee, J.LAnkle),
)

LENGTH_NAMES = tuple(name for name, _, _ in LENGTH_FEATURES)
VECTOR_NAMES = tuple(name for name, _, _ in VECTOR_FEATURES)
VECTOR_COLUMNS = tuple(f"{name}_{axis}" for name in VECTOR_NAMES for axis in "xyz")
KINDS = ("length", "vector")


def feature_names(kind):
    if kind == "length":
        return LENGTH_NAMES
    if kind == "vector":
        return VECTOR_COLUMNS
    raise InvalidInputError(f"unknown feature kind {kind!r}")


def _endpoint(joints, ref):
    if ref == HIP_CENTER:
        return 0.5 * (joints[..., J.RHip, :] + joints[..., J.LHip, :])
    return joints[..., int(ref), :]


def _check_complete(s):
    s = np.asarray(s, dtype=float)
    if s.shape != (13, 3):
        raise InvalidInputError(f"expected a (13, 3) skeleton, got {s.shape}")
    missing = ~np.all(np.isfinite(s), axis=1)
    if missing.any():
        raise MissingJointError(JointId(int(np.flatnonzero(missing)[0])).name)
    return s


def length_features(s):
    """The 19 inter-joint distances of one complete skeleton."""
    return _length_block(_check_complete(s)[None])[0]


def vector_features(s):
    """The 12 source-to-destination vectors of one skeleton, shape (12, 3)."""
    return _vector_block(_check_complete(s)[None])[0]


def _length_block(frames):
    return np.stack([
        np.linalg.norm(_endpoint(frames, b) - _endpoint(frames, a), axis=-1)
        for _, a, b in LENGTH_FEATURES
    ], axis=-1)


def _vector_block(frames):
    return np.stack([frames[:, int(b)] - frames[:, int(a)] for _, a, b in VECTOR_FEATURES], axis=1)


def feature_matrix(frames, kind):
    """Features for every frame whose 13 joints are all present.

    Parameters
    ----------
    frames : array_like, shape (F, 13, 3)
    kind : {"length", "vector"}

    Returns
    -------
    records : ndarray, shape (N, 19) or (N, 36)
        Vector features are flattened slot-major (x, y, z per slot).
    frame_index : ndarray of int, shape (N,)
    skipped : ndarray of int
        Frames dropped because a joint was missing.
    """
    frames = np.asarray(frames, dtype=float)
    if frames.ndim != 3 or frames.shape[1:] != (13, 3):
        raise InvalidInputError(f"expected (F, 13, 3) frames, got {frames.shape}")
    complete = np.all(np.isfinite(frames), axis=(1, 2))
    index = np.flatnonzero(complete)
    kept = frames[index]
    if kind == "length":
        records = _length_block(kept).reshape(len(index), len(LENGTH_NAMES))
    elif kind == "vector":
        records = _vector_block(kept).reshape(len(index), 3 * len(VECTOR_NAMES))
    else:
        raise InvalidInputError(f"unknown feature kind {kind!r}")
    return records, index, np.flatnonzero(~complete)
