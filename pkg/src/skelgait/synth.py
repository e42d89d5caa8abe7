"""Synthetic walking skeletons with known geometry and labelled corruption.

World coordinates follow the camera: x to the right, y downward, z along
the optical axis.  The ground plane sits ``camera_height`` meters below the
sensor (``y = +camera_height``).

The walker is a rigid 13-joint body driven by phase-coupled sinusoids.  A
gait phase ``phi`` advances by ``pi`` per step; the hips swing with
amplitude ``A`` in antiphase, the knees flex by ``k0 + kA sin^2(phi)`` and
the arms swing against the same-side leg.  Every segment is built as joint
plus length times a unit vector, so limb lengths are exact on every frame.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .camera import CameraModel, unproject_joints
from .errors import ConfigurationError
from .features import JointId as J
from .jointseq import JointMatrix, build_joint_matrix

PATTERNS = ("FB", "D", "DS")
CLEAN, SPIKED, DROPPED = 0, 1, 2


@dataclass(frozen=True)
class BodyParams:
    """Segment lengths in meters.

    ``shoulder`` is the neck-to-shoulder segment and ``spine`` runs from the
    neck to the hip midpoint.  ``asymmetry`` scales every left-side segment
    by ``1 + asymmetry``.
    """

    shoulder: float = 0.18
    upper_arm: float = 0.30
    lower_arm: float = 0.26
    spine: float = 0.52
    hip_width: float = 0.28
    upper_leg: float = 0.44
    lower_leg: float = 0.43
    asymmetry: float = 0.0

    def __post_init__(self):
        for name in ("shoulder", "upper_arm", "lower_arm", "spine", "hip_width",
                     "upper_leg", "lower_leg"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be > 0")
        if self.asymmetry <= -1:
            raise ConfigurationError("asymmetry must exceed -1")

    @property
    def height(self):
        """Neck height above the ground with straight legs."""
        return self.spine + self.upper_leg + self.lower_leg

    def side(self, name, left):
        v = getattr(self, name)
        return v * (1.0 + self.asymmetry) if left else v


@dataclass(frozen=True)
class WalkParams:
    """Gait and path description.

    ``speed`` defaults to ``step_length * step_frequency``.  ``stick`` holds
    the right arm still in front of the body (diamond-with-stick walks).
    """

    step_frequency: float = 1.8
    step_length: float = 0.65
    path: str = "FB"
    speed: Optional[float] = None
    frame_rate: float = 15.0
    arm_swing: float = 0.35
    knee_gain: float = 1.0
    knee_bias: float = 0.08
    elbow_flexion: float = 0.3
    stick: bool = False
    phase: float = 0.0
    camera_height: float = 1.0
    path_center_z: float = 6.5

    def __post_init__(self):
        if not self.step_frequency > 0:
            raise ConfigurationError("step_frequency must be > 0")
        if not self.frame_rate > 0:
            raise ConfigurationError("frame_rate must be > 0")
        if self.step_length < 0:
            raise ConfigurationError("step_length must be >= 0")
        if self.path not in ("FB", "diamond"):
            raise ConfigurationError(f"unknown path {self.path!r}")
        if self.speed is not None and self.speed < 0:
            raise ConfigurationError("speed must be >= 0")

    @property
    def walking_speed(self):
        return self.step_length * self.step_frequency if self.speed is None else self.speed

    @property
    def step_period_frames(self):
        return self.frame_rate / self.step_frequency


@dataclass(frozen=True)
class CorruptionSpec:
    """Per-entry spike probability, per-joint and per-frame dropout.

    Spike magnitudes are drawn uniformly in ``[spike_scale, 2 * spike_scale]``
    times the clean row's standard deviation, with random sign.
    """

    spike_prob: float = 0.0
    spike_scale: float = 5.0
    missing_joint_prob: float = 0.0
    missing_frame_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("spike_prob", "missing_joint_prob", "missing_frame_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1]")
        if self.spike_scale < 0:
            raise ConfigurationError("spike_scale must be >= 0")


# Ten fixed subjects: (body, (step frequency Hz, step length m, arm swing rad)).
SUBJECTS = (
    (BodyParams(0.170, 0.29, 0.25, 0.50, 0.26, 0.42, 0.41), (1.90, 0.62, 0.35)),
    (BodyParams(0.190, 0.32, 0.27, 0.54, 0.30, 0.46, 0.45), (1.75, 0.72, 0.30)),
    (BodyParams(0.160, 0.27, 0.24, 0.47, 0.25, 0.39, 0.38), (2.05, 0.55, 0.40)),
    (BodyParams(0.200, 0.34, 0.28, 0.57, 0.32, 0.49, 0.48), (1.70, 0.78, 0.25)),
    (BodyParams(0.180, 0.30, 0.26, 0.52, 0.28, 0.44, 0.43), (1.85, 0.66, 0.45)),
    (BodyParams(0.175, 0.31, 0.255, 0.49, 0.29, 0.45, 0.42), (1.95, 0.64, 0.28)),
    (BodyParams(0.185, 0.28, 0.27, 0.55, 0.27, 0.43, 0.46), (1.80, 0.70, 0.38)),
    (BodyParams(0.165, 0.33, 0.25, 0.51, 0.31, 0.47, 0.40), (1.65, 0.68, 0.32)),
    (BodyParams(0.195, 0.30, 0.28, 0.48, 0.26, 0.41, 0.44), (2.00, 0.60, 0.42)),
    (BodyParams(0.170, 0.32, 0.26, 0.53, 0.33, 0.44, 0.47), (1.78, 0.74, 0.36)),
)


def subject_walk(subject, pattern, frame_rate=15.0, phase=0.0):
    """Body and walk parameters of fixture subject ``subject`` (1-based)."""
    if not 1 <= subject <= len(SUBJECTS):
        raise ConfigurationError(f"subject must be in 1..{len(SUBJECTS)}")
    if pattern not in PATTERNS:
        raise ConfigurationError(f"unknown walking pattern {pattern!r}")
    body, (freq, length, swing) = SUBJECTS[subject - 1]
    walk = WalkParams(step_frequency=freq, step_length=length, arm_swing=swing,
                      path="FB" if pattern == "FB" else "diamond",
                      stick=pattern == "DS", frame_rate=frame_rate, phase=phase)
    return body, walk


# -- paths -----------------------------------------------------------------

_STRAIGHT = {"FB": 4.0, "diamond": 2.0}
_TURN_ANGLE = {"FB": math.pi, "diamond": math.pi / 2}
_TURN_RADIUS = {"FB": 0.5, "diamond": 0.5}
_START_HEADING = {"FB": math.pi, "diamond": 3 * math.pi / 4}
_DS = 1e-3


def _heading_profile(path):
    """Heading over one lap sampled every ``_DS`` meters, and the lap length."""
    straight = _STRAIGHT[path]
    turn = _TURN_ANGLE[path] * _TURN_RADIUS[path]
    laps = int(round(2 * math.pi / _TURN_ANGLE[path]))
    lap = laps * (straight + turn)
    s = np.arange(0.0, lap, _DS)
    piece = np.mod(s, straight + turn)
    k = np.floor(s / (straight + turn))
    into_turn = np.clip(piece - straight, 0.0, turn) / turn
    heading = _START_HEADING[path] + _TURN_ANGLE[path] * (k + into_turn)
    return heading, lap


def path_positions(walk: WalkParams, t):
    """Ground position (x, z) and heading at times ``t`` (seconds)."""
    heading, lap = _heading_profile(walk.path)
    step = np.stack([np.sin(heading), np.cos(heading)], axis=1) * _DS
    xz = np.vstack([[0.0, 0.0], np.cumsum(step, axis=0)])[:-1]
    lo, hi = xz.min(axis=0), xz.max(axis=0)
    xz = xz - (lo + hi) / 2 + np.array([0.0, walk.path_center_z])
    s = np.mod(walk.walking_speed * np.asarray(t, dtype=float), lap)
    grid = np.arange(heading.size) * _DS
    x = np.interp(s, grid, xz[:, 0], period=lap)
    z = np.interp(s, grid, xz[:, 1], period=lap)
    sin_h = np.interp(s, grid, np.sin(heading), period=lap)
    cos_h = np.interp(s, grid, np.cos(heading), period=lap)
    psi = np.arctan2(sin_h, cos_h)
    return x, z, psi


# -- kinematics ------------------------------------------------------------

def _swing_amplitude(body, walk):
    leg = body.upper_leg + body.lower_leg
    return math.asin(min(walk.step_length / (2.0 * leg), 0.95))


def generate_walk(body: BodyParams, walk: WalkParams, n_frames: int):
    """Clean walking sequence.

    Returns
    -------
    frames : ndarray, shape (n_frames, 13, 3)
    matrix : JointMatrix
    """
    if n_frames < 2:
        raise ConfigurationError("n_frames must be >= 2")
    t = np.arange(n_frames) / walk.frame_rate
    px, pz, psi = path_positions(walk, t)
    n = n_frames
    fwd = np.stack([np.sin(psi), np.zeros(n), np.cos(psi)], axis=1)
    up = np.tile([0.0, -1.0, 0.0], (n, 1))
    right = np.cross(fwd, up)

    amp = _swing_amplitude(body, walk)
    phi = math.pi * walk.step_frequency * t + walk.phase
    s = np.sin(phi)
    leg = body.upper_leg + body.lower_leg
    bob = 0.03 * amp * leg * np.cos(2 * phi)
    pelvis_h = leg * math.cos(amp) + bob
    center = np.stack([px, np.full(n, walk.camera_height), pz], axis=1) + up * pelvis_h[:, None]

    def sagittal(angle):
        # unit vector rotated forward by `angle` from straight down
        return -up * np.cos(angle)[:, None] + fwd * np.sin(angle)[:, None]

    out = np.empty((n, 13, 3))
    neck = center + up * body.spine
    out[:, J.Neck] = neck
    out[:, J.RShoulder] = neck + right * body.side("shoulder", False)
    out[:, J.LShoulder] = neck - right * body.side("shoulder", True)
    out[:, J.RHip] = center + right * (body.hip_width / 2)
    out[:, J.LHip] = center - right * (body.hip_width / 2)

    knee = walk.knee_bias + walk.knee_gain * amp * s * s
    for hip, kn, ank, sign, left in ((J.RHip, J.RKnee, J.RAnkle, 1.0, False),
                                     (J.LHip, J.LKnee, J.LAnkle, -1.0, True)):
        theta = sign * amp * s
        out[:, kn] = out[:, hip] + sagittal(theta) * body.side("upper_leg", left)
        out[:, ank] = out[:, kn] + sagittal(theta - knee) * body.side("lower_leg", left)

    for sh, el, wr, sign, left in ((J.RShoulder, J.RElbow, J.RWrist, -1.0, False),
                                   (J.LShoulder, J.LElbow, J.LWrist, 1.0, True)):
        if walk.stick and not left:
            alpha = np.full(n, 0.35)
            flex = 1.2
        else:
            alpha = sign * walk.arm_swing * s
            flex = walk.elbow_flexion
        out[:, el] = out[:, sh] + sagittal(alpha) * body.side("upper_arm", left)
        out[:, wr] = out[:, el] + sagittal(alpha + flex) * body.side("lower_arm", left)
    return out, build_joint_matrix(out)


# -- sensor ----------------------------------------------------------------

@dataclass
class SensorSequence:
    """Pixel joints and per-joint depth as a range sensor would see them."""

    pixels: np.ndarray          # (F, 13, 2), NaN when out of view
    depth: np.ndarray           # (F, 13), NaN when out of view
    out_of_view: np.ndarray     # (F, 13) bool
    cam: CameraModel

    def range_frames(self):
        """Render ``(F, pixels_y, pixels_x)`` range images.

        Only the pixels under joints carry a return; where two joints share
        a pixel the nearer one is kept.
        """
        cam = self.cam
        frames = np.zeros((self.pixels.shape[0], cam.pixels_y, cam.pixels_x))
        for t in range(frames.shape[0]):
            ok = np.flatnonzero(np.isfinite(self.depth[t]))
            for j in ok[np.argsort(-self.depth[t, ok], kind="stable")]:
                col = min(int(math.floor(self.pixels[t, j, 0] + 0.5)), cam.pixels_x - 1)
                row = min(int(math.floor(self.pixels[t, j, 1] + 0.5)), cam.pixels_y - 1)
                frames[t, row, col] = self.depth[t, j]
        return frames


def project_to_sensor(frames, cam: CameraModel, quantize=False):
    """Image-plane view of world skeletons (inverse of the back-projection).

    Joints that project outside the image or lie behind the sensor are
    reported in ``out_of_view`` and left missing.  With ``quantize`` the
    pixel coordinates snap to the nearest integer.
    """
    frames = np.asarray(frames, dtype=float)
    pix, depth = unproject_joints(frames, cam)
    if quantize:
        pix = np.floor(pix + 0.5)
    present = np.all(np.isfinite(frames), axis=-1)
    with np.errstate(invalid="ignore"):
        inside = ((pix[..., 0] >= 0) & (pix[..., 0] < cam.pixels_x)
                  & (pix[..., 1] >= 0) & (pix[..., 1] < cam.pixels_y)
                  & np.isfinite(depth))
    out_of_view = present & ~inside
    pix[~inside] = np.nan
    depth = np.where(inside, depth, np.nan)
    return SensorSequence(pix, depth, out_of_view, cam)


# -- corruption ------------------------------------------------------------

def corrupt(matrix: JointMatrix, spec: CorruptionSpec):
    """Inject spikes and dropouts into a joint matrix.

    Returns the corrupted matrix and a ``(39, F)`` label array holding
    ``CLEAN``, ``SPIKED`` or ``DROPPED`` for every entry; a dropped entry is
    labelled dropped even if it was also drawn for a spike.  All random
    draws happen regardless of the probabilities, so a seed fixes the
    masks of every CorruptionSpec that shares it.
    """
    values = matrix.values.copy()
    rows, n = values.shape
    rng = np.random.default_rng(spec.seed)
    spike_draw = rng.random((rows, n))
    magnitude = rng.uniform(1.0, 2.0, (rows, n))
    sign = np.where(rng.random((rows, n)) < 0.5, -1.0, 1.0)
    joint_draw = rng.random((rows // 3, n))
    frame_draw = rng.random(n)

    labels = np.zeros((rows, n), dtype=np.int8)
    with np.errstate(invalid="ignore"):
        scale = np.nanstd(values, axis=1) if n > 1 else np.zeros(rows)
    scale = np.where(np.isfinite(scale) & (scale > 0), scale, 0.1)
    spiked = (spike_draw < spec.spike_prob) & ~np.isnan(values)
    values[spiked] += (sign * magnitude * spec.spike_scale * scale[:, None])[spiked]
    labels[spiked] = SPIKED

    dropped = np.repeat(joint_draw < spec.missing_joint_prob, 3, axis=0)
    dropped |= (frame_draw < spec.missing_frame_prob)[None, :]
    dropped &= ~np.isnan(matrix.values)
    values[dropped] = np.nan
    labels[dropped] = DROPPED
    return JointMatrix(values), labels
