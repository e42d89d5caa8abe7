"""Pinhole back-projection of 2-D joint detections using per-pixel range.

Image coordinates are continuous pixel positions with the principal point
at ``(pixels_x / 2, pixels_y / 2)``.  A world coordinate along one image
axis is

    coord = (2 / n_pixels) * tan(aov / 2) * pixel_offset * depth

and the third coordinate is the range value itself.  Skeleton frames are
``(13, 2)`` pixel arrays and ``(13, 3)`` world arrays; a missing joint is a
row of NaN.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError, InvalidDepthError, InvalidInputError

N_JOINTS = 13


@dataclass(frozen=True)
class CameraModel:
    """Sensor resolution and angles of view (radians).

    ``aov_y`` defaults to ``aov_x`` (square focal plane).
    """

    pixels_x: int = 128
    pixels_y: int = 128
    aov_x: float = math.pi / 4
    aov_y: Optional[float] = None

    def __post_init__(self):
        if self.aov_y is None:
            object.__setattr__(self, "aov_y", self.aov_x)
        if int(self.pixels_x) < 1 or int(self.pixels_y) < 1:
            raise ConfigurationError("pixel counts must be >= 1")
        for aov in (self.aov_x, self.aov_y):
            if not (0.0 < aov < math.pi):
                raise ConfigurationError(f"angle of view {aov} outside (0, pi)")

    @property
    def center(self):
        return self.pixels_x / 2.0, self.pixels_y / 2.0

    def meters_per_pixel(self, depth):
        """Footprint of one pixel (x, y) at the given depth."""
        return (
            2.0 / self.pixels_x * math.tan(self.aov_x / 2.0) * depth,
            2.0 / self.pixels_y * math.tan(self.aov_y / 2.0) * depth,
        )


def project_coordinate(pixel_offset, depth, n_pixels, aov):
    """World coordinate of a signed pixel offset from the image center.

    Works elementwise on arrays as well as on scalars.

    Raises
    ------
    InvalidInputError
        If any input is non-finite.
    InvalidDepthError
        If any depth is not strictly positive.
    """
    offset = np.asarray(pixel_offset, dtype=float)
    d = np.asarray(depth, dtype=float)
    if not (np.all(np.isfinite(offset)) and np.all(np.isfinite(d))
            and math.isfinite(n_pixels) and math.isfinite(aov)):
        raise InvalidInputError("non-finite input to projection")
    if np.any(d <= 0):
        raise InvalidDepthError("depth must be > 0")
    if n_pixels < 1:
        raise InvalidInputError("n_pixels must be >= 1")
    out = (2.0 / n_pixels) * math.tan(aov / 2.0) * offset * d
    return float(out) if out.ndim == 0 else out


def pixel_offset(coordinate, depth, n_pixels, aov):
    """Inverse of :func:`project_coordinate`."""
    coordinate = np.asarray(coordinate, dtype=float)
    d = np.asarray(depth, dtype=float)
    if np.any(d <= 0):
        raise InvalidDepthError("depth must be > 0")
    out = coordinate * n_pixels / (2.0 * math.tan(aov / 2.0) * d)
    return float(out) if out.ndim == 0 else out


def sample_range(joints_2d, range_frame, cam: CameraModel):
    """Nearest-pixel depth under each joint; NaN for missing joints."""
    joints_2d = np.asarray(joints_2d, dtype=float)
    range_frame = np.asarray(range_frame, dtype=float)
    if range_frame.shape != (cam.pixels_y, cam.pixels_x):
        raise ConfigurationError(
            f"range frame shape {range_frame.shape} does not match camera "
            f"({cam.pixels_y}, {cam.pixels_x})")
    depth = np.full(joints_2d.shape[0], np.nan)
    present = np.all(np.isfinite(joints_2d), axis=1)
    if present.any():
        col = np.clip(np.floor(joints_2d[present, 0] + 0.5), 0, cam.pixels_x - 1).astype(int)
        row = np.clip(np.floor(joints_2d[present, 1] + 0.5), 0, cam.pixels_y - 1).astype(int)
        depth[present] = range_frame[row, col]
    return depth


def project_joints(joints_2d, depth, cam: CameraModel):
    """Back-project pixel joints given a depth per joint.

    Joints that are missing, outside the image, or whose depth is not a
    positive finite number (0 encodes no laser return) come out missing.
    """
    joints_2d = np.asarray(joints_2d, dtype=float)
    depth = np.asarray(depth, dtype=float)
    if joints_2d.ndim != 2 or joints_2d.shape[1] != 2:
        raise ConfigurationError(f"expected (M, 2) pixel joints, got {joints_2d.shape}")
    if depth.shape != (joints_2d.shape[0],):
        raise ConfigurationError("one depth value per joint required")
    out = np.full((joints_2d.shape[0], 3), np.nan)
    with np.errstate(invalid="ignore"):
        ok = (np.all(np.isfinite(joints_2d), axis=1) & np.isfinite(depth) & (depth > 0)
              & (joints_2d[:, 0] >= 0) & (joints_2d[:, 0] < cam.pixels_x)
              & (joints_2d[:, 1] >= 0) & (joints_2d[:, 1] < cam.pixels_y))
    if ok.any():
        cx, cy = cam.center
        d = depth[ok]
        out[ok, 0] = project_coordinate(joints_2d[ok, 0] - cx, d, cam.pixels_x, cam.aov_x)
        out[ok, 1] = project_coordinate(joints_2d[ok, 1] - cy, d, cam.pixels_y, cam.aov_y)
        out[ok, 2] = d
    return out


def project_skeleton(joints_2d, range_frame, cam: CameraModel):
    """Project one ``(13, 2)`` pixel skeleton into world coordinates.

    Parameters
    ----------
    joints_2d : array_like, shape (13, 2)
        Pixel coordinates, NaN rows for undetected joints.
    range_frame : array_like, shape (pixels_y, pixels_x)
        Depth in meters; 0 means no return.
    cam : CameraModel

    Returns
    -------
    ndarray, shape (13, 3)
        World coordinates with NaN rows for missing joints.
    """
    return project_joints(joints_2d, sample_range(joints_2d, range_frame, cam), cam)


def unproject_joints(joints_3d, cam: CameraModel):
    """Map world joints back to continuous pixel coordinates.

    Returns ``(pixels, depth)``; missing joints stay NaN.
    """
    joints_3d = np.asarray(joints_3d, dtype=float)
    pix = np.full(joints_3d.shape[:-1] + (2,), np.nan)
    z = joints_3d[..., 2]
    with np.errstate(invalid="ignore"):
        ok = np.all(np.isfinite(joints_3d), axis=-1) & (z > 0)
    cx, cy = cam.center
    pix[..., 0][ok] = pixel_offset(joints_3d[..., 0][ok], z[ok], cam.pixels_x, cam.aov_x) + cx
    pix[..., 1][ok] = pixel_offset(joints_3d[..., 1][ok], z[ok], cam.pixels_y, cam.aov_y) + cy
    return pix, np.where(ok, z, np.nan)
