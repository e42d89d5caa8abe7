"""Lidar-style skeleton gait recognition with joint-trajectory correction."""

__version__ = "0.1.0"
