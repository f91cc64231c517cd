"""Pinhole cameras, ray generation, and trajectory files."""

from __future__ import annotations

import dataclasses

import numpy as np


def _normalize(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


@dataclasses.dataclass
class PinholeCamera:
    position: np.ndarray
    look_at: np.ndarray
    up: np.ndarray
    vfov_deg: float
    width: int
    height: int
    exposure: float | None = None

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        self.look_at = np.asarray(self.look_at, dtype=np.float64)
        self.up = np.asarray(self.up, dtype=np.float64)

    def basis(self):
        forward = _normalize(self.look_at - self.position)
        right = _normalize(np.cross(forward, self.up))
        true_up = np.cross(right, forward)
        return forward, right, true_up

    def ray_directions(self):
        """Unit directions through all pixel centers, shape (H, W, 3)."""
        forward, right, true_up = self.basis()
        tan_half = np.tan(np.deg2rad(self.vfov_deg) / 2.0)
        aspect = self.width / self.height
        cols = (np.arange(self.width) + 0.5) / self.width * 2.0 - 1.0
        rows = 1.0 - (np.arange(self.height) + 0.5) / self.height * 2.0
        dx = cols[None, :, None] * (tan_half * aspect) * right
        dy = rows[:, None, None] * tan_half * true_up
        d = forward + dx + dy
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def pixel_rays(self, pixels):
        """Unit directions for (row, col) integer pixel pairs, shape (N, 3)."""
        forward, right, true_up = self.basis()
        tan_half = np.tan(np.deg2rad(self.vfov_deg) / 2.0)
        aspect = self.width / self.height
        px = np.asarray(pixels, dtype=np.float64)
        ndc_x = (px[:, 1] + 0.5) / self.width * 2.0 - 1.0
        ndc_y = 1.0 - (px[:, 0] + 0.5) / self.height * 2.0
        d = (
            forward
            + ndc_x[:, None] * (tan_half * aspect) * right
            + ndc_y[:, None] * tan_half * true_up
        )
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def transformed(self, fn) -> "PinholeCamera":
        """Apply a point transform (e.g. world-to-normalized) to the pose."""
        return dataclasses.replace(
            self, position=fn(self.position), look_at=fn(self.look_at)
        )


def ring_cameras(count, radius, height, look_at=(0.0, 0.0, 0.0), vfov_deg=55.0,
                 width=64, image_height=64, up=(0.0, 0.0, 1.0), phase=0.0):
    """Cameras on a horizontal circle, all aimed at a common target."""
    cams = []
    for i in range(count):
        a = phase + 2 * np.pi * i / count
        pos = np.array([radius * np.cos(a), radius * np.sin(a), height])
        cams.append(
            PinholeCamera(
                position=pos, look_at=np.asarray(look_at, float), up=np.asarray(up, float),
                vfov_deg=vfov_deg, width=width, height=image_height,
            )
        )
    return cams


def save_trajectory(path, cameras):
    """One pose per line: position, look-at, up, vertical FOV (10 floats)."""
    with open(path, "w") as f:
        for c in cameras:
            vals = list(c.position) + list(c.look_at) + list(c.up) + [c.vfov_deg]
            f.write(" ".join(f"{v:.9g}" for v in vals) + "\n")


def load_trajectory(path, width=128, height=128):
    cams = []
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [float(x) for x in line.split()]
            if len(parts) != 10:
                raise ValueError(f"{path}:{ln}: expected 10 floats per pose, got {len(parts)}")
            cams.append(
                PinholeCamera(
                    position=parts[0:3], look_at=parts[3:6], up=parts[6:9],
                    vfov_deg=parts[9], width=width, height=height,
                )
            )
    if not cams:
        raise ValueError(f"{path}: no poses found")
    return cams
