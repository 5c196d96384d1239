"""Pinhole cameras and ray generation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Camera:
    name: str
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    world_from_camera: np.ndarray  # (3, 4): [R | t], camera-to-world

    def __post_init__(self):
        m = np.asarray(self.world_from_camera, dtype=np.float64)
        if m.shape != (3, 4):
            raise ValueError("world_from_camera must be 3x4")
        r = m[:, :3]
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-9):
            raise ValueError("camera rotation is not orthonormal")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside image")
        object.__setattr__(self, "world_from_camera", m)

    @property
    def rotation(self) -> np.ndarray:
        return self.world_from_camera[:, :3]

    @property
    def origin(self) -> np.ndarray:
        return self.world_from_camera[:, 3]

    def pixel_rays(self) -> tuple[np.ndarray, np.ndarray]:
        """Unit ray directions through every pixel center.

        Returns (origins (H*W, 3), dirs (H*W, 3)), row-major pixel order.
        """
        u = (np.arange(self.width) + 0.5 - self.cx) / self.fx
        v = (np.arange(self.height) + 0.5 - self.cy) / self.fy
        uu, vv = np.meshgrid(u, v)
        d_cam = np.stack([uu, vv, np.ones_like(uu)], axis=-1).reshape(-1, 3)
        d_world = d_cam @ self.rotation.T
        d_world /= np.linalg.norm(d_world, axis=1, keepdims=True)
        origins = np.broadcast_to(self.origin, d_world.shape).copy()
        return origins, np.ascontiguousarray(d_world)


def look_at(eye: np.ndarray, target: np.ndarray, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """world_from_camera for a camera at ``eye`` looking at ``target``
    (camera convention: +z forward, +x right, +y down)."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(fwd, up)
    nr = np.linalg.norm(right)
    if nr < 1e-12:
        right = np.cross(fwd, np.array([1.0, 0.0, 0.0]))
        nr = np.linalg.norm(right)
    right /= nr
    down = np.cross(fwd, right)
    m = np.empty((3, 4))
    m[:, 0] = right
    m[:, 1] = down
    m[:, 2] = fwd
    m[:, 3] = eye
    return m


def ring_cameras(
    count: int,
    center: np.ndarray,
    radius: float,
    height: float,
    width: int = 64,
    height_px: int = 64,
    fov_deg: float = 50.0,
    name_prefix: str = "cam",
    phase: float = 0.0,
) -> list[Camera]:
    """Evenly spaced cameras on a horizontal ring, all looking at ``center``."""
    center = np.asarray(center, dtype=np.float64)
    f = 0.5 * width / np.tan(0.5 * np.deg2rad(fov_deg))
    cams = []
    for k in range(count):
        ang = phase + 2.0 * np.pi * k / count
        eye = center + np.array(
            [radius * np.cos(ang), radius * np.sin(ang), height]
        )
        cams.append(
            Camera(
                name=f"{name_prefix}{k:03d}",
                width=width,
                height=height_px,
                fx=f,
                fy=f,
                cx=width / 2.0,
                cy=height_px / 2.0,
                world_from_camera=look_at(eye, center),
            )
        )
    return cams
