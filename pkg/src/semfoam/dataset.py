"""Filesystem dataset layout.

A dataset is a directory with ``cameras.txt`` (one camera per line:
``name w h fx fy cx cy r00 .. r22 tx ty tz``), ``images/<name>.ppm``,
``masks/<name>.pgm``, ``split.txt`` (``name train|val|test``),
``classes.txt`` (one class name per line, index = class id), and an
optional ``points.txt`` seed point cloud (``x y z`` per line).
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .cameras import Camera
from .imageio import read_pgm, read_ppm, write_pgm, write_ppm


@dataclass
class Dataset:
    cameras: list[Camera]
    images: list[np.ndarray]  # (H, W, 3) float in [0, 1]
    masks: list[np.ndarray]  # (H, W) uint8 class ids, 255 = ignore
    split: dict[str, str]  # camera name -> train|val|test
    class_names: list[str]
    points: np.ndarray | None = None  # optional (P, 3) init point cloud
    background_class: int = 0

    def __post_init__(self):
        for cam, img, msk in zip(self.cameras, self.images, self.masks):
            if img.shape != (cam.height, cam.width, 3) or msk.shape != (
                cam.height,
                cam.width,
            ):
                raise ValueError(f"image/mask size mismatch for {cam.name}")

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def indices(self, split: str) -> list[int]:
        return [
            k for k, cam in enumerate(self.cameras) if self.split[cam.name] == split
        ]


def format_camera(cam: Camera) -> str:
    nums = [cam.fx, cam.fy, cam.cx, cam.cy]
    nums += list(cam.rotation.reshape(-1)) + list(cam.origin)
    return " ".join(
        [cam.name, str(cam.width), str(cam.height)]
        + [repr(float(v)) for v in nums]
    )


def parse_camera(line: str) -> Camera:
    parts = line.split()
    name = parts[0]
    w, h = int(parts[1]), int(parts[2])
    fx, fy, cx, cy = (float(v) for v in parts[3:7])
    rot = np.array([float(v) for v in parts[7:16]]).reshape(3, 3)
    t = np.array([float(v) for v in parts[16:19]])
    m = np.hstack([rot, t[:, None]])
    return Camera(name=name, width=w, height=h, fx=fx, fy=fy, cx=cx, cy=cy, world_from_camera=m)


def save_dataset(root, ds: Dataset) -> None:
    os.makedirs(os.path.join(root, "images"), exist_ok=True)
    os.makedirs(os.path.join(root, "masks"), exist_ok=True)
    with open(os.path.join(root, "cameras.txt"), "w") as f:
        for cam in ds.cameras:
            f.write(format_camera(cam) + "\n")
    with open(os.path.join(root, "split.txt"), "w") as f:
        for cam in ds.cameras:
            f.write(f"{cam.name} {ds.split[cam.name]}\n")
    with open(os.path.join(root, "classes.txt"), "w") as f:
        for name in ds.class_names:
            f.write(name + "\n")
    for cam, img, msk in zip(ds.cameras, ds.images, ds.masks):
        write_ppm(os.path.join(root, "images", cam.name + ".ppm"), img)
        write_pgm(os.path.join(root, "masks", cam.name + ".pgm"), msk)
    if ds.points is not None:
        np.savetxt(os.path.join(root, "points.txt"), ds.points, fmt="%.17g")


def load_dataset(root) -> Dataset:
    cameras = []
    with open(os.path.join(root, "cameras.txt")) as f:
        for line in f:
            line = line.strip()
            if line:
                cameras.append(parse_camera(line))
    split = {}
    with open(os.path.join(root, "split.txt")) as f:
        for line in f:
            if line.strip():
                name, part = line.split()
                split[name] = part
    with open(os.path.join(root, "classes.txt")) as f:
        class_names = [ln.strip() for ln in f if ln.strip()]
    images = [read_ppm(os.path.join(root, "images", c.name + ".ppm")) for c in cameras]
    masks = [read_pgm(os.path.join(root, "masks", c.name + ".pgm")) for c in cameras]
    points_path = os.path.join(root, "points.txt")
    points = np.loadtxt(points_path).reshape(-1, 3) if os.path.exists(points_path) else None
    return Dataset(
        cameras=cameras,
        images=images,
        masks=masks,
        split=split,
        class_names=class_names,
        points=points,
    )
