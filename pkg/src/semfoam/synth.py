"""Synthetic scenes with analytic ground truth.

Ground-truth RGB and class masks are produced by a closed-form primitive
ray tracer (sphere/box intersections plus front-to-back compositing over
piecewise-constant density) that shares no code with the foam tracer, so
it can serve as an independent oracle for the learned renders.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cameras import Camera, ring_cameras
from .dataset import Dataset
from .errors import BadSpec
from .geometry import BoundingBox

IGNORE = 255


@dataclass(frozen=True)
class Primitive:
    kind: str  # "sphere" | "box"
    class_id: int
    albedo: tuple[float, float, float]
    density: float
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    radius: float = 0.0
    lo: tuple[float, float, float] = (0.0, 0.0, 0.0)
    hi: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def intersect(self, origins: np.ndarray, dirs: np.ndarray):
        """Vectorized entry/exit parameters; (t_in, t_out) with t_in >= t_out
        meaning a miss."""
        if self.kind == "sphere":
            c = np.asarray(self.center)
            oc = origins - c
            b = np.einsum("ij,ij->i", oc, dirs)
            disc = b * b - (np.einsum("ij,ij->i", oc, oc) - self.radius**2)
            root = np.sqrt(np.maximum(disc, 0.0))
            t_in = np.where(disc > 0.0, -b - root, np.inf)
            t_out = np.where(disc > 0.0, -b + root, -np.inf)
            return t_in, t_out
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            ta = (lo - origins) / dirs
            tb = (hi - origins) / dirs
        near = np.minimum(ta, tb)
        far = np.maximum(ta, tb)
        near = np.where(np.isnan(near), -np.inf, near)
        far = np.where(np.isnan(far), np.inf, far)
        t_in = near.max(axis=1)
        t_out = far.min(axis=1)
        return t_in, t_out

    def contains(self, points: np.ndarray) -> np.ndarray:
        if self.kind == "sphere":
            return ((points - np.asarray(self.center)) ** 2).sum(axis=-1) <= self.radius**2
        return np.logical_and(
            (points >= np.asarray(self.lo)).all(axis=-1),
            (points <= np.asarray(self.hi)).all(axis=-1),
        )

    def sample_inside(self, rng: np.random.Generator, count: int) -> np.ndarray:
        if self.kind == "sphere":
            v = rng.standard_normal((count, 3))
            v /= np.linalg.norm(v, axis=1, keepdims=True)
            r = self.radius * rng.random(count) ** (1.0 / 3.0)
            return np.asarray(self.center) + v * r[:, None]
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        return lo + rng.random((count, 3)) * (hi - lo)

    def sample_surface(self, rng: np.random.Generator, count: int) -> np.ndarray:
        if self.kind == "sphere":
            v = rng.standard_normal((count, 3))
            v /= np.linalg.norm(v, axis=1, keepdims=True)
            return np.asarray(self.center) + self.radius * v
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        p = lo + rng.random((count, 3)) * (hi - lo)
        face = rng.integers(0, 6, count)
        for ax in range(3):
            p[face == 2 * ax, ax] = lo[ax]
            p[face == 2 * ax + 1, ax] = hi[ax]
        return p


@dataclass
class SceneSpec:
    name: str
    box: BoundingBox
    primitives: list[Primitive]
    class_names: list[str]

    def __post_init__(self):
        if self.class_names and self.class_names[0] != "background":
            raise BadSpec("class 0 must be background")
        for p in self.primitives:
            if not 1 <= p.class_id < len(self.class_names):
                raise BadSpec(f"primitive class {p.class_id} out of range")


def analytic_render(
    spec: SceneSpec, origins: np.ndarray, dirs: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Closed-form render of a ray batch.

    Returns (rgb (R, 3), alpha (R,), labels (R,)); labels are the class with
    the largest accumulated compositing weight (background = class 0 via the
    residual transmittance), or 255 everywhere for a primitive-free spec.
    """
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    n_rays = origins.shape[0]
    rgb = np.zeros((n_rays, 3))
    alpha = np.zeros(n_rays)
    if not spec.primitives:
        return rgb, alpha, np.full(n_rays, IGNORE, dtype=np.uint8)

    # clip to the scene box
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = (spec.box.lo - origins) / dirs
        tb = (spec.box.hi - origins) / dirs
    near = np.where(np.isnan(np.minimum(ta, tb)), -np.inf, np.minimum(ta, tb))
    far = np.where(np.isnan(np.maximum(ta, tb)), np.inf, np.maximum(ta, tb))
    inside = (origins >= spec.box.lo).all(axis=1) & (origins <= spec.box.hi).all(axis=1)
    t0 = np.maximum(near.max(axis=1), 0.0)
    t0[inside] = 0.0
    t1 = far.min(axis=1)
    hit_box = t0 < t1
    t1 = np.maximum(t1, t0)

    bounds = [t0, t1]
    for prim in spec.primitives:
        p_in, p_out = prim.intersect(origins, dirs)
        bounds.append(np.clip(p_in, t0, t1))
        bounds.append(np.clip(p_out, t0, t1))
    bounds = np.sort(np.stack(bounds, axis=1), axis=1)  # (R, M+1)
    mids = 0.5 * (bounds[:, :-1] + bounds[:, 1:])
    deltas = np.diff(bounds, axis=1)  # (R, M)

    n_classes = len(spec.class_names)
    sigma = np.zeros_like(mids)
    color = np.zeros(mids.shape + (3,))
    seg_class = np.zeros(mids.shape, dtype=np.int64)
    points = origins[:, None, :] + mids[..., None] * dirs[:, None, :]
    for prim in spec.primitives:
        sel = prim.contains(points) & (prim.density > sigma)
        sigma = np.where(sel, prim.density, sigma)
        color = np.where(sel[..., None], np.asarray(prim.albedo), color)
        seg_class = np.where(sel, prim.class_id, seg_class)

    trans_step = np.exp(-sigma * deltas)
    trans = np.cumprod(
        np.concatenate([np.ones((n_rays, 1)), trans_step], axis=1), axis=1
    )
    weights = trans[:, :-1] * (1.0 - trans_step)
    rgb = (weights[..., None] * color).sum(axis=1)
    alpha = 1.0 - trans[:, -1]

    class_weight = np.zeros((n_rays, n_classes))
    for k in range(1, n_classes):
        class_weight[:, k] = (weights * (seg_class == k)).sum(axis=1)
    class_weight[:, 0] = trans[:, -1]  # background takes the residual
    labels = np.argmax(class_weight, axis=1).astype(np.uint8)

    rgb[~hit_box] = 0.0
    alpha[~hit_box] = 0.0
    labels[~hit_box] = 0
    return rgb, alpha, labels


def scene_spec(name: str) -> SceneSpec:
    box = BoundingBox(np.zeros(3), np.ones(3))
    if name == "three_objects":
        prims = [
            Primitive(
                kind="sphere", class_id=1, albedo=(0.85, 0.15, 0.1), density=60.0,
                center=(0.34, 0.36, 0.4), radius=0.14,
            ),
            Primitive(
                kind="box", class_id=2, albedo=(0.1, 0.75, 0.2), density=60.0,
                lo=(0.55, 0.52, 0.22), hi=(0.82, 0.8, 0.52),
            ),
            Primitive(
                kind="sphere", class_id=3, albedo=(0.2, 0.3, 0.9), density=60.0,
                center=(0.45, 0.67, 0.68), radius=0.11,
            ),
        ]
        names = ["background", "red_sphere", "green_box", "blue_sphere"]
        return SceneSpec(name=name, box=box, primitives=prims, class_names=names)
    if name == "one_sphere":
        prims = [
            Primitive(
                kind="sphere", class_id=1, albedo=(0.9, 0.2, 0.1), density=60.0,
                center=(0.5, 0.5, 0.5), radius=0.2,
            )
        ]
        return SceneSpec(name=name, box=box, primitives=prims,
                         class_names=["background", "sphere"])
    if name == "vacuum":
        return SceneSpec(name=name, box=box, primitives=[], class_names=[])
    raise BadSpec(f"unknown synthetic scene spec {name!r}")


def _seed_points(spec: SceneSpec, rng: np.random.Generator, count: int) -> np.ndarray:
    """Init point cloud: uniform background plus per-primitive volume and
    surface-hugging samples (the analog of an SfM seed cloud)."""
    span = spec.box.hi - spec.box.lo
    uniform = spec.box.lo + 0.02 * span + rng.random((count // 3, 3)) * 0.96 * span
    chunks = [uniform]
    if spec.primitives:
        per = (count - uniform.shape[0]) // len(spec.primitives)
        for prim in spec.primitives:
            inner = prim.sample_inside(rng, per // 2)
            surf = prim.sample_surface(rng, per - per // 2)
            surf = surf + 0.01 * span.mean() * rng.standard_normal(surf.shape)
            chunks += [inner, surf]
    pts = np.vstack(chunks)
    return np.clip(pts, spec.box.lo + 0.01 * span, spec.box.hi - 0.01 * span)


def generate_synthetic(
    name: str,
    seed: int = 0,
    n_train: int = 30,
    n_val: int = 5,
    n_test: int = 5,
    size: int = 64,
    n_points: int = 1800,
) -> tuple[Dataset, SceneSpec]:
    """Render a synthetic dataset (train/val/test camera rings) for a named
    scene description."""
    spec = scene_spec(name)
    rng = np.random.default_rng(seed)
    center = spec.box.center
    radius = 1.55 * spec.box.diagonal / np.sqrt(3.0)
    cams: list[Camera] = []
    split: dict[str, str] = {}
    rings = [
        ("train", n_train, 0.55, 0.0),
        ("val", n_val, 0.18, 0.35),
        ("test", n_test, 0.9, 0.71),
    ]
    for part, count, height, phase in rings:
        ring = ring_cameras(
            count,
            center,
            radius,
            height * spec.box.diagonal / np.sqrt(3.0),
            width=size,
            height_px=size,
            name_prefix=part + "_",
            phase=phase,
        )
        cams += ring
        for cam in ring:
            split[cam.name] = part

    images, masks = [], []
    for cam in cams:
        origins, dirs = cam.pixel_rays()
        rgb, _, labels = analytic_render(spec, origins, dirs)
        images.append(rgb.reshape(size, size, 3))
        masks.append(labels.reshape(size, size))

    ds = Dataset(
        cameras=cams,
        images=images,
        masks=masks,
        split=split,
        class_names=spec.class_names or ["background"],
        points=_seed_points(spec, rng, n_points) if spec.primitives else None,
    )
    return ds, spec
