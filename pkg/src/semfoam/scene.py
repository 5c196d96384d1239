"""The trainable scene model and its parameter arrays."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import sh
from .geometry import BoundingBox


def softplus(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def softplus_inv(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class FoamScene:
    """Sites with density, SH appearance and identity encodings, plus the
    linear classifier head mapping rendered identity vectors to classes."""

    positions: np.ndarray  # (N, 3)
    raw_density: np.ndarray  # (N,) density is softplus(raw_density)
    sh_coeffs: np.ndarray  # (N, 3, (L+1)^2)
    identity: np.ndarray  # (N, D)
    head_w: np.ndarray  # (K, D)
    head_b: np.ndarray  # (K,)
    box: BoundingBox
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        n = self.positions.shape[0]
        if not (
            self.raw_density.shape == (n,)
            and self.sh_coeffs.shape[0] == n
            and self.sh_coeffs.shape[1] == 3
            and self.identity.shape[0] == n
            and self.head_w.shape == (self.head_b.shape[0], self.identity.shape[1])
        ):
            raise ValueError("scene parameter arrays are not congruent")

    @property
    def n_sites(self) -> int:
        return self.positions.shape[0]

    @property
    def sh_degree(self) -> int:
        return sh.degree_of(self.sh_coeffs.shape[2])

    @property
    def id_dim(self) -> int:
        return self.identity.shape[1]

    @property
    def n_classes(self) -> int:
        return self.head_b.shape[0]

    @property
    def density(self) -> np.ndarray:
        return softplus(self.raw_density)

    def copy(self) -> "FoamScene":
        return FoamScene(
            positions=self.positions.copy(),
            raw_density=self.raw_density.copy(),
            sh_coeffs=self.sh_coeffs.copy(),
            identity=self.identity.copy(),
            head_w=self.head_w.copy(),
            head_b=self.head_b.copy(),
            box=self.box,
            class_names=list(self.class_names),
        )

    def select(self, idx: np.ndarray, box: BoundingBox | None = None) -> "FoamScene":
        """Sub-scene over the given site indices (head copied)."""
        return replace(
            self,
            positions=self.positions[idx].copy(),
            raw_density=self.raw_density[idx].copy(),
            sh_coeffs=self.sh_coeffs[idx].copy(),
            identity=self.identity[idx].copy(),
            head_w=self.head_w.copy(),
            head_b=self.head_b.copy(),
            box=box if box is not None else self.box,
        )


def init_scene(
    box: BoundingBox,
    rng: np.random.Generator,
    n_sites: int = 1024,
    sh_degree: int = 0,
    id_dim: int = 16,
    n_classes: int = 2,
    init_positions: np.ndarray | None = None,
    init_density: float = 0.1,
    init_gray: float = 0.5,
    identity_std: float = 0.1,
    class_names: list[str] | None = None,
) -> FoamScene:
    """Fresh scene: uniform-random (or given) sites, near-vacuum density,
    mid-gray ambient color, small random identities, zero head."""
    if init_positions is not None:
        positions = np.ascontiguousarray(init_positions, dtype=np.float64)
        n_sites = positions.shape[0]
    else:
        span = box.hi - box.lo
        positions = box.lo + 0.02 * span + rng.random((n_sites, 3)) * 0.96 * span
    coeffs = np.zeros((n_sites, 3, sh.n_coeffs(sh_degree)))
    coeffs[:, :, 0] = sh.ambient_coeff(init_gray)
    return FoamScene(
        positions=positions,
        raw_density=np.full(n_sites, float(softplus_inv(init_density))),
        sh_coeffs=coeffs,
        identity=identity_std * rng.standard_normal((n_sites, id_dim)),
        head_w=np.zeros((n_classes, id_dim)),
        head_b=np.zeros(n_classes),
        box=box,
        class_names=class_names or [f"class_{k}" for k in range(n_classes)],
    )
