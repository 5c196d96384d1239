"""Semantics-driven scene edits.

Objects are addressed by class label through the cell adjacency graph: the
core is every high-density cell carrying the label, the shell its same-label
1-ring of near-vacuum neighbors.  Extraction lifts core+shell into a
standalone scene, removal deletes them and re-triangulates, and insertion
transplants an object scene under a rigid+scale transform after clearing the
host cells it would occupy.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.spatial import Delaunay as SciDelaunay
from scipy.spatial import QhullError

from . import sh
from .errors import OutOfBounds, SemfoamError, TooFewSites
from .geometry import BoundingBox, Triangulation, build_delaunay, remove_sites
from .scene import FoamScene
from .semantics import cell_labels

DEFAULT_TAU = 1e-2


class EmptyClass(SemfoamError):
    """No cells match the requested class under the density threshold."""


class ClassIdCollision(SemfoamError):
    """Requested class id for an inserted object is already taken."""


@dataclass(frozen=True)
class Transform:
    """Rigid motion with a uniform scale: x -> scale * R x + t."""

    rotation: np.ndarray
    translation: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-8) or np.linalg.det(r) < 0:
            raise ValueError("rotation must be a proper orthonormal matrix")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Transform":
        return Transform(np.eye(3), np.zeros(3), 1.0)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * (np.asarray(points) @ self.rotation.T) + self.translation


@dataclass
class ObjectSelection:
    class_id: int
    core_cells: np.ndarray  # sorted site indices, sigma >= tau
    shell_cells: np.ndarray  # sorted 1-ring same-label neighbors of the core
    density_threshold: float

    @property
    def all_cells(self) -> np.ndarray:
        return np.sort(np.concatenate([self.core_cells, self.shell_cells]))


def select_object(
    scene: FoamScene, tri: Triangulation, class_id: int, tau_density: float = DEFAULT_TAU
) -> ObjectSelection:
    labels = cell_labels(scene)
    match = labels == class_id
    core_mask = match & (scene.density >= tau_density)
    core = np.nonzero(core_mask)[0]
    if core.size == 0:
        raise EmptyClass(
            f"no cells with label {class_id} and density >= {tau_density}"
        )
    shell_mask = np.zeros(scene.n_sites, dtype=bool)
    for i in core:
        shell_mask[tri.neighbors(int(i))] = True
    shell_mask &= match & ~core_mask
    return ObjectSelection(
        class_id=class_id,
        core_cells=core,
        shell_cells=np.nonzero(shell_mask)[0],
        density_threshold=tau_density,
    )


def extract(
    scene: FoamScene, tri: Triangulation, class_id: int, tau_density: float = DEFAULT_TAU
) -> tuple[ObjectSelection, FoamScene]:
    """Lift a labeled object (core plus vacuum shell) into a standalone
    scene with a tight, 20%-inflated bounding box."""
    sel = select_object(scene, tri, class_id, tau_density)
    idx = sel.all_cells
    box = BoundingBox.around(scene.positions[idx], fraction=0.2)
    return sel, scene.select(idx, box)


def remove(
    scene: FoamScene, tri: Triangulation, class_id: int, tau_density: float = DEFAULT_TAU
) -> tuple[FoamScene, Triangulation, ObjectSelection]:
    """Delete a labeled object's core and shell cells and re-triangulate."""
    sel = select_object(scene, tri, class_id, tau_density)
    idx = sel.all_cells
    if scene.n_sites - idx.size < 5:
        raise TooFewSites("removal would leave fewer than 5 sites")
    _, new_tri, mapping = remove_sites(tri, scene.positions, idx)
    keep = mapping >= 0
    return scene.select(np.nonzero(keep)[0], scene.box), new_tri, sel


def _components(obj_scene: FoamScene) -> list[np.ndarray]:
    """Connected components of the object's own adjacency graph."""
    n = obj_scene.n_sites
    if n < 2:
        return [np.arange(n)]
    obj_tri = build_delaunay(obj_scene.positions, obj_scene.box, allow_small=True)
    e = obj_tri.edges
    adj = sp.coo_matrix(
        (np.ones(e.shape[0]), (e[:, 0], e[:, 1])), shape=(n, n)
    )
    n_comp, label = connected_components(adj, directed=False)
    return [np.nonzero(label == c)[0] for c in range(n_comp)]


def _occupied(host_points: np.ndarray, comp_points: np.ndarray) -> np.ndarray:
    """Host sites inside the convex hull of one object component."""
    if comp_points.shape[0] < 4:
        return np.zeros(host_points.shape[0], dtype=bool)
    try:
        hull = SciDelaunay(comp_points)
    except QhullError:
        return np.zeros(host_points.shape[0], dtype=bool)
    return hull.find_simplex(host_points) >= 0


def _fresh_head_row(
    host_w: np.ndarray,
    host_b: np.ndarray,
    host_identity: np.ndarray,
    obj_identity: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Extend the classifier so inserted cells win a fresh class.

    Inserted identities are shifted along a direction orthogonal to every
    existing head row (so old logits are untouched), and the new row fires
    on that direction with a margin over every logit in either scene.
    """
    d = host_w.shape[1]
    _, s, vt = np.linalg.svd(host_w, full_matrices=True)
    rank = int((s > 1e-10 * max(s[0], 1.0)).sum()) if s.size else 0
    if rank < d:
        e = vt[rank]
    else:
        e = vt[-1]  # least-used direction; old logits move slightly
    span = max(
        np.abs(obj_identity @ e).max(initial=0.0),
        np.abs(host_identity @ e).max(initial=0.0),
    )
    shift = (4.0 + 2.0 * span) * e
    moved = obj_identity + shift
    lo_ins = float((moved @ e).min())
    hi_host = float((host_identity @ e).max(initial=0.0))
    theta = 0.5 * (lo_ins + hi_host)
    gap = max(lo_ins - hi_host, 1e-6)
    old_max = max(
        np.abs(host_identity @ host_w.T + host_b).max(initial=0.0),
        np.abs(moved @ host_w.T + host_b).max(initial=0.0),
    )
    gamma = 2.0 * (old_max + 10.0) / gap
    return moved, gamma * e, -gamma * theta


def insert(
    scene: FoamScene,
    tri: Triangulation,
    object_scene: FoamScene,
    transform: Transform | None = None,
    class_name: str | None = None,
) -> tuple[FoamScene, Triangulation, dict]:
    """Place an object scene into a host scene.

    Host sites inside the transformed object's per-component convex hulls
    are deleted, object sites are appended with rotated SH, density scaled
    by 1/scale, and identities remapped to a fresh class id.
    """
    if transform is None:
        transform = Transform.identity()
    if object_scene.n_sites == 0:
        return scene, tri, {"new_class": None, "deleted_host_sites": 0}
    if object_scene.id_dim != scene.id_dim or object_scene.sh_degree != scene.sh_degree:
        raise ValueError("object and host parameterizations differ")
    new_pos = transform.apply(object_scene.positions)
    if not np.all(scene.box.contains(new_pos, strict=True)):
        raise OutOfBounds("transformed object does not fit inside the host box")

    occupied = np.zeros(scene.n_sites, dtype=bool)
    moved_obj = replace(object_scene, positions=new_pos, box=object_scene.box)
    for comp in _components(object_scene):
        occupied |= _occupied(scene.positions, new_pos[comp])
    drop = np.nonzero(occupied)[0]
    if scene.n_sites - drop.size < 5:
        raise TooFewSites("insertion would delete nearly the whole host")
    host = scene.select(np.nonzero(~occupied)[0], scene.box)

    new_class = host.n_classes
    moved_id, w_row, b_row = _fresh_head_row(
        host.head_w, host.head_b, host.identity, object_scene.identity
    )
    name = class_name or f"inserted_{new_class}"
    if name in host.class_names:
        base = name
        k = 2
        while f"{base}_{k}" in host.class_names:
            k += 1
        name = f"{base}_{k}"

    merged = replace(
        host,
        positions=np.vstack([host.positions, new_pos]),
        raw_density=np.concatenate(
            [host.raw_density, _scale_raw_density(object_scene, transform.scale)]
        ),
        sh_coeffs=np.concatenate(
            [
                host.sh_coeffs,
                sh.rotate_coeffs(object_scene.sh_coeffs, transform.rotation),
            ]
        ),
        identity=np.vstack([host.identity, moved_id]),
        head_w=np.vstack([host.head_w, w_row]),
        head_b=np.concatenate([host.head_b, [b_row]]),
        class_names=(host.class_names + [name]) if host.class_names else [],
    )
    new_tri = build_delaunay(merged.positions, scene.box)
    info = {
        "new_class": new_class,
        "class_name": name,
        "deleted_host_sites": int(drop.size),
        "inserted_sites": object_scene.n_sites,
    }
    return merged, new_tri, info


def _scale_raw_density(object_scene: FoamScene, scale: float) -> np.ndarray:
    """Re-parameterize raw densities so sigma' = sigma / scale, keeping
    optical depth invariant under the spatial rescale."""
    if scale == 1.0:
        return object_scene.raw_density.copy()
    from .scene import softplus_inv

    return softplus_inv(object_scene.density / scale)
