"""Class probabilities from rendered identity features, the 2D identity
cross-entropy loss, and the face-area-weighted total-variation loss on the
cell adjacency graph."""

from __future__ import annotations

import numpy as np

from .backend import jit
from .errors import ShapeMismatch
from .geometry import Triangulation
from .scene import FoamScene

# Label id reserved for unsupervised pixels: one past the last class.
def ignore_id(n_classes: int) -> int:
    return n_classes


IGNORE_PGM = 255  # ignore value in mask files

# Face-area clamp: areas below this floor count as this floor, keeping a
# non-zero smoothing penalty on every adjacent pair; the area itself never
# receives gradient.
DEFAULT_AREA_CLAMP = 1.0


def head_logits(identity: np.ndarray, head_w: np.ndarray, head_b: np.ndarray) -> np.ndarray:
    return np.asarray(identity) @ head_w.T + head_b


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def classify(identity: np.ndarray, head_w: np.ndarray, head_b: np.ndarray) -> np.ndarray:
    """Class probabilities for identity vectors (..., D) -> (..., K)."""
    return softmax(head_logits(identity, head_w, head_b))


def identity_loss(
    logits: np.ndarray, labels: np.ndarray, n_classes: int
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over supervised pixels, fused with softmax.

    Returns (loss, d_logits); pixels labeled with the ignore id contribute
    nothing.  All-ignore batches yield loss 0 with zero gradients.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels).reshape(-1)
    if logits.shape[0] != labels.shape[0] or logits.shape[1] != n_classes:
        raise ShapeMismatch("logits/labels disagree")
    live = labels < n_classes
    count = int(live.sum())
    if count == 0:
        return 0.0, np.zeros_like(logits)
    z = logits[live]
    y = labels[live]
    zmax = z.max(axis=1, keepdims=True)
    logsum = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    loss = float((logsum - z[np.arange(count), y]).mean())
    p = softmax(z)
    p[np.arange(count), y] -= 1.0
    d_logits = np.zeros_like(logits)
    d_logits[live] = p / count
    return loss, d_logits


@jit
def _tv_kernel(identity, edges, areas, clamp_min, d_identity):
    n_sites = identity.shape[0]
    n_d = identity.shape[1]
    total = 0.0
    for e in range(edges.shape[0]):
        i = edges[e, 0]
        j = edges[e, 1]
        a = areas[e]
        if a < clamp_min:
            a = clamp_min
        # each unordered face is counted once per endpoint
        coef = 2.0 * a / n_sites
        for d in range(n_d):
            diff = identity[i, d] - identity[j, d]
            if diff > 0.0:
                total += coef * diff
                d_identity[i, d] += coef
                d_identity[j, d] -= coef
            elif diff < 0.0:
                total -= coef * diff
                d_identity[i, d] -= coef
                d_identity[j, d] += coef
    return total


def tv_loss(
    identity: np.ndarray,
    tri: Triangulation,
    clamp_min: float = DEFAULT_AREA_CLAMP,
) -> tuple[float, np.ndarray]:
    """Mean over cells of the L1 identity difference to each neighbor,
    weighted by the (clamped) shared-face area; the area is a constant in
    the adjoint.  Returns (loss, d_identity)."""
    if identity.shape[0] != tri.n_sites:
        raise ShapeMismatch("identity array does not match triangulation")
    d_identity = np.zeros_like(identity)
    total = _tv_kernel(
        np.ascontiguousarray(identity, dtype=np.float64),
        tri.edges,
        tri.face_areas,
        clamp_min,
        d_identity,
    )
    return float(total), d_identity


def cell_labels(scene: FoamScene) -> np.ndarray:
    """Per-cell class id: argmax of the head over each identity encoding
    (ties break toward the lower class id)."""
    logits = head_logits(scene.identity, scene.head_w, scene.head_b)
    return np.argmax(logits, axis=1)
