"""Ray traversal through the Voronoi partition, one cell at a time.

Each step intersects the ray with the bisector planes toward the current
cell's neighbors; the earliest forward crossing selects the next cell, so
per-cell cost is O(degree).  Degenerate edge/vertex crossings are survived
by emitting zero-width segments and, if the walk chatters, nudging the ray
forward and re-locating.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backend import jit
from .errors import NonGenericCrossing, StuckRay
from .geometry import BoundingBox, Triangulation, _locate_walk

EPS_SEG = 1e-7  # relative to box diagonal
EPS_STEP = 1e-9  # relative to box diagonal


def max_steps_for(n_sites: int) -> int:
    return int(16.0 * n_sites ** (1.0 / 3.0)) + 64


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray  # unit
    t_min: float
    t_max: float

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64)
        d = np.asarray(self.direction, dtype=np.float64)
        if abs(np.linalg.norm(d) - 1.0) > 1e-12:
            raise ValueError("ray direction must be unit length")
        if not self.t_min < self.t_max:
            raise ValueError("require t_min < t_max")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)


@dataclass
class SegmentList:
    """Ordered per-ray cell segments; contiguous: t_out[n] == t_in[n+1]."""

    cells: np.ndarray  # (S,) site indices
    t: np.ndarray  # (S+1,) boundary parameters, t[0] = t_min, t[-1] = t_max

    @property
    def t_in(self) -> np.ndarray:
        return self.t[:-1]

    @property
    def t_out(self) -> np.ndarray:
        return self.t[1:]

    @property
    def deltas(self) -> np.ndarray:
        return np.diff(self.t)

    def __len__(self) -> int:
        return self.cells.shape[0]


def clip_ray_to_box(origin, direction, box: BoundingBox):
    """Entry/exit parameters of a ray against the box, or None if it misses.

    Rays originating inside the box start at t=0.
    """
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    t0, t1 = 0.0, np.inf
    for ax in range(3):
        if d[ax] == 0.0:
            if o[ax] < box.lo[ax] or o[ax] > box.hi[ax]:
                return None
            continue
        ta = (box.lo[ax] - o[ax]) / d[ax]
        tb = (box.hi[ax] - o[ax]) / d[ax]
        if ta > tb:
            ta, tb = tb, ta
        t0 = max(t0, ta)
        t1 = min(t1, tb)
    if t0 >= t1:
        return None
    return t0, t1


@jit
def _trace_kernel(
    pos,
    indptr,
    indices,
    origins,
    dirs,
    t0s,
    t1s,
    hints,
    max_steps,
    eps_step,
    seg_cells,
    seg_ts,
    counts,
):
    """Walk all rays; fills seg_cells (R, S), seg_ts (R, S+1), counts (R,).

    counts[r] = -1 flags a stuck ray.  Returns the cell each ray started
    in, usable as the hint for a neighboring ray.
    """
    n_rays = origins.shape[0]
    for r in range(n_rays):
        ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        t0 = t0s[r]
        t1 = t1s[r]
        # start strictly inside the box to make locate well-defined
        tc = t0
        px = ox + (t0 + eps_step) * dx
        py = oy + (t0 + eps_step) * dy
        pz = oz + (t0 + eps_step) * dz
        cur = _locate_walk(pos, indptr, indices, px, py, pz, hints[r])
        hints[r] = cur
        nseg = 0
        stuck = 0
        ok = True
        while True:
            best_t = t1
            best_j = -1
            for kk in range(indptr[cur], indptr[cur + 1]):
                j = indices[kk]
                ux = pos[j, 0] - pos[cur, 0]
                uy = pos[j, 1] - pos[cur, 1]
                uz = pos[j, 2] - pos[cur, 2]
                denom = dx * ux + dy * uy + dz * uz
                if denom <= 0.0:
                    continue
                mx = 0.5 * (pos[j, 0] + pos[cur, 0])
                my = 0.5 * (pos[j, 1] + pos[cur, 1])
                mz = 0.5 * (pos[j, 2] + pos[cur, 2])
                tc_j = ((mx - ox) * ux + (my - oy) * uy + (mz - oz) * uz) / denom
                if tc_j < tc:
                    tc_j = tc  # behind: clamp to a zero-width crossing
                if tc_j < best_t or (tc_j == best_t and best_j != -1 and j < best_j):
                    best_t = tc_j
                    best_j = j
            if nseg >= max_steps:
                ok = False
                break
            if best_j == -1 or best_t >= t1:
                seg_cells[r, nseg] = cur
                seg_ts[r, nseg] = tc
                seg_ts[r, nseg + 1] = t1
                nseg += 1
                break
            seg_cells[r, nseg] = cur
            seg_ts[r, nseg] = tc
            seg_ts[r, nseg + 1] = best_t
            nseg += 1
            if best_t - tc < eps_step:
                stuck += 1
            else:
                stuck = 0
            if stuck > 8:
                # degenerate vertex: nudge forward and re-locate
                tn = best_t + eps_step
                if tn >= t1:
                    seg_cells[r, nseg] = best_j
                    seg_ts[r, nseg + 1] = t1
                    nseg += 1
                    break
                px = ox + tn * dx
                py = oy + tn * dy
                pz = oz + tn * dz
                nxt = _locate_walk(pos, indptr, indices, px, py, pz, best_j)
                tc = best_t
                cur = nxt
                stuck = 0
            else:
                tc = best_t
                cur = best_j
        counts[r] = nseg if ok else -1


def trace_batch(
    origins: np.ndarray,
    dirs: np.ndarray,
    t0s: np.ndarray,
    t1s: np.ndarray,
    tri: Triangulation,
    sites: np.ndarray,
    hints: np.ndarray | None = None,
):
    """Trace many rays.  Returns (counts, seg_cells, seg_ts); counts[r] < 0
    would signal a stuck ray (raised as StuckRay instead)."""
    n_rays = origins.shape[0]
    steps = max_steps_for(sites.shape[0])
    seg_cells = np.full((n_rays, steps + 2), -1, dtype=np.int64)
    seg_ts = np.zeros((n_rays, steps + 3), dtype=np.float64)
    counts = np.zeros(n_rays, dtype=np.int64)
    if hints is None:
        hints = np.zeros(n_rays, dtype=np.int64)
    pos = np.ascontiguousarray(sites, dtype=np.float64)
    _trace_kernel(
        pos,
        tri.indptr,
        tri.indices,
        np.ascontiguousarray(origins, dtype=np.float64),
        np.ascontiguousarray(dirs, dtype=np.float64),
        np.ascontiguousarray(t0s, dtype=np.float64),
        np.ascontiguousarray(t1s, dtype=np.float64),
        hints,
        steps,
        EPS_STEP * tri.box.diagonal,
        seg_cells,
        seg_ts,
        counts,
    )
    if (counts < 0).any():
        r = int(np.nonzero(counts < 0)[0][0])
        raise StuckRay(f"ray {r} failed to advance within {steps} steps")
    return counts, seg_cells, seg_ts


def trace(ray: Ray, tri: Triangulation, sites: np.ndarray, hint: int = 0) -> SegmentList:
    """Trace a single ray into an ordered segment list."""
    counts, seg_cells, seg_ts = trace_batch(
        ray.origin[None, :],
        ray.direction[None, :],
        np.array([ray.t_min]),
        np.array([ray.t_max]),
        tri,
        sites,
        hints=np.array([hint], dtype=np.int64),
    )
    n = int(counts[0])
    return SegmentList(cells=seg_cells[0, :n].copy(), t=seg_ts[0, : n + 1].copy())


def boundary_jacobian(
    origin: np.ndarray,
    direction: np.ndarray,
    t: float,
    p_i: np.ndarray,
    p_j: np.ndarray,
):
    """Closed-form dt/dp_i, dt/dp_j for a bisector-plane crossing at t.

    The crossing solves (x(t) - (p_i + p_j)/2) . (p_j - p_i) = 0.
    """
    u = p_j - p_i
    denom = float(np.dot(direction, u))
    if denom == 0.0:
        raise NonGenericCrossing("ray parallel to the bisector plane")
    w = origin + t * np.asarray(direction) - 0.5 * (p_i + p_j)
    dt_dpi = (0.5 * u + w) / denom
    dt_dpj = (0.5 * u - w) / denom
    return dt_dpi, dt_dpj


def trace_boundary_jacobian(
    ray: Ray,
    segments: SegmentList,
    entry_index: int,
    tri: Triangulation,
    sites: np.ndarray,
    eps_generic: float | None = None,
):
    """Jacobian of the boundary between segment ``entry_index`` and its
    successor w.r.t. the two adjacent site positions."""
    if not 0 <= entry_index < len(segments) - 1:
        raise IndexError("entry_index has no interior successor boundary")
    if eps_generic is None:
        eps_generic = EPS_STEP * tri.box.diagonal
    deltas = segments.deltas
    if deltas[entry_index] <= eps_generic or deltas[entry_index + 1] <= eps_generic:
        raise NonGenericCrossing("crossing is within eps of a face edge")
    i = int(segments.cells[entry_index])
    j = int(segments.cells[entry_index + 1])
    t = float(segments.t[entry_index + 1])
    return boundary_jacobian(ray.origin, ray.direction, t, sites[i], sites[j])
