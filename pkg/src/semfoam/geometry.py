"""Delaunay tetrahedralization and the dual Voronoi adjacency graph.

The triangulation is built with Qhull (via scipy).  Dual Voronoi faces are
recovered per Delaunay edge by clipping the bisector plane against the
half-spaces of both endpoint cells and the scene bounding box, which keeps
every face vertex exactly on the bisector and makes areas symmetric in
(i, j) by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay as _SciDelaunay
from scipy.spatial import QhullError, cKDTree

from .backend import jit
from .errors import (
    DegenerateInput,
    DuplicateSite,
    NotAdjacent,
    OutOfBounds,
    TooFewSites,
)

# Relative tolerances (see module docstring); scaled by box diagonal where
# they carry length units.
EPS_SITE = 1e-9
EPS_PRED = 1e-12
EPS_PLANE = 1e-8

MIN_SITES = 5


@dataclass(frozen=True)
class BoundingBox:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        if lo.shape != (3,) or hi.shape != (3,):
            raise ValueError("bounding box corners must be 3-vectors")
        if not np.all(lo < hi):
            raise ValueError("bounding box min corner must be < max corner")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def contains(self, points: np.ndarray, strict: bool = False) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if strict:
            ok = (p > self.lo).all(axis=1) & (p < self.hi).all(axis=1)
        else:
            ok = (p >= self.lo).all(axis=1) & (p <= self.hi).all(axis=1)
        return ok if np.asarray(points).ndim == 2 else bool(ok[0])

    def inflate(self, fraction: float) -> "BoundingBox":
        pad = fraction * (self.hi - self.lo)
        return BoundingBox(self.lo - pad, self.hi + pad)

    @staticmethod
    def around(points: np.ndarray, fraction: float = 0.1) -> "BoundingBox":
        points = np.asarray(points, dtype=np.float64)
        lo, hi = points.min(axis=0), points.max(axis=0)
        span = np.maximum(hi - lo, 1e-6)
        return BoundingBox(lo - fraction * span, hi + fraction * span)


def validate_sites(
    positions: np.ndarray, box: BoundingBox, min_sites: int = MIN_SITES
) -> np.ndarray:
    """Check site invariants: shape, finiteness, inside box, no duplicates."""
    pos = np.ascontiguousarray(positions, dtype=np.float64)
    if pos.ndim != 2 or pos.shape[1] != 3:
        raise ValueError("site positions must be an (N, 3) array")
    if not np.isfinite(pos).all():
        raise ValueError("site positions must be finite")
    if pos.shape[0] < min_sites:
        raise TooFewSites(f"need at least {min_sites} sites, got {pos.shape[0]}")
    if not np.all(box.contains(pos, strict=True)):
        raise OutOfBounds("all sites must lie strictly inside the bounding box")
    eps = EPS_SITE * box.diagonal
    pairs = cKDTree(pos).query_pairs(eps)
    if pairs:
        i, j = sorted(next(iter(pairs)))
        raise DuplicateSite(f"sites {i} and {j} coincide within {eps:g}")
    return pos


@jit
def _clip_convex_polygon(poly, n_in, a1, a2, b, out):
    """Clip 2D convex polygon against a1*x + a2*y <= b.  Returns new count."""
    n_out = 0
    for k in range(n_in):
        x0, y0 = poly[k, 0], poly[k, 1]
        x1, y1 = poly[(k + 1) % n_in, 0], poly[(k + 1) % n_in, 1]
        d0 = a1 * x0 + a2 * y0 - b
        d1 = a1 * x1 + a2 * y1 - b
        if d0 <= 0.0:
            out[n_out, 0] = x0
            out[n_out, 1] = y0
            n_out += 1
        if (d0 < 0.0) != (d1 < 0.0) and d0 != d1:
            t = d0 / (d0 - d1)
            out[n_out, 0] = x0 + t * (x1 - x0)
            out[n_out, 1] = y0 + t * (y1 - y0)
            n_out += 1
    return n_out


@jit
def _face_clip_one(pos, nbrs, i, j, box_lo, box_hi, half_width, buf_a, buf_b):
    """Clip the dual face of edge (i, j) in bisector-plane coordinates.

    ``nbrs`` lists clipping site indices (neighbors of i and j).  Returns
    (count, verts2d, origin, e1, e2): 2D vertices plus the plane frame.
    """
    pi = pos[i]
    pj = pos[j]
    m = 0.5 * (pi + pj)
    u0 = pj[0] - pi[0]
    u1 = pj[1] - pi[1]
    u2 = pj[2] - pi[2]
    un = np.sqrt(u0 * u0 + u1 * u1 + u2 * u2)
    n0, n1, n2 = u0 / un, u1 / un, u2 / un
    # plane basis orthogonal to n
    if abs(n0) <= abs(n1) and abs(n0) <= abs(n2):
        t0, t1, t2 = 1.0, 0.0, 0.0
    elif abs(n1) <= abs(n2):
        t0, t1, t2 = 0.0, 1.0, 0.0
    else:
        t0, t1, t2 = 0.0, 0.0, 1.0
    e10 = n1 * t2 - n2 * t1
    e11 = n2 * t0 - n0 * t2
    e12 = n0 * t1 - n1 * t0
    en = np.sqrt(e10 * e10 + e11 * e11 + e12 * e12)
    e10, e11, e12 = e10 / en, e11 / en, e12 / en
    e20 = n1 * e12 - n2 * e11
    e21 = n2 * e10 - n0 * e12
    e22 = n0 * e11 - n1 * e10

    w = half_width
    buf_a[0, 0], buf_a[0, 1] = -w, -w
    buf_a[1, 0], buf_a[1, 1] = w, -w
    buf_a[2, 0], buf_a[2, 1] = w, w
    buf_a[3, 0], buf_a[3, 1] = -w, w
    count = 4
    cur, nxt = buf_a, buf_b

    # box half-spaces: +-axis
    for ax in range(3):
        for sgn in range(2):
            if sgn == 0:
                a0x, a0y, a0z = 0.0, 0.0, 0.0
                if ax == 0:
                    a0x = 1.0
                elif ax == 1:
                    a0y = 1.0
                else:
                    a0z = 1.0
                b = box_hi[ax]
            else:
                a0x, a0y, a0z = 0.0, 0.0, 0.0
                if ax == 0:
                    a0x = -1.0
                elif ax == 1:
                    a0y = -1.0
                else:
                    a0z = -1.0
                b = -box_lo[ax]
            a1 = a0x * e10 + a0y * e11 + a0z * e12
            a2 = a0x * e20 + a0y * e21 + a0z * e22
            bb = b - (a0x * m[0] + a0y * m[1] + a0z * m[2])
            count = _clip_convex_polygon(cur, count, a1, a2, bb, nxt)
            cur, nxt = nxt, cur
            if count == 0:
                return 0, cur, m, (e10, e11, e12), (e20, e21, e22)

    for kk in range(nbrs.shape[0]):
        k = nbrs[kk]
        if k == i or k == j:
            continue
        pk = pos[k]
        # ||x - pi|| <= ||x - pk||  <=>  (pk - pi) . x <= (|pk|^2 - |pi|^2)/2
        a0x = pk[0] - pi[0]
        a0y = pk[1] - pi[1]
        a0z = pk[2] - pi[2]
        b = 0.5 * (
            pk[0] * pk[0] + pk[1] * pk[1] + pk[2] * pk[2]
            - pi[0] * pi[0] - pi[1] * pi[1] - pi[2] * pi[2]
        )
        a1 = a0x * e10 + a0y * e11 + a0z * e12
        a2 = a0x * e20 + a0y * e21 + a0z * e22
        bb = b - (a0x * m[0] + a0y * m[1] + a0z * m[2])
        count = _clip_convex_polygon(cur, count, a1, a2, bb, nxt)
        cur, nxt = nxt, cur
        if count == 0:
            break
    return count, cur, m, (e10, e11, e12), (e20, e21, e22)


@jit
def _polygon_area(verts, count):
    s = 0.0
    for k in range(count):
        x0, y0 = verts[k, 0], verts[k, 1]
        x1, y1 = verts[(k + 1) % count, 0], verts[(k + 1) % count, 1]
        s += x0 * y1 - x1 * y0
    return 0.5 * abs(s)


@jit
def _all_face_areas(pos, indptr, indices, edges, box_lo, box_hi, half_width, max_verts):
    areas = np.zeros(edges.shape[0], dtype=np.float64)
    buf_a = np.empty((max_verts, 2), dtype=np.float64)
    buf_b = np.empty((max_verts, 2), dtype=np.float64)
    nbr_buf = np.empty(2 * max_verts, dtype=np.int64)
    for e in range(edges.shape[0]):
        i = edges[e, 0]
        j = edges[e, 1]
        n = 0
        for kk in range(indptr[i], indptr[i + 1]):
            nbr_buf[n] = indices[kk]
            n += 1
        for kk in range(indptr[j], indptr[j + 1]):
            nbr_buf[n] = indices[kk]
            n += 1
        count, verts, _, _, _ = _face_clip_one(
            pos, nbr_buf[:n], i, j, box_lo, box_hi, half_width, buf_a, buf_b
        )
        if count >= 3:
            areas[e] = _polygon_area(verts, count)
    return areas


@jit
def _locate_walk(pos, indptr, indices, px, py, pz, hint):
    cur = hint
    dx = pos[cur, 0] - px
    dy = pos[cur, 1] - py
    dz = pos[cur, 2] - pz
    d2 = dx * dx + dy * dy + dz * dz
    while True:
        best = cur
        best_d2 = d2
        for kk in range(indptr[cur], indptr[cur + 1]):
            k = indices[kk]
            dx = pos[k, 0] - px
            dy = pos[k, 1] - py
            dz = pos[k, 2] - pz
            kd2 = dx * dx + dy * dy + dz * dz
            if kd2 < best_d2 or (kd2 == best_d2 and k < best):
                best = k
                best_d2 = kd2
        if best == cur:
            return cur
        cur = best
        d2 = best_d2


def _circumcenters(pos: np.ndarray, tets: np.ndarray) -> np.ndarray:
    v = pos[tets]  # (M, 4, 3)
    a = v[:, 0]
    mat = 2.0 * (v[:, 1:] - v[:, None, 0])  # (M, 3, 3)
    rhs = (v[:, 1:] ** 2).sum(axis=2) - (a**2).sum(axis=1)[:, None]
    det = np.linalg.det(mat)
    centers = np.empty((tets.shape[0], 3))
    good = np.abs(det) > 1e-300
    if good.any():
        centers[good] = np.linalg.solve(mat[good], rhs[good][..., None])[..., 0]
    for t in np.nonzero(~good)[0]:
        centers[t] = np.linalg.lstsq(mat[t], rhs[t], rcond=None)[0]
    return centers


@dataclass
class Triangulation:
    """Immutable Delaunay tetrahedralization with its dual Voronoi adjacency."""

    tetrahedra: np.ndarray  # (M, 4) site indices
    circumcenters: np.ndarray  # (M, 3) Voronoi vertices
    indptr: np.ndarray  # CSR adjacency over sites
    indices: np.ndarray
    edges: np.ndarray  # (E, 2) unordered, i < j, lexicographically sorted
    face_areas: np.ndarray  # (E,) box-clipped dual-face areas
    box: BoundingBox
    _positions: np.ndarray = field(repr=False)
    _max_verts: int = field(repr=False)

    @property
    def n_sites(self) -> int:
        return self.indptr.shape[0] - 1

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def edge_index(self, i: int, j: int) -> int:
        if i == j:
            raise NotAdjacent(f"({i}, {j}) is not an edge")
        a, b = (i, j) if i < j else (j, i)
        key = a * self.n_sites + b
        keys = self.edges[:, 0] * self.n_sites + self.edges[:, 1]
        e = int(np.searchsorted(keys, key))
        if e >= self.edges.shape[0] or keys[e] != key:
            raise NotAdjacent(f"sites {i} and {j} share no Delaunay edge")
        return e

    def face_area(self, i: int, j: int) -> float:
        return float(self.face_areas[self.edge_index(i, j)])

    def face_polygon(self, i: int, j: int) -> np.ndarray:
        """Dual-face polygon of edge (i, j) as (V, 3) vertices on the bisector."""
        e = self.edge_index(i, j)
        a, b = int(self.edges[e, 0]), int(self.edges[e, 1])
        nbrs = np.concatenate([self.neighbors(a), self.neighbors(b)])
        buf_a = np.empty((self._max_verts, 2))
        buf_b = np.empty((self._max_verts, 2))
        count, verts, m, e1, e2 = _face_clip_one(
            self._positions,
            nbrs.astype(np.int64),
            a,
            b,
            self.box.lo,
            self.box.hi,
            2.0 * self.box.diagonal,
            buf_a,
            buf_b,
        )
        if count < 3:
            return np.zeros((0, 3))
        e1 = np.array(e1)
        e2 = np.array(e2)
        return m + verts[:count, 0:1] * e1 + verts[:count, 1:2] * e2

    def adjacency_pairs(self) -> set[tuple[int, int]]:
        return {(int(a), int(b)) for a, b in self.edges}


def _adjacency_from_tets(n_sites: int, tets: np.ndarray):
    pair_idx = np.array(
        [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)], dtype=np.int64
    )
    raw = tets[:, pair_idx].reshape(-1, 2)
    raw = np.sort(raw, axis=1)
    keys = raw[:, 0] * n_sites + raw[:, 1]
    uniq = np.unique(keys)
    edges = np.stack([uniq // n_sites, uniq % n_sites], axis=1)
    # CSR over both directions
    both = np.concatenate([edges, edges[:, ::-1]], axis=0)
    order = np.lexsort((both[:, 1], both[:, 0]))
    both = both[order]
    indptr = np.zeros(n_sites + 1, dtype=np.int64)
    np.add.at(indptr, both[:, 0] + 1, 1)
    indptr = np.cumsum(indptr)
    indices = np.ascontiguousarray(both[:, 1])
    return indptr, indices, np.ascontiguousarray(edges)


def build_delaunay(sites: np.ndarray, box: BoundingBox, allow_small: bool = False) -> Triangulation:
    """Tetrahedralize the sites and assemble the dual adjacency graph.

    With ``allow_small`` a foam of 2-3 sites is accepted; it has no
    tetrahedra and uses the complete graph as adjacency (dual faces of
    non-neighbor pairs clip to zero area, so the Voronoi structure is
    still exact).  4 sites form a single tetrahedron.
    """
    pos = validate_sites(sites, box, min_sites=2 if allow_small else MIN_SITES)
    if pos.shape[0] < 4:
        n = pos.shape[0]
        tets = np.empty((0, 4), dtype=np.int64)
        edges = np.array(
            [(i, j) for i in range(n) for j in range(i + 1, n)], dtype=np.int64
        ).reshape(-1, 2)
        both = np.concatenate([edges, edges[:, ::-1]], axis=0)
        order = np.lexsort((both[:, 1], both[:, 0]))
        both = both[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, both[:, 0] + 1, 1)
        indptr = np.cumsum(indptr)
        indices = np.ascontiguousarray(both[:, 1])
        max_verts = 2 * n + 16
        areas = _all_face_areas(
            pos, indptr, indices, edges, box.lo, box.hi, 2.0 * box.diagonal, max_verts
        )
        return Triangulation(
            tetrahedra=tets,
            circumcenters=np.empty((0, 3)),
            indptr=indptr,
            indices=indices,
            edges=edges,
            face_areas=areas,
            box=box,
            _positions=pos,
            _max_verts=max_verts,
        )
    try:
        sci = _SciDelaunay(pos)
    except QhullError as exc:
        raise DegenerateInput(f"qhull failed: {exc}") from exc
    if sci.coplanar.size:
        raise DegenerateInput(
            f"{sci.coplanar.shape[0]} sites were merged/dropped by qhull; "
            "jitter near-coincident sites"
        )
    tets = np.ascontiguousarray(sci.simplices.astype(np.int64))
    present = np.zeros(pos.shape[0], dtype=bool)
    present[tets.ravel()] = True
    if not present.all():
        raise DegenerateInput("some sites appear in no tetrahedron")

    indptr, indices, edges = _adjacency_from_tets(pos.shape[0], tets)
    max_deg = int(np.diff(indptr).max())
    max_verts = 2 * max_deg + 16
    areas = _all_face_areas(
        pos, indptr, indices, edges, box.lo, box.hi, 2.0 * box.diagonal, max_verts
    )
    return Triangulation(
        tetrahedra=tets,
        circumcenters=_circumcenters(pos, tets),
        indptr=indptr,
        indices=indices,
        edges=edges,
        face_areas=areas,
        box=box,
        _positions=pos,
        _max_verts=max_verts,
    )


def locate(tri: Triangulation, sites: np.ndarray, point: np.ndarray, hint: int = 0) -> int:
    """Nearest site to ``point`` by greedy walk on the adjacency graph."""
    p = np.asarray(point, dtype=np.float64)
    pos = np.ascontiguousarray(sites, dtype=np.float64)
    return int(
        _locate_walk(pos, tri.indptr, tri.indices, p[0], p[1], p[2], int(hint))
    )


def remove_sites(
    tri: Triangulation, sites: np.ndarray, to_remove
) -> tuple[np.ndarray, Triangulation, np.ndarray]:
    """Delete sites and re-triangulate.  Returns (sites, tri, old->new map)."""
    n = sites.shape[0]
    mask = np.zeros(n, dtype=bool)
    idx = np.fromiter(to_remove, dtype=np.int64) if len(to_remove) else np.empty(0, np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError("site index out of range")
    mask[idx] = True
    remaining = n - int(mask.sum())
    # 4 sites still form one tetrahedron; below that nothing can
    if remaining < 4:
        raise TooFewSites("removal would leave fewer than 4 sites")
    mapping = np.full(n, -1, dtype=np.int64)
    keep = ~mask
    mapping[keep] = np.arange(int(keep.sum()))
    new_sites = np.ascontiguousarray(sites[keep])
    new_tri = build_delaunay(new_sites, tri.box, allow_small=remaining < MIN_SITES)
    return new_sites, new_tri, mapping


def insert_sites(
    tri: Triangulation, sites: np.ndarray, new_points: np.ndarray
) -> tuple[np.ndarray, Triangulation]:
    """Append new sites (old indices stable) and re-triangulate."""
    new_points = np.atleast_2d(np.asarray(new_points, dtype=np.float64))
    if new_points.shape[0] == 0:
        return sites, tri
    if not np.all(tri.box.contains(new_points, strict=True)):
        raise OutOfBounds("new sites must lie strictly inside the bounding box")
    eps = EPS_SITE * tri.box.diagonal
    d, _ = cKDTree(sites).query(new_points, k=1)
    if np.any(d < eps):
        raise DuplicateSite("a new site coincides with an existing one")
    if new_points.shape[0] > 1:
        pairs = cKDTree(new_points).query_pairs(eps)
        if pairs:
            raise DuplicateSite("two new sites coincide")
    merged = np.ascontiguousarray(np.vstack([sites, new_points]))
    return merged, build_delaunay(merged, tri.box)
