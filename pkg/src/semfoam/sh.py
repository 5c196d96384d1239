"""Real spherical harmonics for view-dependent cell color.

Uses the standard radiance-field normalization (hard-coded band constants).
Degree 0..3 supported; the degree-0 band alone gives view-independent color.
"""

from __future__ import annotations

import numpy as np

from .backend import jit

C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

MAX_DEGREE = 3


def n_coeffs(degree: int) -> int:
    return (degree + 1) ** 2


def degree_of(n: int) -> int:
    d = int(round(np.sqrt(n))) - 1
    if n_coeffs(d) != n:
        raise ValueError(f"{n} is not a valid SH coefficient count")
    return d


@jit
def basis_into(x, y, z, out):
    """Fill ``out`` (length 1, 4, 9 or 16) with basis values for unit dir."""
    n = out.shape[0]
    out[0] = 0.28209479177387814
    if n == 1:
        return
    out[1] = -0.4886025119029199 * y
    out[2] = 0.4886025119029199 * z
    out[3] = -0.4886025119029199 * x
    if n == 4:
        return
    xx = x * x
    yy = y * y
    zz = z * z
    out[4] = 1.0925484305920792 * x * y
    out[5] = -1.0925484305920792 * y * z
    out[6] = 0.31539156525252005 * (2.0 * zz - xx - yy)
    out[7] = -1.0925484305920792 * x * z
    out[8] = 0.5462742152960396 * (xx - yy)
    if n == 9:
        return
    out[9] = -0.5900435899266435 * y * (3.0 * xx - yy)
    out[10] = 2.890611442640554 * x * y * z
    out[11] = -0.4570457994644658 * y * (4.0 * zz - xx - yy)
    out[12] = 0.3731763325901154 * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
    out[13] = -0.4570457994644658 * x * (4.0 * zz - xx - yy)
    out[14] = 1.445305721320277 * z * (xx - yy)
    out[15] = -0.5900435899266435 * x * (xx - 3.0 * yy)


def eval_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Basis values for unit directions ``dirs`` (..., 3) -> (..., (L+1)^2)."""
    dirs = np.asarray(dirs, dtype=np.float64)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    cols = [np.broadcast_to(C0, x.shape).astype(np.float64)]
    if degree >= 1:
        cols += [-C1 * y, C1 * z, -C1 * x]
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        cols += [
            C2[0] * x * y,
            C2[1] * y * z,
            C2[2] * (2.0 * zz - xx - yy),
            C2[3] * x * z,
            C2[4] * (xx - yy),
        ]
    if degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        cols += [
            C3[0] * y * (3.0 * xx - yy),
            C3[1] * x * y * z,
            C3[2] * y * (4.0 * zz - xx - yy),
            C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
            C3[4] * x * (4.0 * zz - xx - yy),
            C3[5] * z * (xx - yy),
            C3[6] * x * (xx - 3.0 * yy),
        ]
    return np.stack(cols, axis=-1)


def ambient_coeff(color: float | np.ndarray) -> np.ndarray:
    """Degree-0 coefficient that evaluates to ``color``."""
    return np.asarray(color, dtype=np.float64) / C0


_FIB_DIRS = None


def _sample_dirs(count: int = 64) -> np.ndarray:
    global _FIB_DIRS
    if _FIB_DIRS is None or _FIB_DIRS.shape[0] != count:
        k = np.arange(count)
        phi = np.pi * (3.0 - np.sqrt(5.0)) * k
        z = 1.0 - 2.0 * (k + 0.5) / count
        r = np.sqrt(1.0 - z * z)
        _FIB_DIRS = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    return _FIB_DIRS


def rotation_matrix(rot: np.ndarray, degree: int) -> np.ndarray:
    """Coefficient-space rotation: coeffs' = M @ coeffs realizes the object
    rotated by ``rot`` (appearance at dir d equals original at rot^T d).

    Built band by band from a least-squares fit on sampled directions; the
    fit is exact because SH bands are closed under rotation.
    """
    rot = np.asarray(rot, dtype=np.float64)
    dirs = _sample_dirs()
    n = n_coeffs(degree)
    m = np.zeros((n, n))
    a_full = eval_basis(dirs, degree)
    b_full = eval_basis(dirs @ rot, degree)  # rows: basis at rot^T d
    start = 0
    for band in range(degree + 1):
        width = 2 * band + 1
        sl = slice(start, start + width)
        a = a_full[:, sl]
        b = b_full[:, sl]
        m[sl, sl], *_ = np.linalg.lstsq(a, b, rcond=None)
        start += width
    return m


def rotate_coeffs(coeffs: np.ndarray, rot: np.ndarray) -> np.ndarray:
    """Apply a spatial rotation to SH coefficients (..., channels, n)."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    m = rotation_matrix(rot, degree_of(coeffs.shape[-1]))
    return coeffs @ m.T
