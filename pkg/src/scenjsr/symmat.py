"""Symmetric-matrix kernel: scaled vectorization, eigendecompositions, and
the two convex projections used by the sampled-constraint solver.

``svec`` maps a symmetric n x n matrix to R^d, d = n(n+1)/2, with
off-diagonal entries scaled by sqrt(2).  The scaling makes the map an
isometry between Frobenius and Euclidean geometry, so projecting a
vectorized matrix onto a vectorized convex set is the same as vectorizing
the matrix-space projection.  Coordinate order is the row-major upper
triangle: (0,0), (0,1), ..., (0,n-1), (1,1), ...
"""

import math
from functools import lru_cache
from typing import NamedTuple

import numpy as np

__all__ = [
    "EigDecomposition",
    "vec_dim",
    "mat_dim",
    "svec",
    "svec_batch",
    "smat",
    "sym_eig",
    "proj_psd_shifted",
    "proj_fro_ball",
    "min_eig",
    "det",
]

_SQRT2 = math.sqrt(2.0)


class EigDecomposition(NamedTuple):
    """Eigenvalues in ascending order and orthonormal eigenvectors (columns)."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def vec_dim(n: int) -> int:
    """Length of the vectorized form of a symmetric n x n matrix."""
    if n < 1:
        raise ValueError(f"matrix dimension must be >= 1, got {n}")
    return n * (n + 1) // 2


def mat_dim(d: int) -> int:
    """Matrix dimension n with n(n+1)/2 == d, or raise if d is not triangular."""
    n = int((math.isqrt(8 * d + 1) - 1) // 2)
    if n < 1 or n * (n + 1) // 2 != d:
        raise ValueError(f"vector length {d} is not a triangular number")
    return n


@lru_cache(maxsize=64)
def _triu_layout(n: int):
    rows, cols = np.triu_indices(n)
    scale = np.where(rows == cols, 1.0, _SQRT2)
    return rows, cols, scale


def _as_square(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    return m


def svec(m) -> np.ndarray:
    """Vectorize a symmetric matrix (upper triangle read; mirror assumed)."""
    m = _as_square(m)
    rows, cols, scale = _triu_layout(m.shape[0])
    return m[rows, cols] * scale


def svec_batch(ms) -> np.ndarray:
    """Vectorize a stack of symmetric matrices, shape (k, n, n) -> (k, d)."""
    ms = np.asarray(ms, dtype=float)
    if ms.ndim != 3 or ms.shape[1] != ms.shape[2]:
        raise ValueError(f"expected shape (k, n, n), got {ms.shape}")
    rows, cols, scale = _triu_layout(ms.shape[1])
    return ms[:, rows, cols] * scale


def smat(v) -> np.ndarray:
    """Inverse of :func:`svec`; raises if the length is not triangular."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise ValueError(f"expected a vector, got shape {v.shape}")
    n = mat_dim(v.size)
    rows, cols, scale = _triu_layout(n)
    m = np.zeros((n, n))
    m[rows, cols] = v / scale
    m[cols, rows] = m[rows, cols]
    return m


def sym_eig(m) -> EigDecomposition:
    """Eigendecomposition of a symmetric matrix (symmetrized before solving)."""
    m = _as_square(m)
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    w, q = np.linalg.eigh(0.5 * (m + m.T))
    return EigDecomposition(w, q)


def proj_psd_shifted(q) -> np.ndarray:
    """Frobenius-nearest matrix with all eigenvalues >= 1.

    Computed as I + clip-negative(Q - I): shift down, project onto the PSD
    cone by eigenvalue clipping, shift back up.  The 2 x 2 case runs on the
    closed-form eigendecomposition; it sits in the inner loop of the
    projection solver.
    """
    q = _as_square(q)
    n = q.shape[0]
    if n == 2:
        a = q[0, 0] - 1.0
        b = 0.5 * (q[0, 1] + q[1, 0])
        c = q[1, 1] - 1.0
        half_tr = 0.5 * (a + c)
        rad = math.hypot(0.5 * (a - c), b)
        lo = half_tr - rad
        if lo >= 0.0:
            return np.array([[a + 1.0, b], [b, c + 1.0]])
        hi = half_tr + rad
        if hi <= 0.0:
            return np.eye(2)
        # Rank-one part hi * v v' with unit eigenvector v for hi.
        if rad == 0.0:
            return np.eye(2)
        vx, vy = b, hi - a
        if vx == 0.0 and vy == 0.0:
            vx, vy = hi - c, b
        sq = vx * vx + vy * vy
        s = hi / sq
        return np.array([
            [1.0 + s * vx * vx, s * vx * vy],
            [s * vx * vy, 1.0 + s * vy * vy],
        ])
    eye = np.eye(n)
    w, vecs = sym_eig(q - eye)
    clipped = (vecs * np.maximum(w, 0.0)) @ vecs.T
    return eye + 0.5 * (clipped + clipped.T)


def proj_fro_ball(q, cap: float) -> np.ndarray:
    """Scale Q onto the Frobenius-norm ball of radius ``cap``."""
    if cap <= 0:
        raise ValueError(f"ball radius must be positive, got {cap}")
    q = _as_square(q)
    nrm = float(np.linalg.norm(q))
    if nrm <= cap:
        return q.copy()
    return q * (cap / nrm)


def min_eig(m) -> float:
    """Smallest eigenvalue of a symmetric matrix."""
    return float(sym_eig(m).eigenvalues[0])


def det(m) -> float:
    """Determinant of a symmetric matrix, as the product of its eigenvalues."""
    return float(np.prod(sym_eig(m).eigenvalues))
