"""Dense matrix utilities shared by the rest of the package.

Every rank decision in the package goes through a :class:`RankTolerance` so
that the factorization, the projectors and the pseudoinverses agree on which
singular values count as zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

INF = math.inf


class InputError(ValueError):
    """Raised for malformed, non-finite or non-conforming inputs."""


@dataclass(frozen=True)
class RankTolerance:
    """Threshold for treating singular values as zero.

    A singular value ``s`` counts as nonzero when
    ``s > max(rel_tol * s_max, abs_tol)``.
    """

    rel_tol: float = 1e-10
    abs_tol: float = 1e-14

    def __post_init__(self):
        if not self.rel_tol > 0:
            raise InputError(f"rel_tol must be positive, got {self.rel_tol}")
        if not self.abs_tol >= 0:
            raise InputError(f"abs_tol must be nonnegative, got {self.abs_tol}")

    def threshold(self, scale: float) -> float:
        return max(self.rel_tol * scale, self.abs_tol)


DEFAULT_TOL = RankTolerance()


def as_matrix(M, name: str = "M") -> np.ndarray:
    """Return ``M`` as a finite 2-D float array or raise :class:`InputError`."""
    A = np.asarray(M, dtype=float)
    if A.ndim == 1:
        A = A.reshape(1, -1) if A.size else A.reshape(0, 0)
    if A.ndim != 2:
        raise InputError(f"{name} must be two-dimensional, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InputError(f"{name} has non-finite entries")
    return A


def parse_damping(c) -> float:
    """Normalize a damping value; accepts floats, ``inf`` and the string ``"inf"``."""
    if isinstance(c, str):
        if c.strip().lower() in ("inf", "+inf", "infinity"):
            return INF
        c = float(c)
    c = float(c)
    if math.isnan(c) or c < 0:
        raise InputError(f"damping must lie in [0, inf], got {c}")
    return c


def numeric_rank(M, tol: RankTolerance = DEFAULT_TOL) -> int:
    A = as_matrix(M)
    if A.size == 0:
        return 0
    s = np.linalg.svd(A, compute_uv=False)
    return int(np.sum(s > tol.threshold(s[0])))


def pinv(M, tol: RankTolerance = DEFAULT_TOL) -> np.ndarray:
    """Moore-Penrose pseudoinverse by truncated SVD."""
    A = as_matrix(M)
    a, b = A.shape
    if A.size == 0:
        return np.zeros((b, a))
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    keep = s > tol.threshold(s[0])
    return (Vt[keep].T / s[keep]) @ U[:, keep].T


def damped_pinv(M, c, tol: RankTolerance = DEFAULT_TOL) -> np.ndarray:
    """Extended damped pseudoinverse.

    Returns the Moore-Penrose inverse for ``c == 0``, the Tikhonov-damped
    inverse ``M.T @ inv(M M.T + c^2 I)`` for finite positive ``c`` and the
    zero matrix of transposed shape for ``c == inf``.
    """
    A = as_matrix(M)
    c = parse_damping(c)
    a, b = A.shape
    if c == INF or A.size == 0:
        return np.zeros((b, a))
    if c == 0.0:
        return pinv(A, tol)
    # MM^T + c^2 I is SPD for c > 0
    return np.linalg.solve(A @ A.T + c * c * np.eye(a), A).T


def spectral_radius(M) -> float:
    A = as_matrix(M)
    if A.shape[0] != A.shape[1]:
        raise InputError(f"spectral radius needs a square matrix, got {A.shape}")
    if A.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def kyp_residual(A_cl, X, R, theta: float, B, K) -> tuple[float, float]:
    """Residuals of the KYP certificate equations.

    Returns ``(||X A_cl + A_cl^T X + R^T R + 2 theta X||_F, ||X B - K^T||_F)``.
    """
    A_cl = as_matrix(A_cl, "A_cl")
    X = as_matrix(X, "X")
    R = as_matrix(R, "R")
    B = as_matrix(B, "B")
    K = as_matrix(K, "K")
    r = A_cl.shape[0]
    if A_cl.shape != (r, r) or X.shape != (r, r):
        raise InputError("A_cl and X must be square of equal size")
    if R.shape[1] != r:
        raise InputError(f"R must have {r} columns, got {R.shape}")
    if B.shape[0] != r or K.shape != (B.shape[1], r):
        raise InputError("B and K shapes do not conform with A_cl")
    lyap = X @ A_cl + A_cl.T @ X + R.T @ R + 2.0 * theta * X
    return float(np.linalg.norm(lyap)), float(np.linalg.norm(X @ B - K.T))
