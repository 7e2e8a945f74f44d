"""Prioritized linearizing inputs.

Given a factorization ``J = L Q`` (see :mod:`priokit.factorization`), drift
``kappa`` and a desired ``v``, these routines compute an input ``u`` such
that ``kappa + J u`` reproduces ``v`` as well as the task priorities allow.
The residual of task ``i`` is ``e_i = v_i - kappa_i - J_i u``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .factorization import PrioritizedDecomposition, TaskJacobianStack
from .numerics import DEFAULT_TOL, INF, InputError, damped_pinv, parse_damping, pinv


@dataclass(frozen=True)
class DampingSchedule:
    """State-dependent damping for each task.

    ``lambda_i^2 = lambda_max^2 * max(0, 1 - (s_i / eps_sing)^2)`` where
    ``s_i`` is the smallest singular value of ``L_ii`` (zero when the task
    lost rank). ``overrides`` pins individual tasks to a fixed value
    (``None`` entries keep the schedule); ``inf`` disables a task.
    """

    lambda_max: float = 0.1
    eps_sing: float = 0.05
    overrides: Optional[tuple] = None

    def __post_init__(self):
        if not (self.lambda_max >= 0 and math.isfinite(self.lambda_max)):
            raise InputError(f"lambda_max must be finite and >= 0, got {self.lambda_max}")
        if not self.eps_sing > 0:
            raise InputError(f"eps_sing must be positive, got {self.eps_sing}")
        if self.overrides is not None:
            object.__setattr__(self, "overrides", tuple(
                None if o is None else parse_damping(o) for o in self.overrides))

    @classmethod
    def fixed(cls, values: Sequence) -> "DampingSchedule":
        return cls(lambda_max=0.0, overrides=tuple(values))

    def __call__(self, D: PrioritizedDecomposition) -> tuple:
        out = []
        for i in range(D.k):
            if self.overrides is not None and i < len(self.overrides) \
                    and self.overrides[i] is not None:
                out.append(self.overrides[i])
                continue
            out.append(self.ramp(smallest_singular_value(D, i)))
        return tuple(out)

    def override_vector(self, k: int) -> np.ndarray:
        """Per-task pinned damping, NaN where the ramp applies."""
        out = np.full(k, np.nan)
        for i, o in enumerate((self.overrides or ())[:k]):
            if o is not None:
                out[i] = o
        return out

    def ramp(self, s_min: float) -> float:
        lam2 = self.lambda_max ** 2 * max(0.0, 1.0 - (s_min / self.eps_sing) ** 2)
        return math.sqrt(lam2)


def smallest_singular_value(D: PrioritizedDecomposition, i: int) -> float:
    """Smallest singular value of ``L_ii``; zero if task ``i`` is rank deficient."""
    if D.ranks[i] < D.task_dims[i]:
        return 0.0
    return float(np.linalg.svd(D.L_blocks[i][i], compute_uv=False)[-1])


@dataclass(frozen=True)
class LinearizerResult:
    u_total: np.ndarray
    u_parts: tuple
    residuals: tuple
    E: np.ndarray
    J_oplus: Optional[np.ndarray] = None
    lambdas: Optional[tuple] = None

    @property
    def residual(self) -> np.ndarray:
        return np.concatenate(self.residuals)


def _lambdas(D, lam) -> tuple:
    if lam is None:
        return (0.0,) * D.k
    if np.isscalar(lam) or isinstance(lam, str):
        lam = [lam] * D.k
    lam = tuple(parse_damping(x) for x in lam)
    if len(lam) != D.k:
        raise InputError(f"need {D.k} damping values, got {len(lam)}")
    return lam


def _vectors(D, kappa, v, u_f):
    kappa = np.asarray(kappa, dtype=float).reshape(-1)
    v = np.asarray(v, dtype=float).reshape(-1)
    if kappa.shape[0] != D.p or v.shape[0] != D.p:
        raise InputError(f"kappa and v must have length {D.p}")
    if u_f is None:
        u_f = np.zeros(D.m)
    u_f = np.asarray(u_f, dtype=float).reshape(-1)
    if u_f.shape[0] != D.m:
        raise InputError(f"u_f must have length {D.m}")
    return kappa, v, u_f


def _residuals(D, d, parts) -> tuple:
    # e_i = d_i - sum_{j<=i} L_ij Q_j u_j; Q_j u_l = 0 for l != j, so only the
    # matching part enters and e_i never sees lower-priority components.
    ro = D.row_offsets
    res = []
    for i in range(D.k):
        e = d[ro[i]:ro[i + 1]].copy()
        for j in range(i + 1):
            if D.ranks[j]:
                e -= D.L_blocks[i][j] @ (D.Q_rows[j] @ parts[j])
        res.append(e)
    return tuple(res)


def _block_pinvs(D, lam) -> list:
    return [damped_pinv(D.L_blocks[i][i], lam[i], D.tol) for i in range(D.k)]


def _free_part(D, u_f):
    return D.projectors[D.k] @ u_f


def canonical_linearizer_recursive(D: PrioritizedDecomposition, kappa, v,
                                   u_f=None, lam=None, with_E: bool = True) -> LinearizerResult:
    """Damped least-squares linearizer, one task at a time.

    ``u_i = Q_i^T L_ii^{+(lam_i)} (v_i - kappa_i - J_i u_{1:i-1})`` and
    ``u_{k+1} = N u_f``. ``with_E=False`` skips the residual matrix.
    """
    lam = _lambdas(D, lam)
    kappa, v, u_f = _vectors(D, kappa, v, u_f)
    d = v - kappa
    ro = D.row_offsets
    pinvs = _block_pinvs(D, lam)
    parts = []
    for i in range(D.k):
        r = d[ro[i]:ro[i + 1]].copy()
        for j in range(i):
            if D.ranks[j]:
                r -= D.L_blocks[i][j] @ (D.Q_rows[j] @ parts[j])
        parts.append(D.Q_rows[i].T @ (pinvs[i] @ r))
    parts.append(_free_part(D, u_f))
    residuals = _residuals(D, d, parts)
    E = canonical_residual_matrix(D, lam, pinvs) if with_E else None
    return LinearizerResult(
        u_total=np.sum(parts, axis=0), u_parts=tuple(parts),
        residuals=residuals, E=E, lambdas=lam)


def _coupling(D, pinvs) -> np.ndarray:
    """``L_L L_D^{+(lam)}``, strictly block lower triangular, ``p x p``."""
    LDp = np.zeros((D.rho, D.p))
    ro, co = D.row_offsets, D.col_offsets
    for i in range(D.k):
        LDp[co[i]:co[i + 1], ro[i]:ro[i + 1]] = pinvs[i]
    return D.L_L @ LDp, LDp


def canonical_residual_matrix(D, lam, pinvs=None) -> np.ndarray:
    if pinvs is None:
        pinvs = _block_pinvs(D, _lambdas(D, lam))
    T, LDp = _coupling(D, pinvs)
    M = kernels.unipotent_block_solve(T, list(D.row_offsets), np.eye(D.p))
    # Q Q^T = I, so J J^{+(lam)} = L L_D^{+(lam)} M
    return np.eye(D.p) - (D.L @ LDp) @ M


def prioritized_damped_pinv(D: PrioritizedDecomposition, lam=None) -> np.ndarray:
    """``Q^T L_D^{+(lam)} (I_p + L_L L_D^{+(lam)})^{-1}``."""
    lam = _lambdas(D, lam)
    T, LDp = _coupling(D, _block_pinvs(D, lam))
    M = kernels.unipotent_block_solve(T, list(D.row_offsets), np.eye(D.p))
    return D.Q.T @ LDp @ M


def canonical_linearizer_closed(D: PrioritizedDecomposition, kappa, v,
                                u_f=None, lam=None) -> LinearizerResult:
    """Closed form ``u = J^{+(lam)} (v - kappa) + N u_f`` of the same input."""
    lam = _lambdas(D, lam)
    kappa, v, u_f = _vectors(D, kappa, v, u_f)
    d = v - kappa
    pinvs = _block_pinvs(D, lam)
    T, LDp = _coupling(D, pinvs)
    ro = list(D.row_offsets)
    M = kernels.unipotent_block_solve(T, ro, np.eye(D.p))
    w = kernels.unipotent_block_solve(T, ro, d)
    parts = [D.Q_rows[i].T @ (pinvs[i] @ w[ro[i]:ro[i + 1]]) for i in range(D.k)]
    parts.append(_free_part(D, u_f))
    J_oplus = D.Q.T @ LDp @ M
    E = np.eye(D.p) - (D.L @ LDp) @ M
    return LinearizerResult(
        u_total=np.sum(parts, axis=0), u_parts=tuple(parts),
        residuals=_residuals(D, d, parts), E=E, J_oplus=J_oplus, lambdas=lam)


@dataclass(frozen=True)
class GammaForm:
    """Block lower-triangular ``p x p`` weight matrix with task blocks ``dims``."""

    matrix: np.ndarray
    dims: tuple

    def __post_init__(self):
        G = np.asarray(self.matrix, dtype=float)
        dims = tuple(int(d) for d in self.dims)
        p = sum(dims)
        if G.shape != (p, p):
            raise InputError(f"Gamma must be {p}x{p}, got {G.shape}")
        ro = np.cumsum((0,) + dims)
        for i in range(len(dims)):
            if np.any(G[ro[i]:ro[i + 1], ro[i + 1]:] != 0):
                raise InputError("Gamma must be block lower triangular")
        object.__setattr__(self, "matrix", G)
        object.__setattr__(self, "dims", dims)

    def block(self, i: int, j: int) -> np.ndarray:
        ro = np.cumsum((0,) + self.dims)
        return self.matrix[ro[i]:ro[i + 1], ro[j]:ro[j + 1]]

    def assumption_check(self, D: PrioritizedDecomposition, atol: float = 1e-10):
        """Per task: (rank of L_ii L_ii^T Gamma_ii == rho_i, symmetric part PSD)."""
        out = []
        for i in range(D.k):
            Lii = D.L_blocks[i][i]
            S = Lii @ Lii.T @ self.block(i, i)
            rank_ok = np.linalg.matrix_rank(S, tol=atol * max(1.0, np.abs(S).max(initial=0.0))) == D.ranks[i]
            psd = np.linalg.eigvalsh(0.5 * (S + S.T)).min(initial=0.0) >= -atol
            out.append((bool(rank_ok), bool(psd)))
        return out


def canonical_gamma(D: PrioritizedDecomposition, lam=None) -> GammaForm:
    """``diag((L_ii L_ii^T + lam_i^2 I)^+) (I_p + L_L L_D^{+(lam)})^{-1}``."""
    lam = _lambdas(D, lam)
    T, _ = _coupling(D, _block_pinvs(D, lam))
    M = kernels.unipotent_block_solve(T, list(D.row_offsets), np.eye(D.p))
    S = np.zeros((D.p, D.p))
    ro = D.row_offsets
    for i in range(D.k):
        if lam[i] == INF:
            continue
        Lii = D.L_blocks[i][i]
        S[ro[i]:ro[i + 1], ro[i]:ro[i + 1]] = pinv(
            Lii @ Lii.T + lam[i] ** 2 * np.eye(D.task_dims[i]), D.tol)
    return GammaForm(S @ M, D.task_dims)


def gamma_linearizer(D: PrioritizedDecomposition, kappa, v, u_f=None,
                     Gamma: GammaForm = None) -> LinearizerResult:
    """``u = Q^T L_D^T Gamma (v - kappa) + N u_f`` and ``E = I - L L_D^T Gamma``."""
    if Gamma is None:
        raise InputError("Gamma is required")
    if not isinstance(Gamma, GammaForm):
        Gamma = GammaForm(Gamma, D.task_dims)
    if Gamma.dims != tuple(D.task_dims):
        raise InputError(f"Gamma blocks {Gamma.dims} do not match tasks {D.task_dims}")
    kappa, v, u_f = _vectors(D, kappa, v, u_f)
    d = v - kappa
    w = Gamma.matrix @ d
    ro = D.row_offsets
    parts = [D.Q_rows[i].T @ (D.L_blocks[i][i].T @ w[ro[i]:ro[i + 1]])
             for i in range(D.k)]
    parts.append(_free_part(D, u_f))
    E = np.eye(D.p) - D.L @ D.L_D.T @ Gamma.matrix
    return LinearizerResult(
        u_total=np.sum(parts, axis=0), u_parts=tuple(parts),
        residuals=_residuals(D, d, parts), E=E)


def residual_blocks(D: PrioritizedDecomposition, Gamma: GammaForm) -> dict:
    """Blocks of ``E`` assembled blockwise from ``L`` and ``Gamma``.

    ``E_ii = I - L_ii L_ii^T Gamma_ii`` and
    ``E_ij = -sum_{a=j}^{i} L_ia L_aa^T Gamma_aj`` for ``i > j``.
    """
    out = {}
    for i in range(D.k):
        for j in range(i + 1):
            acc = np.zeros((D.task_dims[i], D.task_dims[j]))
            for a in range(j, i + 1):
                acc += D.L_blocks[i][a] @ D.L_blocks[a][a].T @ Gamma.block(a, j)
            out[i, j] = (np.eye(D.task_dims[i]) - acc) if i == j else -acc
    return out


def lex_oracle(J, kappa, v, tol=None):
    """Lexicographic least squares by successive null-space projection.

    Works from the raw task blocks with SVD pseudoinverses only. Singular
    values of ``J_i N_{1:i-1}`` are truncated against the scale of the whole
    stack: once the earlier tasks fill the input space the projected block is
    rounding noise and must count as rank zero. Returns the minimizer and the
    minimal value of ``||e_i||^2`` at every level.
    """
    if isinstance(J, PrioritizedDecomposition):
        blocks = [J.reconstruct(i) for i in range(J.k)]
        tol = J.tol if tol is None else tol
    elif isinstance(J, TaskJacobianStack):
        blocks = list(J.blocks)
    else:
        blocks = [np.atleast_2d(np.asarray(b, dtype=float)) for b in J]
    tol = DEFAULT_TOL if tol is None else tol
    thr = tol.threshold(float(np.linalg.norm(np.vstack(blocks))))
    m = blocks[0].shape[1]
    d = np.asarray(v, dtype=float).reshape(-1) - np.asarray(kappa, dtype=float).reshape(-1)
    u = np.zeros(m)
    N = np.eye(m)
    objectives = []
    row = 0
    for Ji in blocks:
        pi = Ji.shape[0]
        di = d[row:row + pi]
        A = Ji @ N
        U, sv, Vt = np.linalg.svd(A, full_matrices=False)
        keep = sv > thr
        Ap = (Vt[keep].T / sv[keep]) @ U[:, keep].T
        u = u + N @ (Ap @ (di - Ji @ u))
        N = N - Ap @ A
        N = 0.5 * (N + N.T)
        row += pi
    row = 0
    for Ji in blocks:
        pi = Ji.shape[0]
        e = d[row:row + pi] - Ji @ u
        objectives.append(float(e @ e))
        row += pi
    return u, tuple(objectives)
