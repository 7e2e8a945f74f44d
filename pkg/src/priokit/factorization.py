"""Prioritized LQ factorization of a stacked task Jacobian.

For ``J = col(J_1, ..., J_k)`` the factorization gives block lower-triangular
``L`` and row-orthonormal blocks ``Q_1, ..., Q_{k+1}`` with

    J_i = sum_{j <= i} L_ij Q_j,    P_i = Q_i^T Q_i,

where ``Q_{k+1}`` spans the null space of ``J``. A task whose rows are fully
explained by higher-priority tasks gets ``rho_i = 0`` and zero-width blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .numerics import DEFAULT_TOL, InputError, RankTolerance, as_matrix


@dataclass(frozen=True)
class TaskJacobianStack:
    """Ordered task Jacobians ``J_i`` (``p_i x m``), highest priority first."""

    blocks: tuple

    def __post_init__(self):
        if len(self.blocks) == 0:
            raise InputError("at least one task is required")
        blocks = tuple(as_matrix(b, f"J_{i + 1}") for i, b in enumerate(self.blocks))
        m = blocks[0].shape[1]
        for i, b in enumerate(blocks):
            if b.shape[0] < 1:
                raise InputError(f"task {i + 1} has no rows")
            if b.shape[1] != m:
                raise InputError(
                    f"task {i + 1} has {b.shape[1]} columns, expected {m}")
        object.__setattr__(self, "blocks", blocks)

    @classmethod
    def from_matrix(cls, J, task_dims: Sequence[int]) -> "TaskJacobianStack":
        J = as_matrix(J, "J")
        dims = [int(d) for d in task_dims]
        if any(d < 1 for d in dims) or sum(dims) != J.shape[0]:
            raise InputError(
                f"task dims {dims} do not partition the {J.shape[0]} rows of J")
        offsets = np.cumsum([0] + dims)
        return cls(tuple(J[offsets[i]:offsets[i + 1]] for i in range(len(dims))))

    @property
    def k(self) -> int:
        return len(self.blocks)

    @property
    def m(self) -> int:
        return self.blocks[0].shape[1]

    @property
    def task_dims(self) -> tuple:
        return tuple(b.shape[0] for b in self.blocks)

    @property
    def matrix(self) -> np.ndarray:
        return np.vstack(self.blocks)


@dataclass(frozen=True)
class PrioritizedDecomposition:
    """Result of :func:`prioritized_lq`. Indices are 0-based in code.

    ``L_blocks[i][j]`` is ``L_{i+1,j+1}`` (``p_i x rho_j``) for ``j <= i``.
    ``Q_rows`` has ``k + 1`` entries; the last spans the null space of ``J``.
    ``ranks`` likewise has ``k + 1`` entries.
    """

    task_dims: tuple
    m: int
    L_blocks: tuple
    Q_rows: tuple
    ranks: tuple
    projectors: tuple
    tol: RankTolerance = field(default=DEFAULT_TOL)

    @property
    def k(self) -> int:
        return len(self.task_dims)

    @property
    def p(self) -> int:
        return int(sum(self.task_dims))

    @property
    def rho(self) -> int:
        """Rank of the full stack, ``rho_1 + ... + rho_k``."""
        return int(sum(self.ranks[: self.k]))

    @property
    def row_offsets(self) -> np.ndarray:
        return np.cumsum((0,) + tuple(self.task_dims))

    @property
    def col_offsets(self) -> np.ndarray:
        return np.cumsum((0,) + tuple(self.ranks[: self.k]))

    @property
    def L(self) -> np.ndarray:
        """Stacked ``p x rho`` block lower-triangular factor."""
        L = np.zeros((self.p, self.rho))
        ro, co = self.row_offsets, self.col_offsets
        for i in range(self.k):
            for j in range(i + 1):
                L[ro[i]:ro[i + 1], co[j]:co[j + 1]] = self.L_blocks[i][j]
        return L

    @property
    def L_D(self) -> np.ndarray:
        L = np.zeros((self.p, self.rho))
        ro, co = self.row_offsets, self.col_offsets
        for i in range(self.k):
            L[ro[i]:ro[i + 1], co[i]:co[i + 1]] = self.L_blocks[i][i]
        return L

    @property
    def L_L(self) -> np.ndarray:
        return self.L - self.L_D

    @property
    def Q(self) -> np.ndarray:
        """Stacked ``rho x m`` matrix ``col(Q_1, ..., Q_k)``."""
        return np.vstack(self.Q_rows[: self.k]).reshape(self.rho, self.m)

    def reconstruct(self, i: int) -> np.ndarray:
        """``sum_{j <= i} L_ij Q_j`` for 0-based task ``i``."""
        out = np.zeros((self.task_dims[i], self.m))
        for j in range(i + 1):
            out += self.L_blocks[i][j] @ self.Q_rows[j]
        return out


@dataclass(frozen=True)
class RegularityReport:
    per_task_full_rank: tuple
    cumulative_full_rank: tuple


def _as_stack(J, task_dims=None) -> TaskJacobianStack:
    if isinstance(J, TaskJacobianStack):
        return J
    if task_dims is not None:
        return TaskJacobianStack.from_matrix(J, task_dims)
    return TaskJacobianStack(tuple(J))


def prioritized_lq(J, task_dims=None, tol: RankTolerance = DEFAULT_TOL):
    """Factorize a task stack in priority order.

    ``J`` is a :class:`TaskJacobianStack`, a sequence of task blocks, or a
    stacked matrix together with ``task_dims``.

    Rows are orthogonalized one at a time in priority order. A row whose
    residual norm is at most ``tol.threshold(||J||_F)`` is dropped. The null
    space block is the orthogonal complement of the accepted rows, taken
    from an SVD.
    """
    stack = _as_stack(J, task_dims)
    Jm = stack.matrix
    dims = stack.task_dims
    k, m = stack.k, stack.m
    threshold = tol.threshold(float(np.linalg.norm(Jm)))
    Lbar, Qbar, accepted = kernels.prioritized_gram_schmidt(Jm, threshold)
    accepted = np.asarray(accepted, dtype=bool)

    ro = np.cumsum((0,) + dims)
    cols = [np.flatnonzero(accepted[ro[i]:ro[i + 1]]) + ro[i] for i in range(k)]
    ranks = [len(c) for c in cols]
    Q_rows = [Qbar[c] for c in cols]
    L_blocks = tuple(
        tuple(Lbar[ro[i]:ro[i + 1]][:, cols[j]] for j in range(i + 1))
        for i in range(k))

    rho = sum(ranks)
    if rho == 0:
        null = np.eye(m)
    elif rho < m:
        _, _, Vt = np.linalg.svd(np.vstack(Q_rows), full_matrices=True)
        null = Vt[rho:]
    else:
        null = np.zeros((0, m))
    Q_rows.append(null)
    ranks.append(null.shape[0])
    projectors = tuple(Qi.T @ Qi for Qi in Q_rows)
    return PrioritizedDecomposition(
        task_dims=dims, m=m, L_blocks=L_blocks, Q_rows=tuple(Q_rows),
        ranks=tuple(ranks), projectors=projectors, tol=tol)


def null_projector(D: PrioritizedDecomposition, i: int) -> np.ndarray:
    """``N_{1:i} = I - P_1 - ... - P_i``; ``i = 0`` gives the identity."""
    if not 0 <= i <= D.k:
        raise InputError(f"task index {i} outside [0, {D.k}]")
    N = np.eye(D.m)
    for j in range(i):
        N -= D.projectors[j]
    return N


def decompose_input(D: PrioritizedDecomposition, u) -> list:
    """Split ``u`` into its ``k + 1`` mutually orthogonal components ``P_i u``."""
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.shape[0] != D.m:
        raise InputError(f"u has length {u.shape[0]}, expected {D.m}")
    return [P @ u for P in D.projectors]


def regularity(D: PrioritizedDecomposition) -> RegularityReport:
    per_task = tuple(D.ranks[i] == D.task_dims[i] for i in range(D.k))
    cum = tuple(
        sum(D.ranks[: i + 1]) == sum(D.task_dims[: i + 1]) for i in range(D.k))
    return RegularityReport(per_task, cum)
