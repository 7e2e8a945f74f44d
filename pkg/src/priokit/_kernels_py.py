"""Pure-Python kernels. Reference behaviour for the compiled ``_kernels`` module."""

import numpy as np


def prioritized_gram_schmidt(J, threshold):
    """Row-wise Gram-Schmidt of ``J`` in priority order.

    Returns ``(L, Q, accepted)`` with ``J ~= L @ Q``: ``L`` is ``p x p`` lower
    triangular, rows of ``Q`` are orthonormal where ``accepted`` is 1 and zero
    elsewhere. A row whose residual norm is ``<= threshold`` is dropped: its
    diagonal entry and ``Q`` row stay zero. Each row is re-projected once
    against the accepted rows before its norm is taken.
    """
    V = np.array(J, dtype=np.float64, copy=True)
    p, m = V.shape
    L = np.zeros((p, p))
    Q = np.zeros((p, m))
    accepted = np.zeros(p, dtype=np.int8)
    for j in range(p):
        vj = V[j]
        for a in range(j):
            if accepted[a]:
                c = vj @ Q[a]
                L[j, a] += c
                vj -= c * Q[a]
        nrm = float(np.sqrt(vj @ vj))
        if nrm > threshold:
            L[j, j] = nrm
            Q[j] = vj / nrm
            accepted[j] = 1
            for i in range(j + 1, p):
                c = V[i] @ Q[j]
                L[i, j] = c
                V[i] -= c * Q[j]
    return L, Q, accepted


def unipotent_block_solve(T, blocks, rhs):
    """Solve ``(I + T) X = rhs`` for strictly block-lower-triangular ``T``.

    ``blocks`` are the row-block boundaries. Forward substitution over blocks.
    """
    X = np.array(rhs, dtype=np.float64, copy=True)
    for bi in range(1, len(blocks) - 1):
        lo, hi = blocks[bi], blocks[bi + 1]
        X[lo:hi] -= T[lo:hi, :lo] @ X[:lo]
    return X


def canonical_stage(J, dims, d, u_f, lambda_max, eps_sing, overrides, rel_tol, abs_tol):
    """Factorize, pick damping and run the recursive canonical linearizer.

    ``overrides`` holds one entry per task: NaN keeps the damping ramp, any
    other value (including ``inf``) pins that task's damping. Returns
    ``(u, parts, residual, ranks, lambdas)`` with ``parts`` of shape
    ``(k + 1, m)`` and the stacked residual of length ``p``.
    """
    from .factorization import prioritized_lq
    from .linearizer import DampingSchedule, canonical_linearizer_recursive
    from .numerics import RankTolerance

    tol = RankTolerance(rel_tol, abs_tol)
    D = prioritized_lq(J, [int(x) for x in dims], tol)
    schedule = DampingSchedule(lambda_max, eps_sing, tuple(
        None if np.isnan(o) else float(o) for o in overrides))
    lam = schedule(D)
    res = canonical_linearizer_recursive(D, np.zeros(D.p), d, u_f, lam, with_E=False)
    return (res.u_total, np.array(res.u_parts), np.concatenate(res.residuals),
            np.array(D.ranks[: D.k], dtype=np.int64), np.array(lam))
