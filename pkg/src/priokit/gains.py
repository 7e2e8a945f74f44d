"""Tracking gains, KYP certificates and the M-matrix boundedness test.

Gains are certified per task: ``H_i(s) = K_i (sI - A_i + s_i B_i K_i)^{-1} B_i``
must be strictly positive real, and ``(X_i, R_i, theta_i)`` must satisfy

    X_i A_cl + A_cl^T X_i = -R_i^T R_i - 2 theta_i X_i,   X_i B_i = K_i^T

with ``A_cl = A_i - s_i B_i K_i``. The certificates feed the ``Y``/``Z``
matrices whose spectral condition ``sr(Y^{-1} Z) < 1`` guarantees a positive
weighting of the per-task Lyapunov functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import comb

from .factorization import prioritized_lq
from .linearizer import DampingSchedule, GammaForm, canonical_gamma
from .liesys import SystemModel, chain_matrices
from .numerics import InputError, kyp_residual, spectral_radius

LYAP_TOL = 1e-8
STRUCT_TOL = 1e-10


class CertificationError(RuntimeError):
    """Base class for gain certification failures."""


class NotSPRError(CertificationError):
    pass


class KYPInfeasibleError(CertificationError):
    pass


def synthesize_gain(rel_deg, varsigma: float = 1.0, pole_scale: float = 1.0) -> np.ndarray:
    """Gain placing every chain of ``A - varsigma B K`` at ``-pole_scale``.

    Row ``j`` of the result acts on chain ``j`` only and holds the
    coefficients ``(a_0, ..., a_{r-1}) / varsigma`` of ``(s + pole_scale)^r``.
    """
    rel = tuple(int(r) for r in np.atleast_1d(rel_deg))
    if any(r < 1 for r in rel):
        raise InputError("relative degrees must be >= 1")
    if not (varsigma > 0 and pole_scale > 0):
        raise InputError("varsigma and pole_scale must be positive")
    K = np.zeros((len(rel), sum(rel)))
    col = 0
    for j, r in enumerate(rel):
        K[j, col:col + r] = [comb(r, a, exact=True) * pole_scale ** (r - a)
                             for a in range(r)]
        col += r
    return K / varsigma


def spr_margin(K, A, B, varsigma: float, omegas=None) -> float:
    """Smallest eigenvalue of ``H(jw) + H(jw)^*`` over a log frequency grid."""
    K, A, B = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (K, A, B))
    if omegas is None:
        omegas = np.logspace(-3, 3, 601)
    A_cl = A - varsigma * B @ K
    r = A.shape[0]
    worst = np.inf
    for w in omegas:
        H = K @ np.linalg.solve(1j * w * np.eye(r) - A_cl, B)
        worst = min(worst, float(np.linalg.eigvalsh(H + H.conj().T).min()))
    return worst


@dataclass(frozen=True)
class GainEntry:
    """Gain of one task, optionally with its KYP certificate."""

    varsigma: float
    K: np.ndarray
    X: Optional[np.ndarray] = None
    R: Optional[np.ndarray] = None
    theta: Optional[float] = None
    residuals: Optional[tuple] = None

    @property
    def certified(self) -> bool:
        return self.X is not None

    @property
    def sigma_tilde(self) -> float:
        s = np.linalg.svd(self.X, compute_uv=False)
        return float(s[0] / s[-1])


@dataclass(frozen=True)
class GainSet:
    entries: tuple

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, i) -> GainEntry:
        return self.entries[i]

    @property
    def K(self) -> list:
        return [e.K for e in self.entries]


def _kyp_structure(K, B):
    """Fixed entries of ``X`` implied by ``X B = K^T`` and the free index pairs."""
    r, p = B.shape
    ends = [int(np.flatnonzero(B[:, j])[0]) for j in range(p)]
    if not all(np.count_nonzero(B[:, j]) == 1 and B[ends[j], j] == 1.0 for j in range(p)):
        raise InputError("B must select one state per output chain")
    X0 = np.zeros((r, r))
    fixed = np.zeros((r, r), dtype=bool)
    for j, e in enumerate(ends):
        for a in range(r):
            if fixed[a, e] and not math.isclose(X0[a, e], K[j, a], rel_tol=0, abs_tol=1e-14):
                raise KYPInfeasibleError("X B = K^T has no symmetric solution")
            X0[a, e] = X0[e, a] = K[j, a]
            fixed[a, e] = fixed[e, a] = True
    free = [(a, b) for a in range(r) for b in range(a, r) if not fixed[a, b]]
    return X0, free


def _assemble(X0, free, c):
    X = X0.copy()
    for (a, b), val in zip(free, c):
        X[a, b] = X[b, a] = val
    return X


def _kyp_feasibility(A_cl, X0, free, theta, starts):
    """Maximize ``min(lmin(-(X A + A^T X + 2 theta X)), lmin(X))`` over free entries."""
    A_t = A_cl + theta * np.eye(A_cl.shape[0])

    def score(c):
        X = _assemble(X0, free, c)
        M = -(X @ A_t + A_t.T @ X)
        return min(np.linalg.eigvalsh(M)[0], np.linalg.eigvalsh(X)[0])

    if not free:
        return score(np.zeros(0)), np.zeros(0)
    best_c, best = None, -np.inf
    for c0 in starts:
        c = np.asarray(c0, dtype=float)
        # restarts help Nelder-Mead on the nonsmooth eigenvalue objective
        for _ in range(4):
            res = minimize(lambda z: -score(z), c, method="Nelder-Mead",
                           options={"xatol": 1e-12, "fatol": 1e-14,
                                    "maxiter": 4000 * len(free)})
            c = res.x
        val = score(c)
        if val > best:
            best, best_c = val, c
    return best, best_c


def _initial_guesses(A_cl, X0, free):
    from scipy.linalg import solve_continuous_lyapunov
    r = A_cl.shape[0]
    guesses = []
    Xl = solve_continuous_lyapunov(A_cl.T, -np.eye(r))
    fixed_scale = np.abs(X0).max(initial=1.0)
    for X in (Xl / np.abs(Xl).max() * fixed_scale, np.eye(r) * fixed_scale, Xl):
        guesses.append([X[a, b] for a, b in free])
    return guesses


def certify_gain(K, A, B, varsigma: float, theta_tol: float = 1e-3,
                 margin: float = 1e-9) -> GainEntry:
    """Search for a KYP certificate of the gain ``K``.

    Raises :class:`NotSPRError` when ``A - varsigma B K`` is not Hurwitz or
    ``H(jw) + H(jw)^*`` fails to be positive definite on the frequency grid,
    and :class:`KYPInfeasibleError` when no certificate is found. ``theta``
    is the largest value passing the feasibility test, up to ``theta_tol``.
    """
    K, A, B = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (K, A, B))
    A_cl = A - varsigma * B @ K
    alpha = -float(np.max(np.linalg.eigvals(A_cl).real))
    if not alpha > 0:
        raise NotSPRError(f"closed loop is not Hurwitz (max real part {-alpha:.6g})")
    if not spr_margin(K, A, B, varsigma) > 0:
        raise NotSPRError("H(jw) + H(jw)^* is not positive definite on the grid")

    X0, free = _kyp_structure(K, B)
    starts = _initial_guesses(A_cl, X0, free)

    def feasible(theta):
        val, c = _kyp_feasibility(A_cl, X0, free, theta, starts)
        return val >= -margin and np.linalg.eigvalsh(_assemble(X0, free, c))[0] > margin, c

    ok, c = feasible(alpha)
    if ok:
        theta, c_best = alpha, c
    else:
        lo, hi = 1e-6 * alpha, alpha
        ok, c_best = feasible(lo)
        if not ok:
            raise KYPInfeasibleError("no certificate found for any positive theta")
        while hi - lo > theta_tol:
            mid = 0.5 * (lo + hi)
            ok, c = feasible(mid)
            if ok:
                lo, c_best = mid, c
                starts = [c] + starts[:2]
            else:
                hi = mid
        theta = lo

    X = _assemble(X0, free, c_best)
    M = -(X @ A_cl + A_cl.T @ X + 2.0 * theta * X)
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    R = np.sqrt(np.clip(w, 0.0, None))[:, None] * V.T
    res = kyp_residual(A_cl, X, R, theta, B, K)
    if res[0] > LYAP_TOL or res[1] > STRUCT_TOL:
        raise KYPInfeasibleError(f"certificate residuals {res} exceed tolerance")
    return GainEntry(varsigma=float(varsigma), K=K, X=X, R=R, theta=float(theta),
                     residuals=res)


def build_gainset(sys: SystemModel, varsigma: Sequence[float], pole_scale: float = 1.0,
                  K_override: Optional[Sequence] = None, certify: Sequence[int] = ()) -> GainSet:
    """Synthesize (or take) a gain per task and certify the listed tasks."""
    entries = []
    for i, task in enumerate(sys.tasks):
        if K_override is not None and K_override[i] is not None:
            K = np.atleast_2d(np.asarray(K_override[i], dtype=float))
            if K.shape != (task.p, task.r):
                raise InputError(f"K_{i + 1} must be {task.p}x{task.r}, got {K.shape}")
        else:
            K = synthesize_gain(task.rel_deg, varsigma[i], pole_scale)
        if i in certify:
            A, B, _ = chain_matrices(task.rel_deg)
            entries.append(certify_gain(K, A, B, varsigma[i]))
        else:
            entries.append(GainEntry(varsigma=float(varsigma[i]), K=K))
    return GainSet(tuple(entries))


@dataclass(frozen=True)
class BoundEstimates:
    M_E: np.ndarray
    L_kappa: np.ndarray
    M_xi_star: float
    M_kappa_star: float
    varsigma_est: np.ndarray = field(default=None)
    samples: int = 0
    margin: float = 0.1


def _z_coords(sys: SystemModel, x, i0: int) -> np.ndarray:
    if sys.internal_coords is None:
        return np.asarray(x, dtype=float)
    parts = [np.atleast_1d(np.asarray(sys.internal_coords(x), dtype=float))]
    parts += sys.xi(x)[:i0]
    return np.concatenate(parts)


def estimate_bounds(sys: SystemModel, damping: DampingSchedule, box, samples: int = 10_000,
                    refs=None, rng=None, gamma_provider: Optional[Callable] = None,
                    margin: float = 0.1, i0: Optional[int] = None) -> BoundEstimates:
    """Sampled bounds on ``||E_ij||``, ``kappa_i`` Lipschitz ratios and references.

    Sample maxima are inflated by ``1 + margin``. The estimate of
    ``varsigma_i`` is the sampled minimum eigenvalue of the symmetric part of
    ``L_ii L_ii^T Gamma_ii`` (no margin).
    """
    box = np.atleast_2d(np.asarray(box, dtype=float))
    if box.size == 0 or box.shape != (sys.n, 2) or np.any(box[:, 1] < box[:, 0]):
        raise InputError(f"box must be a nonempty {sys.n}x2 array of [lo, hi]")
    if samples < 1:
        raise InputError("samples must be positive")
    rng = np.random.default_rng(rng)
    k = sys.k
    i0 = k if i0 is None else i0
    dims = sys.task_dims
    ro = np.cumsum((0,) + dims)
    M_E = np.zeros((k, k))
    L_k = np.zeros(k)
    vs = np.full(k, np.inf)
    pts = box[:, 0] + (box[:, 1] - box[:, 0]) * rng.random((samples, sys.n))
    for x in pts:
        D = prioritized_lq(sys.jacobians(x))
        if gamma_provider is None:
            Gamma = canonical_gamma(D, damping(D))
        else:
            Gamma = gamma_provider(x, D)
            if not isinstance(Gamma, GammaForm):
                Gamma = GammaForm(Gamma, dims)
        E = np.eye(D.p) - D.L @ D.L_D.T @ Gamma.matrix
        for i in range(k):
            for j in range(i + 1):
                blk = E[ro[i]:ro[i + 1], ro[j]:ro[j + 1]]
                M_E[i, j] = max(M_E[i, j], float(np.linalg.norm(blk, 2)))
            Lii = D.L_blocks[i][i]
            S = Lii @ Lii.T @ Gamma.block(i, i)
            vs[i] = min(vs[i], float(np.linalg.eigvalsh(0.5 * (S + S.T))[0]))
        kap = sys.kappa(x)
        zn = float(np.linalg.norm(_z_coords(sys, x, i0)))
        if zn > 0:
            for i in range(k):
                L_k[i] = max(L_k[i], float(np.linalg.norm(kap[ro[i]:ro[i + 1]])) / zn)
    M_xi = M_kap = 0.0
    if refs is not None:
        for t in np.linspace(0.0, refs.period(), 2001):
            M_xi = max(M_xi, float(np.linalg.norm(np.concatenate(refs.xi_star(t)[:i0]))))
            M_kap = max(M_kap, float(np.linalg.norm(np.concatenate(refs.kappa_star(t)[:i0]))))
    s = 1.0 + margin
    return BoundEstimates(M_E=M_E * s, L_kappa=L_k * s, M_xi_star=M_xi * s,
                          M_kappa_star=M_kap * s, varsigma_est=vs,
                          samples=samples, margin=margin)


@dataclass(frozen=True)
class MMatrixReport:
    Y: np.ndarray
    Z: np.ndarray
    sr_value: float
    feasible: bool
    w: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None


def mmatrix_from_yz(Y, Z) -> MMatrixReport:
    """Spectral test on given ``Y``, ``Z`` and a positive weight when it passes.

    When ``sr(Y^{-1} Z) < 1`` the weight solves ``(Y - Z) w = 1``.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if Y.shape != Z.shape or Y.shape[0] != Y.shape[1]:
        raise InputError("Y and Z must be square of equal size")
    sr = spectral_radius(np.linalg.solve(Y, Z))
    if not sr < 1.0:
        return MMatrixReport(Y, Z, sr, False)
    w = np.linalg.solve(Y - Z, np.ones(Y.shape[0]))
    v = (Y - Z) @ w
    ok = bool(np.all(w > 0) and np.all(v > 0))
    return MMatrixReport(Y, Z, sr, ok, w, v)


def build_yz(M_E, L_kappa, K_norms, sigma_tilde, theta, i0: int):
    """Assemble ``Y`` and ``Z`` for the first ``i0`` tasks.

    ``y_ij = -(st_j / th_j) M_E[j, i] ||K_i||`` for ``i < j``, unit diagonal,
    zero below; ``z_ij = (st_j / th_j) sum_{a <= j} M_E[j, a] L_kappa[a]``.
    """
    M_E = np.asarray(M_E, dtype=float)
    Y = np.eye(i0)
    Z = np.zeros((i0, i0))
    for j in range(i0):
        c = sigma_tilde[j] / theta[j]
        zj = c * sum(M_E[j, a] * L_kappa[a] for a in range(j + 1))
        Z[:, j] = zj
        for i in range(j):
            Y[i, j] = -c * M_E[j, i] * K_norms[i]
    return Y, Z


def mmatrix_analysis(bounds: BoundEstimates, gains: GainSet, i0: int) -> MMatrixReport:
    if not 1 <= i0 <= len(gains):
        raise InputError(f"i0 = {i0} outside [1, {len(gains)}]")
    for i in range(i0):
        if not gains[i].certified:
            raise InputError(f"gain of task {i + 1} is not certified")
    Y, Z = build_yz(
        bounds.M_E, bounds.L_kappa,
        [float(np.linalg.norm(gains[i].K, 2)) for i in range(i0)],
        [gains[i].sigma_tilde for i in range(i0)],
        [gains[i].theta for i in range(i0)], i0)
    return mmatrix_from_yz(Y, Z)
