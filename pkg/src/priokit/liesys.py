"""Input-affine systems with prioritized task outputs.

A :class:`SystemModel` describes ``x' = f(x) + G(x) u`` with task outputs
``y_i = h_i(x)``. Each task carries its declared relative degrees together
with the analytic drift ``kappa_i(x)`` (highest output derivatives at
``u = 0``) and input gain ``J_i(x)``. Finite differences are only used to
check those analytic functions, never to replace them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import block_diag

from .numerics import InputError

Vector = np.ndarray


@dataclass(frozen=True)
class TaskSpec:
    """One prioritized task.

    ``xi`` maps a state to ``col(h_i1, L_f h_i1, ..., L_f^{r_i1-1} h_i1, ...)``;
    it may be omitted when every relative degree is 1 (then ``xi = h``).
    """

    p: int
    h: Callable
    rel_deg: tuple
    kappa: Callable
    J: Callable
    xi: Optional[Callable] = None
    name: str = ""

    def __post_init__(self):
        rel = tuple(int(r) for r in np.atleast_1d(self.rel_deg))
        if len(rel) != self.p:
            raise InputError(f"rel_deg has {len(rel)} entries for p = {self.p}")
        if any(r < 1 for r in rel):
            raise InputError("relative degrees must be >= 1")
        object.__setattr__(self, "rel_deg", rel)
        if self.xi is None and any(r > 1 for r in rel):
            raise InputError("tasks with relative degree > 1 need an xi extractor")

    @property
    def r(self) -> int:
        return int(sum(self.rel_deg))

    def xi_of(self, x) -> Vector:
        if self.xi is None:
            return np.asarray(self.h(x), dtype=float).reshape(-1)
        return np.asarray(self.xi(x), dtype=float).reshape(-1)


@dataclass(frozen=True)
class SystemModel:
    n: int
    m: int
    f: Callable
    G: Callable
    tasks: tuple
    internal_coords: Optional[Callable] = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        if not self.tasks:
            raise InputError("a system needs at least one task")

    @property
    def k(self) -> int:
        return len(self.tasks)

    @property
    def task_dims(self) -> tuple:
        return tuple(t.p for t in self.tasks)

    @property
    def row_offsets(self) -> tuple:
        out = [0]
        for t in self.tasks:
            out.append(out[-1] + t.p)
        return tuple(out)

    def rhs(self, x, u) -> Vector:
        return np.asarray(self.f(x), dtype=float) + np.asarray(self.G(x), dtype=float) @ u

    def jacobians(self, x) -> list:
        return [np.asarray(t.J(x), dtype=float).reshape(t.p, self.m) for t in self.tasks]

    def kappa(self, x) -> Vector:
        return np.concatenate([np.asarray(t.kappa(x), dtype=float).reshape(-1)
                               for t in self.tasks])

    def xi(self, x) -> list:
        return [t.xi_of(x) for t in self.tasks]

    def outputs(self, x) -> list:
        return [np.asarray(t.h(x), dtype=float).reshape(-1) for t in self.tasks]


@dataclass(frozen=True)
class NormalFormMatrices:
    A_blocks: tuple
    B_blocks: tuple
    C_blocks: tuple
    A: np.ndarray = field(repr=False)
    B: np.ndarray = field(repr=False)
    C: np.ndarray = field(repr=False)


def chain_matrices(rel_deg: Sequence[int]):
    """Integrator-chain ``(A, B, C)`` for output chains of the given lengths."""
    As, Bs, Cs = [], [], []
    for r in rel_deg:
        As.append(np.eye(r, k=1))
        b = np.zeros((r, 1))
        b[-1, 0] = 1.0
        Bs.append(b)
        c = np.zeros((1, r))
        c[0, 0] = 1.0
        Cs.append(c)
    return block_diag(*As), block_diag(*Bs), block_diag(*Cs)


def build_normal_form(sys: SystemModel) -> NormalFormMatrices:
    mats = [chain_matrices(t.rel_deg) for t in sys.tasks]
    A_b, B_b, C_b = zip(*mats)
    return NormalFormMatrices(
        A_blocks=tuple(A_b), B_blocks=tuple(B_b), C_blocks=tuple(C_b),
        A=block_diag(*A_b), B=block_diag(*B_b), C=block_diag(*C_b))


def _fd_step(step: float, order: int) -> float:
    # nested central differences amplify rounding by step**-order; keep the
    # step above the point where rounding dominates truncation
    return max(step, np.finfo(float).eps ** (1.0 / (order + 2)))


def _directional(F: Callable, field_: Callable, step: float) -> Callable:
    """``x -> dF(x) . field_(x)`` by a central difference along the field."""
    def d(x):
        x = np.asarray(x, dtype=float)
        direction = np.asarray(field_(x), dtype=float)
        scale = float(np.linalg.norm(direction))
        if scale == 0.0:
            return np.zeros_like(np.atleast_1d(np.asarray(F(x), dtype=float)))
        unit = direction / scale
        hi = np.atleast_1d(np.asarray(F(x + step * unit), dtype=float))
        lo = np.atleast_1d(np.asarray(F(x - step * unit), dtype=float))
        return scale * (hi - lo) / (2.0 * step)
    return d


def _lie_fn(g: Callable, f: Callable, order: int, step: float) -> Callable:
    F = g
    for _ in range(order):
        F = _directional(F, f, step)
    return F


def lie_derivative_fd(g: Callable, f: Callable, x, order: int = 1,
                      step: float = 1e-5) -> Vector:
    """``L_f^order g(x)`` by ``order`` nested central differences."""
    if order < 1:
        raise InputError("order must be >= 1")
    if not step > 0:
        raise InputError("step must be positive")
    return _lie_fn(g, f, order, _fd_step(step, order))(np.asarray(x, dtype=float))


def lie_gain_fd(g: Callable, f: Callable, G: Callable, x, order: int,
                step: float = 1e-5) -> np.ndarray:
    """Row ``L_G L_f^order g(x)`` (``len(g) x m``) by nested central differences."""
    x = np.asarray(x, dtype=float)
    h = _fd_step(step, order + 1)
    F = _lie_fn(g, f, order, h)
    m = np.asarray(G(x)).shape[1]
    cols = []
    for c in range(m):
        col = _directional(F, lambda z, c=c: np.asarray(G(z), dtype=float)[:, c], h)(x)
        cols.append(col)
    return np.column_stack(cols)


@dataclass(frozen=True)
class TaskValidationReport:
    task: int
    vanishing_dev: float
    jacobian_dev: float
    kappa_dev: float
    tol: float

    @property
    def passed(self) -> bool:
        return max(self.vanishing_dev, self.jacobian_dev, self.kappa_dev) <= self.tol


def validate_task(sys: SystemModel, i: int, sample_points, tol: float = 1e-4,
                  step: float = 1e-5) -> TaskValidationReport:
    """Check declared relative degrees, ``J_i`` and ``kappa_i`` of task ``i``.

    For each output ``y_ij`` with relative degree ``r``: ``L_G L_f^a y_ij``
    must vanish for ``a < r - 1``; ``L_G L_f^{r-1} y_ij`` must match row
    ``j`` of ``J_i``; ``L_f^r y_ij`` must match entry ``j`` of ``kappa_i``.
    Reports the largest deviation of each kind over the sample points.
    """
    if not 0 <= i < sys.k:
        raise InputError(f"task index {i} out of range")
    task = sys.tasks[i]
    van = jac = kap = 0.0
    for x in sample_points:
        x = np.asarray(x, dtype=float)
        Jx = np.asarray(task.J(x), dtype=float).reshape(task.p, sys.m)
        kx = np.asarray(task.kappa(x), dtype=float).reshape(-1)
        for j, r in enumerate(task.rel_deg):
            hj = lambda z, j=j: np.atleast_1d(np.asarray(task.h(z), dtype=float))[j:j + 1]
            for a in range(r - 1):
                van = max(van, float(np.linalg.norm(lie_gain_fd(hj, sys.f, sys.G, x, a, step))))
            row = lie_gain_fd(hj, sys.f, sys.G, x, r - 1, step)
            jac = max(jac, float(np.linalg.norm(row.reshape(-1) - Jx[j])))
            kfd = lie_derivative_fd(hj, sys.f, x, r, step)
            kap = max(kap, float(abs(kfd[0] - kx[j])))
    return TaskValidationReport(i, van, jac, kap, tol)


def linear_system(A, G, C_blocks, rel_degs, name: str = "linear") -> SystemModel:
    """Linear system ``x' = A x + G u`` with task outputs ``y_i = C_i x``.

    For output row ``c`` with relative degree ``r``: ``xi`` stacks
    ``c A^a x`` for ``a < r``, ``J`` row is ``c A^{r-1} G`` and ``kappa`` is
    ``c A^r x``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    G = np.atleast_2d(np.asarray(G, dtype=float))
    n, m = G.shape
    if A.shape != (n, n):
        raise InputError(f"A must be {n}x{n}")
    tasks = []
    for C, rel in zip(C_blocks, rel_degs):
        C = np.atleast_2d(np.asarray(C, dtype=float))
        rel = tuple(int(r) for r in np.atleast_1d(rel))
        if C.shape[1] != n or C.shape[0] != len(rel):
            raise InputError("C block shape does not match rel_deg or state size")
        xi_rows = np.vstack([C[j] @ np.linalg.matrix_power(A, a)
                             for j, r in enumerate(rel) for a in range(r)])
        J_rows = np.vstack([C[j] @ np.linalg.matrix_power(A, r - 1) @ G
                            for j, r in enumerate(rel)])
        k_rows = np.vstack([C[j] @ np.linalg.matrix_power(A, r)
                            for j, r in enumerate(rel)])
        tasks.append(TaskSpec(
            p=C.shape[0], rel_deg=rel,
            h=lambda x, C=C: C @ x,
            kappa=lambda x, K=k_rows: K @ x,
            J=lambda x, J=J_rows: J,
            xi=lambda x, X=xi_rows: X @ x))
    return SystemModel(n=n, m=m, f=lambda x: A @ x, G=lambda x: G,
                       tasks=tuple(tasks), name=name)
