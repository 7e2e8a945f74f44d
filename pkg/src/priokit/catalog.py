"""Benchmark systems whose task coordinates are literal functions of the state."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .liesys import SystemModel, TaskSpec, linear_system


@dataclass(frozen=True)
class CatalogEntry:
    id: str
    system: SystemModel
    singular_set: str
    box: np.ndarray
    description: str = ""


class UnknownSystemError(KeyError):
    pass


def _lin_conflict() -> CatalogEntry:
    zero3 = np.zeros(3)
    J1 = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    J2 = np.array([[1.0, 0.0, 0.0]])
    sys = SystemModel(
        n=3, m=3, f=lambda x: zero3, G=lambda x: np.eye(3), name="lin-conflict",
        tasks=(
            TaskSpec(p=2, rel_deg=(1, 1), h=lambda x: x[:2], kappa=lambda x: np.zeros(2),
                     J=lambda x: J1, name="planar position"),
            TaskSpec(p=1, rel_deg=(1,), h=lambda x: x[:1], kappa=lambda x: np.zeros(1),
                     J=lambda x: J2, name="first coordinate"),
        ))
    return CatalogEntry(
        "lin-conflict", sys, "everywhere: task 2 lies in the row space of task 1 (rho_2 = 0)",
        np.array([[-1.0, 1.0]] * 3),
        "driftless, permanently conflicting second task")


def _trig_singular() -> CatalogEntry:
    zero2 = np.zeros(2)
    sys = SystemModel(
        n=2, m=2, f=lambda x: zero2, G=lambda x: np.eye(2), name="trig-singular",
        tasks=(
            TaskSpec(p=1, rel_deg=(1,), h=lambda x: x[:1], kappa=lambda x: np.zeros(1),
                     J=lambda x: np.array([[1.0, 0.0]]), name="x1"),
            TaskSpec(p=1, rel_deg=(1,), h=lambda x: np.array([x[1] * np.cos(x[0])]),
                     kappa=lambda x: np.zeros(1),
                     J=lambda x: np.array([[-x[1] * np.sin(x[0]), np.cos(x[0])]]),
                     name="x2 cos(x1)"),
        ))
    return CatalogEntry(
        "trig-singular", sys, "cos(x1) = 0: task 2 loses rank (rho_2 = 0)",
        np.array([[-2.0, 2.0], [-1.0, 1.0]]),
        "driftless, task 2 singular where cos(x1) = 0")


def _internal_dyn() -> CatalogEntry:
    G = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    sys = SystemModel(
        n=3, m=2, f=lambda x: np.array([0.0, 0.0, x[0] - x[2]]), G=lambda x: G,
        name="internal-dyn", internal_coords=lambda x: x[2:3],
        tasks=(
            TaskSpec(p=1, rel_deg=(1,), h=lambda x: x[:1], kappa=lambda x: np.zeros(1),
                     J=lambda x: np.array([[1.0, 0.0]]), name="x1"),
            TaskSpec(p=1, rel_deg=(1,), h=lambda x: x[1:2], kappa=lambda x: np.zeros(1),
                     J=lambda x: np.array([[0.0, 1.0]]), name="x2"),
        ))
    return CatalogEntry(
        "internal-dyn", sys, "none: J = I_2 everywhere",
        np.array([[-1.0, 1.0]] * 3),
        "stable internal state x3' = x1 - x3")


def _double_integrator() -> CatalogEntry:
    A = np.zeros((4, 4))
    A[0, 2] = A[1, 3] = 1.0
    G = np.vstack([np.zeros((2, 2)), np.eye(2)])
    sys = linear_system(A, G, [[[1.0, 0.0, 0.0, 0.0]], [[1.0, 1.0, 0.0, 0.0]]],
                        [(2,), (2,)], name="double-integrator")
    return CatalogEntry(
        "double-integrator", sys, "none: J = [[1, 0], [1, 1]] everywhere",
        np.array([[-1.0, 1.0]] * 4),
        "two unit masses, relative degree 2 tasks q1 and q1 + q2")


_BUILDERS = {
    "lin-conflict": _lin_conflict,
    "trig-singular": _trig_singular,
    "internal-dyn": _internal_dyn,
    "double-integrator": _double_integrator,
}


def catalog() -> list:
    return [build() for build in _BUILDERS.values()]


def lookup(system_id: str) -> CatalogEntry:
    try:
        return _BUILDERS[system_id]()
    except KeyError:
        raise UnknownSystemError(
            f"unknown system {system_id!r}; known: {', '.join(_BUILDERS)}") from None
