"""Closed-loop simulation of the prioritized tracking controller.

Each task follows ``v_i = -K_i (xi_i - xi_i*) + kappa_i*`` and the input is
the canonical damped linearizer of ``v``. The loop is integrated with fixed
step RK4; the input is recomputed at every stage, so the nonsmooth
factorization is sampled rather than regularized set-valuedly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .linearizer import DampingSchedule
from .liesys import SystemModel
from .numerics import DEFAULT_TOL, InputError


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class Sinusoid:
    amp: float
    freq: float
    phase: float = 0.0


@dataclass(frozen=True)
class OutputReference:
    """``y(t) = offset + sum amp * sin(freq * t + phase)``."""

    offset: float = 0.0
    sines: tuple = ()

    def derivative(self, t: float, order: int) -> float:
        val = self.offset if order == 0 else 0.0
        for s in self.sines:
            val += s.amp * s.freq ** order * math.sin(s.freq * t + s.phase + order * math.pi / 2)
        return val


@dataclass(frozen=True)
class ReferenceSpec:
    """Per-task output references with their chain derivatives.

    ``outputs[i][j]`` is the reference of output ``j`` of task ``i`` and
    ``rel_degs[i][j]`` its relative degree.
    """

    outputs: tuple
    rel_degs: tuple

    def __post_init__(self):
        if len(self.outputs) != len(self.rel_degs):
            raise InputError("one reference list per task is required")
        for i, (outs, rel) in enumerate(zip(self.outputs, self.rel_degs)):
            if len(outs) != len(rel):
                raise InputError(f"task {i + 1} needs {len(rel)} output references")

    @classmethod
    def zero(cls, sys: SystemModel) -> "ReferenceSpec":
        return cls(tuple(tuple(OutputReference() for _ in t.rel_deg) for t in sys.tasks),
                   tuple(t.rel_deg for t in sys.tasks))

    def xi_star(self, t: float) -> list:
        return [np.array([o.derivative(t, a) for o, r in zip(outs, rel) for a in range(r)])
                for outs, rel in zip(self.outputs, self.rel_degs)]

    def kappa_star(self, t: float) -> list:
        return [np.array([o.derivative(t, r) for o, r in zip(outs, rel)])
                for outs, rel in zip(self.outputs, self.rel_degs)]

    def period(self) -> float:
        freqs = [abs(s.freq) for outs in self.outputs for o in outs for s in o.sines if s.freq]
        return 2 * math.pi / min(freqs) if freqs else 1.0

    def scaled(self, factor: float) -> "ReferenceSpec":
        """References with every offset and amplitude multiplied by ``factor``."""
        outs = tuple(tuple(OutputReference(o.offset * factor, tuple(
            Sinusoid(s.amp * factor, s.freq, s.phase) for s in o.sines)) for o in task)
            for task in self.outputs)
        return ReferenceSpec(outs, self.rel_degs)


@dataclass(frozen=True)
class FreeInput:
    """Bounded free input ``u_f(t)``: zero, constant or ``amp * sin(freq t)``."""

    kind: str = "zero"
    value: Optional[np.ndarray] = None
    freq: float = 0.0
    bound: float = 0.0

    def __post_init__(self):
        if self.kind not in ("zero", "constant", "sine"):
            raise InputError(f"unknown u_f kind {self.kind!r}")
        if self.kind != "zero":
            v = np.asarray(self.value, dtype=float)
            object.__setattr__(self, "value", v)
            if float(np.linalg.norm(v)) > self.bound:
                raise InputError("u_f exceeds its declared bound")

    def __call__(self, t: float, m: int) -> np.ndarray:
        if self.kind == "zero":
            return np.zeros(m)
        if self.kind == "constant":
            return self.value
        return self.value * math.sin(self.freq * t)


@dataclass
class Scenario:
    system: SystemModel
    K: Sequence
    refs: ReferenceSpec
    x0: np.ndarray
    damping: DampingSchedule = field(default_factory=DampingSchedule)
    t_end: float = 20.0
    dt: float = 1e-3
    settling: float = 5.0
    u_f: FreeInput = field(default_factory=FreeInput)
    i0: int = 1
    divergence_norm: float = 1e8
    name: str = ""

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise InputError(f"dt must be positive, got {self.dt}")
        if not self.t_end >= self.dt:
            raise InputError("t_end must be at least dt")
        self.x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        if self.x0.shape[0] != self.system.n or not np.all(np.isfinite(self.x0)):
            raise InputError(f"x0 must be a finite vector of length {self.system.n}")
        if not 1 <= self.i0 <= self.system.k:
            raise InputError(f"i0 must lie in [1, {self.system.k}]")
        if len(self.K) != self.system.k:
            raise InputError("one gain per task is required")

    @property
    def steps(self) -> int:
        return int(round(self.t_end / self.dt))


@dataclass
class ControlEval:
    u: np.ndarray
    u_parts: np.ndarray
    xi_err: list
    residuals: tuple
    ranks: tuple
    lambdas: tuple


def control(sys: SystemModel, K, refs: ReferenceSpec, damping: DampingSchedule,
            x, t: float, u_f: FreeInput = FreeInput()) -> ControlEval:
    """Tracking law plus canonical prioritized linearizer at ``(x, t)``."""
    xi = sys.xi(x)
    xs = refs.xi_star(t)
    ks = refs.kappa_star(t)
    err = [a - b for a, b in zip(xi, xs)]
    v = np.concatenate([-Ki @ e + k for Ki, e, k in zip(K, err, ks)])
    dims = sys.task_dims
    u, parts, res, ranks, lam = kernels.canonical_stage(
        np.vstack(sys.jacobians(x)), dims, v - sys.kappa(x), u_f(t, sys.m),
        damping.lambda_max, damping.eps_sing, damping.override_vector(sys.k),
        DEFAULT_TOL.rel_tol, DEFAULT_TOL.abs_tol)
    offs = sys.row_offsets
    return ControlEval(u, parts, err, tuple(res[offs[i]:offs[i + 1]] for i in range(sys.k)),
                       tuple(int(r) for r in ranks), tuple(float(a) for a in lam))


@dataclass
class TraceRecord:
    t: float
    x: np.ndarray
    xi_err: list
    residuals: tuple
    ranks: tuple
    lambdas: tuple
    u: np.ndarray
    u_parts: np.ndarray
    event: str = ""


def step_closed_loop(sys, K, refs, damping, x, t, dt, u_f=FreeInput()):
    """One RK4 step; returns ``(x_next, record)`` with diagnostics at the start."""
    x = np.asarray(x, dtype=float)
    c1 = control(sys, K, refs, damping, x, t, u_f)
    k1 = sys.rhs(x, c1.u)
    x2 = x + 0.5 * dt * k1
    c2 = control(sys, K, refs, damping, x2, t + 0.5 * dt, u_f)
    k2 = sys.rhs(x2, c2.u)
    x3 = x + 0.5 * dt * k2
    c3 = control(sys, K, refs, damping, x3, t + 0.5 * dt, u_f)
    k3 = sys.rhs(x3, c3.u)
    x4 = x + dt * k3
    c4 = control(sys, K, refs, damping, x4, t + dt, u_f)
    k4 = sys.rhs(x4, c4.u)
    x_next = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    event = ""
    if not (c1.ranks == c2.ranks == c3.ranks == c4.ranks):
        event = "rank_change_in_step"
    rec = TraceRecord(t, x.copy(), c1.xi_err, c1.residuals, c1.ranks, c1.lambdas,
                      c1.u, c1.u_parts, event)
    return x_next, rec


class Trace:
    """Time-indexed closed-loop record with array views of every column."""

    def __init__(self, records, n, k, diverged=False, message=""):
        self.records = records
        self.n = n
        self.k = k
        self.diverged = diverged
        self.message = message

    def __len__(self):
        return len(self.records)

    @property
    def t(self):
        return np.array([r.t for r in self.records])

    @property
    def x(self):
        return np.array([r.x for r in self.records]).reshape(len(self), self.n)

    def xi_err(self, i: int) -> np.ndarray:
        return np.array([r.xi_err[i] for r in self.records])

    @property
    def xi_err_norm(self):
        return np.array([[np.linalg.norm(e) for e in r.xi_err] for r in self.records]).reshape(-1, self.k)

    def residual(self, i: int) -> np.ndarray:
        return np.array([r.residuals[i] for r in self.records])

    @property
    def res_norm(self):
        return np.array([[np.linalg.norm(e) for e in r.residuals] for r in self.records]).reshape(-1, self.k)

    @property
    def ranks(self):
        return np.array([r.ranks for r in self.records], dtype=int).reshape(-1, self.k)

    @property
    def lambdas(self):
        return np.array([r.lambdas for r in self.records], dtype=float).reshape(-1, self.k)

    @property
    def u_norm(self):
        return np.array([np.linalg.norm(r.u) for r in self.records])

    @property
    def events(self):
        return [r.event for r in self.records]


def simulate(sc: Scenario) -> Trace:
    """Integrate a scenario; divergence ends the run with a flagged last record."""
    sys = sc.system
    x = sc.x0.copy()
    records = []
    prev_ranks = None
    N = sc.steps
    for n in range(N + 1):
        t = n * sc.dt
        if n == N:
            c = control(sys, sc.K, sc.refs, sc.damping, x, t, sc.u_f)
            rec = TraceRecord(t, x.copy(), c.xi_err, c.residuals, c.ranks, c.lambdas,
                              c.u, c.u_parts)
            x_next = None
        else:
            with np.errstate(over="ignore", invalid="ignore"):
                x_next, rec = step_closed_loop(sys, sc.K, sc.refs, sc.damping, x, t, sc.dt, sc.u_f)
        if prev_ranks is not None and rec.ranks != prev_ranks:
            rec.event = "rank_change" if not rec.event else rec.event + "|rank_change"
        prev_ranks = rec.ranks
        records.append(rec)
        if x_next is None:
            break
        if not np.all(np.isfinite(x_next)) or np.linalg.norm(x_next) > sc.divergence_norm:
            rec.event = "diverged" if not rec.event else rec.event + "|diverged"
            return Trace(records, sys.n, sys.k, diverged=True,
                         message=f"state left the finite region after t = {t:.17g}")
        x = x_next
    return Trace(records, sys.n, sys.k)


@dataclass(frozen=True)
class EnvelopeFit:
    a: float
    b: float
    c: float
    coverage: float


class EnvelopeError(ValueError):
    pass


def fit_envelope(trace, i: int = 0, T1: float = 0.0, t=None, quantile: float = 0.99,
                 min_samples: int = 100) -> EnvelopeFit:
    """Fit ``||xi_err_i(t)|| <= a exp(-b (t - T1)) + c`` for ``t >= T1``.

    ``b`` comes from a least-squares fit of ``log ||xi_err_i||`` over the
    samples above twice the late-window floor (the maximum over the last
    fifth of the window) and ``a`` is then raised until the
    exponential dominates those samples; if the slope does not decay, ``a`` is
    the value at ``T1`` and ``b`` the inverse window length. ``c`` is the
    smallest offset under which the envelope dominates ``quantile`` of the
    samples. ``trace`` is a :class:`Trace` or, with ``t`` given, an array of
    error norms.
    """
    if t is None:
        t = trace.t
        s = trace.xi_err_norm[:, i]
    else:
        t = np.asarray(t, dtype=float)
        s = np.asarray(trace, dtype=float)
    sel = t >= T1
    tau, s = t[sel] - T1, s[sel]
    if len(s) < min_samples:
        raise EnvelopeError(f"need {min_samples} samples after T1, have {len(s)}")
    if not np.all(np.isfinite(s)):
        raise EnvelopeError("trace has non-finite errors")
    smax = float(s.max())
    b = 0.0
    if smax > 0:
        # fit the decay on samples clearly above the late-window floor
        floor = float(s[tau >= 0.8 * tau[-1]].max())
        use = s > max(smax * 1e-10, 2.0 * floor)
        if np.count_nonzero(use) < 2 or np.ptp(tau[use]) == 0:
            use = s > smax * 1e-10
        if np.count_nonzero(use) >= 2 and np.ptp(tau[use]) > 0:
            slope, intercept = np.polyfit(tau[use], np.log(s[use]), 1)
            a, b = float(np.exp(intercept)), float(-slope)
            if b > 0:
                a = max(a, float(np.max(s[use] * np.exp(b * tau[use]))))
    if not b > 0:
        a, b = float(s[0]), 1.0 / float(tau[-1] if tau[-1] > 0 else 1.0)
    c = max(0.0, float(np.quantile(s - a * np.exp(-b * tau), quantile)))
    coverage = float(np.mean(s <= a * np.exp(-b * tau) + c))
    return EnvelopeFit(a, b, c, coverage)


def run_scenario(sc: Scenario):
    """Simulate and summarize; returns ``(trace, summary_dict)``."""
    trace = simulate(sc)
    return trace, summarize(sc, trace)


def summarize(sc: Scenario, trace: Trace) -> dict:
    t = trace.t
    after = t >= sc.settling
    k = sc.system.k
    errn = trace.xi_err_norm
    resn = trace.res_norm
    stacked = np.sqrt(np.sum(errn[:, : sc.i0] ** 2, axis=1))
    summary = {
        "system": sc.system.name,
        "scenario": sc.name,
        "steps": len(trace) - 1,
        "dt": sc.dt,
        "t_end": sc.t_end,
        "settling_time": sc.settling,
        "i0": sc.i0,
        "diverged": trace.diverged,
        "rank_change_events": int(sum(1 for e in trace.events if "rank_change" in e)),
        "sup_xi_err_1_to_i0_after_settling": float(stacked[after].max()) if after.any() else math.nan,
    }
    if trace.diverged:
        summary["divergence"] = trace.message
    tasks = {}
    for i in range(k):
        entry = {
            "sup_xi_err_after_settling": float(errn[after, i].max()) if after.any() else math.nan,
            "max_residual_norm": float(resn[:, i].max()),
            "mean_residual_norm_after_settling": float(resn[after, i].mean()) if after.any() else math.nan,
            "min_rank": int(trace.ranks[:, i].min()),
        }
        try:
            fit = fit_envelope(trace, i, sc.settling)
            entry["envelope"] = {"a": fit.a, "b": fit.b, "c": fit.c, "coverage": fit.coverage}
        except EnvelopeError as exc:
            entry["envelope"] = {"failed": str(exc)}
        tasks[str(i + 1)] = entry
    summary["task"] = tasks
    if sc.system.internal_coords is not None:
        eta = np.array([np.atleast_1d(sc.system.internal_coords(x)) for x in trace.x])
        summary["sup_internal_state_norm"] = float(np.linalg.norm(eta, axis=1).max())
    return summary


def csv_header(n: int, k: int) -> str:
    cols = ["t"] + [f"x{j}" for j in range(n)]
    for name in ("xi_err_norm", "res_norm", "rank", "lambda"):
        cols += [f"{name}_{i + 1}" for i in range(k)]
    return ",".join(cols + ["u_norm", "event"])


def _fmt(v: float) -> str:
    return "%.17g" % v


def trace_csv_lines(trace: Trace):
    yield csv_header(trace.n, trace.k)
    for r in trace.records:
        row = [_fmt(r.t)] + [_fmt(v) for v in r.x]
        row += [_fmt(np.linalg.norm(e)) for e in r.xi_err]
        row += [_fmt(np.linalg.norm(e)) for e in r.residuals]
        row += [str(int(v)) for v in r.ranks]
        row += [_fmt(v) for v in r.lambdas]
        row += [_fmt(np.linalg.norm(r.u)), r.event]
        yield ",".join(row)
