"""Scenario files: versioned TOML with a closed schema.

Every table has a fixed key set; unknown keys, a missing or different
``spec_version`` and wrongly shaped entries are rejected before any
computation. ``PRIOKIT_SEED`` overrides the file's ``seed``.

Layout::

    spec_version = 1
    name = "..."
    seed = 0
    i0 = 1

    [system]            # id = "<catalog id>"  or  [system.linear] A, G, C, rel_deg
    [damping]           # lambda_max, eps_sing, overrides = ["auto" | number | "inf", ...]
    [gains]             # varsigma, pole_scale, certify, K = ["auto" | matrix, ...]
    [[reference.task]]  # outputs = [{offset, sines = [{amp, freq, phase}]}]
    [sim]               # x0, t_end, dt, settling, divergence_norm
    [u_f]               # kind, value, freq, bound
    [analysis]          # samples, margin, box
    [analysis.bounds]   # M_E, L_kappa, M_xi_star, M_kappa_star
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .catalog import UnknownSystemError, lookup
from .gains import BoundEstimates, synthesize_gain
from .liesys import SystemModel, linear_system
from .linearizer import DampingSchedule
from .numerics import InputError
from .simulator import FreeInput, OutputReference, ReferenceSpec, Scenario, Sinusoid

SPEC_VERSION = 1

_TOP = {"spec_version", "name", "seed", "i0", "system", "damping", "gains",
        "reference", "sim", "u_f", "analysis"}
_SYSTEM = {"id", "linear"}
_LINEAR = {"A", "G", "C", "rel_deg", "name"}
_DAMPING = {"lambda_max", "eps_sing", "overrides"}
_GAINS = {"varsigma", "pole_scale", "certify", "K"}
_REFERENCE = {"task"}
_REF_TASK = {"outputs"}
_OUTPUT = {"offset", "sines"}
_SINE = {"amp", "freq", "phase"}
_SIM = {"x0", "t_end", "dt", "settling", "divergence_norm"}
_UF = {"kind", "value", "freq", "bound"}
_ANALYSIS = {"samples", "margin", "box", "bounds"}
_BOUNDS = {"M_E", "L_kappa", "M_xi_star", "M_kappa_star"}


@dataclass
class ScenarioConfig:
    """A parsed scenario file: the simulation scenario plus analysis settings."""

    scenario: Scenario
    varsigma: tuple
    pole_scale: float
    K_explicit: tuple
    certify: tuple
    seed: int
    samples: int
    margin: float
    box: np.ndarray
    bounds_override: Optional[BoundEstimates]
    source: str = ""

    @property
    def system(self) -> SystemModel:
        return self.scenario.system

    def with_sim(self, dt=None, t_end=None) -> "ScenarioConfig":
        sc = self.scenario
        changes = {}
        if dt is not None:
            changes["dt"] = float(dt)
        if t_end is not None:
            changes["t_end"] = float(t_end)
        return replace(self, scenario=replace(sc, **changes)) if changes else self


def _check_keys(tbl, allowed, where):
    if not isinstance(tbl, dict):
        raise InputError(f"{where} must be a table")
    extra = sorted(set(tbl) - allowed)
    if extra:
        raise InputError(f"unknown key(s) in {where}: {', '.join(extra)}")


def _number(v, where, positive=False, nonneg=False, allow_inf=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise InputError(f"{where} must be a number, got {v!r}")
    v = float(v)
    if math.isnan(v) or (math.isinf(v) and not allow_inf):
        raise InputError(f"{where} must be finite")
    if positive and not v > 0:
        raise InputError(f"{where} must be positive, got {v}")
    if nonneg and not v >= 0:
        raise InputError(f"{where} must be nonnegative, got {v}")
    return v


def _int(v, where, lo=None):
    if isinstance(v, bool) or not isinstance(v, int):
        raise InputError(f"{where} must be an integer, got {v!r}")
    if lo is not None and v < lo:
        raise InputError(f"{where} must be >= {lo}")
    return v


def _array(v, where, ndim=None):
    try:
        a = np.array(v, dtype=float)
    except (TypeError, ValueError):
        raise InputError(f"{where} must be a numeric array") from None
    if ndim is not None and a.ndim != ndim:
        raise InputError(f"{where} must have {ndim} dimension(s), got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InputError(f"{where} must be finite")
    return a


def _damping_value(v, where):
    if isinstance(v, str):
        if v.strip().lower() == "auto":
            return None
        if v.strip().lower() in ("inf", "+inf", "infinity"):
            return math.inf
        raise InputError(f"{where}: expected 'auto', 'inf' or a number, got {v!r}")
    return _number(v, where, nonneg=True, allow_inf=True)


def _system(tbl) -> tuple:
    _check_keys(tbl, _SYSTEM, "[system]")
    if ("id" in tbl) == ("linear" in tbl):
        raise InputError("[system] needs exactly one of 'id' or 'linear'")
    if "id" in tbl:
        try:
            entry = lookup(str(tbl["id"]))
        except UnknownSystemError as exc:
            raise InputError(exc.args[0]) from None
        return entry.system, entry.box
    lin = tbl["linear"]
    _check_keys(lin, _LINEAR, "[system.linear]")
    for key in ("A", "G", "C", "rel_deg"):
        if key not in lin:
            raise InputError(f"[system.linear] is missing '{key}'")
    A = _array(lin["A"], "system.linear.A", 2)
    G = _array(lin["G"], "system.linear.G", 2)
    C = [_array(c, f"system.linear.C[{i}]", 2) for i, c in enumerate(lin["C"])]
    rel = [tuple(_int(r, "system.linear.rel_deg", 1) for r in rr) for rr in lin["rel_deg"]]
    if len(C) != len(rel) or not C:
        raise InputError("system.linear: one C block and one rel_deg list per task")
    sys = linear_system(A, G, C, rel, name=str(lin.get("name", "linear")))
    return sys, np.array([[-1.0, 1.0]] * sys.n)


def _reference(tbl, sys: SystemModel) -> ReferenceSpec:
    if tbl is None:
        return ReferenceSpec.zero(sys)
    _check_keys(tbl, _REFERENCE, "[reference]")
    tasks = tbl.get("task", [])
    if len(tasks) != sys.k:
        raise InputError(f"[reference] needs {sys.k} [[reference.task]] entries, got {len(tasks)}")
    outs = []
    for i, (ttbl, spec) in enumerate(zip(tasks, sys.tasks)):
        _check_keys(ttbl, _REF_TASK, f"reference.task[{i}]")
        olist = ttbl.get("outputs", [{} for _ in range(spec.p)])
        if len(olist) != spec.p:
            raise InputError(f"reference.task[{i}] needs {spec.p} outputs")
        task_out = []
        for j, o in enumerate(olist):
            where = f"reference.task[{i}].outputs[{j}]"
            _check_keys(o, _OUTPUT, where)
            sines = []
            for s in o.get("sines", []):
                _check_keys(s, _SINE, where + ".sines")
                sines.append(Sinusoid(_number(s.get("amp", 0.0), where + ".amp"),
                                      _number(s.get("freq", 0.0), where + ".freq"),
                                      _number(s.get("phase", 0.0), where + ".phase")))
            task_out.append(OutputReference(_number(o.get("offset", 0.0), where + ".offset"),
                                            tuple(sines)))
        outs.append(tuple(task_out))
    return ReferenceSpec(tuple(outs), tuple(t.rel_deg for t in sys.tasks))


def _free_input(tbl, m) -> FreeInput:
    if tbl is None:
        return FreeInput()
    _check_keys(tbl, _UF, "[u_f]")
    kind = str(tbl.get("kind", "zero"))
    if kind == "zero":
        return FreeInput()
    value = _array(tbl.get("value", []), "u_f.value", 1)
    if value.shape != (m,):
        raise InputError(f"u_f.value must have length {m}")
    return FreeInput(kind, value, _number(tbl.get("freq", 0.0), "u_f.freq"),
                     _number(tbl.get("bound", 0.0), "u_f.bound", nonneg=True))


def _bounds(tbl, k) -> BoundEstimates:
    _check_keys(tbl, _BOUNDS, "[analysis.bounds]")
    for key in ("M_E", "L_kappa"):
        if key not in tbl:
            raise InputError(f"[analysis.bounds] is missing '{key}'")
    M_E = _array(tbl["M_E"], "analysis.bounds.M_E", 2)
    L_k = _array(tbl["L_kappa"], "analysis.bounds.L_kappa", 1)
    if M_E.shape != (k, k) or L_k.shape != (k,):
        raise InputError(f"analysis.bounds needs a {k}x{k} M_E and {k} L_kappa entries")
    if np.any(M_E < 0) or np.any(L_k < 0):
        raise InputError("analysis.bounds entries must be nonnegative")
    return BoundEstimates(
        M_E=M_E, L_kappa=L_k,
        M_xi_star=_number(tbl.get("M_xi_star", 0.0), "M_xi_star", nonneg=True),
        M_kappa_star=_number(tbl.get("M_kappa_star", 0.0), "M_kappa_star", nonneg=True),
        samples=0, margin=0.0)


def parse_scenario(doc: dict, source: str = "") -> ScenarioConfig:
    """Validate a scenario document and build its objects."""
    _check_keys(doc, _TOP, "scenario")
    if "spec_version" not in doc:
        raise InputError("scenario is missing spec_version")
    if doc["spec_version"] != SPEC_VERSION:
        raise InputError(f"unsupported spec_version {doc['spec_version']!r}; "
                         f"this version reads {SPEC_VERSION}")
    if "system" not in doc:
        raise InputError("scenario is missing [system]")
    sys, box = _system(doc["system"])
    k = sys.k

    dt = doc.get("damping", {})
    _check_keys(dt, _DAMPING, "[damping]")
    ov = dt.get("overrides")
    if ov is not None:
        if len(ov) != k:
            raise InputError(f"damping.overrides needs {k} entries")
        ov = tuple(_damping_value(v, f"damping.overrides[{i}]") for i, v in enumerate(ov))
    damping = DampingSchedule(
        _number(dt.get("lambda_max", 0.1), "damping.lambda_max", nonneg=True),
        _number(dt.get("eps_sing", 0.05), "damping.eps_sing", positive=True), ov)

    gt = doc.get("gains", {})
    _check_keys(gt, _GAINS, "[gains]")
    vs = gt.get("varsigma", [1.0] * k)
    if len(vs) != k:
        raise InputError(f"gains.varsigma needs {k} entries")
    vs = tuple(_number(v, "gains.varsigma", positive=True) for v in vs)
    pole_scale = _number(gt.get("pole_scale", 1.0), "gains.pole_scale", positive=True)
    K_raw = gt.get("K", ["auto"] * k)
    if len(K_raw) != k:
        raise InputError(f"gains.K needs {k} entries")
    K_explicit = []
    for i, (Kr, task) in enumerate(zip(K_raw, sys.tasks)):
        if isinstance(Kr, str):
            if Kr != "auto":
                raise InputError(f"gains.K[{i}]: expected 'auto' or a matrix")
            K_explicit.append(None)
            continue
        K = np.atleast_2d(_array(Kr, f"gains.K[{i}]"))
        if K.shape != (task.p, task.r):
            raise InputError(f"gains.K[{i}] must be {task.p}x{task.r}, got {K.shape}")
        K_explicit.append(K)

    K = [Ke if Ke is not None else synthesize_gain(t.rel_deg, vs[i], pole_scale)
         for i, (Ke, t) in enumerate(zip(K_explicit, sys.tasks))]

    i0 = _int(doc.get("i0", 1), "i0", 1)
    if i0 > k:
        raise InputError(f"i0 must lie in [1, {k}]")
    certify = gt.get("certify", list(range(1, i0 + 1)))
    certify = tuple(_int(c, "gains.certify", 1) - 1 for c in certify)
    if any(c >= k for c in certify):
        raise InputError(f"gains.certify entries must lie in [1, {k}]")

    st = doc.get("sim", {})
    _check_keys(st, _SIM, "[sim]")
    x0 = _array(st.get("x0", [0.0] * sys.n), "sim.x0", 1)
    scenario = Scenario(
        system=sys, K=K, refs=_reference(doc.get("reference"), sys), x0=x0,
        damping=damping,
        t_end=_number(st.get("t_end", 20.0), "sim.t_end"),
        dt=_number(st.get("dt", 1e-3), "sim.dt"),
        settling=_number(st.get("settling", 5.0), "sim.settling", nonneg=True),
        u_f=_free_input(doc.get("u_f"), sys.m), i0=i0,
        divergence_norm=_number(st.get("divergence_norm", 1e8), "sim.divergence_norm",
                                positive=True),
        name=str(doc.get("name", "")))

    at = doc.get("analysis", {})
    _check_keys(at, _ANALYSIS, "[analysis]")
    if "box" in at:
        box = _array(at["box"], "analysis.box", 2)
        if box.shape != (sys.n, 2) or np.any(box[:, 1] < box[:, 0]):
            raise InputError(f"analysis.box must be {sys.n} rows of [lo, hi]")
    bounds = _bounds(at["bounds"], k) if "bounds" in at else None

    seed = _int(doc.get("seed", 0), "seed", 0)
    env = os.environ.get("PRIOKIT_SEED", "").strip()
    if env:
        try:
            seed = int(env)
        except ValueError:
            raise InputError(f"PRIOKIT_SEED must be an integer, got {env!r}") from None

    return ScenarioConfig(
        scenario=scenario, varsigma=vs, pole_scale=pole_scale,
        K_explicit=tuple(K_explicit), certify=certify, seed=seed,
        samples=_int(at.get("samples", 10_000), "analysis.samples", 1),
        margin=_number(at.get("margin", 0.1), "analysis.margin", nonneg=True),
        box=box, bounds_override=bounds, source=source)


def load_scenario(path) -> ScenarioConfig:
    path = os.fspath(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read scenario {path}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise InputError(f"scenario {path} is not valid TOML: {exc}") from None
    return parse_scenario(doc, source=path)


def fixture_path(name: str) -> str:
    """Path of a bundled fixture file, e.g. ``fixture_path("trig_singular_tracking.toml")``."""
    return os.path.join(os.path.dirname(__file__), "fixtures", name)
