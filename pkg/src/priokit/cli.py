"""``priokit`` command line: decompose, linearize, simulate, analyze.

Exit codes: 0 success, 2 input or validation error, 3 numerical or
feasibility failure. Reports are TOML on stdout (or in files for
``simulate``) with floats printed to 17 significant digits.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import report
from .factorization import TaskJacobianStack, prioritized_lq
from .gains import CertificationError, build_gainset, estimate_bounds, mmatrix_analysis
from .linearizer import canonical_linearizer_closed, canonical_linearizer_recursive, lex_oracle
from .numerics import DEFAULT_TOL, InputError, RankTolerance, parse_damping
from .scenario import load_scenario
from .simulator import EnvelopeError, fit_envelope, run_scenario, trace_csv_lines

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


class NumericalFailure(RuntimeError):
    pass


def _floats(text: str, what: str) -> np.ndarray:
    try:
        vals = [float(s) for s in text.replace(";", ",").split(",") if s.strip()]
    except ValueError:
        raise InputError(f"{what}: expected comma-separated numbers, got {text!r}") from None
    a = np.array(vals)
    if not np.all(np.isfinite(a)):
        raise InputError(f"{what} must be finite")
    return a


def _dims(text: str) -> tuple:
    try:
        dims = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise InputError(f"--dims: expected comma-separated integers, got {text!r}") from None
    if not dims or any(d < 1 for d in dims):
        raise InputError("--dims entries must be positive")
    return dims


def read_matrix_file(path):
    """Matrix input for ``decompose``: TOML with ``matrix`` (and optional
    ``dims``), or whitespace/comma separated rows. Returns ``(J, dims)``."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    text = raw.decode("utf-8", errors="replace")
    dims = None
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError:
        doc = None
    if doc:
        extra = sorted(set(doc) - {"matrix", "dims"})
        if extra or "matrix" not in doc:
            raise InputError(f"{path}: expected keys 'matrix' and optional 'dims'")
        rows = doc["matrix"]
        if "dims" in doc:
            dims = tuple(doc["dims"])
    else:
        rows = []
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                rows.append(line.replace(",", " ").split())
    try:
        J = np.array(rows, dtype=float)
    except (TypeError, ValueError):
        raise InputError(f"{path}: matrix rows are malformed") from None
    if J.ndim != 2 or J.size == 0:
        raise InputError(f"{path}: expected a nonempty rectangular matrix")
    if not np.all(np.isfinite(J)):
        raise InputError(f"{path}: matrix entries must be finite")
    return J, dims


def cmd_decompose(args) -> dict:
    J, file_dims = read_matrix_file(args.file)
    dims = _dims(args.dims) if args.dims else (file_dims or (J.shape[0],))
    if sum(dims) != J.shape[0]:
        raise InputError(f"task dims {dims} do not sum to the {J.shape[0]} rows of J")
    tol = RankTolerance(rel_tol=args.tol) if args.tol is not None else DEFAULT_TOL
    D = prioritized_lq(TaskJacobianStack.from_matrix(J, dims), tol=tol)
    k, m = D.k, D.m
    P = D.projectors
    orth = max([float(np.linalg.norm(P[i] @ P[j])) for i in range(k + 1)
                for j in range(k + 1) if i != j] or [0.0])
    idem = max(float(np.linalg.norm(Pi @ Pi - Pi)) for Pi in P)
    total = float(np.linalg.norm(sum(P) - np.eye(m)))
    rec = max(float(np.linalg.norm(J[ro:ro + p] - D.reconstruct(i))) for i, (ro, p)
              in enumerate(zip(D.row_offsets, dims)))
    blocks = {}
    for i in range(k):
        for j in range(i + 1):
            blocks[f"L_{i + 1}_{j + 1}"] = report.matrix_block(
                D.L_blocks[i][j].reshape(dims[i], D.ranks[j]))
    for i in range(k + 1):
        blocks[f"Q_{i + 1}"] = report.matrix_block(D.Q_rows[i].reshape(D.ranks[i], m))
    return {
        "task_dims": list(dims),
        "m": m,
        "ranks": list(D.ranks[:k]),
        "null_rank": int(D.ranks[k]),
        "rel_tol": D.tol.rel_tol,
        "abs_tol": D.tol.abs_tol,
        "J": report.matrix_block(J),
        "L": report.matrix_block(D.L.reshape(D.p, D.rho)),
        "Q": report.matrix_block(D.Q),
        "blocks": blocks,
        "checks": {
            "reconstruction": rec,
            "projector_orthogonality": orth,
            "projector_idempotence": idem,
            "projector_sum": total,
        },
    }


def _result_table(res, D) -> dict:
    return {
        "u": res.u_total,
        "u_parts": {str(i + 1): res.u_parts[i] for i in range(D.k + 1)},
        "residuals": {str(i + 1): res.residuals[i] for i in range(D.k)},
        "residual_norms": [float(np.linalg.norm(e)) for e in res.residuals],
    }


def cmd_linearize(args) -> dict:
    cfg = load_scenario(args.scenario)
    sysm = cfg.system
    x = _floats(args.state, "--state") if args.state else cfg.scenario.x0
    if x.shape != (sysm.n,):
        raise InputError(f"--state needs {sysm.n} entries")
    p = sum(sysm.task_dims)
    v = _floats(args.v, "--v") if args.v else np.zeros(p)
    if v.shape != (p,):
        raise InputError(f"--v needs {p} entries")
    u_f = _floats(args.uf, "--uf") if args.uf else np.zeros(sysm.m)
    if u_f.shape != (sysm.m,):
        raise InputError(f"--uf needs {sysm.m} entries")
    D = prioritized_lq(sysm.jacobians(x))
    if args.lam:
        lam = tuple(parse_damping(s) for s in args.lam.split(",") if s.strip())
        if len(lam) != sysm.k:
            raise InputError(f"--lambda needs {sysm.k} entries")
    else:
        lam = cfg.scenario.damping(D)
    kappa = sysm.kappa(x)
    rec = canonical_linearizer_recursive(D, kappa, v, u_f, lam)
    clo = canonical_linearizer_closed(D, kappa, v, u_f, lam)
    zero = canonical_linearizer_recursive(D, kappa, v, None, (0.0,) * D.k, with_E=False)
    _, lex_obj = lex_oracle(D, kappa, v)
    can_obj = [float(e @ e) for e in zero.residuals]
    return {
        "system": sysm.name,
        "state": x,
        "v": v,
        "kappa": kappa,
        "u_f": u_f,
        "lambda": list(lam),
        "ranks": list(D.ranks[: D.k]),
        "recursive": _result_table(rec, D),
        "closed": _result_table(clo, D),
        "comparison": {
            "u_difference": float(np.linalg.norm(rec.u_total - clo.u_total)),
            "residual_difference": float(np.linalg.norm(rec.residual - clo.residual)),
        },
        "oracle": {
            "lex_objectives": list(lex_obj),
            "canonical_lambda0_objectives": can_obj,
            "max_abs_difference": float(np.max(np.abs(np.subtract(lex_obj, can_obj)))),
        },
        "E": report.matrix_block(rec.E),
    }


def cmd_simulate(args) -> tuple:
    cfg = load_scenario(args.scenario).with_sim(dt=args.dt, t_end=args.t_end)
    os.makedirs(args.out, exist_ok=True)
    trace, summary = run_scenario(cfg.scenario)
    summary["seed"] = cfg.seed
    summary["source"] = os.path.basename(cfg.source)
    csv_path = os.path.join(args.out, "trace.csv")
    rows = report.write_lines_atomic(csv_path, trace_csv_lines(trace))
    summary["trace_rows"] = rows - 1
    summary["trace_file"] = "trace.csv"
    report.write_atomic(os.path.join(args.out, "summary.toml"), report.dumps(summary))
    code = EXIT_NUMERIC if trace.diverged else EXIT_OK
    return summary, code


def _read_trace_csv(path, k):
    try:
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            body = fh.read()
    except OSError as exc:
        raise InputError(f"cannot read trace {path}: {exc.strerror}") from None
    cols = ["t"] + [f"xi_err_norm_{i + 1}" for i in range(k)]
    if any(c not in header for c in cols):
        raise InputError(f"{path} is not a trace with {k} tasks")
    idx = [header.index(c) for c in cols]
    try:
        data = np.array([[float(row.split(",")[j]) for j in idx]
                         for row in body.splitlines() if row.strip()])
    except (ValueError, IndexError):
        raise InputError(f"{path}: malformed trace rows") from None
    if data.ndim != 2 or data.shape[0] == 0:
        raise InputError(f"{path}: trace has no rows")
    return data[:, 0], data[:, 1:]


def cmd_analyze(args) -> tuple:
    cfg = load_scenario(args.scenario)
    sysm, sc = cfg.system, cfg.scenario
    if args.envelope and not args.trace:
        raise InputError("--envelope needs --trace FILE")
    traced = None
    if args.trace:
        traced = _read_trace_csv(args.trace, sysm.k)
    certify = sorted(set(cfg.certify) | set(range(sc.i0)))
    try:
        gains = build_gainset(sysm, cfg.varsigma, cfg.pole_scale, list(cfg.K_explicit),
                              certify=certify)
    except CertificationError as exc:
        raise NumericalFailure(f"gain certification failed: {exc}") from None
    samples = args.samples if args.samples is not None else cfg.samples
    if cfg.bounds_override is not None:
        bounds = cfg.bounds_override
        source = "scenario"
    else:
        bounds = estimate_bounds(sysm, sc.damping, cfg.box, samples, sc.refs,
                                 rng=cfg.seed, margin=cfg.margin, i0=sc.i0)
        source = "sampled"
    mm = mmatrix_analysis(bounds, gains, sc.i0)
    gtab = {}
    for i, g in enumerate(gains.entries):
        entry = {"varsigma": g.varsigma, "K": g.K, "certified": g.certified}
        if g.certified:
            entry.update(X=g.X, R=g.R, theta=g.theta, sigma_tilde=g.sigma_tilde,
                         lyapunov_residual=g.residuals[0], structure_residual=g.residuals[1])
        gtab[str(i + 1)] = entry
    btab = {
        "source": source,
        "samples": int(bounds.samples),
        "margin": float(bounds.margin),
        "M_E": bounds.M_E,
        "L_kappa": bounds.L_kappa,
        "M_xi_star": bounds.M_xi_star,
        "M_kappa_star": bounds.M_kappa_star,
    }
    if bounds.varsigma_est is not None:
        btab["varsigma_estimate"] = bounds.varsigma_est
    mtab = {
        "i0": sc.i0,
        "Y": mm.Y,
        "Z": mm.Z,
        "spectral_radius": mm.sr_value,
        "status": "feasible" if mm.feasible else "infeasible",
    }
    if mm.w is not None:
        mtab["w"] = mm.w
        mtab["v"] = mm.v
    out = {"system": sysm.name, "scenario": sc.name, "seed": cfg.seed,
           "gains": gtab, "bounds": btab, "mmatrix": mtab}
    if traced is not None:
        t, errn = traced
        env = {}
        for i in range(sysm.k):
            try:
                fit = fit_envelope(errn[:, i], 0, sc.settling, t=t)
                env[str(i + 1)] = {"a": fit.a, "b": fit.b, "c": fit.c, "coverage": fit.coverage}
            except EnvelopeError as exc:
                if args.envelope:
                    raise InputError(f"envelope fit for task {i + 1}: {exc}") from None
                env[str(i + 1)] = {"failed": str(exc)}
        out["envelope"] = env
    return out, EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="priokit", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="prioritized LQ factorization of a matrix file")
    p.add_argument("file")
    p.add_argument("--dims", help="task dimensions, e.g. 2,1")
    p.add_argument("--tol", type=float, help="relative rank tolerance (default 1e-10)")

    p = sub.add_parser("linearize", help="canonical linearizer at one state")
    p.add_argument("scenario")
    p.add_argument("--state", help="state x, comma separated (default: sim.x0)")
    p.add_argument("--v", help="stacked task inputs v (default: zeros)")
    p.add_argument("--lambda", dest="lam", help="per-task damping, numbers or inf")
    p.add_argument("--uf", help="free input u_f (default: zeros)")

    p = sub.add_parser("simulate", help="closed-loop run, writes trace.csv and summary.toml")
    p.add_argument("scenario")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--dt", type=float)
    p.add_argument("--t-end", dest="t_end", type=float)

    p = sub.add_parser("analyze", help="gain certificates, bounds and M-matrix test")
    p.add_argument("scenario")
    p.add_argument("--samples", type=int)
    p.add_argument("--trace", help="trace.csv from a previous simulate run")
    p.add_argument("--envelope", action="store_true",
                   help="require envelope fits from --trace")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        if args.command == "decompose":
            doc, code = cmd_decompose(args), EXIT_OK
        elif args.command == "linearize":
            doc, code = cmd_linearize(args), EXIT_OK
        elif args.command == "simulate":
            doc, code = cmd_simulate(args)
        else:
            if args.samples is not None and args.samples < 1:
                raise InputError("--samples must be positive")
            doc, code = cmd_analyze(args)
    except InputError as exc:
        print(f"priokit: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericalFailure, CertificationError, np.linalg.LinAlgError) as exc:
        print(f"priokit: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    sys.stdout.write(report.dumps(doc))
    if code == EXIT_NUMERIC and args.command == "simulate":
        print(f"priokit: simulation diverged: {doc.get('divergence', '')}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
