"""Compare the compiled and pure-Python kernels.

Times the prioritized Gram-Schmidt, the unipotent block solve, the fused
``canonical_stage`` used by the simulator, and a short closed-loop run, then
prints per-call times and the speedup. Run with ``python benchmarks/bench_kernels.py``.
"""

from __future__ import annotations

import argparse
import timeit
from dataclasses import replace

import numpy as np

from priokit import _kernels_py, simulator
from priokit.scenario import fixture_path, load_scenario

try:
    from priokit import _kernels as _compiled
except ImportError:
    _compiled = None


def _cases(rng):
    J = rng.standard_normal((6, 6))
    J[4] = J[1]
    dims = [2, 2, 2]
    thr = 1e-10 * np.linalg.norm(J)
    T = np.tril(rng.standard_normal((6, 6)), -1)
    for a, b in ((0, 2), (2, 4), (4, 6)):
        T[a:b, a:b] = 0.0
    blocks = [0, 2, 4, 6]
    rhs = rng.standard_normal(6)
    d, uf = rng.standard_normal(6), rng.standard_normal(6)
    over = np.full(3, np.nan)
    return {
        "prioritized_gram_schmidt": lambda m: m.prioritized_gram_schmidt(J, thr),
        "unipotent_block_solve": lambda m: m.unipotent_block_solve(T, blocks, rhs),
        "canonical_stage": lambda m: m.canonical_stage(J, dims, d, uf, 0.1, 0.05, over,
                                                       1e-10, 1e-14),
    }


def _time(fn, number, repeat):
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def _simulate(backend, t_end):
    sc = replace(load_scenario(fixture_path("trig_singular_tracking.toml")).scenario,
                 t_end=t_end)
    saved = simulator.kernels.canonical_stage
    simulator.kernels.canonical_stage = backend.canonical_stage
    try:
        return _time(lambda: simulator.simulate(sc), 1, 3)
    finally:
        simulator.kernels.canonical_stage = saved


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--number", type=int, default=2000, help="calls per timing")
    ap.add_argument("--t-end", type=float, default=2.0, help="simulated seconds")
    args = ap.parse_args(argv)
    if _compiled is None:
        print("compiled kernels are not built; only the Python fallback is available")
    rng = np.random.default_rng(0)
    rows = []
    for name, call in _cases(rng).items():
        py = _time(lambda: call(_kernels_py), args.number, 5)
        cy = _time(lambda: call(_compiled), args.number, 5) if _compiled else float("nan")
        rows.append((name, py, cy))
    py = _simulate(_kernels_py, args.t_end)
    cy = _simulate(_compiled, args.t_end) if _compiled else float("nan")
    rows.append((f"simulate trig-singular {args.t_end:g} s", py, cy))

    print(f"{'kernel':<34}{'python [us]':>14}{'cython [us]':>14}{'speedup':>10}")
    for name, py, cy in rows:
        print(f"{name:<34}{py * 1e6:>14.1f}{cy * 1e6:>14.1f}{py / cy:>9.1f}x")


if __name__ == "__main__":
    main()
