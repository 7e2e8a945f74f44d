import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from priokit.factorization import prioritized_lq
from priokit.linearizer import (DampingSchedule, GammaForm, canonical_gamma,
                                canonical_linearizer_closed, canonical_linearizer_recursive,
                                canonical_residual_matrix, gamma_linearizer, lex_oracle,
                                prioritized_damped_pinv, residual_blocks)
from priokit.numerics import InputError

from conftest import random_stack

INF = math.inf


def test_recursive_examples(conflict_D):
    D = prioritized_lq(np.eye(2), [1, 1])
    r = canonical_linearizer_recursive(D, np.zeros(2), [1.0, 2.0], None, (0.0, 0.0))
    assert r.u_total == pytest.approx(np.array([1.0, 2.0]))
    assert not r.residual.any()
    r = canonical_linearizer_recursive(conflict_D, np.zeros(2), [1.0, 0.0], None, (0.0, 0.0))
    assert r.u_total == pytest.approx(np.array([1.0, 0.0]))
    assert r.residual == pytest.approx(np.array([0.0, -1.0]))
    D1 = prioritized_lq(np.array([[1.0]]))
    r = canonical_linearizer_recursive(D1, [0.0], [1.0], None, (1.0,))
    assert r.u_total == pytest.approx(np.array([0.5])) and r.residual == pytest.approx(np.array([0.5]))


def test_closed_examples(conflict_D):
    rng = np.random.default_rng(1)
    J = rng.standard_normal((3, 3))
    D = prioritized_lq(J, [1, 2])
    c = canonical_linearizer_closed(D, np.zeros(3), np.ones(3), None, (0.0, 0.0))
    assert np.allclose(c.J_oplus, np.linalg.pinv(J), atol=1e-8)
    r = canonical_linearizer_recursive(conflict_D, np.zeros(2), [1.0, 0.0], None, (0.0, 0.0))
    c = canonical_linearizer_closed(conflict_D, np.zeros(2), [1.0, 0.0], None, (0.0, 0.0))
    assert np.allclose(c.u_total, r.u_total) and np.allclose(c.residual, r.residual)
    uf = np.array([0.3, -0.4])
    c = canonical_linearizer_closed(conflict_D, np.zeros(2), [1.0, 0.0], uf, (INF, INF))
    assert np.allclose(c.u_total, [0.0, -0.4])
    assert np.array_equal(c.E, np.eye(2))


def test_dimension_errors(conflict_D):
    with pytest.raises(InputError):
        canonical_linearizer_recursive(conflict_D, np.zeros(3), np.zeros(2))
    with pytest.raises(InputError):
        canonical_linearizer_closed(conflict_D, np.zeros(2), np.zeros(2), np.zeros(3))
    with pytest.raises(InputError):
        canonical_linearizer_recursive(conflict_D, np.zeros(2), np.zeros(2), None, (0.0,))
    with pytest.raises(InputError):
        gamma_linearizer(conflict_D, np.zeros(2), np.zeros(2), None, np.triu(np.ones((2, 2))))


def random_instance(rng):
    J, dims = random_stack(rng)
    D = prioritized_lq(J, dims)
    p, m = J.shape
    lam = tuple(float(rng.choice([0.0, 0.1, INF])) for _ in dims)
    return J, dims, D, rng.standard_normal(p), rng.standard_normal(p), rng.standard_normal(m), lam


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_two_forms_agree(seed):
    J, dims, D, kap, v, uf, lam = random_instance(np.random.default_rng(seed))
    r = canonical_linearizer_recursive(D, kap, v, uf, lam)
    c = canonical_linearizer_closed(D, kap, v, uf, lam)
    scale = 1 + np.linalg.norm(r.u_total)
    assert np.linalg.norm(r.u_total - c.u_total) <= 1e-10 * scale
    assert np.linalg.norm(r.residual - c.residual) <= 1e-10 * scale * (1 + np.linalg.norm(J))
    assert np.allclose(r.E, c.E, atol=1e-10 * scale)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_structure_of_result(seed):
    J, dims, D, kap, v, uf, lam = random_instance(np.random.default_rng(seed))
    r = canonical_linearizer_recursive(D, kap, v, uf, lam)
    scale = 1 + np.linalg.norm(r.u_total)
    for i, ui in enumerate(r.u_parts):
        assert np.linalg.norm(ui - D.projectors[i] @ ui) <= 1e-10 * scale
    # residuals computed from parts equal v - kappa - J u
    assert np.linalg.norm(r.residual - (v - kap - J @ r.u_total)) <= 1e-10 * scale * (1 + np.linalg.norm(J))
    ro = np.cumsum([0] + dims)
    for i in range(len(dims)):
        assert not np.any(r.E[ro[i]:ro[i + 1], ro[i + 1]:])
    Jp = prioritized_damped_pinv(D, lam)
    E = canonical_residual_matrix(D, lam)
    assert np.allclose(E, np.eye(J.shape[0]) - J @ Jp, atol=1e-10 * (1 + np.abs(Jp).max()) * (1 + np.linalg.norm(J)))
    # e = E (v - kappa) when u_f does not enter the residual
    assert np.allclose(r.residual, E @ (v - kap), atol=1e-9 * scale * (1 + np.linalg.norm(J)))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_dependence_property(seed):
    rng = np.random.default_rng(seed)
    J, dims, D, kap, v, uf, lam = random_instance(rng)
    base = canonical_linearizer_recursive(D, kap, v, uf, lam)
    ro = np.cumsum([0] + dims)
    i = int(rng.integers(len(dims)))
    v2 = v.copy()
    v2[ro[i + 1]:] += rng.standard_normal(len(v) - ro[i + 1])
    other = canonical_linearizer_recursive(D, kap, v2, uf + rng.standard_normal(J.shape[1]), lam)
    for a in range(i + 1):
        assert np.array_equal(base.residuals[a], other.residuals[a])
    # altering parts j > i of u leaves e_1..e_i unchanged
    u_mod = base.u_total + sum(D.projectors[j] @ rng.standard_normal(J.shape[1])
                               for j in range(i + 1, len(dims) + 1))
    for a in range(i + 1):
        e_mod = (v - kap)[ro[a]:ro[a + 1]] - J[ro[a]:ro[a + 1]] @ u_mod
        assert np.allclose(e_mod, base.residuals[a], atol=1e-12 * (1 + np.linalg.norm(J) * np.linalg.norm(u_mod)))


def test_full_rank_zero_damping_is_exact():
    rng = np.random.default_rng(4)
    J = rng.standard_normal((3, 4))
    D = prioritized_lq(J, [2, 1])
    c = canonical_linearizer_closed(D, np.zeros(3), rng.standard_normal(3), None, (0.0, 0.0))
    assert np.abs(c.E).max() <= 1e-8 and np.abs(c.residual).max() <= 1e-10


def test_gamma_examples(conflict_D):
    rng = np.random.default_rng(5)
    J, dims = random_stack(rng, k=3, m=4)
    D = prioritized_lq(J, dims)
    lam = (0.0, 0.1, 0.0)
    kap, v, uf = rng.standard_normal(sum(dims)), rng.standard_normal(sum(dims)), rng.standard_normal(4)
    G = canonical_gamma(D, lam)
    g = gamma_linearizer(D, kap, v, uf, G)
    c = canonical_linearizer_closed(D, kap, v, uf, lam)
    assert np.allclose(g.u_total, c.u_total, atol=1e-10)
    assert np.allclose(g.E, c.E, atol=1e-10)
    z = gamma_linearizer(D, kap, v, uf, np.zeros((D.p, D.p)))
    assert np.allclose(z.u_total, D.projectors[-1] @ uf) and np.array_equal(z.E, np.eye(D.p))
    assert all(ok for pair in G.assumption_check(D) for ok in pair)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_random_gamma_identities(seed):
    rng = np.random.default_rng(seed)
    J, dims = random_stack(rng)
    D = prioritized_lq(J, dims)
    p = sum(dims)
    ro = np.cumsum([0] + dims)
    G = rng.standard_normal((p, p))
    for i in range(len(dims)):
        G[ro[i]:ro[i + 1], ro[i + 1]:] = 0.0
    Gam = GammaForm(G, dims)
    kap, v = rng.standard_normal(p), rng.standard_normal(p)
    res = gamma_linearizer(D, kap, v, None, Gam)
    scale = 1 + np.linalg.norm(J) ** 2 * np.linalg.norm(G)
    assert np.allclose(res.residual, res.E @ (v - kap), atol=1e-10 * scale * (1 + np.linalg.norm(v - kap)))
    blocks = residual_blocks(D, Gam)
    for (i, j), B in blocks.items():
        assert np.allclose(B, res.E[ro[i]:ro[i + 1], ro[j]:ro[j + 1]], atol=1e-10 * scale)
    for i in range(len(dims)):
        assert not np.any(res.E[ro[i]:ro[i + 1], ro[i + 1]:])


def test_gamma_must_be_lower_triangular():
    with pytest.raises(InputError):
        GammaForm(np.ones((2, 2)), (1, 1))


def test_lex_oracle_examples(conflict_D):
    rng = np.random.default_rng(6)
    J = rng.standard_normal((3, 3))
    _, obj = lex_oracle([J[:1], J[1:]], np.zeros(3), rng.standard_normal(3))
    assert max(obj) < 1e-20
    _, obj = lex_oracle(conflict_D, np.zeros(2), [1.0, 0.0])
    assert obj == pytest.approx((0.0, 1.0))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_canonical_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    J, dims = random_stack(rng, near=False)
    D = prioritized_lq(J, dims)
    kap, v = rng.standard_normal(J.shape[0]), rng.standard_normal(J.shape[0])
    _, obj = lex_oracle(D, kap, v)
    r = canonical_linearizer_recursive(D, kap, v, None, (0.0,) * len(dims))
    can = [float(e @ e) for e in r.residuals]
    assert np.allclose(obj, can, atol=1e-8 * (1 + np.linalg.norm(v - kap) ** 2))


def lexicographic_violation(J, dims, D, kap, v, rng, step=1e-3):
    """Worst decrease of level i under unit perturbations in range(P_i)."""
    r = canonical_linearizer_recursive(D, kap, v, None, (0.0,) * len(dims))
    ro = np.cumsum([0] + dims)
    obj = lambda u, a: float(np.sum(((v - kap) - J @ u)[ro[a]:ro[a + 1]] ** 2))
    worst_drop, worst_upper = 0.0, 0.0
    for i in range(len(dims)):
        if D.ranks[i] == 0:
            continue
        for _ in range(4):
            delta = D.projectors[i] @ rng.standard_normal(J.shape[1])
            delta *= step / np.linalg.norm(delta)
            u2 = r.u_total + delta
            worst_drop = max(worst_drop, obj(r.u_total, i) - obj(u2, i))
            for a in range(i):
                worst_upper = max(worst_upper, abs(obj(u2, a) - obj(r.u_total, a)))
    return worst_drop, worst_upper


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_local_lexicographic_optimality(seed):
    rng = np.random.default_rng(seed)
    J, dims = random_stack(rng, near=False)
    D = prioritized_lq(J, dims)
    kap, v = rng.standard_normal(J.shape[0]), rng.standard_normal(J.shape[0])
    drop, upper = lexicographic_violation(J, dims, D, kap, v, rng)
    assert drop <= 1e-9
    assert upper <= 1e-9 * (1 + np.linalg.norm(v - kap) ** 2)


def test_damping_schedule():
    s = DampingSchedule()
    assert s.ramp(0.0) == pytest.approx(0.1)
    assert s.ramp(0.05) == 0.0 and s.ramp(1.0) == 0.0
    assert s.ramp(0.025) == pytest.approx(0.1 * math.sqrt(0.75))
    D = prioritized_lq(np.array([[1.0, 0.0], [0.0, 0.01]]), [1, 1])
    assert s(D) == pytest.approx((0.0, 0.1 * math.sqrt(1 - 0.04)))
    pinned = DampingSchedule(overrides=(None, "inf"))
    assert pinned(D) == (0.0, INF)
    assert DampingSchedule.fixed([0.2, 0.0])(D) == (0.2, 0.0)
    with pytest.raises(InputError):
        DampingSchedule(eps_sing=0.0)
    with pytest.raises(InputError):
        DampingSchedule(lambda_max=-1.0)
