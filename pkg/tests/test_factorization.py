import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from priokit.factorization import (TaskJacobianStack, decompose_input, null_projector,
                                   prioritized_lq, regularity)
from priokit.numerics import InputError, numeric_rank, pinv

from conftest import random_stack


def test_identity_two_tasks():
    D = prioritized_lq(np.eye(2), [1, 1])
    assert D.L_blocks[0][0] == pytest.approx(np.array([[1.0]]))
    assert D.L_blocks[1][0] == pytest.approx(np.array([[0.0]]))
    assert D.L_blocks[1][1] == pytest.approx(np.array([[1.0]]))
    assert D.Q_rows[0] == pytest.approx(np.array([[1.0, 0.0]]))
    assert D.Q_rows[1] == pytest.approx(np.array([[0.0, 1.0]]))
    assert D.ranks == (1, 1, 0)
    assert D.Q_rows[2].shape == (0, 2)


def test_conflicting_rows(conflict_D):
    D = conflict_D
    assert D.ranks[:2] == (1, 0)
    assert D.Q_rows[0] == pytest.approx(np.array([[1.0, 0.0]]))
    assert D.L_blocks[0][0] == pytest.approx(np.array([[1.0]]))
    assert D.L_blocks[1][0] == pytest.approx(np.array([[1.0]]))
    assert D.L_blocks[1][1].shape == (1, 0)
    assert np.abs(D.Q_rows[2]) == pytest.approx(np.array([[0.0, 1.0]]))


def test_single_row():
    D = prioritized_lq(np.array([[3.0, 4.0]]))
    assert D.L_blocks[0][0] == pytest.approx(np.array([[5.0]]))
    assert D.Q_rows[0] == pytest.approx(np.array([[0.6, 0.8]]))
    assert D.reconstruct(0) == pytest.approx(np.array([[3.0, 4.0]]))


def test_stack_validation():
    with pytest.raises(InputError):
        TaskJacobianStack([np.ones((1, 2)), np.ones((1, 3))])
    with pytest.raises(InputError):
        TaskJacobianStack.from_matrix(np.ones((3, 2)), [1, 1])
    with pytest.raises(InputError):
        prioritized_lq([np.array([[np.inf, 0.0]])])


def test_null_projector_examples(conflict_D):
    assert null_projector(conflict_D, 0) == pytest.approx(np.eye(2))
    assert null_projector(conflict_D, 2) == pytest.approx(np.diag([0.0, 1.0]))
    full = prioritized_lq(np.array([[2.0, 1.0], [0.0, 3.0]]), [1, 1])
    assert np.abs(null_projector(full, 2)).max() < 1e-14
    with pytest.raises(InputError):
        null_projector(conflict_D, 3)


def test_decompose_input_examples(conflict_D):
    D = prioritized_lq(np.eye(2), [1, 1])
    parts = decompose_input(D, [3.0, 7.0])
    assert [list(p) for p in parts] == [[3.0, 0.0], [0.0, 7.0], [0.0, 0.0]]
    assert all(not p.any() for p in decompose_input(D, [0.0, 0.0]))
    parts = decompose_input(conflict_D, [1.0, 1.0])
    for got, want in zip(parts, ([1, 0], [0, 0], [0, 1])):
        assert got == pytest.approx(np.array(want, dtype=float))
    with pytest.raises(InputError):
        decompose_input(D, [1.0])


def test_regularity_report(conflict_D):
    rep = regularity(conflict_D)
    assert rep.per_task_full_rank == (True, False)
    assert rep.cumulative_full_rank == (True, False)


def check_invariants(J, dims, D):
    tol = 1e-10
    ro = np.cumsum([0] + dims)
    for i in range(len(dims)):
        Ji = J[ro[i]:ro[i + 1]]
        assert np.linalg.norm(Ji - D.reconstruct(i)) <= tol * (1 + np.linalg.norm(Ji))
    P = D.projectors
    m = J.shape[1]
    for i in range(len(P)):
        assert np.linalg.norm(P[i] @ P[i] - P[i]) <= tol
        for j in range(len(P)):
            if i != j:
                assert np.linalg.norm(P[i] @ P[j]) <= tol
                assert np.linalg.norm(D.Q_rows[i] @ D.Q_rows[j].T) <= tol
        Qi = D.Q_rows[i]
        assert np.linalg.norm(Qi @ Qi.T - np.eye(Qi.shape[0])) <= tol
    assert np.linalg.norm(sum(P) - np.eye(m)) <= tol
    for i in range(len(dims)):
        Lii = D.L_blocks[i][i]
        if Lii.size:
            assert numeric_rank(Lii) == D.ranks[i]
        assert sum(D.ranks[: i + 1]) == numeric_rank(J[: ro[i + 1]])
        # J_i P_i = J_i N_{1:i-1}
        assert np.linalg.norm(J[ro[i]:ro[i + 1]] @ (P[i] - null_projector(D, i))) <= tol * (
            1 + np.linalg.norm(J))
        # row spaces of Q_{1:i} and J_{1:i} coincide
        Jp = J[: ro[i + 1]]
        Pq = sum(P[: i + 1])
        assert np.linalg.norm(Jp - Jp @ Pq) <= tol * (1 + np.linalg.norm(Jp))


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_invariants_random_stacks(seed):
    rng = np.random.default_rng(seed)
    J, dims = random_stack(rng)
    check_invariants(J, dims, prioritized_lq(J, dims))


def test_zero_stack_has_empty_blocks():
    D = prioritized_lq(np.zeros((2, 3)), [1, 1])
    assert D.ranks == (0, 0, 3)
    assert D.L.shape == (2, 0) and D.Q.shape == (0, 3)
    assert np.allclose(null_projector(D, 2), np.eye(3))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_projectors_match_pinv_when_well_conditioned(seed):
    rng = np.random.default_rng(seed)
    J, dims = random_stack(rng, plant=False)
    D = prioritized_lq(J, dims)
    ro = np.cumsum([0] + dims)
    for i in range(len(dims)):
        Jp = J[: ro[i + 1]]
        if np.linalg.cond(Jp) > 1e4:
            continue
        assert np.linalg.norm(sum(D.projectors[: i + 1]) - pinv(Jp) @ Jp) <= 1e-10
