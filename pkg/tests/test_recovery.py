import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import ortho_group
from sklearn.base import clone

from blockweak.core import BlockStructure, RngSpec, generate_instance
from blockweak.recovery import (GroupBasisPursuit, RankDeficientError, block_soft_threshold,
                                check_recovery, solve_group_bp)


def test_soft_threshold_shrinks_blocks():
    v = np.array([3.0, 4.0, 0.1, 0.0])
    out = block_soft_threshold(v, 2, 1.0)
    assert np.allclose(out[:2], [2.4, 3.2])
    assert np.all(out[2:] == 0.0)


def test_hand_success(hand_success):
    res = solve_group_bp(hand_success.A, hand_success.y, 1)
    assert res.converged
    assert res.x_hat == pytest.approx([1.0, 0.0], abs=1e-9)
    assert res.objective == pytest.approx(1.0, abs=1e-9)
    assert check_recovery(res, hand_success.x_true)


def test_hand_failure(hand_failure):
    # y = 1: the l1 minimizer puts everything on the first column
    res = solve_group_bp(hand_failure.A, hand_failure.y, 1)
    assert res.converged
    assert res.x_hat == pytest.approx([0.5, 0.0], abs=1e-9)
    assert not check_recovery(res, hand_failure.x_true)


def test_group_reference_objective(oracle):
    g = oracle["group_bp_reference"]
    res = solve_group_bp(np.array(g["A"]), np.array(g["y"]), g["d"])
    assert res.converged
    assert res.objective == pytest.approx(g["objective_primal"], abs=1e-6)
    assert res.objective == pytest.approx(g["objective_dual"], abs=1e-6)


def test_d1_matches_linear_program(oracle):
    ref = oracle["l1_reference"]
    res = solve_group_bp(np.array(ref["A"]), np.array(ref["y"]), 1)
    assert res.objective == pytest.approx(ref["objective"], abs=1e-8)
    assert res.x_hat == pytest.approx(ref["x"], abs=1e-6)


def test_square_system_recovers_exactly():
    inst = generate_instance(BlockStructure(n=10, d=3, m=10, k=4), rng=RngSpec(8))
    res = solve_group_bp(inst.A, inst.y, 3)
    assert res.converged and check_recovery(res, inst.x_true, 1e-8)


def test_zero_measurements():
    A = np.random.default_rng(0).standard_normal((3, 8))
    res = solve_group_bp(A, np.zeros(3), 2)
    assert res.converged
    assert np.all(res.x_hat == 0.0) and res.objective == 0.0


def test_rank_deficient():
    A = np.ones((2, 4))
    with pytest.raises(RankDeficientError):
        solve_group_bp(A, np.ones(2), 1)


@pytest.mark.parametrize("A,y,d", [
    (np.ones((2, 5)), np.ones(2), 2),
    (np.eye(3), np.ones(2), 1),
    (np.eye(3), np.array([1.0, np.nan, 0.0]), 1),
])
def test_bad_inputs(A, y, d):
    with pytest.raises(ValueError):
        solve_group_bp(A, y, d)


def test_iteration_budget_reports_nonconvergence():
    inst = generate_instance(BlockStructure(n=40, d=2, m=20, k=8), rng=RngSpec(1))
    res = solve_group_bp(inst.A, inst.y, 2, max_iters=3)
    assert not res.converged
    assert res.iterations == 3


def test_recovery_tolerance_is_inclusive():
    x = np.array([1.0, 0.0])
    assert check_recovery(np.array([1.0 + 1e-4, 0.0]), x, 1e-4 + 1e-16)
    assert not check_recovery(np.array([1.0 + 2e-4, 0.0]), x, 1e-4)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 32), st.sampled_from([1, 2, 3]))
def test_block_rotation_invariance(seed, d):
    inst = generate_instance(BlockStructure(n=12, d=d, m=8, k=2), rng=RngSpec(seed))
    rng = np.random.default_rng(seed)
    Q = [ortho_group.rvs(d, random_state=rng) if d > 1 else np.array([[-1.0]]) for _ in range(12)]
    R = np.zeros((12 * d, 12 * d))
    for i, q in enumerate(Q):
        R[i * d:(i + 1) * d, i * d:(i + 1) * d] = q
    base = solve_group_bp(inst.A, inst.y, d)
    rot = solve_group_bp(inst.A @ R.T, inst.y, d)
    assert rot.objective == pytest.approx(base.objective, rel=1e-7)
    assert R.T @ rot.x_hat == pytest.approx(base.x_hat, abs=1e-5)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 32))
def test_left_invariance(seed):
    inst = generate_instance(BlockStructure(n=12, d=2, m=7, k=2), rng=RngSpec(seed))
    B = np.random.default_rng(seed).standard_normal((14, 14)) + 4 * np.eye(14)
    a = solve_group_bp(inst.A, inst.y, 2)
    b = solve_group_bp(B @ inst.A, B @ inst.y, 2)
    assert b.objective == pytest.approx(a.objective, rel=1e-7)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 32), st.sampled_from([1, 2, 4]))
def test_result_is_feasible_and_optimal(seed, d):
    inst = generate_instance(BlockStructure(n=15, d=d, m=9, k=3), rng=RngSpec(seed))
    res = solve_group_bp(inst.A, inst.y, d)
    assert res.converged
    assert res.feas_residual <= 1e-9
    assert res.dual_gap <= 1e-8 * max(1.0, res.objective)
    truth = np.linalg.norm(inst.x_true.reshape(-1, d), axis=1).sum()
    assert res.objective <= truth + 1e-8


def test_deterministic():
    inst = generate_instance(BlockStructure(n=30, d=2, m=14, k=5), rng=RngSpec(4))
    a = solve_group_bp(inst.A, inst.y, 2)
    b = solve_group_bp(inst.A, inst.y, 2)
    assert np.array_equal(a.x_hat, b.x_hat) and a.iterations == b.iterations


def test_estimator_api():
    inst = generate_instance(BlockStructure(n=20, d=2, m=12, k=3), rng=RngSpec(6))
    est = GroupBasisPursuit(block_size=2, max_iter=50_000)
    assert est.get_params()["block_size"] == 2
    twin = clone(est).set_params(rho=2.0)
    assert twin.rho == 2.0 and est.rho == 1.0
    est.fit(inst.A, inst.y)
    assert est.converged_
    assert est.coef_ == pytest.approx(inst.x_true, abs=1e-6)
    assert est.predict(inst.A) == pytest.approx(inst.y, abs=1e-8)
    assert est.block_norms().shape == (20,)
    assert est.n_features_in_ == 40


def test_estimator_requires_fit():
    from sklearn.exceptions import NotFittedError
    with pytest.raises(NotFittedError):
        GroupBasisPursuit().predict(np.eye(2))
