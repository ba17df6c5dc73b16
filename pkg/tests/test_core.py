import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from broydenmf.core import (
    DimensionError,
    FactorState,
    OmfbConfig,
    init_state,
    make_streams,
    objective,
    solve_spd,
)


def test_objective_zero_at_exact_fit():
    C = np.array([[1.0, 2.0], [0.0, 1.0], [3.0, -1.0]])
    x = np.array([0.5, -2.0])
    assert objective(C @ x, x, C, C, 3.0) == 0.0


def test_objective_reduces_to_norm_of_y():
    C = np.ones((2, 1))
    assert objective([3.0, 4.0], [0.0], C, C, 1.0) == 25.0


def test_objective_hand_value():
    # ||[1,0] - [1,1]||^2 = 1, lambda * ||[[1],[1]]||^2 = 2 * 2
    C = np.array([[1.0], [1.0]])
    C_prev = np.zeros((2, 1))
    assert objective([1.0, 0.0], [1.0], C, C_prev, 2.0) == pytest.approx(5.0, abs=0)


def test_objective_lambda_zero_is_squared_residual(rng):
    C, C_prev = rng.standard_normal((5, 3)), rng.standard_normal((5, 3))
    x, y = rng.standard_normal(3), rng.standard_normal(5)
    resid = y - C @ x
    assert objective(y, x, C, C_prev, 0.0) == float(np.sum(resid * resid))


def test_objective_block_form(rng):
    C, C_prev = rng.standard_normal((5, 3)), rng.standard_normal((5, 3))
    X, Y = rng.standard_normal((3, 4)), rng.standard_normal((5, 4))
    total = sum(objective(Y[:, j], X[:, j], C, C_prev, 0.0) for j in range(4))
    assert objective(Y, X, C, C_prev, 0.0) == pytest.approx(total, rel=1e-13)


@pytest.mark.parametrize("y, x, C, C_prev", [
    (np.zeros(3), np.zeros(2), np.zeros((4, 2)), np.zeros((4, 2))),
    (np.zeros(4), np.zeros(3), np.zeros((4, 2)), np.zeros((4, 2))),
    (np.zeros(4), np.zeros(2), np.zeros((4, 2)), np.zeros((4, 3))),
    (np.zeros((4, 2)), np.zeros(2), np.zeros((4, 2)), np.zeros((4, 2))),
])
def test_objective_shape_errors(y, x, C, C_prev):
    with pytest.raises(DimensionError):
        objective(y, x, C, C_prev, 1.0)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), lam=st.floats(0, 100))
def test_objective_permutation_invariance(seed, lam):
    g = np.random.default_rng(seed)
    C, C_prev = g.standard_normal((6, 4)), g.standard_normal((6, 4))
    x, y = g.standard_normal(4), g.standard_normal(6)
    p = g.permutation(4)
    a = objective(y, x, C, C_prev, lam)
    b = objective(y, x[p], C[:, p], C_prev[:, p], lam)
    assert b == pytest.approx(a, rel=1e-12, abs=1e-12)


def test_solve_spd_identity():
    np.testing.assert_array_equal(solve_spd(np.eye(2), [[5.0], [7.0]]), [[5.0], [7.0]])


def test_solve_spd_two_by_two():
    A = np.array([[2.0, 1.0], [1.0, 2.0]])
    b = np.array([[4.0], [5.0]])
    oracle = np.array([[2.0, -1.0], [-1.0, 2.0]]) / 3.0 @ b
    np.testing.assert_allclose(oracle, [[1.0], [2.0]], atol=1e-15)
    np.testing.assert_allclose(solve_spd(A, b), oracle, rtol=1e-14)


def test_solve_spd_zero_matrix_uses_ridge():
    Z = solve_spd(np.zeros((2, 2)), [[1.0], [1.0]], ridge_eps=1e-10)
    assert np.all(np.isfinite(Z))
    np.testing.assert_allclose(Z, [[1e10], [1e10]], rtol=1e-12)


def test_solve_spd_rank_deficient_uses_trace_scaled_ridge():
    v = np.array([1.0, 2.0, 2.0])
    A = np.outer(v, v)
    delta = 1e-10 * np.trace(A) / 3
    Z = solve_spd(A, v, ridge_eps=1e-10)
    np.testing.assert_allclose(Z, np.linalg.solve(A + delta * np.eye(3), v), rtol=1e-6)


def test_solve_spd_rejects_nonsymmetric():
    with pytest.raises(ValueError, match="symmetric"):
        solve_spd(np.array([[1.0, 2.0], [0.0, 1.0]]), np.ones(2))


def test_solve_spd_shape_errors():
    with pytest.raises(DimensionError):
        solve_spd(np.eye(3), np.ones(2))
    with pytest.raises(DimensionError):
        solve_spd(np.ones((2, 3)), np.ones(2))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), r=st.integers(1, 12), k=st.integers(1, 5))
def test_solve_spd_residual_bound(seed, r, k):
    g = np.random.default_rng(seed)
    F = g.standard_normal((r + 3, r))
    A = F.T @ F + 0.1 * np.eye(r)
    B = g.standard_normal((r, k))
    Z = solve_spd(A, B)
    assert np.linalg.norm(A @ Z - B) <= 1e-8 * np.linalg.norm(B)


def test_solve_spd_deterministic(rng):
    F = rng.standard_normal((8, 4))
    B = rng.standard_normal(4)
    assert np.array_equal(solve_spd(F.T @ F, B), solve_spd(F.T @ F, B))


@pytest.mark.parametrize("kwargs", [
    dict(rank=0, lam=1.0),
    dict(rank=2, lam=0.0),
    dict(rank=2, lam=-1.0),
    dict(rank=2, lam=1.0, inner_iters=0),
    dict(rank=2, lam=1.0, sampling="random"),
    dict(rank=2, lam=1.0, epochs=-1),
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        OmfbConfig(**kwargs)


def test_config_defaults():
    cfg = OmfbConfig(rank=30, lam=10.0)
    assert cfg.inner_iters == 2 and cfg.ridge_eps == 1e-10 and cfg.sampling == "uniform"


def test_factor_state_shape_check():
    with pytest.raises(DimensionError):
        FactorState(np.zeros((4, 2)), np.zeros((3, 5)))


def test_init_state_scaling_and_determinism():
    a = init_state(2000, 3, 25, make_streams(5)[0])
    b = init_state(2000, 3, 25, make_streams(5)[0])
    assert np.array_equal(a.dictionary, b.dictionary)
    assert a.dictionary.flags["F_CONTIGUOUS"]
    assert np.all(a.coefficients == 0)
    # entries are N(0, 1/r)
    assert a.dictionary.var() == pytest.approx(1 / 25, rel=0.05)


def test_streams_are_independent():
    init, sample = make_streams(3)
    assert init.integers(1 << 30) != sample.integers(1 << 30)
