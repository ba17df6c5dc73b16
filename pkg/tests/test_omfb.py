import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from broydenmf.core import DegenerateStepError, DimensionError, FactorState, OmfbConfig, objective
from broydenmf.metrics import Trace
from broydenmf.omfb import (
    dictionary_update_direct,
    dictionary_update_rank1,
    omfb_run,
    omfb_step,
    solve_coefficients,
)


def explicit_inverse_update(C_prev, x, y, lam):
    """Oracle: the pre-Sherman-Morrison form with a literal matrix inverse."""
    r = C_prev.shape[1]
    return (lam * C_prev + np.outer(y, x)) @ np.linalg.inv(lam * np.eye(r) + np.outer(x, x))


def objective_gradient(C, C_prev, x, y, lam):
    return -2 * np.outer(y, x) + 2 * np.outer(C @ x, x) + 2 * lam * C - 2 * lam * C_prev


# --- coefficient solve -------------------------------------------------------

def test_solve_coefficients_identity_dictionary():
    np.testing.assert_allclose(solve_coefficients(np.eye(3), [1.0, 2.0, 3.0]), [1.0, 2.0, 3.0])


def test_solve_coefficients_zero_observation(rng):
    assert np.all(solve_coefficients(rng.standard_normal((5, 2)), np.zeros(5)) == 0)


def test_solve_coefficients_hand_instance():
    C = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    y = np.array([1.0, 2.0, 3.0])
    # normal equations: [[2,1],[1,2]] x = [4,5]
    oracle = np.linalg.solve(C.T @ C, C.T @ y)
    np.testing.assert_allclose(oracle, [1.0, 2.0], atol=1e-14)
    x = solve_coefficients(C, y)
    np.testing.assert_allclose(x, [1.0, 2.0], atol=1e-14)
    np.testing.assert_allclose(C @ x, y, atol=1e-14)


def test_solve_coefficients_residual_orthogonal(rng):
    for _ in range(20):
        C, y = rng.standard_normal((15, 4)), rng.standard_normal(15)
        x = solve_coefficients(C, y)
        assert np.linalg.norm(C.T @ (y - C @ x)) <= 1e-8 * np.linalg.norm(C.T @ y)


def test_solve_coefficients_more_atoms_than_rows(rng):
    C = rng.standard_normal((3, 6))
    y = rng.standard_normal(3)
    x = solve_coefficients(C, y)
    assert np.all(np.isfinite(x))
    np.testing.assert_allclose(C @ x, y, atol=1e-4)


def test_solve_coefficients_shape_error():
    with pytest.raises(DimensionError):
        solve_coefficients(np.eye(3), np.ones(4))


# --- dictionary updates -------------------------------------------------------

def test_direct_update_zero_code_is_identity(rng):
    C = rng.standard_normal((4, 3))
    np.testing.assert_allclose(dictionary_update_direct(C, np.zeros(3), rng.standard_normal(4), 2.0),
                               C, rtol=1e-14)


def test_direct_update_fixed_point(rng):
    C, x = rng.standard_normal((4, 3)), rng.standard_normal(3)
    np.testing.assert_allclose(dictionary_update_direct(C, x, C @ x, 0.7), C, atol=1e-13)


HAND = (np.eye(2), np.array([1.0, 1.0]), np.array([2.0, 0.0]), 1.0)
HAND_RESULT = np.array([[4.0, 1.0], [-1.0, 2.0]]) / 3.0


def test_direct_update_hand_instance():
    np.testing.assert_allclose(explicit_inverse_update(*HAND), HAND_RESULT, atol=1e-15)
    np.testing.assert_allclose(dictionary_update_direct(*HAND), HAND_RESULT, atol=1e-15)


def test_rank1_update_hand_instance():
    np.testing.assert_allclose(dictionary_update_rank1(*HAND), HAND_RESULT, atol=1e-15)


def test_rank1_zero_residual_unchanged(rng):
    C, x = rng.standard_normal((6, 2)), rng.standard_normal(2)
    np.testing.assert_allclose(dictionary_update_rank1(C, x, C @ x, 1.0), C, atol=1e-14)


def test_rank1_degenerate_step():
    with pytest.raises(DegenerateStepError):
        dictionary_update_rank1(np.eye(2), np.zeros(2), np.ones(2), 0.0)


def test_rank1_zero_lambda_nonzero_code_is_broyden(rng):
    C, x, y = rng.standard_normal((5, 3)), rng.standard_normal(3), rng.standard_normal(5)
    np.testing.assert_allclose(dictionary_update_rank1(C, x, y, 0.0) @ x, y, atol=1e-12)


def test_secant_limit(rng):
    for _ in range(10):
        C, x, y = rng.standard_normal((8, 3)), rng.standard_normal(3), rng.standard_normal(8)
        Ct = dictionary_update_rank1(C, x, y, 1e-12)
        assert np.linalg.norm(Ct @ x - y) <= 1e-6 * np.linalg.norm(y)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), alpha=st.floats(0.1, 10) | st.floats(-10, -0.1),
       lam=st.floats(0.01, 10))
def test_rank1_scale_equivariance(seed, alpha, lam):
    g = np.random.default_rng(seed)
    C, x, y = g.standard_normal((7, 3)), g.standard_normal(3), g.standard_normal(7)
    # (x, lam) alone does not cancel: the y x^T term keeps a 1/alpha factor
    a = dictionary_update_rank1(C, x, y, lam)
    b = dictionary_update_rank1(C, alpha * x, alpha * y, alpha ** 2 * lam)
    np.testing.assert_allclose(b, a, atol=1e-12, rtol=1e-12)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), lam=st.sampled_from([0.1, 1.0, 10.0]))
def test_rank1_matches_direct(seed, lam):
    g = np.random.default_rng(seed)
    C, x, y = g.standard_normal((20, 5)), g.standard_normal(5), g.standard_normal(20)
    a = dictionary_update_rank1(C, x, y, lam)
    b = dictionary_update_direct(C, x, y, lam)
    assert np.abs(a - b).max() <= 1e-10 * (1 + np.linalg.norm(a))


def test_direct_update_is_stationary(rng):
    C_prev, x, y = rng.standard_normal((6, 3)), rng.standard_normal(3), rng.standard_normal(6)
    C = dictionary_update_direct(C_prev, x, y, 0.5)
    assert np.abs(objective_gradient(C, C_prev, x, y, 0.5)).max() <= 1e-8


# --- step ---------------------------------------------------------------------

def _state(C, n):
    return FactorState(np.asfortranarray(C, dtype=float), np.zeros((C.shape[1], n), order="F"))


def test_step_in_span():
    state = _state(np.eye(2), 1)
    report = omfb_step(state, np.array([1.0, 0.0]), 0, OmfbConfig(rank=2, lam=1.0))
    assert report.residual_norm <= 1e-10
    np.testing.assert_allclose(state.dictionary, np.eye(2), atol=1e-12)
    assert report.objective_after == pytest.approx(
        1.0 * np.sum((state.dictionary - np.eye(2)) ** 2), abs=1e-20)
    np.testing.assert_allclose(state.coefficients[:, 0], [1.0, 0.0])
    assert state.step == 1


def test_step_two_inner_iterations_not_worse(rng):
    for _ in range(20):
        C, y = rng.standard_normal((4, 2)), rng.standard_normal(4)
        after = []
        for iters in (1, 2):
            s = _state(C.copy(), 1)
            after.append(omfb_step(s, y, 0, OmfbConfig(rank=2, lam=1.0, inner_iters=iters)).objective_after)
        assert after[1] <= after[0] + 1e-12


def test_step_deterministic(rng):
    C, y = rng.standard_normal((5, 2)), rng.standard_normal(5)
    cfg = OmfbConfig(rank=2, lam=3.0)
    r1 = omfb_step(_state(C.copy(), 3), y, 1, cfg)
    r2 = omfb_step(_state(C.copy(), 3), y, 1, cfg)
    assert r1 == r2


def test_step_zero_column_is_noop(rng):
    C = rng.standard_normal((5, 2))
    state = _state(C.copy(), 2)
    omfb_step(state, np.zeros(5), 0, OmfbConfig(rank=2, lam=1.0))
    assert np.array_equal(state.dictionary, C)
    assert np.all(state.coefficients == 0)


def test_step_descent_and_half_updates(rng):
    cfg = OmfbConfig(rank=3, lam=0.5, inner_iters=3)
    state = _state(rng.standard_normal((10, 3)), 4)
    for _ in range(50):
        k = int(rng.integers(4))
        rep = omfb_step(state, rng.standard_normal(10), k, cfg)
        path = [rep.objective_before] + rep.objective_path
        assert all(b <= a + 1e-12 for a, b in zip(path, path[1:]))
        assert rep.objective_after <= rep.objective_before + 1e-12


def test_step_anchor_is_entry_dictionary(rng):
    C0, y = rng.standard_normal((6, 2)), rng.standard_normal(6)
    state = _state(C0.copy(), 1)
    omfb_step(state, y, 0, OmfbConfig(rank=2, lam=2.0, inner_iters=2))
    x1 = solve_coefficients(C0, y)
    C1 = dictionary_update_rank1(C0, x1, y, 2.0)
    x2 = solve_coefficients(C1, y)
    C2 = dictionary_update_rank1(C0, x2, y, 2.0)
    np.testing.assert_allclose(state.dictionary, C2, rtol=1e-13)
    np.testing.assert_allclose(state.coefficients[:, 0], x2, rtol=1e-13)


# --- run ----------------------------------------------------------------------

def test_run_recovers_noiseless_low_rank():
    g = np.random.default_rng(3)
    Y = g.standard_normal((30, 4)) @ g.standard_normal((4, 80))
    trace = Trace()
    omfb_run(Y, OmfbConfig(rank=4, lam=1.0, epochs=30, seed=1), trace)
    assert len(trace) == 30
    assert trace[-1].frobenius_error / np.linalg.norm(Y) <= 1e-3


def test_run_zero_epochs(rng):
    Y = rng.standard_normal((5, 7))
    trace = Trace()
    state = omfb_run(Y, OmfbConfig(rank=2, lam=1.0, epochs=0, seed=4), trace)
    assert len(trace) == 0 and state.step == 0
    assert np.all(state.coefficients == 0)
    assert np.all(np.isfinite(state.dictionary))


def test_run_sequential_visits_in_order(rng, monkeypatch):
    import broydenmf.omfb as mod
    seen = []
    real = mod.omfb_step

    def spy(state, y, k, config):
        seen.append(k)
        return real(state, y, k, config)

    monkeypatch.setattr(mod, "omfb_step", spy)
    omfb_run(rng.standard_normal((4, 3)), OmfbConfig(rank=1, lam=1.0, epochs=3, sampling="sequential"))
    assert seen == [0, 1, 2] * 3


def test_run_deterministic(rng):
    Y = rng.standard_normal((8, 12))
    cfg = OmfbConfig(rank=2, lam=1.0, epochs=3, seed=11)
    t1, t2 = Trace(), Trace()
    a, b = omfb_run(Y, cfg, t1), omfb_run(Y, cfg, t2)
    assert np.array_equal(a.dictionary, b.dictionary)
    assert np.array_equal(t1.errors, t2.errors)
    assert list(t1.samples) == [12, 24, 36]


def test_run_early_stop():
    g = np.random.default_rng(0)
    Y = g.standard_normal((10, 2)) @ g.standard_normal((2, 20))
    trace = Trace()
    omfb_run(Y, OmfbConfig(rank=2, lam=1.0, epochs=200, seed=0, early_stop_tol=1e-6), trace)
    assert len(trace) < 200


def test_run_rejects_empty():
    with pytest.raises(ValueError):
        omfb_run(np.zeros((0, 3)), OmfbConfig(rank=1, lam=1.0))
