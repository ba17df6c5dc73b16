"""Single-column online factorization with Broyden-style dictionary updates.

Each step observes one column ``y`` of the data, then alternates between a
least-squares solve for its code ``x`` and a damped rank-one correction of the
dictionary. The damping ``lam`` keeps the new dictionary close to the one held
when the step began, which is what makes the dictionary shared across columns
instead of refitted to each.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .core import (
    DegenerateStepError,
    DimensionError,
    FactorState,
    OmfbConfig,
    as_matrix,
    as_vector,
    init_state,
    make_streams,
    objective,
    solve_spd,
)
from .dataio import column_sampler
from .metrics import Trace, reconstruction_error


@dataclass
class StepReport:
    column_index: int
    objective_before: float
    objective_after: float
    residual_norm: float
    # objective after every half-update, in order (x-solve, C-update, x-solve, ...)
    objective_path: list[float] = field(default_factory=list)


def solve_coefficients(C, y, ridge_eps: float = 1e-10) -> np.ndarray:
    """Least-squares code ``(C^T C)^{-1} C^T y`` for one column."""
    C = np.asarray(C, dtype=np.float64)
    y = as_vector(y, "y")
    if C.ndim != 2 or C.shape[0] != y.shape[0]:
        raise DimensionError(f"C {C.shape} does not conform with y {y.shape}")
    return solve_spd(C.T @ C, C.T @ y, ridge_eps)


def dictionary_update_direct(C_prev, x, y, lam: float) -> np.ndarray:
    """``(lam C_prev + y x^T)(lam I + x x^T)^{-1}`` via an explicit r x r solve.

    Reference form of the update; O(m r^2 + r^3). Use
    :func:`dictionary_update_rank1` in loops.
    """
    C_prev = np.asarray(C_prev, dtype=np.float64)
    x = as_vector(x, "x")
    y = as_vector(y, "y")
    m, r = C_prev.shape
    if x.shape[0] != r or y.shape[0] != m:
        raise DimensionError(f"C_prev {C_prev.shape}, x {x.shape}, y {y.shape} do not conform")
    if not lam > 0:
        raise ValueError("lam must be positive for the direct form")
    numer = lam * C_prev + np.outer(y, x)
    gram = lam * np.eye(r) + np.outer(x, x)
    # C gram = numer, gram symmetric
    return np.linalg.solve(gram, numer.T).T


def dictionary_update_rank1(C_prev, x, y, lam: float) -> np.ndarray:
    """``C_prev + (y - C_prev x) x^T / (lam + x^T x)``, O(m r)."""
    C_prev = np.asarray(C_prev, dtype=np.float64)
    x = as_vector(x, "x")
    y = as_vector(y, "y")
    if x.shape[0] != C_prev.shape[1] or y.shape[0] != C_prev.shape[0]:
        raise DimensionError(f"C_prev {C_prev.shape}, x {x.shape}, y {y.shape} do not conform")
    return _broyden(C_prev, x, y - C_prev @ x, lam)


def _broyden(C_prev, x, resid, lam):
    denom = lam + x @ x
    if denom == 0:
        raise DegenerateStepError("lam = 0 and x = 0: update undefined")
    return np.asfortranarray(C_prev + np.outer(resid / denom, x))


def omfb_step(state: FactorState, y, k: int, config: OmfbConfig) -> StepReport:
    """Process column ``k`` (values ``y``) in place and report the step objective.

    The penalty anchor is the dictionary at entry, for every inner iteration.
    """
    y = as_vector(y, "y")
    C_prev = state.dictionary
    if y.shape[0] != C_prev.shape[0]:
        raise DimensionError(f"y has {y.shape[0]} rows, dictionary has {C_prev.shape[0]}")
    lam = config.lam
    x = state.coefficients[:, k]
    before = objective(y, x, C_prev, C_prev, lam)

    path = []
    C = C_prev
    for _ in range(config.inner_iters):
        x = solve_coefficients(C, y, config.ridge_eps)
        path.append(objective(y, x, C, C_prev, lam))
        C = _broyden(C_prev, x, y - C_prev @ x, lam)
        path.append(objective(y, x, C, C_prev, lam))

    state.dictionary = C
    state.coefficients[:, k] = x
    state.step += 1
    return StepReport(k, before, path[-1], float(np.linalg.norm(y - C @ x)), path)


def drive_epochs(n, batch, epochs, sampler, step, error, trace=None, on_record=None,
                 early_stop_tol=None):
    """Run ``step`` on sampled indices until ``epochs * n`` samples are consumed.

    A trace record is emitted each time the processed-sample count crosses a
    multiple of ``n``; only time spent inside ``step`` is counted. With
    ``early_stop_tol`` set, stops once an epoch improves the error by less
    than that relative amount.
    """
    total = epochs * n
    processed = 0
    elapsed = 0.0
    mark = n
    prev = None
    while processed < total:
        idx = next(sampler)
        t0 = time.perf_counter()
        step(idx)
        elapsed += time.perf_counter() - t0
        processed += batch
        if processed < mark:
            continue
        while mark <= processed:
            mark += n
        err = error()
        if trace is not None:
            trace.record(processed, elapsed, err)
        if on_record is not None:
            on_record(processed, elapsed)
        if early_stop_tol is not None and prev is not None and prev > 0:
            if (prev - err) / prev < early_stop_tol:
                break
        prev = err


def _prepare(Y, config):
    Y = as_matrix(Y, "Y")
    if Y.size == 0:
        raise ValueError("Y is empty")
    init_rng, sample_rng = make_streams(config.seed)
    state = init_state(Y.shape[0], Y.shape[1], config.rank, init_rng)
    return Y, state, sample_rng


def omfb_run(Y, config: OmfbConfig, trace: Trace | None = None) -> FactorState:
    """Factorize ``Y`` (m x n) one column at a time for ``config.epochs`` passes."""
    Y, state, rng = _prepare(Y, config)
    n = Y.shape[1]
    sampler = column_sampler(n, config.sampling, rng)
    drive_epochs(n, 1, config.epochs, sampler,
                 lambda k: omfb_step(state, Y[:, k], k, config),
                 lambda: reconstruction_error(Y, state.dictionary, state.coefficients),
                 trace, early_stop_tol=config.early_stop_tol)
    return state
