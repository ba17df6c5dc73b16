"""Online factorization with missing entries, and imputation from the factors.

A column arrives with a binary mask ``m``. The code solve only fits observed
rows; the dictionary update only corrects observed rows, leaving the others
exactly as they were.
"""
from __future__ import annotations

import numpy as np

from .core import DimensionError, FactorState, OmfbConfig, as_vector, solve_spd
from .dataio import as_mask, column_sampler
from .metrics import Trace, reconstruction_error
from .omfb import StepReport, _broyden, _prepare, drive_epochs


class MaskedColumn:
    """Observed column ``values`` with boolean ``mask``; unobserved values are ignored."""

    __slots__ = ("values", "mask")

    def __init__(self, values, mask):
        self.values = as_vector(values, "values")
        self.mask = as_mask(mask, self.values.shape)

    @property
    def observed(self) -> int:
        return int(self.mask.sum())

    def masked_values(self) -> np.ndarray:
        return np.where(self.mask, self.values, 0.0)


def expand_mask(m_col, r: int) -> np.ndarray:
    """Repeat the column mask ``r`` times side by side (m x r)."""
    if r < 1:
        raise ValueError("r must be >= 1")
    m_col = as_mask(np.asarray(m_col).ravel())
    return np.repeat(m_col[:, None], r, axis=1)


def masked_objective(C, x, obs: MaskedColumn, C_prev, lam: float) -> float:
    """``||m * (y - C x)||^2 + lam ||C - C_prev||_F^2``."""
    resid = obs.mask * (obs.masked_values() - C @ x)
    return float(resid @ resid) + lam * float(np.sum((C - C_prev) ** 2))


def masked_solve_coefficients(C, obs: MaskedColumn, ridge_eps: float = 1e-10) -> np.ndarray:
    """Least-squares code fitted on observed rows only.

    Solves the normal equations of ``(M_C * C) x ~ m * y``. Returns zeros
    when nothing is observed; fewer observed rows than the rank fall back to
    the ridge shift of :func:`solve_spd`.
    """
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != obs.values.shape[0]:
        raise DimensionError(f"C {C.shape} does not conform with column of length {obs.values.shape[0]}")
    if not obs.mask.any():
        return np.zeros(C.shape[1])
    Cm = np.asfortranarray(C * expand_mask(obs.mask, C.shape[1]))
    return solve_spd(Cm.T @ Cm, Cm.T @ obs.masked_values(), ridge_eps)


def masked_dictionary_update(C_prev, x, obs: MaskedColumn, lam: float) -> np.ndarray:
    """Rank-one correction driven by the masked residual; unobserved rows unchanged."""
    C_prev = np.asarray(C_prev, dtype=np.float64)
    x = as_vector(x, "x")
    if x.shape[0] != C_prev.shape[1] or obs.values.shape[0] != C_prev.shape[0]:
        raise DimensionError(f"C_prev {C_prev.shape}, x {x.shape}, column {obs.values.shape} do not conform")
    resid = obs.mask * (obs.masked_values() - C_prev @ x)
    return _broyden(C_prev, x, resid, lam)


def omfb_missing_step(state: FactorState, obs: MaskedColumn, k: int, config: OmfbConfig) -> StepReport:
    C_prev = state.dictionary
    lam = config.lam
    x = state.coefficients[:, k]
    before = masked_objective(C_prev, x, obs, C_prev, lam)
    path = []
    C = C_prev
    for _ in range(config.inner_iters):
        x = masked_solve_coefficients(C, obs, config.ridge_eps)
        path.append(masked_objective(C, x, obs, C_prev, lam))
        C = masked_dictionary_update(C_prev, x, obs, lam)
        path.append(masked_objective(C, x, obs, C_prev, lam))
    state.dictionary = C
    state.coefficients[:, k] = x
    state.step += 1
    resid = obs.mask * (obs.masked_values() - C @ x)
    return StepReport(k, before, path[-1], float(np.linalg.norm(resid)), path)


def omfb_missing_run(Y, M, config: OmfbConfig, trace: Trace | None = None,
                     truth=None, truth_trace: Trace | None = None) -> FactorState:
    """Factorize partially observed ``Y`` (mask ``M``, True = observed).

    ``trace`` records the error over observed entries. When the complete
    matrix ``truth`` is available (testing, benchmarks), ``truth_trace``
    receives the error over the hidden entries on the same cadence.
    Columns with no observed entry are skipped and counted in
    ``state.skipped``.
    """
    Y, state, rng = _prepare(Y, config)
    M = np.asfortranarray(as_mask(M, Y.shape))
    Y = np.asfortranarray(np.where(M, Y, 0.0))
    n = Y.shape[1]
    if truth is not None:
        truth = np.asarray(truth, dtype=np.float64)
        if truth.shape != Y.shape:
            raise DimensionError(f"truth {truth.shape} does not match Y {Y.shape}")
    elif truth_trace is not None:
        raise ValueError("truth_trace needs truth")

    def step(k):
        col = M[:, k]
        if not col.any():
            state.skipped += 1
            state.step += 1
            return
        omfb_missing_step(state, MaskedColumn(Y[:, k], col), k, config)

    def hidden_error(processed, elapsed):
        if truth_trace is not None:
            truth_trace.record(processed, elapsed, reconstruction_error(
                truth, state.dictionary, state.coefficients, mask=~M))

    sampler = column_sampler(n, config.sampling, rng)
    drive_epochs(n, 1, config.epochs, sampler, step,
                 lambda: reconstruction_error(Y, state.dictionary, state.coefficients, mask=M),
                 trace, on_record=hidden_error, early_stop_tol=config.early_stop_tol)
    return state


def impute(state: FactorState, M, Y_obs) -> np.ndarray:
    """Observed entries from ``Y_obs``, the rest from ``C X``."""
    Y_obs = np.asarray(Y_obs, dtype=np.float64)
    approx = state.reconstruction()
    if Y_obs.shape != approx.shape:
        raise DimensionError(f"Y_obs {Y_obs.shape} does not match factors {approx.shape}")
    return np.where(as_mask(M, Y_obs.shape), Y_obs, approx)
