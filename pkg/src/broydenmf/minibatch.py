"""Mini-batch variant: codes for a block of columns, then one dictionary update."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DimensionError, FactorState, OmfbConfig, objective, solve_spd
from .dataio import column_sampler
from .metrics import Trace, reconstruction_error
from .omfb import _prepare, drive_epochs


@dataclass
class MiniBatch:
    indices: list[int]
    data: np.ndarray

    def __post_init__(self):
        self.indices = [int(i) for i in self.indices]
        if not self.indices:
            raise ValueError("a mini-batch needs at least one column")
        if len(set(self.indices)) != len(self.indices):
            raise ValueError(f"duplicate indices in mini-batch: {self.indices}")
        if self.data.ndim != 2 or self.data.shape[1] != len(self.indices):
            raise DimensionError(
                f"batch data {self.data.shape} does not match {len(self.indices)} indices")


@dataclass
class BatchReport:
    indices: list[int]
    objective_before: float
    objective_after: float
    residual_norm: float


def solve_coefficients_batch(C, Yb, ridge_eps: float = 1e-10) -> np.ndarray:
    """Codes for every column of ``Yb`` from one factorization of ``C^T C``."""
    C = np.asarray(C, dtype=np.float64)
    Yb = np.asarray(Yb, dtype=np.float64)
    if C.ndim != 2 or Yb.ndim != 2 or C.shape[0] != Yb.shape[0]:
        raise DimensionError(f"C {C.shape} does not conform with Yb {Yb.shape}")
    return solve_spd(C.T @ C, C.T @ Yb, ridge_eps)


def dictionary_update_batch(C_prev, Xb, Yb, lam: float, woodbury: bool = False) -> np.ndarray:
    """``(lam C_prev + Yb Xb^T)(lam I + Xb Xb^T)^{-1}``.

    The default solves the r x r system. ``woodbury=True`` uses the
    equivalent correction ``C_prev + (Yb - C_prev Xb)(lam I_b + Xb^T Xb)^{-1} Xb^T``,
    which only factors a b x b matrix and is cheaper when b < r.
    """
    C_prev = np.asarray(C_prev, dtype=np.float64)
    Xb = np.asarray(Xb, dtype=np.float64)
    Yb = np.asarray(Yb, dtype=np.float64)
    m, r = C_prev.shape
    if Xb.ndim != 2 or Yb.ndim != 2 or Xb.shape[0] != r or Yb.shape[0] != m \
            or Xb.shape[1] != Yb.shape[1]:
        raise DimensionError(f"C_prev {C_prev.shape}, Xb {Xb.shape}, Yb {Yb.shape} do not conform")
    if not lam > 0:
        raise ValueError("lam must be positive")
    b = Xb.shape[1]
    if woodbury:
        small = lam * np.eye(b) + Xb.T @ Xb
        coef = solve_spd(small, (Yb - C_prev @ Xb).T)
        return C_prev + coef.T @ Xb.T
    gram = lam * np.eye(r) + Xb @ Xb.T
    numer = lam * C_prev + Yb @ Xb.T
    return solve_spd(gram, numer.T).T


def minibatch_step(state: FactorState, batch: MiniBatch, config: OmfbConfig) -> BatchReport:
    C_prev = state.dictionary
    Yb = batch.data
    lam = config.lam
    Xb = state.coefficients[:, batch.indices]
    before = objective(Yb, Xb, C_prev, C_prev, lam)
    C = C_prev
    for _ in range(config.inner_iters):
        Xb = solve_coefficients_batch(C, Yb, config.ridge_eps)
        C = dictionary_update_batch(C_prev, Xb, Yb, lam, woodbury=config.woodbury)
    after = objective(Yb, Xb, C, C_prev, lam)
    state.dictionary = np.asfortranarray(C)
    state.coefficients[:, batch.indices] = Xb
    state.step += 1
    return BatchReport(batch.indices, before, after, float(np.linalg.norm(Yb - C @ Xb)))


def minibatch_run(Y, batch_size: int, config: OmfbConfig, trace: Trace | None = None) -> FactorState:
    """Factorize ``Y`` consuming ``batch_size`` distinct columns per step."""
    Y, state, rng = _prepare(Y, config)
    n = Y.shape[1]
    if not 1 <= batch_size <= n:
        raise ValueError(f"batch_size must be in [1, {n}], got {batch_size}")
    sampler = column_sampler(n, config.sampling, rng, batch_size=batch_size)
    drive_epochs(n, batch_size, config.epochs, sampler,
                 lambda idx: minibatch_step(state, MiniBatch(idx, Y[:, idx]), config),
                 lambda: reconstruction_error(Y, state.dictionary, state.coefficients),
                 trace, early_stop_tol=config.early_stop_tol)
    return state
