"""Comparison algorithms: stochastic gradient MF and multiplicative-update NMF."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .core import DimensionError, as_matrix, init_state, make_streams
from .dataio import as_mask, column_sampler
from .metrics import Trace, reconstruction_error
from .omfb import drive_epochs

H_MODES = ("scalar", "per-column")


@dataclass(frozen=True)
class StepSchedule:
    """Power-decay step size ``alpha / t**beta``.

    For ``0.5 < beta <= 1`` the steps sum to infinity while their squares do
    not, the usual Robbins-Monro conditions. ``alpha = 0`` is allowed and
    freezes the parameter it drives.
    """

    alpha: float
    beta: float = 0.6
    kind: str = "power"

    def __post_init__(self):
        if self.kind != "power":
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be nonnegative, got {self.alpha}")
        if not 0.5 < self.beta <= 1:
            raise ValueError(f"beta must be in (0.5, 1], got {self.beta}")

    def __call__(self, t):
        return self.alpha / np.power(t, self.beta, dtype=np.float64)

    def square_tail_bound(self, T: int) -> float:
        """Upper bound on ``sum_{t > T} gamma_t**2`` from the integral test."""
        return self.alpha ** 2 * T ** (1 - 2 * self.beta) / (2 * self.beta - 1)

    def partial_sum_lower_bound(self, T: int) -> float:
        """Lower bound on ``sum_{t=1}^{T} gamma_t`` from the integral test."""
        if self.beta == 1:
            return self.alpha * np.log(T + 1)
        return self.alpha * ((T + 1) ** (1 - self.beta) - 1) / (1 - self.beta)


@dataclass
class SgmfState:
    """``W`` (m x r), ``H`` (r x n) and the step counter ``t`` (1-based).

    In ``per-column`` mode each column of ``H`` follows its own schedule,
    indexed by how often that column has been visited.
    """

    W: np.ndarray
    H: np.ndarray
    w_schedule: StepSchedule
    h_schedule: StepSchedule
    t: int = 1
    h_mode: str = "scalar"
    visits: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.W.shape[1] != self.H.shape[0]:
            raise DimensionError(f"W {self.W.shape} and H {self.H.shape} do not conform")
        if self.h_mode not in H_MODES:
            raise ValueError(f"h_mode must be one of {H_MODES}")
        if self.visits is None:
            self.visits = np.zeros(self.H.shape[1], dtype=np.int64)


def sgmf_gradients(W, h, y):
    """Gradients of ``||y - W h||^2`` in ``W`` and in ``h``.

    ``h``/``y`` may be blocks of columns, giving gradients of the summed loss.
    """
    W = np.asarray(W, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if W.ndim != 2 or h.shape[0] != W.shape[1] or y.shape[0] != W.shape[0] \
            or h.ndim != y.ndim or h.shape[1:] != y.shape[1:]:
        raise DimensionError(f"W {W.shape}, h {h.shape}, y {y.shape} do not conform")
    resid = y - W @ h
    if resid.ndim == 1:
        grad_W = -2.0 * np.outer(resid, h)
    else:
        grad_W = -2.0 * resid @ h.T
    return grad_W, -2.0 * W.T @ resid


def sgmf_step(state: SgmfState, y, k) -> SgmfState:
    """Gradient step on ``W``, then on column(s) ``k`` of ``H`` against the new ``W``."""
    h = state.H[:, k]
    grad_W, _ = sgmf_gradients(state.W, h, y)
    state.W = state.W - state.w_schedule(state.t) * grad_W
    _, grad_h = sgmf_gradients(state.W, h, y)
    if state.h_mode == "per-column":
        state.visits[k] += 1
        gamma = state.h_schedule(state.visits[k])
    else:
        gamma = state.h_schedule(state.t)
    state.H[:, k] = h - gamma * grad_h
    state.t += 1
    return state


def sgmf_run(Y, rank: int, w_schedule: StepSchedule, h_schedule: StepSchedule | None = None,
             epochs: int = 30, batch_size: int = 1, seed: int = 0, sampling: str = "uniform",
             h_mode: str = "scalar", trace: Trace | None = None) -> SgmfState:
    """Stochastic gradient factorization with the same init and column order as OMF-B.

    ``W`` starts from the same draw as the OMF-B dictionary for the same seed
    and ``H`` from zeros; columns are drawn from the same sampling stream.
    Divergent step sizes are allowed to overflow (errors become inf/nan).
    """
    Y = as_matrix(Y, "Y")
    if Y.size == 0:
        raise ValueError("Y is empty")
    m, n = Y.shape
    if not 1 <= batch_size <= n:
        raise ValueError(f"batch_size must be in [1, {n}], got {batch_size}")
    init_rng, sample_rng = make_streams(seed)
    init = init_state(m, n, rank, init_rng)
    state = SgmfState(init.dictionary, init.coefficients, w_schedule,
                      h_schedule or w_schedule, h_mode=h_mode)
    if batch_size == 1:
        sampler = column_sampler(n, sampling, sample_rng)
    else:
        sampler = column_sampler(n, sampling, sample_rng, batch_size=batch_size)
    with np.errstate(over="ignore", invalid="ignore"):
        drive_epochs(n, batch_size, epochs, sampler,
                     lambda k: sgmf_step(state, Y[:, k], k),
                     lambda: reconstruction_error(Y, state.W, state.H),
                     trace)
    return state


def _check_nonnegative(name, a, mask=None):
    bad = a < 0
    if mask is not None:
        bad &= mask
    if bad.any():
        raise ValueError(f"{name} has negative entries")


def nmf_mu_step(W, H, Y, eps: float = 1e-12, mask=None):
    """One round of Lee-Seung multiplicative updates for ``||Y - W H||_F``.

    ``W`` is updated first, then ``H`` against the new ``W``. With a mask,
    only observed entries enter the numerators and denominators.
    """
    W = np.asarray(W, dtype=np.float64)
    H = np.asarray(H, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if W.shape[1] != H.shape[0] or Y.shape != (W.shape[0], H.shape[1]):
        raise DimensionError(f"W {W.shape}, H {H.shape}, Y {Y.shape} do not conform")
    if mask is not None:
        mask = as_mask(mask, Y.shape)
    _check_nonnegative("W", W)
    _check_nonnegative("H", H)
    _check_nonnegative("Y", Y, mask)

    if mask is None:
        W = W * (Y @ H.T) / (W @ (H @ H.T) + eps)
        H = H * (W.T @ Y) / ((W.T @ W) @ H + eps)
        return W, H
    MY = np.where(mask, Y, 0.0)
    W = W * (MY @ H.T) / (np.where(mask, W @ H, 0.0) @ H.T + eps)
    H = H * (W.T @ MY) / (W.T @ np.where(mask, W @ H, 0.0) + eps)
    return W, H


def nmf_init(Y, rank: int, seed: int = 0, mask=None):
    """Absolute standard normals scaled by ``sqrt(mean(Y) / rank)``."""
    Y = as_matrix(Y, "Y")
    m, n = Y.shape
    init_rng, _ = make_streams(seed)
    mean = float(Y[mask].mean()) if mask is not None else float(Y.mean())
    scale = np.sqrt(mean / rank) if mean > 0 else 1.0
    W = np.abs(init_rng.standard_normal((m, rank))) * scale
    H = np.abs(init_rng.standard_normal((rank, n))) * scale
    return W, H


def nmf_run(Y, rank: int, iterations: int = 1000, seed: int = 0, mask=None,
            eps: float = 1e-12, trace: Trace | None = None):
    """Batch NMF by multiplicative updates; returns ``(W, H)``.

    A full (all-True) mask is treated as no mask. ``trace`` gets one record
    per iteration, counting a pass over all ``n`` columns as ``n`` samples.
    """
    Y = as_matrix(Y, "Y")
    if Y.size == 0:
        raise ValueError("Y is empty")
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    if mask is not None:
        mask = as_mask(mask, Y.shape)
        if mask.all():
            mask = None
        else:
            Y = np.where(mask, Y, 0.0)
    _check_nonnegative("Y", Y)
    W, H = nmf_init(Y, rank, seed, mask)
    n = Y.shape[1]
    elapsed = 0.0
    for i in range(iterations):
        t0 = time.perf_counter()
        W, H = nmf_mu_step(W, H, Y, eps, mask)
        elapsed += time.perf_counter() - t0
        if trace is not None:
            trace.record((i + 1) * n, elapsed, reconstruction_error(Y, W, H, mask))
    return W, H
