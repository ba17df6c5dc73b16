"""Shared numerics: matrix helpers, the per-step objective, symmetric solves.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. Data matrices
are kept in Fortran (column-major) order so that ``Y[:, k]`` is a contiguous
view, which is what the column-streaming algorithms touch on every step.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

SAMPLING_MODES = ("uniform", "sequential")


class DimensionError(ValueError):
    """Operand shapes do not conform."""


class DegenerateStepError(ArithmeticError):
    """An update has no well-defined result (e.g. zero penalty and zero code)."""


def as_matrix(a, name="matrix") -> np.ndarray:
    """Return ``a`` as a 2-D, column-major float64 array."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    return np.asfortranarray(a)


def as_vector(a, name="vector") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {a.shape}")
    return a


def make_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Split ``seed`` into independent (initialization, sampling) generators.

    Both streams are PCG64 children of one ``SeedSequence``. Keeping sampling
    on its own stream means every algorithm run with the same seed visits
    columns in the same order, whatever it draws for initialization.
    """
    init_seq, sample_seq = np.random.SeedSequence(seed).spawn(2)
    return (np.random.Generator(np.random.PCG64(init_seq)),
            np.random.Generator(np.random.PCG64(sample_seq)))


@dataclass
class OmfbConfig:
    """Run configuration shared by the single-column, mini-batch and masked drivers.

    ``early_stop_tol`` (off by default) ends a run once one epoch improves the
    full-data error by less than that relative amount. ``woodbury`` switches
    the mini-batch dictionary update to its b x b form.
    """

    rank: int
    lam: float
    inner_iters: int = 2
    epochs: int = 30
    sampling: str = "uniform"
    seed: int = 0
    ridge_eps: float = 1e-10
    early_stop_tol: float | None = None
    woodbury: bool = False

    def __post_init__(self):
        if int(self.rank) != self.rank or self.rank < 1:
            raise ValueError(f"rank must be a positive integer, got {self.rank}")
        if not self.lam > 0:
            raise ValueError(f"lam must be positive, got {self.lam}")
        if int(self.inner_iters) != self.inner_iters or self.inner_iters < 1:
            raise ValueError(f"inner_iters must be >= 1, got {self.inner_iters}")
        if int(self.epochs) != self.epochs or self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.sampling not in SAMPLING_MODES:
            raise ValueError(f"sampling must be one of {SAMPLING_MODES}, got {self.sampling!r}")
        if self.ridge_eps < 0:
            raise ValueError("ridge_eps must be nonnegative")
        if self.early_stop_tol is not None and self.early_stop_tol < 0:
            raise ValueError("early_stop_tol must be nonnegative")


@dataclass
class FactorState:
    """Current dictionary ``C_t`` (m x r) and stored coefficients ``X`` (r x n)."""

    dictionary: np.ndarray
    coefficients: np.ndarray
    step: int = 0
    skipped: int = 0

    def __post_init__(self):
        if self.dictionary.shape[1] != self.coefficients.shape[0]:
            raise DimensionError(
                f"dictionary has {self.dictionary.shape[1]} columns but "
                f"coefficients have {self.coefficients.shape[0]} rows")

    @property
    def rank(self) -> int:
        return self.dictionary.shape[1]

    def reconstruction(self) -> np.ndarray:
        return self.dictionary @ self.coefficients


def init_state(m: int, n: int, rank: int, rng: np.random.Generator) -> FactorState:
    """Standard-normal dictionary scaled by 1/sqrt(rank), zero coefficients."""
    C = np.asfortranarray(rng.standard_normal((m, rank)) / np.sqrt(rank))
    X = np.zeros((rank, n), order="F")
    return FactorState(C, X)


def objective(y, x, C, C_prev, lam: float) -> float:
    """Per-step cost ``||y - C x||^2 + lam * ||C - C_prev||_F^2``.

    ``y``/``x`` may be single columns (m,), (r,) or blocks (m, b), (r, b); in
    the block case the first term is the squared Frobenius norm.
    """
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    C_prev = np.asarray(C_prev, dtype=np.float64)
    if C.ndim != 2 or C.shape != C_prev.shape:
        raise DimensionError(f"C {C.shape} and C_prev {C_prev.shape} must be equal 2-D shapes")
    if y.ndim != x.ndim or y.ndim not in (1, 2):
        raise DimensionError(f"y {y.shape} and x {x.shape} must both be vectors or both matrices")
    if y.shape[0] != C.shape[0] or x.shape[0] != C.shape[1] or y.shape[1:] != x.shape[1:]:
        raise DimensionError(f"shapes do not conform: y {y.shape}, C {C.shape}, x {x.shape}")
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    resid = y - C @ x
    fit = float(np.sum(resid * resid))
    if lam == 0:
        return fit
    diff = C - C_prev
    return fit + lam * float(np.sum(diff * diff))


def _cholesky(A):
    """Cholesky factor of ``A``, or None unless ``A`` is numerically positive definite."""
    try:
        factor = linalg.cho_factor(A, check_finite=False)
    except linalg.LinAlgError:
        return None
    pivots = np.diag(factor[0]) ** 2
    # pivots at rounding level mean A is singular in working precision
    if pivots.min() <= A.shape[0] * np.finfo(np.float64).eps * np.abs(np.diag(A)).max():
        return None
    return factor


def solve_spd(A, B, ridge_eps: float = 1e-10) -> np.ndarray:
    """Solve ``(A + delta I) Z = B`` for symmetric positive semidefinite ``A``.

    ``delta`` is zero when a Cholesky factorization of ``A`` succeeds.
    Otherwise ``delta = ridge_eps * trace(A) / r`` (or ``ridge_eps`` when the
    trace is zero) and the shift is grown tenfold until the factorization
    goes through. ``B`` may be a vector or an r x k matrix.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"A must be square, got {A.shape}")
    r = A.shape[0]
    if B.shape[0] != r:
        raise DimensionError(f"B has {B.shape[0]} rows, expected {r}")
    scale = np.linalg.norm(A)
    if np.linalg.norm(A - A.T) > 1e-8 * scale:
        raise ValueError("A is not symmetric")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise np.linalg.LinAlgError("non-finite entries in linear system")

    factor = _cholesky(A)
    if factor is not None:
        return linalg.cho_solve(factor, B, check_finite=False)

    trace = float(np.trace(A))
    delta = ridge_eps * trace / r if trace > 0 else ridge_eps
    if delta <= 0:
        raise np.linalg.LinAlgError("matrix is singular and ridge_eps is zero")
    shifted = A.copy()
    for _ in range(20):
        shifted[np.diag_indices(r)] = np.diag(A) + delta
        factor = _cholesky(shifted)
        if factor is not None:
            return linalg.cho_solve(factor, B, check_finite=False)
        delta *= 10.0
    raise np.linalg.LinAlgError("ridge-regularized system is still not positive definite")
