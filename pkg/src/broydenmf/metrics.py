"""Reconstruction error, SNR and benchmark traces."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .core import DimensionError

TRACE_HEADER = ("samples", "seconds", "frobenius_error")


@dataclass(frozen=True)
class TraceRecord:
    samples_processed: int
    wall_seconds: float
    frobenius_error: float


class Trace:
    """Append-only list of :class:`TraceRecord` with monotone samples and time."""

    def __init__(self, records=()):
        self.records: list[TraceRecord] = []
        for rec in records:
            self.record(rec.samples_processed, rec.wall_seconds, rec.frobenius_error)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def record(self, samples: int, seconds: float, error: float) -> TraceRecord:
        if self.records:
            last = self.records[-1]
            if samples < last.samples_processed:
                raise ValueError(
                    f"samples went backwards: {samples} < {last.samples_processed}")
            if seconds < last.wall_seconds:
                raise ValueError(
                    f"clock went backwards: {seconds} < {last.wall_seconds}")
        if samples < 0 or seconds < 0:
            raise ValueError("samples and seconds must be nonnegative")
        rec = TraceRecord(int(samples), float(seconds), float(error))
        self.records.append(rec)
        return rec

    @property
    def samples(self) -> np.ndarray:
        return np.array([r.samples_processed for r in self.records], dtype=np.int64)

    @property
    def seconds(self) -> np.ndarray:
        return np.array([r.wall_seconds for r in self.records])

    @property
    def errors(self) -> np.ndarray:
        return np.array([r.frobenius_error for r in self.records])

    def to_csv(self, path=None) -> str:
        """Serialize as ``samples,seconds,frobenius_error`` CSV; write to ``path`` if given."""
        buf = io.StringIO()
        buf.write(",".join(TRACE_HEADER) + "\n")
        for r in self.records:
            buf.write(f"{r.samples_processed},{r.wall_seconds!r},{r.frobenius_error!r}\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "Trace":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or tuple(rows[0]) != TRACE_HEADER:
            raise ValueError(f"{path}: expected header {','.join(TRACE_HEADER)}")
        trace = cls()
        for row in rows[1:]:
            trace.record(int(row[0]), float(row[1]), float(row[2]))
        return trace


def _check_mask(mask, shape):
    mask = np.asarray(mask)
    if mask.shape != shape:
        raise DimensionError(f"mask shape {mask.shape} does not match {shape}")
    return mask.astype(bool)


def reconstruction_error(Y, C, X, mask=None) -> float:
    """``||Y - C X||_F``, over observed entries only when ``mask`` is given."""
    Y = np.asarray(Y, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if C.shape[1] != X.shape[0] or Y.shape != (C.shape[0], X.shape[1]):
        raise DimensionError(f"shapes do not conform: Y {Y.shape}, C {C.shape}, X {X.shape}")
    resid = Y - C @ X
    if mask is not None:
        resid = np.where(_check_mask(mask, Y.shape), resid, 0.0)
    return float(np.linalg.norm(resid))


def snr_db(Y_true, Y_est, mask=None, region: str = "all") -> float:
    """Signal-to-noise ratio ``10 log10(||Y||^2 / ||Y - Y_est||^2)`` in dB.

    ``region="missing"`` restricts both powers to entries where ``mask`` is 0.
    Returns ``inf`` when the estimate is exact over the region.
    """
    Y_true = np.asarray(Y_true, dtype=np.float64)
    Y_est = np.asarray(Y_est, dtype=np.float64)
    if Y_true.shape != Y_est.shape:
        raise DimensionError(f"shapes differ: {Y_true.shape} vs {Y_est.shape}")
    if region == "all":
        sel = np.ones(Y_true.shape, dtype=bool)
    elif region == "missing":
        if mask is None:
            raise ValueError("region='missing' needs a mask")
        sel = ~_check_mask(mask, Y_true.shape)
    else:
        raise ValueError(f"unknown region {region!r}")
    signal = float(np.sum(Y_true[sel] ** 2))
    if signal == 0:
        raise ValueError("signal power is zero; SNR undefined")
    noise = float(np.sum((Y_true[sel] - Y_est[sel]) ** 2))
    if noise == 0:
        return float("inf")
    return 10.0 * np.log10(signal / noise)
