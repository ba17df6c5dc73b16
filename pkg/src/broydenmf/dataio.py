"""Dataset loading and saving, mask generation, column sampling, PGM export.

Instances are columns: a data file with ``n`` images of ``m`` pixels loads as
an m x n matrix (pass ``orientation="rows"`` for files storing one instance
per row). Missing cells are written as ``NaN`` in files and become
``(value 0, mask 0)`` pairs once loaded, so the numerics never see NaN.
"""
from __future__ import annotations

import csv
import hashlib
import math
import os
from dataclasses import dataclass

import numpy as np
import scipy.io

from .core import as_matrix

FORMATS = ("csv", "mm")
ORIENTATIONS = ("columns", "rows")


class ParseError(ValueError):
    """Malformed data file; ``row``/``col`` are 1-based when known."""

    def __init__(self, message, path=None, row=None, col=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if row is not None:
                where += f":{row}"
                if col is not None:
                    where += f":{col}"
            where += ": "
        super().__init__(where + message)
        self.path, self.row, self.col = path, row, col


@dataclass
class DatasetSpec:
    path: str
    format: str | None = None
    orientation: str = "columns"
    header: bool = False

    def __post_init__(self):
        if self.format is None:
            self.format = infer_format(self.path)
        if self.format not in FORMATS:
            raise ValueError(f"unknown format {self.format!r}; expected one of {FORMATS}")
        if self.orientation not in ORIENTATIONS:
            raise ValueError(f"unknown orientation {self.orientation!r}")


def infer_format(path) -> str:
    ext = os.path.splitext(str(path))[1].lower()
    return "mm" if ext in (".mtx", ".mm") else "csv"


def _read_csv(path, header=False):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if header:
            next(reader, None)
        for lineno, row in enumerate(reader, start=2 if header else 1):
            if not row or all(not cell.strip() for cell in row):
                continue
            values = []
            for colno, cell in enumerate(row, start=1):
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(f"cannot parse {cell!r} as a number", path, lineno, colno) from None
                if math.isinf(v):
                    raise ParseError("infinite value", path, lineno, colno)
                values.append(v)
            if rows and len(values) != len(rows[0]):
                raise ParseError(
                    f"ragged row: {len(values)} fields, expected {len(rows[0])}", path, lineno)
            rows.append(values)
    if not rows:
        raise ParseError("empty file", path)
    return np.array(rows, dtype=np.float64)


def _read_mm(path):
    try:
        a = scipy.io.mmread(path)
    except (ValueError, IndexError, OSError) as exc:
        if isinstance(exc, FileNotFoundError):
            raise
        raise ParseError(f"invalid MatrixMarket file ({exc})", path) from None
    if hasattr(a, "toarray"):
        a = a.toarray()
    a = np.asarray(a, dtype=np.float64)
    if a.size == 0:
        raise ParseError("empty matrix", path)
    if np.isinf(a).any():
        raise ParseError("infinite value", path)
    return a


def load_matrix(spec: DatasetSpec | str, **kwargs) -> tuple[np.ndarray, np.ndarray | None]:
    """Load a dense matrix, returning ``(Y, mask)``.

    ``mask`` is a boolean array (True = observed) when the file contained any
    NaN cells, else None. NaN cells are zeroed in ``Y``.
    """
    if not isinstance(spec, DatasetSpec):
        spec = DatasetSpec(str(spec), **kwargs)
    if spec.format == "csv":
        a = _read_csv(spec.path, header=spec.header)
    else:
        a = _read_mm(spec.path)
    if spec.orientation == "rows":
        a = a.T
    missing = np.isnan(a)
    mask = None
    if missing.any():
        mask = np.asfortranarray(~missing)
        a = np.where(missing, 0.0, a)
    return as_matrix(a), mask


def save_matrix(path, A, mask=None, fmt=None):
    """Write ``A`` as CSV (``%.17g``, exact round trip) or MatrixMarket.

    Entries where ``mask`` is False are written as NaN.
    """
    A = np.asarray(A, dtype=np.float64)
    if mask is not None:
        A = np.where(np.asarray(mask, dtype=bool), A, np.nan)
    fmt = fmt or infer_format(path)
    if fmt == "mm":
        scipy.io.mmwrite(str(path), A, precision=17)
        return
    with open(path, "w", newline="") as fh:
        for row in A:
            fh.write(",".join("%.17g" % v for v in row) + "\n")


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def as_mask(mask, shape=None) -> np.ndarray:
    """Validate a 0/1 (or boolean) mask and return it as a bool array."""
    mask = np.asarray(mask)
    if shape is not None and mask.shape != tuple(shape):
        raise ValueError(f"mask shape {mask.shape} does not match {tuple(shape)}")
    if mask.dtype != bool:
        if not np.all((mask == 0) | (mask == 1)):
            raise ValueError("mask entries must be 0 or 1")
        mask = mask != 0
    return mask


def generate_mask(m: int, n: int, missing_fraction: float, mode: str = "per-column",
                  seed=0) -> np.ndarray:
    """Random observation mask (True = observed).

    ``per-column`` hides exactly ``round(missing_fraction * m)`` entries of
    every column; ``bernoulli`` hides each entry independently.
    """
    if not 0 <= missing_fraction < 1:
        raise ValueError(f"missing_fraction must be in [0, 1), got {missing_fraction}")
    rng = np.random.default_rng(seed)
    if mode == "per-column":
        hide = int(round(missing_fraction * m))
        if hide >= m:
            raise ValueError(f"hiding {hide} of {m} entries leaves columns unobserved")
        mask = np.ones((m, n), dtype=bool, order="F")
        for j in range(n):
            mask[rng.permutation(m)[:hide], j] = False
        return mask
    if mode == "bernoulli":
        mask = np.asfortranarray(rng.random((m, n)) >= missing_fraction)
        if not mask.any(axis=0).all():
            raise ValueError("bernoulli mask left a column with no observed entries; "
                             "use another seed or a lower fraction")
        return mask
    raise ValueError(f"unknown mask mode {mode!r}")


def _distinct_indices(rng, n, b):
    # Floyd's sampling: one integers() draw per member, so b=1 matches a plain uniform draw
    chosen = []
    seen = set()
    for j in range(n - b, n):
        t = int(rng.integers(0, j + 1))
        if t in seen:
            t = j
        seen.add(t)
        chosen.append(t)
    return chosen


def column_sampler(n: int, mode: str = "uniform", rng=None, batch_size: int | None = None):
    """Infinite stream of 0-based column indices.

    Yields ints when ``batch_size`` is None, otherwise lists of
    ``batch_size`` distinct indices. ``rng`` is a Generator or a seed.
    ``sequential`` cycles 0, 1, ..., n-1 (in consecutive blocks for batches).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if batch_size is not None and not 1 <= batch_size <= n:
        raise ValueError(f"batch_size must be in [1, {n}], got {batch_size}")
    if mode not in ("uniform", "sequential"):
        raise ValueError(f"unknown sampling mode {mode!r}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    return _stream(n, mode, rng, batch_size)


def _stream(n, mode, rng, batch_size):
    t = 0
    while True:
        if batch_size is None:
            if mode == "sequential":
                yield t % n
            else:
                yield int(rng.integers(0, n))
        else:
            if mode == "sequential":
                yield [(t * batch_size + i) % n for i in range(batch_size)]
            else:
                yield _distinct_indices(rng, n, batch_size)
        t += 1


def export_image_grid(M, image_height: int, image_width: int, grid_cols: int, path,
                      order: str = "C") -> tuple[int, int]:
    """Tile the columns of ``M`` as images into a binary PGM (P5, maxval 255).

    Intensities are min-max normalized over the whole matrix; a constant
    matrix maps to 0. ``order`` is the reshape order of each column ("C":
    pixels stored row by row). Returns the (height, width) of the image.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or image_height * image_width != M.shape[0]:
        raise ValueError(f"{image_height}x{image_width} images need {image_height * image_width} "
                         f"rows, matrix has shape {M.shape}")
    if grid_cols < 1:
        raise ValueError("grid_cols must be >= 1")
    n = M.shape[1]
    grid_rows = max(1, -(-n // grid_cols))
    lo, hi = (float(M.min()), float(M.max())) if n else (0.0, 0.0)
    if hi > lo:
        pixels = np.rint((M - lo) / (hi - lo) * 255.0).astype(np.uint8)
    else:
        pixels = np.zeros(M.shape, dtype=np.uint8)

    H, W = grid_rows * image_height, grid_cols * image_width
    canvas = np.zeros((H, W), dtype=np.uint8)
    for j in range(n):
        r, c = divmod(j, grid_cols)
        tile = pixels[:, j].reshape((image_height, image_width), order=order)
        canvas[r * image_height:(r + 1) * image_height, c * image_width:(c + 1) * image_width] = tile
    with open(path, "wb") as fh:
        fh.write(f"P5\n{W} {H}\n255\n".encode("ascii"))
        fh.write(canvas.tobytes())
    return H, W
