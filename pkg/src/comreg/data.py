"""Dataset ingestion and design-matrix construction.

CSV convention: UTF-8, comma separated, header row, '.' decimal
separator.  The intercept column of ones is always prepended and is
always the first column of X.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg

RANK_RTOL = 1e-10

_TRANSFORMS = {
    "identity": lambda v: v,
    "log": np.log,
}


class DataError(ValueError):
    """Malformed input data (parse failure, invalid response, bad design)."""


@dataclass(frozen=True)
class Dataset:
    """Observed counts plus covariate rows with a leading intercept column."""

    y: np.ndarray
    X: np.ndarray
    names: tuple[str, ...]
    response_name: str = "y"

    def __post_init__(self):
        y = np.asarray(self.y)
        X = np.asarray(self.X, dtype=float)
        object.__setattr__(self, "y", np.asarray(y, dtype=np.int64))
        object.__setattr__(self, "X", X)
        n, ncol = X.shape
        if len(y) != n:
            raise DataError(f"y has {len(y)} rows but X has {n}")
        if not np.all(np.isfinite(X)):
            raise DataError("X contains non-finite entries")
        yf = np.asarray(y, dtype=float)
        if np.any(yf < 0) or np.any(yf != np.floor(yf)) or not np.all(np.isfinite(yf)):
            bad = int(np.flatnonzero((yf < 0) | (yf != np.floor(yf)))[0])
            raise DataError(
                f"response must be nonnegative integers; row {bad} has value {yf[bad]}"
            )
        if len(self.names) != ncol:
            raise DataError("names length must match X column count")
        if not np.allclose(X[:, 0], 1.0):
            raise DataError("first column of X must be the intercept column of ones")
        if n < ncol + 1:
            raise DataError(
                f"need at least p+2 observations ({ncol + 1}) for {ncol} columns, got {n}"
            )
        _check_full_rank(X)
        X.setflags(write=False)
        self.y.setflags(write=False)

    @property
    def n_obs(self) -> int:
        return self.X.shape[0]

    @property
    def n_cols(self) -> int:
        return self.X.shape[1]


def _check_full_rank(X: np.ndarray) -> None:
    # Pivoted QR: relative magnitude of the trailing R diagonal flags
    # (near-)collinear columns deterministically.
    _, R, _ = scipy.linalg.qr(X, pivoting=True, mode="economic")
    diag = np.abs(np.diag(R))
    if diag[0] == 0 or diag[-1] < RANK_RTOL * diag[0]:
        raise DataError("design matrix is rank deficient (collinear columns)")


def load_csv(
    path: str | Path,
    response: str,
    transforms: Mapping[str, str] | None = None,
    covariates: Sequence[str] | None = None,
) -> Dataset:
    """Load a Dataset from CSV.

    transforms maps column name -> {'identity', 'log'}; by default every
    non-response column enters untransformed.  covariates restricts (and
    orders) the columns used; default is all non-response columns.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    transforms = dict(transforms or {})

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if response not in header:
            raise DataError(f"{path}: response column {response!r} not in header {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(cell.strip() == "" for cell in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            parsed = []
            for col, cell in zip(header, row):
                cell = cell.strip()
                if cell == "":
                    raise DataError(f"{path}:{lineno}: missing value in column {col!r}")
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}:{lineno}: non-numeric value {cell!r} in column {col!r}"
                    ) from None
            rows.append(parsed)

    if not rows:
        raise DataError(f"{path}: no data rows")
    table = np.array(rows, dtype=float)
    col = {name: table[:, j] for j, name in enumerate(header)}

    yf = col[response]
    if np.any(yf < 0) or np.any(yf != np.floor(yf)):
        bad = int(np.flatnonzero((yf < 0) | (yf != np.floor(yf)))[0])
        raise DataError(
            f"{path}: response {response!r} must be nonnegative integers; "
            f"data row {bad + 1} has value {yf[bad]:g}"
        )

    if covariates is None:
        covariates = [name for name in header if name != response]
    unknown = set(transforms) - set(header)
    if unknown:
        raise DataError(f"{path}: transforms refer to unknown columns {sorted(unknown)}")

    cols = [np.ones(len(table))]
    names = ["intercept"]
    for name in covariates:
        if name not in col:
            raise DataError(f"{path}: covariate {name!r} not in header")
        tag = transforms.get(name, "identity")
        if tag not in _TRANSFORMS:
            raise DataError(f"unknown transform {tag!r} for column {name!r}")
        values = col[name]
        if tag == "log" and np.any(values <= 0):
            bad = int(np.flatnonzero(values <= 0)[0])
            raise DataError(
                f"{path}: log transform of {name!r} needs positive values; "
                f"data row {bad + 1} has {values[bad]:g}"
            )
        cols.append(_TRANSFORMS[tag](values))
        names.append(name if tag == "identity" else f"log_{name}")

    return Dataset(
        y=yf.astype(np.int64),
        X=np.column_stack(cols),
        names=tuple(names),
        response_name=response,
    )


def write_csv(ds: Dataset, path: str | Path) -> None:
    """Write a Dataset back to CSV (response column first, no intercept)."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([ds.response_name, *ds.names[1:]])
        for i in range(ds.n_obs):
            writer.writerow(
                [int(ds.y[i]), *(repr(float(v)) for v in ds.X[i, 1:])]
            )


def linear_predictor(ds: Dataset, beta: np.ndarray) -> np.ndarray:
    """eta = X beta rowwise; exp(eta_i) is the per-observation lambda_i."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (ds.n_cols,):
        raise ValueError(f"beta must have length {ds.n_cols}, got shape {beta.shape}")
    return ds.X @ beta
