"""Observed-data container, CSV ingestion, and deterministic splits.

The observed unit is a triple (covariates, binary treatment, outcome) with an
optional small-integer group code used by fairness constraints. Data are
immutable after construction and validated eagerly: no missing values, no
imputation, treatments exactly 0/1.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ._rng import substream

__all__ = [
    "DataError",
    "Dataset",
    "FoldAssignment",
    "load_csv",
    "save_csv",
    "make_folds",
    "split_train_test",
]


class DataError(ValueError):
    """Raised for malformed input data or invalid split parameters."""


def _as_float_vector(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise DataError(f"{name} must be one-dimensional")
    return arr


@dataclass(frozen=True)
class Dataset:
    """Immutable sample of units (X, A, Y) with optional group codes S.

    Attributes:
        X: covariate matrix, shape (n, p), finite floats.
        A: treatment vector, entries exactly 0 or 1.
        Y: outcome vector, finite floats.
        S: optional group codes in {0, ..., n_groups-1}.
        column_names: names for the columns of X (defaults to x1..xp).
        n_groups: number of group levels; inferred from S when omitted, in
            which case every level must be present. Subsets keep the parent's
            level count even if a level drops out of the subset.
    """

    X: np.ndarray
    A: np.ndarray
    Y: np.ndarray
    S: Optional[np.ndarray] = None
    column_names: Optional[tuple[str, ...]] = None
    n_groups: Optional[int] = field(default=None)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim != 2:
            raise DataError("X must be a 2-d matrix")
        object.__setattr__(self, "X", X)
        n, p = X.shape
        if n < 1:
            raise DataError("dataset is empty")
        if p < 1:
            raise DataError("at least one covariate column is required")
        if not np.all(np.isfinite(X)):
            raise DataError("non-finite covariate value")

        A = _as_float_vector(self.A, "A")
        if A.shape[0] != n:
            raise DataError("A length does not match X")
        if not np.all((A == 0.0) | (A == 1.0)):
            raise DataError("treatment outside {0,1}")
        object.__setattr__(self, "A", A.astype(np.int64))

        Y = _as_float_vector(self.Y, "Y")
        if Y.shape[0] != n:
            raise DataError("Y length does not match X")
        if not np.all(np.isfinite(Y)):
            raise DataError("non-finite outcome value")
        object.__setattr__(self, "Y", Y)

        if self.S is not None:
            S = np.asarray(self.S)
            if S.shape != (n,):
                raise DataError("S length does not match X")
            if not np.all(np.isfinite(np.asarray(S, dtype=np.float64))):
                raise DataError("non-finite group code")
            S = S.astype(np.int64)
            if np.any(S < 0):
                raise DataError("negative group code")
            if self.n_groups is None:
                levels = np.unique(S)
                G = int(levels[-1]) + 1
                if G < 2:
                    raise DataError("sensitive attribute needs at least 2 groups")
                if levels.shape[0] != G:
                    raise DataError("group codes must be dense, starting at 0")
                object.__setattr__(self, "n_groups", G)
            else:
                if int(S.max(initial=0)) >= self.n_groups:
                    raise DataError("group code outside declared range")
            object.__setattr__(self, "S", S)
        elif self.n_groups is not None:
            raise DataError("n_groups given without S")

        if self.column_names is None:
            object.__setattr__(self, "column_names", tuple(f"x{j + 1}" for j in range(p)))
        else:
            names = tuple(self.column_names)
            if len(names) != p:
                raise DataError("column_names length does not match X")
            object.__setattr__(self, "column_names", names)

        self.X.setflags(write=False)
        self.A.setflags(write=False)
        self.Y.setflags(write=False)
        if self.S is not None:
            self.S.setflags(write=False)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def column(self, name: str) -> np.ndarray:
        """Feature column by name; "s" addresses the sensitive attribute."""
        if name == "s":
            if self.S is None:
                raise DataError("dataset has no sensitive attribute")
            return self.S.astype(np.float64)
        try:
            j = self.column_names.index(name)
        except ValueError:
            raise DataError(f"unknown column {name!r}") from None
        return self.X[:, j]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            X=self.X[idx],
            A=self.A[idx],
            Y=self.Y[idx],
            S=None if self.S is None else self.S[idx],
            column_names=self.column_names,
            n_groups=self.n_groups,
        )


@dataclass(frozen=True)
class FoldAssignment:
    """Balanced K-fold partition of n units, a pure function of (n, K, seed)."""

    n: int
    K: int
    fold_of: np.ndarray
    seed: int

    def indices(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == k)

    def complement(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != k)


def make_folds(n: int, K: int, seed: int) -> FoldAssignment:
    """Uniformly shuffled fold labels with sizes differing by at most one."""
    if K < 2:
        raise DataError("K must be at least 2")
    if K > n:
        raise DataError("K cannot exceed the number of units")
    rng = substream(seed, 0xF01D)
    perm = rng.permutation(n)
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[perm] = np.arange(n) % K
    fold_of.setflags(write=False)
    return FoldAssignment(n=n, K=K, fold_of=fold_of, seed=seed)


def split_train_test(ds: Dataset, n_train: int, seed: int) -> tuple[Dataset, Dataset]:
    """Disjoint row partition into (train, test), reproducible from seed."""
    if not 1 <= n_train < ds.n:
        raise DataError(f"n_train must be in [1, {ds.n - 1}]")
    rng = substream(seed, 0x5B11)
    perm = rng.permutation(ds.n)
    return ds.subset(perm[:n_train]), ds.subset(perm[n_train:])


def _parse_cell(text: str, row: int, col: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"non-numeric cell {text!r} in column {col!r}, row {row}") from None
    if not np.isfinite(value):
        raise DataError(f"non-finite value in column {col!r}, row {row}")
    return value


def load_csv(
    path,
    *,
    outcome: str,
    treatment: str,
    sensitive: Optional[str] = None,
    covariates: Optional[Sequence[str]] = None,
) -> Dataset:
    """Load a dataset from a headed CSV file.

    Leading lines starting with ``#`` (metadata records written by this
    package) are skipped. Group codes in the sensitive column are re-indexed
    densely from 0 in increasing order of the original values.

    Args:
        path: CSV file path.
        outcome: name of the outcome column.
        treatment: name of the treatment column (values must be 0 or 1).
        sensitive: optional name of the group-code column.
        covariates: covariate column names; defaults to every remaining column
            in file order.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    if not lines:
        raise DataError(f"empty file: {path}")
    reader = csv.reader(lines)
    header = next(reader)
    rows = [r for r in reader if r]
    if not rows:
        raise DataError("empty dataset")

    index = {name: j for j, name in enumerate(header)}
    for name in (outcome, treatment) + ((sensitive,) if sensitive else ()):
        if name not in index:
            raise DataError(f"missing column {name!r}")
    if covariates is None:
        reserved = {outcome, treatment} | ({sensitive} if sensitive else set())
        covariates = [c for c in header if c not in reserved]
    else:
        covariates = list(covariates)
        for name in covariates:
            if name not in index:
                raise DataError(f"missing column {name!r}")
    if not covariates:
        raise DataError("no covariate columns")

    n = len(rows)
    Y = np.empty(n)
    A = np.empty(n)
    X = np.empty((n, len(covariates)))
    S_raw = np.empty(n) if sensitive else None
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise DataError(f"row {i} has {len(row)} fields, expected {len(header)}")
        Y[i] = _parse_cell(row[index[outcome]], i, outcome)
        A[i] = _parse_cell(row[index[treatment]], i, treatment)
        if S_raw is not None:
            S_raw[i] = _parse_cell(row[index[sensitive]], i, sensitive)
        for j, name in enumerate(covariates):
            X[i, j] = _parse_cell(row[index[name]], i, name)

    S = None
    if S_raw is not None:
        levels = np.unique(S_raw)
        if levels.shape[0] < 2:
            raise DataError("sensitive attribute needs at least 2 groups")
        S = np.searchsorted(levels, S_raw)
    return Dataset(X=X, A=A, Y=Y, S=S, column_names=tuple(covariates))


def save_csv(ds: Dataset, path, *, extra: Optional[dict[str, np.ndarray]] = None,
             meta: Optional[str] = None) -> None:
    """Write a dataset as CSV (columns y,a[,s],x*, then any extras).

    Floats are written with ``repr`` so a reload reproduces them bitwise.
    ``meta``, when given, is emitted first as a single ``#`` comment line.
    """
    extra = extra or {}
    header = ["y", "a"] + (["s"] if ds.S is not None else []) + list(ds.column_names)
    header += list(extra.keys())
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if meta is not None:
            fh.write(f"# {meta}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(ds.n):
            row = [repr(float(ds.Y[i])), str(int(ds.A[i]))]
            if ds.S is not None:
                row.append(str(int(ds.S[i])))
            row += [repr(float(v)) for v in ds.X[i]]
            row += [repr(float(extra[k][i])) for k in extra]
            writer.writerow(row)
