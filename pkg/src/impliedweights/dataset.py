"""Immutable tabular dataset with typed columns and role bindings.

Data enters the package through :func:`load_csv` or :func:`from_dataframe`
and is frozen into a :class:`Dataset`: an ordered map of typed columns
(numeric or categorical) plus bindings that name which column plays which
role (treatment, outcome, base weights, sampling weights, cluster,
instrument). Missing values are an ingestion error, never imputed; the
downstream balance and weighting computations assume complete data.

CSV contract: RFC-4180, header row required, UTF-8, ``.`` decimal separator.
Column kinds are inferred (every cell numeric-parsable -> numeric, else
categorical) and can be overridden per column with ``type_hints``. The
treatment column is always coerced categorical; its levels are ordered
lexicographically unless an explicit order is supplied, so a 0/1 treatment
gets level "0" (control) first and "1" (treated) second.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .exceptions import DataError

__all__ = ["Column", "Roles", "Dataset", "load_csv", "from_dataframe", "subgroup_counts"]


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Column:
    """One typed column: float64 values, or integer level codes + labels."""

    kind: str  # "numeric" | "categorical"
    values: np.ndarray
    levels: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("numeric", "categorical"):
            raise DataError(f"unknown column kind {self.kind!r}")
        if self.kind == "numeric":
            if not np.all(np.isfinite(self.values)):
                raise DataError("numeric column contains non-finite values")
            if self.levels is not None:
                raise DataError("numeric column must not carry levels")
        else:
            if self.levels is None or len(self.levels) == 0:
                raise DataError("categorical column requires levels")
            codes = self.values
            if codes.size and (codes.min() < 0 or codes.max() >= len(self.levels)):
                raise DataError("categorical codes out of range")
        _freeze(self.values)

    @property
    def n_levels(self) -> int:
        return 0 if self.levels is None else len(self.levels)

    def labels(self) -> np.ndarray:
        """Decode categorical codes back to their string labels."""
        if self.kind != "categorical":
            raise DataError("labels() is only defined for categorical columns")
        return np.asarray(self.levels, dtype=object)[self.values]

    def indicator(self, level: str) -> np.ndarray:
        """0/1 float vector marking rows equal to ``level``."""
        if self.kind != "categorical":
            raise DataError("indicator() is only defined for categorical columns")
        if level not in self.levels:
            raise DataError(f"unknown level {level!r}")
        return (self.values == self.levels.index(level)).astype(float)


@dataclass(frozen=True)
class Roles:
    treatment: str | None = None
    outcome: str | None = None
    base_weights: str | None = None
    sampling_weights: str | None = None
    cluster: str | None = None
    instrument: str | None = None

    def bound(self) -> dict[str, str]:
        return {k: v for k, v in self.__dict__.items() if v is not None}


@dataclass(frozen=True)
class Dataset:
    """Immutable collection of equally long typed columns with role bindings.

    All invariants are enforced at construction; every operation downstream
    is a pure reader, so a Dataset can be shared freely across threads.
    """

    columns: dict[str, Column]
    roles: Roles = field(default_factory=Roles)

    def __post_init__(self):
        if not self.columns:
            raise DataError("empty dataset")
        lengths = {len(c.values) for c in self.columns.values()}
        if len(lengths) != 1:
            raise DataError("columns have differing lengths")
        if lengths == {0}:
            raise DataError("empty dataset")
        for role, name in self.roles.bound().items():
            if name not in self.columns:
                raise DataError(f"{role} column {name!r} absent from dataset")
        if self.roles.treatment is not None:
            treat = self.columns[self.roles.treatment]
            if treat.kind != "categorical":
                raise DataError("treatment column must be categorical")
            counts = np.bincount(treat.values, minlength=treat.n_levels)
            if treat.n_levels < 2:
                raise DataError("treatment has a single level")
            if (counts == 0).any():
                empty = [lv for lv, c in zip(treat.levels, counts) if c == 0]
                raise DataError(f"treatment level(s) with no units: {empty}")
        for role in ("base_weights", "sampling_weights"):
            name = getattr(self.roles, role)
            if name is None:
                continue
            col = self.columns[name]
            if col.kind != "numeric":
                raise DataError(f"{role} column must be numeric")
            if role == "base_weights" and (col.values < 0).any():
                raise DataError("base weights must be nonnegative")
        if self.roles.outcome is not None:
            if self.columns[self.roles.outcome].kind != "numeric":
                raise DataError("outcome column must be numeric")

    @property
    def n_rows(self) -> int:
        return len(next(iter(self.columns.values())).values)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self.columns)

    def column(self, name: str) -> Column:
        try:
            return self.columns[name]
        except KeyError:
            raise DataError(f"no column named {name!r}") from None

    def treatment(self) -> Column:
        if self.roles.treatment is None:
            raise DataError("no treatment column bound")
        return self.columns[self.roles.treatment]

    def role_values(self, role: str) -> np.ndarray | None:
        name = getattr(self.roles, role)
        return None if name is None else self.columns[name].values

    def fit_weights(self) -> np.ndarray:
        """Effective per-unit fitting weight: sampling x base, default 1.

        Sampling weights multiply base weights in every weighted sum the
        package performs (model fitting, target profiles, balance
        statistics); this is the documented convention for their semantics.
        """
        u = np.ones(self.n_rows)
        for role in ("sampling_weights", "base_weights"):
            vals = self.role_values(role)
            if vals is not None:
                u = u * vals
        return u

    def with_roles(self, **bindings: str | None) -> "Dataset":
        """Return a new Dataset with updated role bindings (re-validated)."""
        return Dataset(self.columns, replace(self.roles, **bindings))

    def to_frame(self) -> pd.DataFrame:
        data = {}
        for name, col in self.columns.items():
            data[name] = col.labels() if col.kind == "categorical" else col.values
        return pd.DataFrame(data)

    def to_csv(self, path) -> None:
        """Write the dataset; numeric cells use shortest round-trip reprs."""
        frame = self.to_frame()
        for name, col in self.columns.items():
            if col.kind == "numeric":
                frame[name] = [repr(float(v)) for v in col.values]
        frame.to_csv(path, index=False)


def subgroup_counts(ds: Dataset) -> dict[str, int]:
    """Units per treatment level, keyed by level label; sums to n_rows."""
    treat = ds.treatment()
    counts = np.bincount(treat.values, minlength=treat.n_levels)
    return {level: int(c) for level, c in zip(treat.levels, counts)}


def _parse_numeric(raw: np.ndarray, name: str):
    """Try to parse an object array of strings as floats.

    Returns (values, ok). A missing cell raises; an unparsable cell just
    reports failure so the caller can fall back to categorical, unless the
    column was explicitly hinted numeric (handled by the caller).
    """
    out = np.empty(len(raw))
    for i, cell in enumerate(raw):
        try:
            out[i] = float(cell)
        except (TypeError, ValueError):
            return None, False
        if not math.isfinite(out[i]):
            raise DataError(f"non-finite value {cell!r} in column {name!r} (row {i})")
    return out, True


def _categorical_from_labels(labels: np.ndarray, name: str, order=None) -> Column:
    uniq = sorted(set(labels.tolist()))
    if order is not None:
        missing = set(uniq) - set(order)
        if missing:
            raise DataError(f"level order for {name!r} misses levels {sorted(missing)}")
        uniq = [lv for lv in order if lv in set(uniq)]
    index = {lv: i for i, lv in enumerate(uniq)}
    codes = np.fromiter((index[v] for v in labels), dtype=np.int64, count=len(labels))
    return Column("categorical", codes, tuple(uniq))


def _canonical_label(cell: str) -> str:
    """Label for a cell of a numeric column coerced categorical: 1.0 -> "1"."""
    try:
        f = float(cell)
    except (TypeError, ValueError):
        return str(cell)
    if math.isfinite(f) and f == int(f):
        return str(int(f))
    return str(cell)


def _build_columns(raw: dict[str, np.ndarray], type_hints, level_orders, roles: Roles):
    type_hints = dict(type_hints or {})
    level_orders = dict(level_orders or {})
    for hinted in type_hints:
        if hinted not in raw:
            raise DataError(f"type hint for unknown column {hinted!r}")
    columns: dict[str, Column] = {}
    for name, cells in raw.items():
        for i, cell in enumerate(cells):
            if cell is None or (isinstance(cell, float) and math.isnan(cell)) or cell == "":
                raise DataError(f"missing value in column {name!r} (row {i})")
        cells = np.asarray([str(c) for c in cells], dtype=object)
        hint = type_hints.get(name)
        if name == roles.treatment:
            labels = np.asarray([_canonical_label(c) for c in cells], dtype=object)
            columns[name] = _categorical_from_labels(labels, name, level_orders.get(name))
            continue
        values, ok = _parse_numeric(cells, name)
        if hint == "numeric":
            if not ok:
                raise DataError(f"column {name!r} hinted numeric but has unparsable cells")
            columns[name] = Column("numeric", values)
        elif hint == "categorical" or not ok:
            columns[name] = _categorical_from_labels(cells, name, level_orders.get(name))
        else:
            columns[name] = Column("numeric", values)
    return columns


def load_csv(path, type_hints=None, level_orders=None, **roles) -> Dataset:
    """Load an RFC-4180 CSV (header required) into a Dataset.

    Parameters
    ----------
    path : str or path-like
        CSV file with a header row.
    type_hints : dict, optional
        Map column name -> "numeric" | "categorical", overriding inference.
    level_orders : dict, optional
        Map column name -> explicit level order for categorical columns.
    **roles
        Role bindings: ``treatment=``, ``outcome=``, ``base_weights=``,
        ``sampling_weights=``, ``cluster=``, ``instrument=``.
    """
    role_spec = Roles(**roles)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skip_blank_lines=True)
    except FileNotFoundError:
        raise DataError(f"no such file: {path}") from None
    except pd.errors.EmptyDataError:
        raise DataError("empty dataset") from None
    if frame.shape[0] == 0:
        raise DataError("empty dataset")
    raw = {str(name): frame[name].to_numpy(dtype=object) for name in frame.columns}
    return Dataset(_build_columns(raw, type_hints, level_orders, role_spec), role_spec)


def from_dataframe(frame: pd.DataFrame, type_hints=None, level_orders=None, **roles) -> Dataset:
    """Build a Dataset from a pandas DataFrame (same inference as load_csv)."""
    role_spec = Roles(**roles)
    if frame.shape[0] == 0 or frame.shape[1] == 0:
        raise DataError("empty dataset")
    raw = {}
    for name in frame.columns:
        series = frame[name]
        if series.isna().any():
            row = int(series.isna().to_numpy().argmax())
            raise DataError(f"missing value in column {name!r} (row {row})")
        raw[str(name)] = series.to_numpy(dtype=object)
    return Dataset(_build_columns(raw, type_hints, level_orders, role_spec), role_spec)


def coerce_categorical(ds: Dataset, name: str, order=None) -> Dataset:
    """Rebuild ``name`` as a categorical column (integral floats -> "1")."""
    col = ds.column(name)
    if col.kind == "categorical":
        return ds
    labels = np.asarray(
        [str(int(v)) if float(v) == int(v) else repr(float(v)) for v in col.values],
        dtype=object,
    )
    columns = dict(ds.columns)
    columns[name] = _categorical_from_labels(labels, name, order)
    return Dataset(columns, ds.roles)


def as_dataset(data, **roles) -> Dataset:
    """Coerce DataFrames to Dataset; rebind roles on existing Datasets.

    Validation helper used by the estimator API so it composes with plain
    pandas inputs. Only roles explicitly given (not None) are rebound.
    """
    bindings = {k: v for k, v in roles.items() if v is not None}
    if isinstance(data, Dataset):
        return data.with_roles(**bindings) if bindings else data
    if isinstance(data, pd.DataFrame):
        return from_dataframe(data, **bindings)
    raise DataError(f"unsupported data type {type(data).__name__}; expected Dataset or DataFrame")
