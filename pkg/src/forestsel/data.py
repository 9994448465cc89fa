"""Typed tabular data, CSV ingestion and fold construction."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._rng import rng_for

logger = logging.getLogger(__name__)

NUMERIC_CONTINUOUS = "numeric-continuous"
NUMERIC_DISCRETE = "numeric-discrete"
CATEGORICAL = "categorical"
KINDS = (NUMERIC_CONTINUOUS, NUMERIC_DISCRETE, CATEGORICAL)

_KIND_ALIASES = {
    "numeric": NUMERIC_CONTINUOUS,
    "num": NUMERIC_CONTINUOUS,
    "continuous": NUMERIC_CONTINUOUS,
    "discrete": NUMERIC_DISCRETE,
    "cat": CATEGORICAL,
    "factor": CATEGORICAL,
}

# largest modality count of the reference variable table (house identifier)
MAX_LEVELS = 41
# integer columns with at most this many distinct values are inferred categorical
INFER_MAX_DISTINCT = 10

_MISSING_TOKENS = {"", "na", "nan", "null", "none"}


class DataError(ValueError):
    """Malformed or inconsistent input data."""


def normalize_kind(kind: str) -> str:
    k = kind.strip().lower()
    k = _KIND_ALIASES.get(k, k)
    if k not in KINDS:
        raise DataError(f"unknown column kind {kind!r}; expected one of {KINDS}")
    return k


@dataclass(frozen=True, eq=False)
class Column:
    """One candidate predictor.

    Numeric columns hold float values; categorical columns hold level
    indices into ``levels``.
    """

    name: str
    kind: str
    values: np.ndarray
    levels: tuple[str, ...] | None = None

    def __post_init__(self):
        kind = normalize_kind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind == CATEGORICAL:
            if self.levels is None:
                raise DataError(f"categorical column {self.name!r} needs a level list")
            vals = np.asarray(self.values, dtype=np.int64)
            if len(self.levels) > MAX_LEVELS:
                raise DataError(
                    f"column {self.name!r} has {len(self.levels)} levels (max {MAX_LEVELS})"
                )
            if vals.size and (vals.min() < 0 or vals.max() >= len(self.levels)):
                raise DataError(f"level index out of range in column {self.name!r}")
            object.__setattr__(self, "levels", tuple(self.levels))
        else:
            vals = np.asarray(self.values, dtype=np.float64)
            if not np.all(np.isfinite(vals)):
                raise DataError(f"non-finite value in numeric column {self.name!r}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL

    def take(self, idx: np.ndarray) -> "Column":
        return Column(self.name, self.kind, self.values[idx], self.levels)

    def labels(self) -> list[str]:
        """Values as text (level names for categorical columns)."""
        if self.is_categorical:
            return [self.levels[i] for i in self.values]
        return [_format_number(v) for v in self.values]


@dataclass(frozen=True, eq=False)
class Dataset:
    columns: tuple[Column, ...]
    target: np.ndarray
    group: np.ndarray | None = None
    truth_mask: np.ndarray | None = None
    row_ids: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        cols = tuple(self.columns)
        object.__setattr__(self, "columns", cols)
        target = np.asarray(self.target)
        if target.ndim != 1 or target.size < 1:
            raise DataError("target must be a non-empty vector")
        if target.dtype.kind == "f":
            if not np.all(np.isfinite(target)) or np.any(target != np.round(target)):
                raise DataError("target values must be integer counts")
        target = target.astype(np.int64)
        if np.any(target < 0):
            raise DataError("target values must be non-negative counts")
        n = target.size
        for c in cols:
            if c.values.shape != (n,):
                raise DataError(f"column {c.name!r} has length {c.values.size}, expected {n}")
        names = [c.name for c in cols]
        if len(set(names)) != len(names):
            raise DataError("duplicate column names")
        target.setflags(write=False)
        object.__setattr__(self, "target", target)
        if self.group is not None:
            group = np.asarray(self.group, dtype=object)
            if group.shape != (n,):
                raise DataError("group labels must have one entry per row")
            object.__setattr__(self, "group", group)
        if self.truth_mask is not None:
            mask = np.asarray(self.truth_mask, dtype=bool)
            if mask.shape != (len(cols),):
                raise DataError("truth_mask needs one entry per column")
            object.__setattr__(self, "truth_mask", mask)
        row_ids = np.arange(n) if self.row_ids is None else np.asarray(self.row_ids, np.int64)
        if row_ids.shape != (n,):
            raise DataError("row_ids must have one entry per row")
        object.__setattr__(self, "row_ids", row_ids)

    @property
    def n(self) -> int:
        return int(self.target.size)

    @property
    def q(self) -> int:
        return len(self.columns)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def kinds(self) -> dict[str, str]:
        return {c.name: c.kind for c in self.columns}

    @cached_property
    def matrix(self) -> np.ndarray:
        """(n, q) float64 design; categorical columns carry level indices."""
        X = np.empty((self.n, self.q), dtype=np.float64)
        for j, c in enumerate(self.columns):
            X[:, j] = c.values
        X.setflags(write=False)
        return X

    @cached_property
    def column_major(self) -> np.ndarray:
        return np.asfortranarray(self.matrix)

    @cached_property
    def column_order(self) -> np.ndarray:
        """(q, n) stable row ordering of every column by value."""
        order = np.argsort(self.matrix, axis=0, kind="stable").T.copy()
        order.setflags(write=False)
        return order

    @cached_property
    def categorical_mask(self) -> np.ndarray:
        return np.array([c.is_categorical for c in self.columns], dtype=np.bool_)

    @property
    def true_variables(self) -> list[str] | None:
        if self.truth_mask is None:
            return None
        return [c.name for c, t in zip(self.columns, self.truth_mask) if t]

    def column(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise KeyError(name)

    def take(self, idx) -> "Dataset":
        """Row subset; level dictionaries are shared with the parent."""
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            columns=tuple(c.take(idx) for c in self.columns),
            target=self.target[idx],
            group=None if self.group is None else self.group[idx],
            truth_mask=self.truth_mask,
            row_ids=self.row_ids[idx],
            meta=self.meta,
        )

    def select(self, names: Iterable[str]) -> "Dataset":
        """Column subset, in the dataset's own column order."""
        wanted = set(names)
        unknown = wanted.difference(self.names)
        if unknown:
            raise DataError(f"unknown variables: {sorted(unknown)}")
        keep = [j for j, c in enumerate(self.columns) if c.name in wanted]
        return Dataset(
            columns=tuple(self.columns[j] for j in keep),
            target=self.target,
            group=self.group,
            truth_mask=None if self.truth_mask is None else self.truth_mask[keep],
            row_ids=self.row_ids,
            meta=self.meta,
        )

    def schema_signature(self) -> list[dict]:
        """Column names, kinds and level lists; what a fitted model needs to see again."""
        out = []
        for c in self.columns:
            entry = {"name": c.name, "kind": c.kind}
            if c.is_categorical:
                entry["levels"] = list(c.levels)
            out.append(entry)
        return out


# ---------------------------------------------------------------- folds


@dataclass(frozen=True, eq=False)
class FoldPlan:
    assignments: np.ndarray
    n_folds: int
    grouped: bool = False

    def __post_init__(self):
        a = np.asarray(self.assignments, dtype=np.int64)
        if a.size and (a.min() < 0 or a.max() >= self.n_folds):
            raise DataError("fold index out of range")
        if np.any(np.bincount(a, minlength=self.n_folds) == 0):
            raise DataError("every fold needs at least one observation")
        a.setflags(write=False)
        object.__setattr__(self, "assignments", a)

    def test_indices(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == k)

    def train_indices(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != k)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.n_folds)


def make_folds(data: Dataset, n_folds: int, grouped: bool = False, seed: int = 0) -> FoldPlan:
    """Assign rows to ``n_folds`` folds.

    Ungrouped: shuffled round-robin, so fold sizes differ by at most one.
    Grouped: whole groups go to folds, largest group first, each to the
    currently lightest fold (lowest fold index on ties). Group order among
    equal-size groups is shuffled by ``seed``.
    """
    if n_folds < 2:
        raise DataError("need at least 2 folds")
    rng = rng_for(seed, "folds")
    assignments = np.empty(data.n, dtype=np.int64)
    if not grouped:
        if n_folds > data.n:
            raise DataError(f"{n_folds} folds requested for {data.n} observations")
        order = rng.permutation(data.n)
        assignments[order] = np.arange(data.n) % n_folds
        return FoldPlan(assignments, n_folds, grouped=False)

    if data.group is None:
        raise DataError("grouped folds need group labels")
    labels, inverse, counts = _unique_in_order(data.group)
    if n_folds > len(labels):
        raise DataError(f"{n_folds} folds requested for {len(labels)} groups")
    shuffled = rng.permutation(len(labels))
    order = sorted(shuffled, key=lambda g: -counts[g])
    load = np.zeros(n_folds, dtype=np.int64)
    group_fold = np.empty(len(labels), dtype=np.int64)
    for g in order:
        k = int(np.argmin(load))
        group_fold[g] = k
        load[k] += counts[g]
    assignments[:] = group_fold[inverse]
    return FoldPlan(assignments, n_folds, grouped=True)


def _unique_in_order(values):
    index: dict = {}
    inverse = np.empty(len(values), dtype=np.int64)
    for i, v in enumerate(values):
        inverse[i] = index.setdefault(v, len(index))
    labels = list(index)
    counts = np.bincount(inverse, minlength=len(labels))
    return labels, inverse, counts


def split_by_fold(data: Dataset, plan: FoldPlan, k: int) -> tuple[Dataset, Dataset]:
    """(train, test) for fold ``k``; row order preserved within each part."""
    if not 0 <= k < plan.n_folds:
        raise DataError(f"fold {k} out of range [0, {plan.n_folds})")
    if plan.assignments.size != data.n:
        raise DataError("fold plan does not match dataset size")
    return data.take(plan.train_indices(k)), data.take(plan.test_indices(k))


# ---------------------------------------------------------------- CSV


def read_schema(path) -> dict[str, str]:
    """Parse a ``name=kind`` sidecar (blank lines and ``#`` comments ignored)."""
    schema = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected name=kind")
        name, kind = line.split("=", 1)
        schema[name.strip()] = normalize_kind(kind)
    return schema


def write_schema(schema: Mapping[str, str], path) -> None:
    text = "".join(f"{name}={kind}\n" for name, kind in schema.items())
    Path(path).write_text(text, encoding="utf-8")


def read_table(path) -> tuple[list[str], list[list[str]]]:
    """Header and rows of a CSV file; leading ``#`` comment lines are skipped."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with path.open(newline="", encoding="utf-8") as fh:
        lines = (line for line in fh if not line.startswith("#"))
        reader = csv.reader(lines)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        header = [h.strip() for h in header]
        rows = []
        for row in reader:
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}: row {len(rows) + 1} has {len(row)} fields, header has {len(header)}"
                )
            rows.append([cell.strip() for cell in row])
    if not rows:
        raise DataError(f"{path}: no data rows")
    if len(set(header)) != len(header):
        raise DataError(f"{path}: duplicate column names in header")
    return header, rows


def _is_missing(token: str) -> bool:
    return token.strip().lower() in _MISSING_TOKENS


def _parse_float(token: str) -> float | None:
    try:
        v = float(token)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def infer_kind(tokens: Sequence[str]) -> str:
    """All-integer with at most 10 distinct values -> categorical; else numeric."""
    nums = [_parse_float(t) for t in tokens]
    if any(v is None for v in nums):
        return CATEGORICAL
    integral = all(v == int(v) for v in nums)
    if integral and len(set(nums)) <= INFER_MAX_DISTINCT:
        return CATEGORICAL
    return NUMERIC_DISCRETE if integral else NUMERIC_CONTINUOUS


def build_column(name: str, kind: str, tokens: Sequence[str]) -> Column:
    kind = normalize_kind(kind)
    if kind == CATEGORICAL:
        index: dict[str, int] = {}
        codes = [index.setdefault(t, len(index)) for t in tokens]
        return Column(name, kind, np.array(codes, dtype=np.int64), tuple(index))
    values = np.empty(len(tokens))
    for i, t in enumerate(tokens):
        v = _parse_float(t)
        if v is None:
            raise DataError(f"row {i + 1}, column {name!r}: non-numeric value {t!r}")
        if kind == NUMERIC_DISCRETE and v != int(v):
            raise DataError(f"row {i + 1}, column {name!r}: non-integer value {t!r}")
        values[i] = v
    return Column(name, kind, values)


def ingest_csv(
    path,
    schema: Mapping[str, str] | str | Path | None,
    target_name: str,
    group_name: str | None = None,
    exclude: Iterable[str] = (),
    group_as_predictor: bool = False,
    truth: Iterable[str] | None = None,
) -> Dataset:
    """Load a CSV into a :class:`Dataset`.

    ``schema`` maps column names to kinds (or is a path to a ``name=kind``
    sidecar). Columns it does not mention get an inferred kind, recorded in
    ``meta["inferred_kinds"]``. The target and group columns, and anything
    in ``exclude``, are not predictors (unless ``group_as_predictor``).
    """
    if isinstance(schema, (str, Path)):
        schema = read_schema(schema)
    schema = {k: normalize_kind(v) for k, v in (schema or {}).items()}
    header, rows = read_table(path)
    if target_name not in header:
        raise DataError(f"target column {target_name!r} not found in {path}")
    if group_name is not None and group_name not in header:
        raise DataError(f"group column {group_name!r} not found in {path}")
    exclude = set(exclude)
    unknown = exclude.difference(header)
    if unknown:
        raise DataError(f"excluded columns not in file: {sorted(unknown)}")

    for i, row in enumerate(rows, 1):
        for name, token in zip(header, row):
            if _is_missing(token):
                raise DataError(f"row {i}, column {name!r}: missing value")

    ti = header.index(target_name)
    target = np.empty(len(rows), dtype=np.int64)
    for i, row in enumerate(rows, 1):
        v = _parse_float(row[ti])
        if v is None or v != int(v) or v < 0:
            raise DataError(
                f"row {i}: target {target_name!r} must be a non-negative integer, got {row[ti]!r}"
            )
        target[i - 1] = int(v)

    group = None
    if group_name is not None:
        gi = header.index(group_name)
        group = np.array([row[gi] for row in rows], dtype=object)

    skip = {target_name} | exclude
    if group_name is not None and not group_as_predictor:
        skip.add(group_name)
    columns, inferred = [], {}
    for j, name in enumerate(header):
        if name in skip:
            continue
        tokens = [row[j] for row in rows]
        kind = schema.get(name)
        if kind is None:
            kind = infer_kind(tokens)
            inferred[name] = kind
        columns.append(build_column(name, kind, tokens))
    if inferred:
        logger.info("inferred column kinds: %s", inferred)

    truth_mask = None
    if truth is not None:
        truth = set(truth)
        missing = truth.difference(c.name for c in columns)
        if missing:
            raise DataError(f"true variables not among predictors: {sorted(missing)}")
        truth_mask = np.array([c.name in truth for c in columns])

    return Dataset(
        columns=tuple(columns),
        target=target,
        group=group,
        truth_mask=truth_mask,
        meta={"source": str(path), "inferred_kinds": inferred},
    )


def _format_number(v: float) -> str:
    return str(int(v)) if float(v).is_integer() and abs(v) < 2**53 else repr(float(v))


def write_csv(data: Dataset, path, target_name: str = "y", group_name: str | None = None) -> None:
    """Write predictors, then target (and group), one row per observation."""
    header = data.names + [target_name]
    cols = [c.labels() for c in data.columns] + [[str(int(v)) for v in data.target]]
    if group_name is not None:
        if data.group is None:
            raise DataError("dataset has no group labels to write")
        header.append(group_name)
        cols.append([str(g) for g in data.group])
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(zip(*cols))


def add_pairwise_interactions(data: Dataset) -> Dataset:
    """Append ``a:b`` product columns for every pair of categorical columns.

    Pairs whose product has more than MAX_LEVELS observed levels are skipped.
    """
    cats = [c for c in data.columns if c.is_categorical]
    extra = []
    for i, a in enumerate(cats):
        for b in cats[i + 1 :]:
            tokens = [f"{x}:{y}" for x, y in zip(a.labels(), b.labels())]
            if len(set(tokens)) > MAX_LEVELS:
                logger.warning("skipping interaction %s:%s (too many levels)", a.name, b.name)
                continue
            extra.append(build_column(f"{a.name}:{b.name}", CATEGORICAL, tokens))
    truth = data.truth_mask
    if truth is not None:
        truth = np.concatenate([truth, np.zeros(len(extra), dtype=bool)])
    return Dataset(
        columns=data.columns + tuple(extra),
        target=data.target,
        group=data.group,
        truth_mask=truth,
        row_ids=data.row_ids,
        meta=data.meta,
    )


def quartile_classes(values: Sequence[float]) -> tuple[list[str], tuple[float, float, float]]:
    """Classes Q1..Q4 from the sample quartiles; a value on a boundary goes to the lower class."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise DataError("cannot recode an empty column")
    bounds = tuple(float(b) for b in np.quantile(v, [0.25, 0.5, 0.75]))
    idx = np.searchsorted(np.asarray(bounds), v, side="left")
    return [f"Q{i + 1}" for i in idx], bounds
