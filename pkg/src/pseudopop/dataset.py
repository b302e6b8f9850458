"""Multi-study dataset container, CSV ingestion, and validation.

A dataset bundles, for N subjects: the study membership (1..J), the group
membership (1..K), a covariate matrix X (N x p, continuous or 0/1 binary,
factors pre-expanded to dummies), and an outcome matrix Y (N x L).
Validation enforces positivity: every study/group cell must contain at
least one subject, and no entry may be non-finite. Covariates are used
exactly as supplied; no centering, scaling, or dummy expansion happens
here, and missing values are rejected rather than imputed.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatchError,
    EmptyCellError,
    MissingColumnError,
    NonFiniteValueError,
    ValidationError,
)

_INT_LABEL = re.compile(r"^[+-]?\d+$")


@dataclass(frozen=True)
class GroupPrevalence:
    """Relative group prevalences of the larger natural population.

    A strictly positive probability vector of length K summing to 1
    (tolerance 1e-12).
    """

    theta: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        object.__setattr__(self, "theta", theta)
        if theta.ndim != 1 or theta.size == 0:
            raise ValidationError("group prevalences must be a nonempty vector")
        if not np.all(np.isfinite(theta)) or np.any(theta <= 0):
            raise ValidationError("group prevalences must be strictly positive")
        if abs(theta.sum() - 1.0) > 1e-12:
            raise ValidationError(
                f"group prevalences must sum to 1 (got {theta.sum()!r})"
            )

    @property
    def n_groups(self) -> int:
        return self.theta.size


@dataclass
class Dataset:
    """Validated multi-study, multi-group dataset.

    Attributes:
        study: N study labels in {1..J}; every study occupied.
        group: N group labels in {1..K}; every group occupied.
        covariates: N x p float matrix.
        outcomes: N x L float matrix.
        study_labels: original input labels, indexed by study - 1.
        group_labels: original input labels, indexed by group - 1.
    """

    study: np.ndarray
    group: np.ndarray
    covariates: np.ndarray
    outcomes: np.ndarray
    study_labels: tuple[str, ...] = field(default=())
    group_labels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        self.study = np.asarray(self.study, dtype=np.int64)
        self.group = np.asarray(self.group, dtype=np.int64)
        self.covariates = np.atleast_2d(np.asarray(self.covariates, dtype=float))
        self.outcomes = np.atleast_2d(np.asarray(self.outcomes, dtype=float))
        n = self.study.shape[0]
        if n == 0:
            raise ValidationError("dataset has no rows")
        if (
            self.group.shape[0] != n
            or self.covariates.shape[0] != n
            or self.outcomes.shape[0] != n
        ):
            raise DimensionMismatchError(
                "study, group, covariates, and outcomes must have equal row counts"
            )
        _check_contiguous_labels(self.study, "study")
        _check_contiguous_labels(self.group, "group")
        _check_finite(self.covariates, "covariates")
        _check_finite(self.outcomes, "outcomes")
        counts = cell_counts(self)
        empty = np.argwhere(counts == 0)
        if empty.size:
            s, z = empty[0]
            raise EmptyCellError(int(s) + 1, int(z) + 1)
        if not self.study_labels:
            self.study_labels = tuple(str(j + 1) for j in range(self.n_studies))
        if not self.group_labels:
            self.group_labels = tuple(str(k + 1) for k in range(self.n_groups))
        if len(self.study_labels) != self.n_studies:
            raise DimensionMismatchError("study_labels length must equal J")
        if len(self.group_labels) != self.n_groups:
            raise DimensionMismatchError("group_labels length must equal K")

    @property
    def n_subjects(self) -> int:
        return self.study.shape[0]

    @property
    def n_studies(self) -> int:
        return int(self.study.max())

    @property
    def n_groups(self) -> int:
        return int(self.group.max())

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[1]

    @property
    def n_outcomes(self) -> int:
        return self.outcomes.shape[1]

    def take(self, rows: np.ndarray) -> "Dataset":
        """New dataset from a row selection (used by the bootstrap)."""
        return Dataset(
            study=self.study[rows],
            group=self.group[rows],
            covariates=self.covariates[rows],
            outcomes=self.outcomes[rows],
            study_labels=self.study_labels,
            group_labels=self.group_labels,
        )


def _check_contiguous_labels(labels: np.ndarray, name: str) -> None:
    lo = labels.min()
    hi = labels.max()
    if lo < 1:
        raise ValidationError(f"{name} labels must be >= 1 (got {lo})")
    present = np.zeros(hi, dtype=bool)
    present[labels - 1] = True
    if not present.all():
        missing = int(np.flatnonzero(~present)[0]) + 1
        raise ValidationError(
            f"{name} labels must cover 1..{hi}; label {missing} has no subjects"
        )


def _check_finite(mat: np.ndarray, name: str) -> None:
    bad = ~np.isfinite(mat)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise NonFiniteValueError(name, int(row), int(col))


def cell_counts(d: Dataset) -> np.ndarray:
    """J x K matrix of subject counts per study/group cell.

    Entries sum to N; validated datasets have no zero entry.
    """
    counts = np.zeros((int(d.study.max()), int(d.group.max())), dtype=np.int64)
    np.add.at(counts, (d.study - 1, d.group - 1), 1)
    return counts


# ------------------------------------------------------------------ CSV I/O


@dataclass(frozen=True)
class CsvSchema:
    """Column-name conventions for dataset CSV files.

    Covariate and outcome columns are ``<prefix>1 .. <prefix>p`` with
    contiguous integer suffixes starting at 1.
    """

    study: str = "S"
    group: str = "Z"
    covariate_prefix: str = "X"
    outcome_prefix: str = "Y"


DEFAULT_SCHEMA = CsvSchema()


def _map_labels(raw: list[str], name: str) -> tuple[np.ndarray, tuple[str, ...]]:
    """Map raw labels to codes 1..J.

    Labels that already form the contiguous integer set {1..J} are kept
    as-is (so files written by this package round-trip exactly); anything
    else is coded by first appearance.
    """
    stripped = [v.strip() for v in raw]
    if all(_INT_LABEL.match(v) for v in stripped):
        ints = [int(v) for v in stripped]
        hi = max(ints)
        if min(ints) >= 1 and set(ints) == set(range(1, hi + 1)):
            return (
                np.asarray(ints, dtype=np.int64),
                tuple(str(j) for j in range(1, hi + 1)),
            )
    order: dict[str, int] = {}
    codes = np.empty(len(stripped), dtype=np.int64)
    for i, v in enumerate(stripped):
        if v not in order:
            order[v] = len(order) + 1
        codes[i] = order[v]
    return codes, tuple(order.keys())


def _prefixed_columns(header: list[str], prefix: str) -> list[str]:
    pat = re.compile(re.escape(prefix) + r"(\d+)$")
    found = {}
    for col in header:
        m = pat.match(col)
        if m:
            found[int(m.group(1))] = col
    if not found:
        raise MissingColumnError(f"{prefix}1")
    width = max(found)
    for idx in range(1, width + 1):
        if idx not in found:
            raise MissingColumnError(f"{prefix}{idx}")
    return [found[idx] for idx in range(1, width + 1)]


def load_dataset(path: str | Path, schema: CsvSchema | None = None) -> Dataset:
    """Read a dataset from CSV.

    Args:
        path: CSV file with a header row.
        schema: column-name conventions; defaults to S, Z, X1.., Y1..

    Returns:
        A validated Dataset. Study and group labels are re-indexed to
        contiguous 1..J and 1..K; the original labels are retained on the
        dataset for reporting.
    """
    schema = schema or DEFAULT_SCHEMA
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MissingColumnError(schema.study) from None
        header = [h.strip() for h in header]
        rows = [row for row in reader if row]

    for required in (schema.study, schema.group):
        if required not in header:
            raise MissingColumnError(required)
    x_cols = _prefixed_columns(header, schema.covariate_prefix)
    y_cols = _prefixed_columns(header, schema.outcome_prefix)
    col_idx = {c: i for i, c in enumerate(header)}

    def parse_block(cols: list[str], name: str) -> np.ndarray:
        out = np.empty((len(rows), len(cols)))
        for j, c in enumerate(cols):
            k = col_idx[c]
            for i, row in enumerate(rows):
                try:
                    out[i, j] = float(row[k])
                except (ValueError, IndexError):
                    raise NonFiniteValueError(name, i, j) from None
        return out

    study_raw = [row[col_idx[schema.study]] for row in rows]
    group_raw = [row[col_idx[schema.group]] for row in rows]
    study, study_labels = _map_labels(study_raw, "study")
    group, group_labels = _map_labels(group_raw, "group")
    return Dataset(
        study=study,
        group=group,
        covariates=parse_block(x_cols, "covariates"),
        outcomes=parse_block(y_cols, "outcomes"),
        study_labels=study_labels,
        group_labels=group_labels,
    )


def write_dataset(d: Dataset, path: str | Path, schema: CsvSchema | None = None) -> None:
    """Write a dataset to CSV with round-trippable decimal text.

    Floats are written with ``repr`` (shortest exact representation), so
    ``load_dataset(write_dataset(d))`` reproduces every array bit-exactly.
    """
    schema = schema or DEFAULT_SCHEMA
    path = Path(path)
    header = (
        [schema.study, schema.group]
        + [f"{schema.covariate_prefix}{j + 1}" for j in range(d.n_covariates)]
        + [f"{schema.outcome_prefix}{l + 1}" for l in range(d.n_outcomes)]
    )
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(d.n_subjects):
            writer.writerow(
                [d.study_labels[d.study[i] - 1], d.group_labels[d.group[i] - 1]]
                + [repr(v) for v in d.covariates[i]]
                + [repr(v) for v in d.outcomes[i]]
            )
