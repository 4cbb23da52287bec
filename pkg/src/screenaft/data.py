"""Dataset model, validation and CSV ingestion for three-state screening data.

One observation is a screened individual: covariates z, censoring state
delta in {1, 2, 3} and the most recent screening interval (l, r].  delta = 1
means no event before the last visit (r = +inf), delta = 2 an onset event
whose progression ran past r, delta = 3 onset and progression inside the
same interval.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ValidationError",
    "SchemaError",
    "Observation",
    "Dataset",
    "load_csv",
    "write_csv",
    "standardize",
]


class ValidationError(ValueError):
    """An observation violates a dataset invariant; carries the row index."""

    def __init__(self, message, row=None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class SchemaError(ValueError):
    """The CSV header or schema mapping is unusable."""


@dataclass(frozen=True)
class Observation:
    """One screened individual (intercept never stored in z)."""

    z: np.ndarray
    delta: int
    l: float
    r: float


def _validate_row(z, delta, l, r, row=None):
    if delta not in (1, 2, 3):
        raise ValidationError(f"delta must be 1, 2 or 3, got {delta}", row)
    if not np.all(np.isfinite(z)):
        raise ValidationError("covariates must be finite", row)
    if not (l >= 0 and not math.isnan(l)):
        raise ValidationError(f"l must be >= 0, got {l}", row)
    if math.isnan(r) or not l < r:
        raise ValidationError(f"l < r violated: l={l}, r={r}", row)
    if delta == 1 and not math.isinf(r):
        raise ValidationError(f"delta=1 requires r=inf, got r={r}", row)
    if delta != 1 and math.isinf(r):
        raise ValidationError(f"delta={delta} requires finite r", row)


class Dataset:
    """Immutable columnar store of observations plus design-column subsets.

    ``design_x`` and ``design_t`` select the covariate columns entering the
    onset and progression models; the intercept is implicit as the first
    design column and is never part of z.
    """

    def __init__(self, z, delta, l, r, covariate_names=None, design_x=None,
                 design_t=None):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        self.delta = np.asarray(delta, dtype=np.int8)
        self.l = np.asarray(l, dtype=float)
        self.r = np.asarray(r, dtype=float)
        n = self.delta.shape[0]
        if z.shape[0] != n and z.size == 0:
            z = np.empty((n, 0))
        self.z = z
        if not (self.z.shape[0] == self.l.shape[0] == self.r.shape[0] == n):
            raise ValidationError("column lengths differ")
        p = self.z.shape[1]
        names = list(covariate_names) if covariate_names is not None else [
            f"z{j + 1}" for j in range(p)
        ]
        if len(names) != p:
            raise SchemaError(f"{len(names)} covariate names for {p} columns")
        self.covariate_names = tuple(names)
        self.design_x = self._check_design(design_x, p)
        self.design_t = self._check_design(design_t, p)
        self._validate_columns()
        self.z.setflags(write=False)
        self.delta.setflags(write=False)
        self.l.setflags(write=False)
        self.r.setflags(write=False)

    def _validate_columns(self):
        # Vectorized row validation; on failure re-check the first offending
        # row for the precise message.
        with np.errstate(invalid="ignore"):
            bad = ~np.isin(self.delta, (1, 2, 3))
            bad |= ~np.all(np.isfinite(self.z), axis=1) if self.p else False
            bad |= ~(self.l >= 0)
            bad |= ~(self.l < self.r)
            bad |= np.isnan(self.r)
            bad |= (self.delta == 1) & np.isfinite(self.r)
            bad |= (self.delta != 1) & ~np.isfinite(self.r)
        if np.any(bad):
            i = int(np.argmax(bad))
            _validate_row(self.z[i], int(self.delta[i]), float(self.l[i]),
                          float(self.r[i]), row=i)
            raise ValidationError("invalid observation", row=i)

    @staticmethod
    def _check_design(design, p):
        if design is None:
            return tuple(range(p))
        design = tuple(int(j) for j in design)
        if any(j < 0 or j >= p for j in design):
            raise SchemaError(f"design indices {design} out of range for p={p}")
        return design

    def __len__(self):
        return int(self.delta.shape[0])

    @property
    def n(self):
        return len(self)

    @property
    def p(self):
        return self.z.shape[1]

    def observation(self, i):
        return Observation(self.z[i].copy(), int(self.delta[i]),
                           float(self.l[i]), float(self.r[i]))

    def observations(self):
        return [self.observation(i) for i in range(len(self))]

    def design_matrix(self, which):
        """Design matrix with implicit leading intercept column."""
        design = self.design_x if which == "x" else self.design_t
        out = np.empty((len(self), 1 + len(design)))
        out[:, 0] = 1.0
        if design:
            out[:, 1:] = self.z[:, design]
        return out

    def param_names(self, which):
        design = self.design_x if which == "x" else self.design_t
        return [f"beta0_{which}"] + [
            f"beta_{which}_{self.covariate_names[j]}" for j in design
        ]

    def check_identifiable(self):
        """Fitting needs at least one delta in {2, 3} row to inform the
        progression-time parameters."""
        if not np.any(self.delta != 1):
            raise ValidationError(
                "no observation with delta in {2, 3}: progression-time "
                "parameters are not identified"
            )

    def summary(self):
        counts = {d: int(np.sum(self.delta == d)) for d in (1, 2, 3)}
        finite_r = self.r[np.isfinite(self.r)]
        return {
            "n": len(self),
            "p": self.p,
            "covariates": list(self.covariate_names),
            "design_x": list(self.design_x),
            "design_t": list(self.design_t),
            "delta_counts": counts,
            "delta_proportions": {d: counts[d] / max(len(self), 1) for d in counts},
            "max_finite_r": float(finite_r.max()) if finite_r.size else None,
        }

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            np.array_equal(self.z, other.z)
            and np.array_equal(self.delta, other.delta)
            and np.array_equal(self.l, other.l)
            and np.array_equal(self.r, other.r)
            and self.covariate_names == other.covariate_names
            and self.design_x == other.design_x
            and self.design_t == other.design_t
        )


DEFAULT_SCHEMA = {"delta": "delta", "l": "l", "r": "r"}


def _parse_cell(text, row, col):
    text = text.strip()
    if text.lower() == "inf":
        return math.inf
    try:
        return float(text)
    except ValueError:
        raise ValidationError(f"column {col!r}: cannot parse {text!r}", row) from None


def load_csv(path, schema=None, design_x=None, design_t=None):
    """Read a dataset from CSV (header row; r = "inf" marks +infinity).

    ``schema`` maps the roles "delta", "l", "r" to column names and may list
    "covariates" explicitly; by default every other column is a covariate, in
    header order.
    """
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        for role in ("delta", "l", "r"):
            if schema[role] not in header:
                raise SchemaError(f"{path}: missing column {schema[role]!r}")
        role_cols = {role: header.index(schema[role]) for role in ("delta", "l", "r")}
        cov_names = schema.get("covariates")
        if cov_names is None:
            cov_names = [h for h in header if h not in
                         {schema["delta"], schema["l"], schema["r"]}]
        missing = [c for c in cov_names if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing covariate columns {missing}")
        cov_cols = [header.index(c) for c in cov_names]

        z_rows, deltas, ls, rs = [], [], [], []
        for row_idx, row in enumerate(reader):
            if len(row) != len(header):
                raise ValidationError(
                    f"expected {len(header)} cells, got {len(row)}", row_idx)
            delta_val = _parse_cell(row[role_cols["delta"]], row_idx, schema["delta"])
            if delta_val not in (1.0, 2.0, 3.0):
                raise ValidationError(
                    f"delta must be 1, 2 or 3, got {row[role_cols['delta']]!r}",
                    row_idx)
            deltas.append(int(delta_val))
            ls.append(_parse_cell(row[role_cols["l"]], row_idx, schema["l"]))
            rs.append(_parse_cell(row[role_cols["r"]], row_idx, schema["r"]))
            z_rows.append([_parse_cell(row[c], row_idx, header[c]) for c in cov_cols])

    z = np.asarray(z_rows, dtype=float) if z_rows else np.empty((0, len(cov_cols)))
    if z.ndim == 1:
        z = z.reshape(len(deltas), len(cov_cols))
    return Dataset(z, deltas, ls, rs, covariate_names=cov_names,
                   design_x=design_x, design_t=design_t)


def write_csv(dataset, path):
    """Inverse of load_csv; +inf is written as "inf" and floats round-trip."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(dataset.covariate_names) + ["delta", "l", "r"])
        for i in range(len(dataset)):
            r = dataset.r[i]
            writer.writerow(
                [repr(float(v)) for v in dataset.z[i]]
                + [int(dataset.delta[i]), repr(float(dataset.l[i])),
                   "inf" if math.isinf(r) else repr(float(r))]
            )


@dataclass(frozen=True)
class StandardizeParams:
    columns: tuple
    mean: np.ndarray
    sd: np.ndarray


def standardize(dataset, columns):
    """Return a dataset with the named columns scaled to mean 0, sd 1.

    Uses the sample (n-1) standard deviation.  The per-column mean/sd come
    back alongside so coefficients can be reported on the original scale.
    """
    idx = []
    for c in columns:
        if isinstance(c, str):
            if c not in dataset.covariate_names:
                raise SchemaError(f"unknown covariate {c!r}")
            idx.append(dataset.covariate_names.index(c))
        else:
            idx.append(int(c))
    z = dataset.z.copy()
    mean = z[:, idx].mean(axis=0)
    sd = z[:, idx].std(axis=0, ddof=1)
    for k, j in enumerate(idx):
        if not sd[k] > 0:
            raise ValidationError(
                f"column {dataset.covariate_names[j]!r} has zero variance")
        z[:, j] = (z[:, j] - mean[k]) / sd[k]
    out = Dataset(z, dataset.delta, dataset.l, dataset.r,
                  covariate_names=dataset.covariate_names,
                  design_x=dataset.design_x, design_t=dataset.design_t)
    return out, StandardizeParams(tuple(idx), mean, sd)
