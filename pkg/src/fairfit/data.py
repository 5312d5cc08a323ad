"""Tabular ingestion, variable roles and design-matrix encoding.

A :class:`Dataset` holds parsed columns (numeric columns as float arrays,
factors as integer codes into their ``levels``) together with a role for
each column.  :func:`encode` turns the columns carrying one role into a
:class:`DesignMatrix` using treatment contrasts: a factor with ``L`` levels
becomes ``L - 1`` indicator columns with the first level as reference.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ParseError, SchemaError, UnseenLevelError

ROLES = ("response", "predictor", "sensitive", "ignored")
MISSING = {"", "NA", "NaN", "nan", "N/A", "null"}


@dataclass(frozen=True)
class VariableSpec:
    name: str
    kind: str = "numeric"
    levels: tuple = ()

    def __post_init__(self):
        if self.kind not in ("numeric", "factor"):
            raise SchemaError(f"unknown variable kind {self.kind!r}")
        if self.kind == "factor":
            if len(set(self.levels)) != len(self.levels):
                raise SchemaError(f"factor {self.name!r} has duplicate levels")
        elif self.levels:
            raise SchemaError(f"numeric variable {self.name!r} cannot have levels")

    @property
    def is_factor(self):
        return self.kind == "factor"

    def to_dict(self):
        d = {"name": self.name, "kind": self.kind}
        if self.is_factor:
            d["levels"] = list(self.levels)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(d["name"], d["kind"], tuple(d.get("levels", ())))


@dataclass(frozen=True)
class Schema:
    """Role assignment used when reading a CSV file.

    ``predictors=None`` means every column that is neither the response,
    a sensitive attribute nor listed in ``ignored``.
    """

    response: str | None = None
    sensitive: tuple = ()
    predictors: tuple | None = None
    factors: tuple = ()
    ignored: tuple = ()

    def roles_for(self, header):
        roles = {}
        if self.response is not None:
            roles[self.response] = "response"
        for name in self.sensitive:
            if name in roles:
                raise SchemaError(f"column {name!r} assigned two roles")
            roles[name] = "sensitive"
        preds = self.predictors
        if preds is None:
            preds = [h for h in header if h not in roles and h not in self.ignored]
        for name in preds:
            if name in roles:
                raise SchemaError(f"column {name!r} assigned two roles")
            roles[name] = "predictor"
        for name in header:
            roles.setdefault(name, "ignored")
        return roles


@dataclass(frozen=True)
class Dataset:
    """Parsed columns plus their roles.

    Factor columns are stored as ``int64`` codes into ``specs[name].levels``.
    ``row_ids`` are the 1-based data-row numbers in the source file.
    """

    columns: dict
    specs: dict
    roles: dict
    row_ids: np.ndarray = None
    dropped: int = 0

    def __post_init__(self):
        n = None
        for name, values in self.columns.items():
            if name not in self.specs:
                raise SchemaError(f"column {name!r} has no variable spec")
            if n is None:
                n = len(values)
            elif len(values) != n:
                raise SchemaError("columns have different lengths")
            spec = self.specs[name]
            if spec.kind == "numeric" and not np.all(np.isfinite(values)):
                raise SchemaError(f"numeric column {name!r} holds non-finite values")
        for name, role in self.roles.items():
            if role not in ROLES:
                raise SchemaError(f"unknown role {role!r} for column {name!r}")
            if name not in self.columns:
                raise SchemaError(f"role given for missing column {name!r}")
        if self.row_ids is None:
            object.__setattr__(self, "row_ids", np.arange(1, (n or 0) + 1))

    @property
    def n(self):
        return len(self.row_ids)

    def names(self, role):
        return [c for c in self.columns if self.roles.get(c, "ignored") == role]

    @property
    def response_name(self):
        names = self.names("response")
        return names[0] if names else None

    def check_roles(self):
        """Enforce the roles needed to fit a fair model."""
        if len(self.names("response")) != 1:
            raise SchemaError("exactly one response column is required")
        if not self.names("sensitive"):
            raise SchemaError("at least one sensitive column is required")
        if not self.names("predictor"):
            raise SchemaError("at least one predictor column is required")

    def labels(self, name):
        """Values of a factor column as level labels."""
        spec = self.specs[name]
        if not spec.is_factor:
            raise SchemaError(f"{name!r} is not a factor")
        return np.asarray(spec.levels, dtype=object)[self.columns[name]]

    def take(self, rows):
        rows = np.asarray(rows)
        cols = {k: v[rows] for k, v in self.columns.items()}
        return replace(self, columns=cols, row_ids=self.row_ids[rows], dropped=0)

    def with_roles(self, **roles):
        new = dict(self.roles)
        new.update(roles)
        return replace(self, roles=new)


@dataclass(frozen=True)
class DesignMatrix:
    """Dense numeric matrix with per-column provenance.

    ``source[j]`` is ``(variable, level)`` for indicator columns and
    ``(variable, None)`` for numeric columns.
    """

    values: np.ndarray
    names: tuple
    source: tuple = ()
    specs: tuple = ()
    constant_columns: tuple = field(default=())

    @property
    def shape(self):
        return self.values.shape

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def p(self):
        return self.values.shape[1]


def _parse_float(text, row, column):
    try:
        value = float(text)
    except ValueError:
        raise ParseError(
            f"row {row}, column {column!r}: cannot parse {text!r} as a number",
            row=row, column=column) from None
    if not math.isfinite(value):
        raise ParseError(f"row {row}, column {column!r}: non-finite value {text!r}",
                         row=row, column=column)
    return value


def read_rows(path):
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path} is empty") from None
        header = [h.strip() for h in header]
        rows = [r for r in reader if r]
    return header, rows


def load_csv(path, schema, levels=None, require_response=True):
    """Read a CSV file into a :class:`Dataset`.

    Parameters
    ----------
    path : path-like
        RFC-4180 CSV with a header row.
    schema : Schema
        Role assignments and the names of factor columns.
    levels : mapping, optional
        Known level sets for factors; values outside them raise
        :class:`UnseenLevelError`.  Used when reading new data for a
        fitted model.
    require_response : bool
        Whether the response column must be present.

    Rows with a missing value in any role-bearing column are dropped; the
    count is reported in ``Dataset.dropped``.
    """
    header, rows = read_rows(path)
    wanted = [schema.response] if schema.response is not None else []
    wanted += list(schema.sensitive) + list(schema.predictors or ())
    for name in wanted:
        if name not in header:
            if name == schema.response and not require_response:
                continue
            raise SchemaError(f"column {name!r} not found in {path}")
    if not require_response and schema.response not in header:
        schema = replace(schema, response=None)
    roles = schema.roles_for(header)
    factors = set(schema.factors)
    levels = dict(levels or {})
    for name in levels:
        factors.add(name)

    index = {h: i for i, h in enumerate(header)}
    active = [h for h in header if roles[h] != "ignored"]
    keep, raw = [], {h: [] for h in active}
    dropped = 0
    for r, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise ParseError(f"row {r}: expected {len(header)} fields, got {len(row)}", row=r)
        cells = [row[index[h]].strip() for h in active]
        if any(c in MISSING for c in cells):
            dropped += 1
            continue
        keep.append(r)
        for h, c in zip(active, cells):
            raw[h].append(c)

    columns, specs = {}, {}
    for h in active:
        values = raw[h]
        if h in factors:
            if h in levels:
                known = tuple(levels[h])
                lookup = {lv: i for i, lv in enumerate(known)}
                for v in values:
                    if v not in lookup:
                        raise UnseenLevelError(h, v)
            else:
                known = tuple(dict.fromkeys(values))
                lookup = {lv: i for i, lv in enumerate(known)}
            columns[h] = np.array([lookup[v] for v in values], dtype=np.int64)
            specs[h] = VariableSpec(h, "factor", known)
        else:
            rows_kept = keep
            columns[h] = np.array([_parse_float(v, rows_kept[i], h) for i, v in enumerate(values)],
                                  dtype=float)
            specs[h] = VariableSpec(h, "numeric")
    roles = {h: roles[h] for h in active}
    ds = Dataset(columns, specs, roles, np.asarray(keep, dtype=np.int64), dropped)
    if require_response and schema.response is not None:
        y = schema.response
        if specs[y].is_factor and len(np.unique(columns[y])) < 2:
            raise SchemaError(f"response factor {y!r} has fewer than 2 observed levels")
    return ds


def infer_factors(path):
    """Names of the columns holding at least one non-numeric, non-missing cell."""
    header, rows = read_rows(path)
    out = []
    for j, h in enumerate(header):
        for row in rows:
            c = row[j].strip()
            if c in MISSING:
                continue
            try:
                float(c)
            except ValueError:
                out.append(h)
                break
    return tuple(out)


def from_arrays(response=None, predictors=None, sensitive=None, factors=()):
    """Build a :class:`Dataset` from in-memory columns.

    Each of ``predictors`` and ``sensitive`` maps column names to 1-D
    arrays; ``response`` is a ``(name, values)`` pair.  Columns named in
    ``factors`` (or holding non-numeric values) become factors with levels
    in first-appearance order.
    """
    columns, specs, roles = {}, {}, {}

    def add(name, values, role):
        values = np.asarray(values)
        if name in factors or values.dtype.kind in "OUSb":
            labels = [str(v) for v in values]
            known = tuple(dict.fromkeys(labels))
            lookup = {lv: i for i, lv in enumerate(known)}
            columns[name] = np.array([lookup[v] for v in labels], dtype=np.int64)
            specs[name] = VariableSpec(name, "factor", known)
        else:
            columns[name] = values.astype(float)
            specs[name] = VariableSpec(name, "numeric")
        roles[name] = role

    if response is not None:
        add(response[0], response[1], "response")
    for name, values in (sensitive or {}).items():
        add(name, values, "sensitive")
    for name, values in (predictors or {}).items():
        add(name, values, "predictor")
    return Dataset(columns, specs, roles)


def merge_levels(ds, column, mapping):
    """Recode a factor by mapping old levels onto new ones.

    ``mapping`` is either a dict ``old -> new`` covering every old level, or
    a sequence of new labels aligned with the current levels.  New levels
    are ordered by first appearance in the mapping.
    """
    spec = ds.specs.get(column)
    if spec is None or not spec.is_factor:
        raise SchemaError(f"{column!r} is not a factor")
    if not isinstance(mapping, Mapping):
        mapping = list(mapping)
        if len(mapping) != len(spec.levels):
            raise SchemaError(
                f"mapping for {column!r} has {len(mapping)} entries, factor has {len(spec.levels)} levels")
        mapping = dict(zip(spec.levels, mapping))
    missing = [lv for lv in spec.levels if lv not in mapping]
    if missing:
        raise SchemaError(f"mapping for {column!r} does not cover levels {missing}")
    new_levels = tuple(dict.fromkeys(mapping[lv] for lv in mapping if lv in spec.levels))
    lookup = {lv: i for i, lv in enumerate(new_levels)}
    recode = np.array([lookup[mapping[lv]] for lv in spec.levels], dtype=np.int64)
    columns = dict(ds.columns)
    columns[column] = recode[ds.columns[column]]
    specs = dict(ds.specs)
    specs[column] = VariableSpec(column, "factor", new_levels)
    return replace(ds, columns=columns, specs=specs)


def encode_columns(ds, names, specs=None):
    """Encode ``names`` from ``ds`` using the given training ``specs``.

    When ``specs`` is given, factor labels in ``ds`` are matched against the
    training levels and an unseen label raises :class:`UnseenLevelError`.
    """
    if specs is None:
        specs = [ds.specs[name] for name in names]
    blocks, colnames, source = [], [], []
    for spec in specs:
        if spec.name not in ds.columns:
            raise SchemaError(f"column {spec.name!r} is missing")
        if spec.is_factor:
            here = ds.specs[spec.name]
            if not here.is_factor:
                raise SchemaError(f"column {spec.name!r} was a factor at training time")
            lookup = {lv: i for i, lv in enumerate(spec.levels)}
            remap = np.array([lookup.get(lv, -1) for lv in here.levels], dtype=np.int64)
            codes = remap[ds.columns[spec.name]]
            if np.any(codes < 0):
                first = int(np.flatnonzero(codes < 0)[0])
                raise UnseenLevelError(spec.name, here.levels[ds.columns[spec.name][first]])
            ind = (codes[:, None] == np.arange(1, len(spec.levels))[None, :]).astype(float)
            blocks.append(ind)
            colnames += [f"{spec.name}{lv}" for lv in spec.levels[1:]]
            source += [(spec.name, lv) for lv in spec.levels[1:]]
        else:
            if ds.specs[spec.name].is_factor:
                raise SchemaError(f"column {spec.name!r} was numeric at training time")
            blocks.append(np.asarray(ds.columns[spec.name], float)[:, None])
            colnames.append(spec.name)
            source.append((spec.name, None))
    values = np.hstack(blocks) if blocks else np.empty((ds.n, 0))
    constant = tuple(colnames[j] for j in range(values.shape[1])
                     if values.shape[0] > 0 and np.ptp(values[:, j]) == 0)
    return DesignMatrix(values, tuple(colnames), tuple(source), tuple(specs), constant)


def encode(ds, role):
    """Design matrix of every column carrying ``role`` (no intercept column)."""
    names = ds.names(role)
    if not names:
        raise SchemaError(f"no column carries role {role!r}")
    return encode_columns(ds, names)


def as_design(values, prefix="x"):
    """Wrap a bare array (or pass through a DesignMatrix)."""
    if isinstance(values, DesignMatrix):
        return values
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    names = tuple(f"{prefix}{j + 1}" for j in range(values.shape[1]))
    specs = tuple(VariableSpec(n) for n in names)
    source = tuple((n, None) for n in names)
    return DesignMatrix(values, names, source, specs)


def response_values(ds):
    """The response column: float array, or ``(codes, levels)`` for a factor."""
    name = ds.response_name
    if name is None:
        raise SchemaError("dataset has no response column")
    spec = ds.specs[name]
    if spec.is_factor:
        return ds.columns[name], spec.levels
    return ds.columns[name], None
