"""Schema-aware loading, auditing and numeric encoding of mammographic mass records.

The on-disk format is the UCI one: six comma-separated fields per line
(BI-RADS, age, shape, margin, density, severity), ``?`` for a missing cell,
no header.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

logger = logging.getLogger(__name__)

MISSING = None
MISSING_TOKEN = "?"

BENIGN = 0
MALIGNANT = 1
CLASS_NAMES = {BENIGN: "benign", MALIGNANT: "malignant"}

ORDINAL = "ordinal"
NOMINAL = "nominal"
CONTINUOUS = "continuous"
KINDS = (ORDINAL, NOMINAL, CONTINUOUS)


class ParseError(ValueError):
    """A malformed input line. ``lineno`` is 1-based when known."""

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class EncodingError(ValueError):
    pass


@dataclass(frozen=True)
class AttributeSchema:
    """One predictor column.

    For categorical kinds ``domain`` lists the permitted codes (in rank order
    for ordinal attributes); for continuous attributes it is ``(lo, hi)``.
    """

    name: str
    kind: str
    domain: tuple
    predictive: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown attribute kind {self.kind!r}")
        if not self.domain:
            raise ValueError(f"attribute {self.name!r} has an empty domain")
        if self.kind == CONTINUOUS:
            if len(self.domain) != 2 or not self.domain[0] <= self.domain[1]:
                raise ValueError(f"continuous attribute {self.name!r} needs a (lo, hi) range")
        else:
            if len(set(self.domain)) != len(self.domain):
                raise ValueError(f"attribute {self.name!r} has duplicate codes")
            if self.kind == ORDINAL and list(self.domain) != sorted(self.domain):
                raise ValueError(f"ordinal attribute {self.name!r} must list codes in increasing order")

    @property
    def categorical(self):
        return self.kind != CONTINUOUS

    def contains(self, value):
        if self.kind == CONTINUOUS:
            return self.domain[0] <= value <= self.domain[1]
        return value in self.domain

    def rank(self, code):
        return self.domain.index(code)


MAMMO_SCHEMA = (
    AttributeSchema("bi_rads", ORDINAL, (0, 1, 2, 3, 4, 5), predictive=False),
    AttributeSchema("age", CONTINUOUS, (0.0, 120.0)),
    AttributeSchema("shape", NOMINAL, (1, 2, 3, 4)),
    AttributeSchema("margin", NOMINAL, (1, 2, 3, 4, 5)),
    AttributeSchema("density", ORDINAL, (1, 2, 3, 4)),
)


@dataclass(frozen=True)
class Record:
    values: tuple
    label: int
    # attributes whose raw value fell outside the declared domain and were coerced to MISSING
    coerced: tuple = ()


def _number(token):
    try:
        return int(token)
    except ValueError:
        value = float(token)
    if not np.isfinite(value):
        raise ValueError(token)
    return value


def parse_record(line: str, schema: Sequence[AttributeSchema], lineno: int | None = None) -> Record:
    fields = [f.strip() for f in line.strip().split(",")]
    if len(fields) != len(schema) + 1:
        raise ParseError(f"expected {len(schema) + 1} fields, got {len(fields)}", lineno)
    *cells, label_token = fields
    if label_token in ("", MISSING_TOKEN):
        raise ParseError("missing class label", lineno)
    try:
        label = _number(label_token)
    except ValueError:
        raise ParseError(f"non-numeric class label {label_token!r}", lineno) from None
    if label not in (BENIGN, MALIGNANT):
        raise ParseError(f"class label must be 0 or 1, got {label_token!r}", lineno)

    values = []
    coerced = []
    for attr, token in zip(schema, cells):
        if token == MISSING_TOKEN:
            values.append(MISSING)
            continue
        try:
            value = _number(token)
        except ValueError:
            raise ParseError(f"non-numeric value {token!r} for {attr.name}", lineno) from None
        if attr.categorical and value != int(value):
            raise ParseError(f"non-integer code {token!r} for {attr.name}", lineno)
        if not attr.contains(value):
            values.append(MISSING)
            coerced.append(attr.name)
            continue
        values.append(int(value) if attr.categorical else value)
    return Record(tuple(values), int(label), tuple(coerced))


def _format_value(value):
    if value is MISSING:
        return MISSING_TOKEN
    if float(value).is_integer():
        return str(int(value))
    return repr(float(value))


def format_record(rec: Record) -> str:
    return ",".join([_format_value(v) for v in rec.values] + [str(rec.label)])


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable table of records. Missing cells are NaN in ``values``."""

    schema: tuple
    values: np.ndarray
    labels: np.ndarray
    coerced: np.ndarray = field(default=None)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True).reshape(-1, len(self.schema))
        labels = np.array(self.labels, dtype=np.int64, copy=True).reshape(-1)
        if len(values) != len(labels):
            raise ValueError("values and labels disagree on record count")
        coerced = (np.zeros(values.shape, dtype=bool) if self.coerced is None
                   else np.array(self.coerced, dtype=bool, copy=True).reshape(values.shape))
        for j, attr in enumerate(self.schema):
            col = values[:, j]
            present = col[~np.isnan(col)]
            if attr.categorical:
                bad = ~np.isin(present, np.asarray(attr.domain, dtype=float))
            else:
                bad = (present < attr.domain[0]) | (present > attr.domain[1])
            if bad.any():
                raise ValueError(f"attribute {attr.name!r} holds values outside its domain")
        if not np.isin(labels, (BENIGN, MALIGNANT)).all():
            raise ValueError("labels must be 0 or 1")
        for arr in (values, labels, coerced):
            arr.setflags(write=False)
        object.__setattr__(self, "schema", tuple(self.schema))
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "coerced", coerced)

    @classmethod
    def from_records(cls, schema, records: Iterable[Record]) -> "Dataset":
        schema = tuple(schema)
        records = list(records)
        values = np.full((len(records), len(schema)), np.nan)
        coerced = np.zeros(values.shape, dtype=bool)
        names = [a.name for a in schema]
        for i, rec in enumerate(records):
            if len(rec.values) != len(schema):
                raise ValueError(f"record {i} has arity {len(rec.values)}, schema has {len(schema)}")
            for j, v in enumerate(rec.values):
                if v is not MISSING:
                    values[i, j] = v
            for name in rec.coerced:
                coerced[i, names.index(name)] = True
        labels = np.array([r.label for r in records], dtype=np.int64)
        return cls(schema, values, labels, coerced)

    def __len__(self):
        return len(self.labels)

    @property
    def names(self):
        return [a.name for a in self.schema]

    def index(self, name: str) -> int:
        for j, attr in enumerate(self.schema):
            if attr.name == name:
                return j
        raise KeyError(name)

    def attribute(self, name: str) -> AttributeSchema:
        return self.schema[self.index(name)]

    def missing_mask(self) -> np.ndarray:
        return np.isnan(self.values)

    def n_missing(self) -> int:
        return int(self.missing_mask().sum())

    def record(self, i: int) -> Record:
        row = self.values[i]
        vals = []
        for attr, v in zip(self.schema, row):
            if np.isnan(v):
                vals.append(MISSING)
            else:
                vals.append(int(v) if attr.categorical else float(v))
        coerced = tuple(a.name for a, c in zip(self.schema, self.coerced[i]) if c)
        return Record(tuple(vals), int(self.labels[i]), coerced)

    def __iter__(self) -> Iterator[Record]:
        return (self.record(i) for i in range(len(self)))

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.schema, self.values[idx], self.labels[idx], self.coerced[idx])

    def replace_values(self, values) -> "Dataset":
        return Dataset(self.schema, values, self.labels, self.coerced)

    def class_counts(self):
        return {BENIGN: int((self.labels == BENIGN).sum()), MALIGNANT: int((self.labels == MALIGNANT).sum())}


def load_dataset(path, schema=MAMMO_SCHEMA) -> Dataset:
    path = Path(path)
    text = path.read_text()
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        records.append(parse_record(line, schema, lineno))
    if not records:
        logger.warning("%s contains no records", path)
    return Dataset.from_records(schema, records)


def write_dataset(ds: Dataset, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for rec in ds:
            fh.write(format_record(rec) + "\n")


# --------------------------------------------------------------------- audit

@dataclass(frozen=True)
class AttributeAudit:
    name: str
    kind: str
    valid: int
    missing: int
    out_of_domain: int
    histogram: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)


@dataclass(frozen=True)
class AuditReport:
    n_records: int
    attributes: tuple
    class_counts: dict

    @property
    def missing_counts(self):
        return {a.name: a.missing for a in self.attributes}

    @property
    def total_missing(self):
        return sum(a.missing for a in self.attributes)

    @property
    def total_out_of_domain(self):
        return sum(a.out_of_domain for a in self.attributes)

    def to_dict(self):
        return {
            "n_records": self.n_records,
            "class_counts": {CLASS_NAMES[k]: v for k, v in self.class_counts.items()},
            "total_missing": self.total_missing,
            "total_out_of_domain": self.total_out_of_domain,
            "attributes": [
                {
                    "name": a.name,
                    "kind": a.kind,
                    "valid": a.valid,
                    "missing": a.missing,
                    "out_of_domain": a.out_of_domain,
                    "complete_pct": (100.0 * a.valid / self.n_records) if self.n_records else None,
                    "histogram": {str(k): v for k, v in a.histogram.items()},
                    "summary": a.summary,
                }
                for a in self.attributes
            ],
        }

    def to_json(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def format_table(self) -> str:
        lines = [f"records: {self.n_records}   "
                 f"benign: {self.class_counts[BENIGN]}   malignant: {self.class_counts[MALIGNANT]}"]
        header = f"{'attribute':<10} {'kind':<11} {'valid':>6} {'missing':>8} {'out-of-dom':>10} {'complete%':>10}"
        lines += [header, "-" * len(header)]
        for a in self.attributes:
            pct = f"{100.0 * a.valid / self.n_records:.2f}" if self.n_records else "-"
            lines.append(f"{a.name:<10} {a.kind:<11} {a.valid:>6} {a.missing:>8} {a.out_of_domain:>10} {pct:>10}")
        lines.append("-" * len(header))
        lines.append(f"{'total':<22} {'':>6} {self.total_missing:>8} {self.total_out_of_domain:>10}")
        return "\n".join(lines)


def audit(ds: Dataset) -> AuditReport:
    """Count valid, missing and out-of-domain cells per attribute.

    ``missing`` counts cells that were missing in the source (``?``); cells
    coerced to MISSING because their code was outside the domain are counted
    under ``out_of_domain`` so that valid + missing + out_of_domain = n.
    """
    n = len(ds)
    if n == 0:
        logger.warning("auditing an empty dataset")
    nan = ds.missing_mask()
    out = []
    for j, attr in enumerate(ds.schema):
        ood = int(ds.coerced[:, j].sum())
        missing = int((nan[:, j] & ~ds.coerced[:, j]).sum())
        col = ds.values[~nan[:, j], j]
        histogram = {}
        summary = {}
        if attr.categorical:
            for code in attr.domain:
                histogram[code] = int((col == code).sum())
        elif len(col):
            summary = {"min": float(col.min()), "max": float(col.max()), "mean": float(col.mean())}
        out.append(AttributeAudit(attr.name, attr.kind, n - missing - ood, missing, ood, histogram, summary))
    return AuditReport(n, tuple(out), ds.class_counts())


# ------------------------------------------------------------------ encoding

@dataclass(frozen=True)
class EncodingConfig:
    include_non_predictive: bool = False


@dataclass(frozen=True)
class Column:
    attribute: str
    role: str  # "onehot", "ordinal" or "continuous"
    category: int | None = None

    @property
    def label(self):
        return f"{self.attribute}={self.category}" if self.role == "onehot" else self.attribute


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    X: np.ndarray
    y: np.ndarray
    columns: tuple

    @property
    def width(self):
        return self.X.shape[1]

    def __len__(self):
        return len(self.y)

    def onehot_groups(self):
        groups = {}
        for j, col in enumerate(self.columns):
            if col.role == "onehot":
                groups.setdefault(col.attribute, []).append(j)
        return groups


class Encoder:
    """Maps a complete Dataset to a real matrix.

    Nominal attributes become one-hot groups, ordinal ones a single column
    holding ``rank / (len(domain) - 1)``, continuous ones are min-max scaled
    with the bounds seen by :meth:`fit`. Rows from outside the fitting data
    may land outside [0, 1]; they are not clipped.
    """

    def __init__(self, schema, cfg: EncodingConfig | None = None):
        self.schema = tuple(schema)
        self.cfg = cfg or EncodingConfig()
        self.scale = {}

    def used_attributes(self):
        return [a for a in self.schema if a.predictive or self.cfg.include_non_predictive]

    @property
    def columns(self):
        cols = []
        for attr in self.used_attributes():
            if attr.kind == NOMINAL:
                cols.extend(Column(attr.name, "onehot", c) for c in attr.domain)
            else:
                cols.append(Column(attr.name, attr.kind))
        return tuple(cols)

    @property
    def width(self):
        return len(self.columns)

    def fit(self, ds: Dataset) -> "Encoder":
        self.scale = {}
        for attr in self.used_attributes():
            if attr.kind != CONTINUOUS:
                continue
            col = ds.values[:, ds.index(attr.name)]
            col = col[~np.isnan(col)]
            if len(col) == 0:
                raise EncodingError(f"no observed values to fit scaling of {attr.name!r}")
            self.scale[attr.name] = (float(col.min()), float(col.max()))
        return self

    def transform(self, ds: Dataset) -> FeatureMatrix:
        if tuple(a.name for a in ds.schema) != tuple(a.name for a in self.schema):
            raise EncodingError("dataset schema does not match encoder schema")
        blocks = []
        for attr in self.used_attributes():
            j = ds.index(attr.name)
            col = ds.values[:, j]
            bad = np.flatnonzero(np.isnan(col))
            if len(bad):
                raise EncodingError(f"record {int(bad[0])}: attribute {attr.name!r} is MISSING; impute first")
            if attr.kind == NOMINAL:
                codes = np.asarray(attr.domain, dtype=float)
                blocks.append((col[:, None] == codes[None, :]).astype(np.float64))
            elif attr.kind == ORDINAL:
                ranks = np.searchsorted(np.asarray(attr.domain, dtype=float), col)
                denom = max(len(attr.domain) - 1, 1)
                blocks.append((ranks / denom)[:, None])
            else:
                if attr.name not in self.scale:
                    raise EncodingError(f"encoder was not fitted for {attr.name!r}")
                lo, hi = self.scale[attr.name]
                span = hi - lo
                blocks.append(((col - lo) / span if span > 0 else np.zeros_like(col))[:, None])
        X = np.hstack(blocks) if blocks else np.zeros((len(ds), 0))
        X.setflags(write=False)
        y = ds.labels.copy()
        y.setflags(write=False)
        return FeatureMatrix(X, y, self.columns)

    def to_dict(self):
        return {
            "attributes": [a.name for a in self.schema],
            "include_non_predictive": self.cfg.include_non_predictive,
            "scale": {k: list(v) for k, v in sorted(self.scale.items())},
        }

    @classmethod
    def from_dict(cls, d, schema=MAMMO_SCHEMA):
        if list(d["attributes"]) != [a.name for a in schema]:
            raise EncodingError("stored encoder schema does not match")
        enc = cls(schema, EncodingConfig(include_non_predictive=bool(d["include_non_predictive"])))
        enc.scale = {k: (float(v[0]), float(v[1])) for k, v in d["scale"].items()}
        return enc


def encode(ds: Dataset, cfg: EncodingConfig | None = None, fit_on: Dataset | None = None) -> FeatureMatrix:
    """Fit an :class:`Encoder` on ``fit_on`` (default: ``ds`` itself) and encode ``ds``."""
    return Encoder(ds.schema, cfg).fit(fit_on if fit_on is not None else ds).transform(ds)
