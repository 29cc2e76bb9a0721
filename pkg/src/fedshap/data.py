"""Census CSV ingestion, encoding, splitting and reference values.

Encoded values are min-max scaled to [0, 1] and then snapped to a grid of
``2**-GRID_BITS``. On that grid every squared difference, and every sum of
up to 2**12 of them, is exactly representable in float64, so squared
distances do not depend on summation order. The federated KNN relies on
this: host and guest partial distances add up to *exactly* the centralized
distance.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError
from .rng import permutation

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"
GRID_BITS = 20


def normalize_name(name: str) -> str:
    """Canonical form for matching column headers: ``'Hours per week' -> 'hours-per-week'``."""
    return re.sub(r"[^0-9a-z]+", "-", name.strip().lower()).strip("-")


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str
    categories: tuple[str, ...] = ()
    aliases: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.name:
            raise ValueError("feature name must be nonempty")
        if self.kind == CATEGORICAL:
            if len(self.categories) < 2:
                raise ValueError(f"categorical feature {self.name!r} needs >= 2 categories")
            if len(set(self.categories)) != len(self.categories):
                raise ValueError(f"duplicate categories in {self.name!r}")
        elif self.kind == CONTINUOUS:
            if self.categories:
                raise ValueError(f"continuous feature {self.name!r} cannot have categories")
        else:
            raise ValueError(f"unknown feature kind {self.kind!r}")

    def header_keys(self) -> set[str]:
        return {normalize_name(n) for n in (self.name, *self.aliases)}


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature list plus label definition.

    ``source_columns`` describes the column layout of headerless files
    (normalized names; unknown names are skipped on load).
    """

    features: tuple[Feature, ...]
    label_name: str
    positive_label: str
    negative_label: str | None = None
    source_columns: tuple[str, ...] | None = None
    missing_token: str = "?"

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise ValueError("feature names must be unique")
        if not self.features:
            raise ValueError("schema needs at least one feature")

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    @property
    def p(self) -> int:
        return len(self.features)

    def index(self, name: str) -> int:
        key = normalize_name(name)
        for j, f in enumerate(self.features):
            if key in f.header_keys():
                return j
        raise KeyError(name)


@dataclass(frozen=True)
class RawDataset:
    """Typed but unencoded rows: floats for continuous, category strings otherwise."""

    schema: FeatureSchema
    ids: tuple[str, ...]
    columns: tuple[tuple, ...]  # one tuple of values per feature
    labels: np.ndarray
    dropped: int = 0

    @property
    def n(self) -> int:
        return len(self.ids)

    def row(self, i: int) -> tuple:
        return tuple(col[i] for col in self.columns)


@dataclass(frozen=True, eq=False)
class NumericDataset:
    rows: np.ndarray  # (n, p) float64 in [0, 1]
    labels: np.ndarray  # (n,) int8, 1 = positive class
    schema: FeatureSchema
    ids: tuple[str, ...] = field(default=())

    def __post_init__(self):
        rows = np.ascontiguousarray(self.rows, dtype=np.float64)
        if rows.ndim != 2:
            rows = rows.reshape(-1, self.schema.p)
        labels = np.asarray(self.labels, dtype=np.int8)
        if rows.shape[1] != self.schema.p:
            raise DataError(f"expected {self.schema.p} columns, got {rows.shape[1]}")
        if len(labels) != len(rows):
            raise DataError("labels length must equal row count")
        ids = tuple(self.ids) if self.ids else tuple(str(i) for i in range(len(rows)))
        if len(ids) != len(rows):
            raise DataError("ids length must equal row count")
        rows.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "ids", ids)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def p(self) -> int:
        return self.rows.shape[1]

    def take(self, indices: Sequence[int]) -> "NumericDataset":
        idx = np.asarray(indices, dtype=np.intp)
        return NumericDataset(
            self.rows[idx], self.labels[idx], self.schema, tuple(self.ids[i] for i in idx)
        )

    def position(self, raw_id: str) -> int:
        try:
            return self.ids.index(raw_id)
        except ValueError:
            raise KeyError(raw_id) from None


@dataclass(frozen=True)
class FeaturePartition:
    host_indices: tuple[int, ...]
    guest_indices: tuple[int, ...]

    def __post_init__(self):
        host, guest = set(self.host_indices), set(self.guest_indices)
        if not host or not guest:
            raise ValueError("host and guest column sets must both be nonempty")
        if host & guest:
            raise ValueError(f"columns assigned to both parties: {sorted(host & guest)}")
        if len(host) != len(self.host_indices) or len(guest) != len(self.guest_indices):
            raise ValueError("duplicate column index in partition")

    @property
    def p(self) -> int:
        return len(self.host_indices) + len(self.guest_indices)

    def check(self, p: int) -> None:
        if set(self.host_indices) | set(self.guest_indices) != set(range(p)):
            raise ValueError(f"partition does not cover columns 0..{p - 1}")

    @classmethod
    def from_guest_names(cls, schema: FeatureSchema, guest_names: Iterable[str]) -> "FeaturePartition":
        guest = sorted({schema.index(n) for n in guest_names})
        host = [j for j in range(schema.p) if j not in guest]
        part = cls(tuple(host), tuple(guest))
        part.check(schema.p)
        return part


@dataclass(frozen=True, eq=False)
class ReferenceVector:
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return len(self.values)

    def restrict(self, indices: Sequence[int]) -> np.ndarray:
        return self.values[list(indices)]


# ---------------------------------------------------------------------------
# Adult preset

_WORKCLASS = ("Private", "Self-emp-not-inc", "Self-emp-inc", "Federal-gov", "Local-gov",
              "State-gov", "Without-pay", "Never-worked")
_MARITAL = ("Married-civ-spouse", "Divorced", "Never-married", "Separated", "Widowed",
            "Married-spouse-absent", "Married-AF-spouse")
_OCCUPATION = ("Tech-support", "Craft-repair", "Other-service", "Sales", "Exec-managerial",
               "Prof-specialty", "Handlers-cleaners", "Machine-op-inspct", "Adm-clerical",
               "Farming-fishing", "Transport-moving", "Priv-house-serv", "Protective-serv",
               "Armed-Forces")
_RELATIONSHIP = ("Wife", "Own-child", "Husband", "Not-in-family", "Other-relative", "Unmarried")
_RACE = ("White", "Asian-Pac-Islander", "Amer-Indian-Eskimo", "Other", "Black")
_SEX = ("Female", "Male")
_COUNTRY = ("United-States", "Cambodia", "England", "Puerto-Rico", "Canada", "Germany",
            "Outlying-US(Guam-USVI-etc)", "India", "Japan", "Greece", "South", "China", "Cuba",
            "Iran", "Honduras", "Philippines", "Italy", "Poland", "Jamaica", "Vietnam", "Mexico",
            "Portugal", "Ireland", "France", "Dominican-Republic", "Laos", "Ecuador", "Taiwan",
            "Haiti", "Columbia", "Hungary", "Guatemala", "Nicaragua", "Scotland", "Thailand",
            "Yugoslavia", "El-Salvador", "Trinadad&Tobago", "Peru", "Hong", "Holand-Netherlands")

# Host attributes first, then the work-related ones; the last 3 (or 5) are the
# guest's columns in the reference experiments.
ADULT_SCHEMA = FeatureSchema(
    features=(
        Feature("Age", CONTINUOUS),
        Feature("Country", CATEGORICAL, _COUNTRY, aliases=("native-country",)),
        Feature("Education-Num", CONTINUOUS),
        Feature("Marital Status", CATEGORICAL, _MARITAL),
        Feature("Relationship", CATEGORICAL, _RELATIONSHIP),
        Feature("Race", CATEGORICAL, _RACE),
        Feature("Sex", CATEGORICAL, _SEX),
        Feature("Capital Gain", CONTINUOUS),
        Feature("Capital Loss", CONTINUOUS),
        Feature("Workclass", CATEGORICAL, _WORKCLASS),
        Feature("Occupation", CATEGORICAL, _OCCUPATION),
        Feature("Hours per week", CONTINUOUS),
    ),
    label_name="Income",
    positive_label=">50K",
    negative_label="<=50K",
    source_columns=("age", "workclass", "fnlwgt", "education", "education-num",
                    "marital-status", "occupation", "relationship", "race", "sex",
                    "capital-gain", "capital-loss", "hours-per-week", "native-country",
                    "income"),
)

ADULT_GUEST_3 = ("Workclass", "Occupation", "Hours per week")
ADULT_GUEST_5 = ("Capital Gain", "Capital Loss") + ADULT_GUEST_3


# ---------------------------------------------------------------------------
# Operations


def _column_map(schema: FeatureSchema, header: list[str]) -> tuple[list[int], int]:
    keys = [normalize_name(h) for h in header]
    feature_pos = []
    for f in schema.features:
        hits = [i for i, k in enumerate(keys) if k in f.header_keys()]
        if not hits:
            raise DataError(f"column for feature {f.name!r} not found in {header}")
        feature_pos.append(hits[0])
    label_key = normalize_name(schema.label_name)
    if label_key not in keys:
        raise DataError(f"label column {schema.label_name!r} not found")
    return feature_pos, keys.index(label_key)


def _looks_like_header(schema: FeatureSchema, first: list[str]) -> bool:
    keys = {normalize_name(h) for h in first}
    return normalize_name(schema.label_name) in keys and all(
        f.header_keys() & keys for f in schema.features
    )


def load_census_csv(path: str | Path, schema: FeatureSchema = ADULT_SCHEMA) -> RawDataset:
    """Read a comma-separated census file.

    A header row is optional. Without one, the file must have either
    ``len(schema.source_columns)`` fields per row or the schema's features
    followed by the label. Rows containing the missing marker or an
    unparseable number are dropped and counted; an unknown category token
    is an error.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"data file not found: {path}")

    with path.open(newline="", encoding="utf-8") as fh:
        records = [r for r in csv.reader(fh, skipinitialspace=True) if any(c.strip() for c in r)]

    columns: list[list] = [[] for _ in schema.features]
    labels: list[int] = []
    ids: list[str] = []
    dropped = 0
    if not records:
        return RawDataset(schema, (), tuple(() for _ in schema.features), np.zeros(0, np.int8))

    start = 0
    if _looks_like_header(schema, records[0]):
        feature_pos, label_pos = _column_map(schema, records[0])
        width = len(records[0])
        start = 1
    elif schema.source_columns and len(records[0]) == len(schema.source_columns):
        feature_pos, label_pos = _column_map(schema, list(schema.source_columns))
        width = len(schema.source_columns)
    elif len(records[0]) == schema.p + 1:
        feature_pos, label_pos = list(range(schema.p)), schema.p
        width = schema.p + 1
    else:
        raise DataError(f"line 1: expected {schema.p + 1} columns, got {len(records[0])}")

    categories = [
        {c: k for k, c in enumerate(f.categories)} if f.kind == CATEGORICAL else None
        for f in schema.features
    ]
    for rownum, rec in enumerate(records[start:]):
        line = rownum + start + 1
        if len(rec) != width:
            raise DataError(f"line {line}: expected {width} columns, got {len(rec)}")
        fields = [rec[i].strip() for i in feature_pos]
        label_tok = rec[label_pos].strip().rstrip(".")
        if schema.missing_token in fields or label_tok in ("", schema.missing_token):
            dropped += 1
            continue
        parsed = []
        ok = True
        for f, tok, cats in zip(schema.features, fields, categories):
            if cats is None:
                try:
                    val = float(tok)
                except ValueError:
                    ok = False
                    break
                if not math.isfinite(val):
                    ok = False
                    break
                parsed.append(val)
            else:
                if tok not in cats:
                    raise DataError(f"line {line}: unknown category {tok!r} for {f.name!r}")
                parsed.append(tok)
        if not ok:
            dropped += 1
            continue
        if label_tok == schema.positive_label:
            y = 1
        elif schema.negative_label is None or label_tok == schema.negative_label:
            y = 0
        else:
            raise DataError(f"line {line}: unknown label {label_tok!r}")
        for col, v in zip(columns, parsed):
            col.append(v)
        labels.append(y)
        ids.append(f"row-{rownum}")

    return RawDataset(
        schema,
        tuple(ids),
        tuple(tuple(c) for c in columns),
        np.array(labels, dtype=np.int8),
        dropped,
    )


def snap(values: np.ndarray) -> np.ndarray:
    scale = float(1 << GRID_BITS)
    return np.round(np.asarray(values, dtype=np.float64) * scale) / scale


def encode_and_normalize(raw: RawDataset, schema: FeatureSchema | None = None) -> NumericDataset:
    """Ordinal-encode categoricals, min-max scale each column, snap to the grid."""
    schema = schema or raw.schema
    mat = np.zeros((raw.n, schema.p), dtype=np.float64)
    for j, (f, col) in enumerate(zip(schema.features, raw.columns)):
        if f.kind == CATEGORICAL:
            lookup = {c: k for k, c in enumerate(f.categories)}
            mat[:, j] = [lookup[v] for v in col]
        else:
            mat[:, j] = col
    if raw.n:
        lo, hi = mat.min(axis=0), mat.max(axis=0)
        span = hi - lo
        const = span == 0
        mat = (mat - lo) / np.where(const, 1.0, span)
        mat[:, const] = 0.0
        mat = snap(mat)
    return NumericDataset(mat, raw.labels.copy(), schema, raw.ids)


def split_indices(n: int, train_fraction: float, seed: int) -> tuple[list[int], list[int]]:
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    if n == 0:
        raise DataError("cannot split an empty dataset")
    perm = permutation(n, seed)
    n_train = math.floor(n * train_fraction)
    return perm[:n_train], perm[n_train:]


def train_test_split(
    dataset: NumericDataset, train_fraction: float = 0.8, seed: int = 0
) -> tuple[NumericDataset, NumericDataset]:
    train_idx, test_idx = split_indices(len(dataset), train_fraction, seed)
    return dataset.take(train_idx), dataset.take(test_idx)


def lower_median(values: np.ndarray, axis: int = 0) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[axis]
    return np.take(np.sort(values, axis=axis), (n - 1) // 2, axis=axis)


def compute_reference(dataset: NumericDataset | np.ndarray) -> ReferenceVector:
    """Per-column median; for even counts the lower middle value, so it is always observed."""
    rows = dataset.rows if isinstance(dataset, NumericDataset) else np.asarray(dataset)
    if len(rows) == 0:
        raise DataError("cannot compute a reference from an empty dataset")
    return ReferenceVector(lower_median(rows, axis=0))


def write_dataset_csv(dataset: NumericDataset, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", *dataset.schema.names, dataset.schema.label_name])
        for rid, row, y in zip(dataset.ids, dataset.rows, dataset.labels):
            w.writerow([rid, *(repr(float(v)) for v in row), int(y)])


def load_adult(path: str | Path, schema: FeatureSchema = ADULT_SCHEMA) -> NumericDataset:
    return encode_and_normalize(load_census_csv(path, schema))
