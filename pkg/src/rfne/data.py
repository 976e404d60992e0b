"""Tabular data handling: schema, CSV loading, one-hot encoding and splitting.

Raw values live in a :class:`pandas.DataFrame` (numeric columns as float with
NaN for missing, categorical columns as ``str`` or ``None``).  Encoding turns
this into a dense float matrix together with an :class:`EncodingMap` that can
map every encoded column back to its source feature, which is what rule
decoding relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd
import yaml

from .exceptions import ConfigError, DataError, SchemaMismatchError

NUMERIC = "numeric"
CATEGORICAL = "categorical"
MISSING = "missing"
DEFAULT_MISSING_MARKERS = ("", "NA", "unknown")
MAX_CATEGORICAL_LEVELS = 20


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in (NUMERIC, CATEGORICAL):
            raise ConfigError(f"feature {self.name!r}: unknown kind {self.kind!r}")
        object.__setattr__(self, "categories", tuple(str(c) for c in self.categories))
        if self.kind == NUMERIC and self.categories:
            raise ConfigError(f"numeric feature {self.name!r} cannot declare categories")
        if MISSING in self.categories:
            raise ConfigError(
                f"feature {self.name!r}: category name {MISSING!r} is reserved")
        if len(set(self.categories)) != len(self.categories):
            raise ConfigError(f"feature {self.name!r}: duplicate categories")


@dataclass(frozen=True)
class Schema:
    """Ordered feature roster plus the binary target definition."""

    features: tuple[Feature, ...]
    target: str
    positive_label: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise ConfigError("feature names must be unique")
        if self.target in names:
            raise ConfigError(f"target {self.target!r} is also listed as a feature")

    @property
    def feature_names(self) -> list[str]:
        return [f.name for f in self.features]

    def __getitem__(self, name: str) -> Feature:
        for f in self.features:
            if f.name == name:
                return f
        raise KeyError(name)

    def with_categories(self, categories: dict[str, Sequence[str]]) -> "Schema":
        features = tuple(
            Feature(f.name, f.kind, tuple(categories.get(f.name, f.categories)))
            for f in self.features
        )
        return Schema(features, self.target, self.positive_label)

    def to_dict(self) -> dict:
        feats = []
        for f in self.features:
            entry = {"name": f.name, "kind": f.kind}
            if f.kind == CATEGORICAL:
                entry["categories"] = list(f.categories)
            feats.append(entry)
        return {"target": self.target, "positive_label": self.positive_label,
                "features": feats}

    @classmethod
    def from_dict(cls, spec: dict) -> "Schema":
        if not isinstance(spec, dict):
            raise ConfigError("schema must be a mapping")
        unknown = set(spec) - {"target", "positive_label", "features"}
        if unknown:
            raise ConfigError(f"unknown schema keys: {sorted(unknown)}")
        if "target" not in spec or "features" not in spec:
            raise ConfigError("schema needs 'target' and 'features'")
        features = []
        for entry in spec["features"]:
            if isinstance(entry, str):
                raise ConfigError(f"feature {entry!r} needs an explicit kind")
            bad = set(entry) - {"name", "kind", "categories"}
            if bad:
                raise ConfigError(f"unknown feature keys: {sorted(bad)}")
            features.append(Feature(str(entry["name"]), entry.get("kind", NUMERIC),
                                    tuple(entry.get("categories") or ())))
        label = spec.get("positive_label")
        return cls(tuple(features), str(spec["target"]),
                   None if label is None else str(label))


def load_schema(path) -> Schema:
    """Read a schema from a YAML file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"schema file not found: {path}")
    try:
        spec = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse schema {path}: {exc}") from exc
    return Schema.from_dict(spec)


def save_schema(schema: Schema, path) -> None:
    Path(path).write_text(yaml.safe_dump(schema.to_dict(), sort_keys=False))


@dataclass
class Dataset:
    """Raw rows (``frame``) aligned with a 0/1 target vector."""

    schema: Schema
    frame: pd.DataFrame
    target: np.ndarray

    def __post_init__(self):
        self.target = np.asarray(self.target, dtype=np.int64)
        if len(self.frame) != len(self.target):
            raise DataError("rows and target differ in length")
        if list(self.frame.columns) != self.schema.feature_names:
            raise SchemaMismatchError("frame columns do not match schema features")

    def __len__(self):
        return len(self.target)

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices)
        return Dataset(self.schema, self.frame.iloc[indices].reset_index(drop=True),
                       self.target[indices])

    def column(self, name: str) -> pd.Series:
        return self.frame[name]


def _is_number(value: str) -> bool:
    try:
        return math.isfinite(float(value))
    except ValueError:
        return False


def _positive_label(labels: Iterable[str], declared: str | None) -> str:
    labels = sorted(set(labels))
    if declared is not None:
        if declared not in labels and len(labels) == 2:
            raise DataError(f"positive label {declared!r} not among target values {labels}")
        return declared
    if len(labels) == 1:
        raise DataError("target has a single class; declare positive_label explicitly")
    return labels[-1]


def binarize(values, positive_label: str | None = None, missing=()) -> tuple[np.ndarray, str]:
    """Map a two-valued column to 0/1; returns the vector and the positive label."""
    raw = pd.Series(values).astype(object)
    text = raw.map(lambda v: None if v is None or (isinstance(v, float) and math.isnan(v))
                   else str(v).strip())
    bad = text.isna() | text.isin(list(missing))
    if bad.any():
        raise DataError(f"target has {int(bad.sum())} missing values")
    labels = set(text)
    if len(labels) > 2:
        raise DataError(f"non-binary target: {len(labels)} distinct labels {sorted(labels)[:5]}")
    positive = _positive_label(labels, positive_label)
    return (text == positive).to_numpy(dtype=np.int64), positive


def _parse_numeric(col: pd.Series, missing: set[str], name: str) -> pd.Series:
    def conv(v):
        if v in missing:
            return np.nan
        try:
            return float(v)
        except ValueError:
            raise DataError(f"column {name!r}: cannot parse {v!r} as a number") from None
    return col.map(conv).astype(float)


def _parse_categorical(col: pd.Series, missing: set[str], declared: tuple[str, ...]) -> pd.Series:
    keep = set(declared)
    return col.map(lambda v: None if (v in missing and v not in keep) else v).astype(object)


def infer_kind(values: Sequence[str], missing=DEFAULT_MISSING_MARKERS) -> str:
    """Categorical iff any value fails to parse as a number or there are <= 20 levels.

    The level cap only applies when some value repeats: a short column of
    distinct numbers carries no evidence of being a code list.
    """
    present = [v for v in values if v not in set(missing)]
    if any(not _is_number(v) for v in present):
        return CATEGORICAL
    levels = len(set(present))
    if levels <= MAX_CATEGORICAL_LEVELS and levels < len(present):
        return CATEGORICAL
    return NUMERIC


def load_csv(path, schema: Schema | str = "infer", *, target: str | None = None,
             positive_label: str | None = None, delimiter: str = ",",
             missing: Sequence[str] = DEFAULT_MISSING_MARKERS) -> Dataset:
    """Load a delimited text file with a header row into a :class:`Dataset`.

    With ``schema="infer"`` every non-target column becomes a feature and its
    kind is guessed by :func:`infer_kind`; ``target`` must then be given.
    Declared categories in an explicit schema are never treated as missing
    markers, so a schema may keep ``"unknown"`` as a real level.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    try:
        raw = pd.read_csv(path, sep=delimiter, dtype=str, keep_default_na=False,
                          skipinitialspace=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot parse {path}: {exc}") from exc
    raw.columns = [c.strip() for c in raw.columns]
    raw = raw.apply(lambda c: c.str.strip())
    missing_set = set(missing)

    if isinstance(schema, str):
        if schema != "infer":
            schema = load_schema(schema)
        else:
            if target is None:
                raise ConfigError("schema inference needs the target column name")
            if target not in raw.columns:
                raise DataError(f"target column {target!r} absent from {path}")
            feats = []
            for name in raw.columns:
                if name == target:
                    continue
                kind = infer_kind(raw[name].tolist(), missing)
                feats.append(Feature(name, kind))
            schema = Schema(tuple(feats), target, positive_label)
    if positive_label is not None and schema.positive_label is None:
        schema = Schema(schema.features, schema.target, positive_label)

    if schema.target not in raw.columns:
        raise DataError(f"target column {schema.target!r} absent from {path}")
    absent = [n for n in schema.feature_names if n not in raw.columns]
    if absent:
        raise SchemaMismatchError(f"header lacks schema features: {absent}")

    y, positive = binarize(raw[schema.target], schema.positive_label, missing)
    columns = {}
    categories = {}
    for feat in schema.features:
        col = raw[feat.name]
        if feat.kind == NUMERIC:
            columns[feat.name] = _parse_numeric(col, missing_set, feat.name)
        else:
            parsed = _parse_categorical(col, missing_set, feat.categories)
            columns[feat.name] = parsed
            if not feat.categories:
                levels = sorted({v for v in parsed if v is not None})
                if not levels:
                    raise DataError(f"categorical column {feat.name!r} has no non-missing values")
                categories[feat.name] = levels
    schema = Schema(schema.with_categories(categories).features, schema.target, positive)
    frame = pd.DataFrame(columns, columns=schema.feature_names)
    return Dataset(schema, frame, y)


@dataclass(frozen=True)
class EncodedColumn:
    """One encoded column: a numeric feature (with impute value) or one indicator."""

    feature: str
    category: str | None = None
    impute: float | None = None

    @property
    def is_indicator(self) -> bool:
        return self.category is not None

    @property
    def name(self) -> str:
        return self.feature if self.category is None else f"{self.feature}={self.category}"


@dataclass(frozen=True)
class EncodingMap:
    schema: Schema
    columns: tuple[EncodedColumn, ...]

    def __len__(self):
        return len(self.columns)

    @property
    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]

    def decode(self, index: int) -> EncodedColumn:
        return self.columns[index]

    def block(self, feature: str) -> list[int]:
        """Encoded column indices that originate from ``feature``."""
        return [i for i, c in enumerate(self.columns) if c.feature == feature]

    def to_dict(self) -> dict:
        return {
            "schema": self.schema.to_dict(),
            "columns": [{"feature": c.feature, "category": c.category, "impute": c.impute}
                        for c in self.columns],
        }

    @classmethod
    def from_dict(cls, spec: dict) -> "EncodingMap":
        cols = tuple(EncodedColumn(c["feature"], c["category"], c["impute"])
                     for c in spec["columns"])
        return cls(Schema.from_dict(spec["schema"]), cols)


@dataclass
class EncodedDataset:
    matrix: np.ndarray
    target: np.ndarray
    map: EncodingMap

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        self.target = np.asarray(self.target, dtype=np.int64)
        if self.matrix.ndim != 2 or self.matrix.shape[1] != len(self.map):
            raise SchemaMismatchError("matrix width does not match encoding map")
        if self.matrix.shape[0] != self.target.shape[0]:
            raise DataError("matrix and target differ in length")

    def __len__(self):
        return self.matrix.shape[0]

    def subset(self, indices) -> "EncodedDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return EncodedDataset(self.matrix[indices], self.target[indices], self.map)


def fit_encoding(dataset: Dataset) -> EncodingMap:
    """Median imputation for numeric features, one-hot plus ``missing`` for categoricals."""
    if len(dataset) == 0:
        raise DataError("cannot fit an encoding on a zero-row dataset")
    cols = []
    for feat in dataset.schema.features:
        values = dataset.frame[feat.name]
        if feat.kind == NUMERIC:
            present = values.to_numpy(dtype=float)
            present = present[~np.isnan(present)]
            median = float(np.median(present)) if present.size else 0.0
            cols.append(EncodedColumn(feat.name, None, median))
        else:
            for cat in feat.categories:
                cols.append(EncodedColumn(feat.name, cat))
            cols.append(EncodedColumn(feat.name, MISSING))
    return EncodingMap(dataset.schema, tuple(cols))


def encode(dataset: Dataset, encoding: EncodingMap) -> EncodedDataset:
    """Apply a fitted encoding; unseen categories fold into the ``missing`` indicator."""
    names = [f.name for f in encoding.schema.features]
    if dataset.schema.feature_names != names:
        raise SchemaMismatchError("dataset features differ from the encoding schema")
    n = len(dataset)
    out = np.zeros((n, len(encoding)), dtype=np.float64)
    for feat in encoding.schema.features:
        idx = encoding.block(feat.name)
        values = dataset.frame[feat.name]
        if feat.kind == NUMERIC:
            col = values.to_numpy(dtype=float).copy()
            col[np.isnan(col)] = encoding.columns[idx[0]].impute
            out[:, idx[0]] = col
        else:
            position = {encoding.columns[i].category: j for j, i in enumerate(idx)}
            missing_pos = position[MISSING]
            hot = np.fromiter((position.get(v, missing_pos) if v is not None else missing_pos
                               for v in values), dtype=np.int64, count=n)
            out[np.arange(n), np.asarray(idx)[hot]] = 1.0
    return EncodedDataset(out, dataset.target, encoding)


def split_indices(target, train_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Stratified, seeded train/test index split.

    The total train size is ``round(train_fraction * n)``; per-class quotas
    use largest-remainder allocation so class proportions are kept to within
    one row.
    """
    if not 0.0 < train_fraction <= 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1], got {train_fraction}")
    target = np.asarray(target)
    n = target.shape[0]
    if train_fraction == 1.0:
        return np.arange(n), np.array([], dtype=np.int64)
    if n < 2:
        raise DataError("need at least two rows to split")
    n_train = int(math.floor(train_fraction * n + 0.5))
    n_train = min(max(n_train, 1), n - 1)

    classes, counts = np.unique(target, return_counts=True)
    exact = counts * (n_train / n)
    quota = np.floor(exact).astype(np.int64)
    remainder = exact - quota
    order = np.lexsort((classes, -remainder))
    for i in order[: n_train - quota.sum()]:
        quota[i] += 1

    rng = np.random.default_rng(seed)
    train, test = [], []
    for cls, q in zip(classes, quota):
        members = np.flatnonzero(target == cls)
        members = members[rng.permutation(members.size)]
        train.append(members[:q])
        test.append(members[q:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def split(dataset: EncodedDataset, train_fraction: float, seed: int):
    train_idx, test_idx = split_indices(dataset.target, train_fraction, seed)
    return dataset.subset(train_idx), dataset.subset(test_idx)


def stratified_folds(target, n_folds: int, seed: int) -> list[np.ndarray]:
    """Assign rows to ``n_folds`` stratified folds; returns the held-out index sets."""
    target = np.asarray(target)
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(n_folds)]
    offset = 0
    for cls in np.unique(target):
        members = np.flatnonzero(target == cls)
        members = members[rng.permutation(members.size)]
        for j, row in enumerate(members):
            folds[(j + offset) % n_folds].append(row)
        offset += members.size
    return [np.sort(np.asarray(f, dtype=np.int64)) for f in folds]
