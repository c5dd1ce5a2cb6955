"""Benchmark ingestion, train/test splits and multisource partitioning.

Four datasets are supported: ``compas``, ``adult``, ``germancredit`` and
``drugs``. Each loader reads the public CSV, applies the row filtering and
binning of the benchmark setup and one-hot encodes categorical columns in a
fixed order (schema order, then listed value order).

Protected attribute convention: female -> 1, male -> 0.
"""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

DATA_DIR_ENV = "FLEA_DATA_DIR"

DEFAULT_FILENAMES = {
    "compas": "compas-scores-two-years.csv",
    "adult": "adult.csv",
    "germancredit": "german_credit_data.csv",
    "drugs": "drug_consumption.csv",
}

# Row counts after preprocessing. COMPAS follows the ProPublica analysis
# script, which keeps 6172 of the 7214 rows of compas-scores-two-years.csv.
EXPECTED_ROWS = {"compas": 6172, "adult": 48842, "germancredit": 1000, "drugs": 1885}


class SchemaMismatchError(ValueError):
    """Raised when a CSV does not match the published layout of its dataset."""


class EmptyGroupError(ValueError):
    """Raised when a computation needs both protected groups but one is empty."""


@dataclass(frozen=True)
class Column:
    """One raw input column and how it is encoded.

    ``kind`` is ``"categorical"`` (one-hot over ``values``), ``"numeric"``
    (copied as float) or ``"binned"`` (cut by ``edges`` into ``values``, then
    one-hot). ``aliases`` rewrites raw values before validation; with
    ``catch_all`` every unlisted value maps to that level. Values in
    ``missing`` encode as an all-zero block.
    """

    name: str
    kind: str
    values: tuple = ()
    edges: tuple = ()
    aliases: Mapping = field(default_factory=dict)
    missing: tuple = ()
    catch_all: str | None = None

    def feature_names(self) -> list[str]:
        if self.kind == "numeric":
            return [self.name]
        return [f"{self.name}={v}" for v in self.values]


@dataclass(frozen=True)
class FeatureSchema:
    dataset_id: str
    columns: tuple[Column, ...]
    protected: str
    target: str
    include_protected_in_features: bool = True

    @property
    def feature_names(self) -> list[str]:
        names = []
        for col in self.columns:
            names.extend(col.feature_names())
        if self.include_protected_in_features:
            names.append(self.protected)
        return names

    @property
    def protected_index(self) -> int | None:
        if not self.include_protected_in_features:
            return None
        return len(self.feature_names) - 1

    @property
    def numeric_indices(self) -> list[int]:
        out, offset = [], 0
        for col in self.columns:
            width = len(col.feature_names())
            if col.kind == "numeric":
                out.append(offset)
            offset += width
        return out

    def digest(self) -> str:
        text = "|".join([self.dataset_id, self.protected, self.target, *self.feature_names])
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class Dataset:
    """Features, binary labels and binary protected attribute of ``n`` rows.

    When the schema includes the protected attribute as a feature, that
    column always equals ``protected``; use :meth:`with_protected` to
    rewrite both together.
    """

    features: np.ndarray
    labels: np.ndarray
    protected: np.ndarray
    schema: FeatureSchema | None = None

    def __post_init__(self):
        X = np.array(self.features, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.labels).astype(np.int8)
        a = np.asarray(self.protected).astype(np.int8)
        if X.ndim != 2 or len(X) < 1 or not (len(X) == len(y) == len(a)):
            raise ValueError(f"inconsistent dataset shapes {X.shape}, {y.shape}, {a.shape}")
        if not (np.isin(y, (0, 1)).all() and np.isin(a, (0, 1)).all()):
            raise ValueError("labels and protected attribute must be binary")
        idx = self.protected_index
        if idx is not None and not np.array_equal(X[:, idx], a):
            raise ValueError("protected feature column out of sync with protected attribute")
        for arr in (X, y, a):
            arr.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "protected", a)

    def __len__(self):
        return len(self.labels)

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def protected_index(self) -> int | None:
        return None if self.schema is None else self.schema.protected_index

    def group_counts(self) -> tuple[int, int]:
        n1 = int(self.protected.sum())
        return self.n - n1, n1

    def has_both_groups(self) -> bool:
        return min(self.group_counts()) > 0

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.features[rows], self.labels[rows], self.protected[rows], self.schema)

    def with_labels(self, labels) -> "Dataset":
        return Dataset(self.features, labels, self.protected, self.schema)

    def with_protected(self, protected) -> "Dataset":
        protected = np.asarray(protected).astype(np.int8)
        X = self.features
        idx = self.protected_index
        if idx is not None:
            X = X.copy()
            X[:, idx] = protected
        return Dataset(X, self.labels, protected, self.schema)

    def with_features(self, features) -> "Dataset":
        return Dataset(features, self.labels, self.protected, self.schema)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for arr in (self.features, self.labels, self.protected):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def concat(datasets: Sequence[Dataset]) -> Dataset:
    if not datasets:
        raise ValueError("nothing to concatenate")
    return Dataset(
        np.vstack([d.features for d in datasets]),
        np.concatenate([d.labels for d in datasets]),
        np.concatenate([d.protected for d in datasets]),
        datasets[0].schema,
    )


@dataclass(frozen=True, eq=False)
class SourceBundle:
    sources: tuple[Dataset, ...]
    clean_flags: tuple[bool, ...] | None = None

    def __post_init__(self):
        sources = tuple(self.sources)
        if len(sources) < 2:
            raise ValueError("a source bundle needs at least two sources")
        dims = {s.dim for s in sources}
        if len(dims) != 1:
            raise ValueError(f"sources disagree on feature dimension: {sorted(dims)}")
        object.__setattr__(self, "sources", sources)
        if self.clean_flags is not None:
            flags = tuple(bool(f) for f in self.clean_flags)
            if len(flags) != len(sources):
                raise ValueError("clean_flags must have one entry per source")
            object.__setattr__(self, "clean_flags", flags)

    def __len__(self):
        return len(self.sources)

    def __getitem__(self, i) -> Dataset:
        return self.sources[i]

    def __iter__(self):
        return iter(self.sources)

    def merged(self, indices=None) -> Dataset:
        idx = range(len(self.sources)) if indices is None else sorted(indices)
        return concat([self.sources[i] for i in idx])


# --------------------------------------------------------------------------
# schemas

AGE_BINS = ("<=24", "25-34", "35-44", "45-54", "55-64", ">=65")
AGE_EDGES = (25, 35, 45, 55, 65)

SCHEMAS: dict[str, FeatureSchema] = {
    "compas": FeatureSchema(
        "compas",
        (
            Column("c_charge_degree", "categorical", ("F", "M")),
            Column("age_cat", "categorical", ("Less than 25", "25 - 45", "Greater than 45")),
            Column(
                "race", "categorical", ("African-American", "Caucasian", "Hispanic", "Other"),
                aliases={"Asian": "Other", "Native American": "Other"},
            ),
            Column("priors_count", "numeric"),
        ),
        protected="sex",
        target="two_year_recid",
    ),
    "adult": FeatureSchema(
        "adult",
        (
            Column(
                "workclass", "categorical",
                ("Federal-gov", "Local-gov", "Never-worked", "Private", "Self-emp-inc",
                 "Self-emp-not-inc", "State-gov", "Without-pay", "unknown"),
                aliases={"?": "unknown"},
            ),
            Column(
                "education", "categorical",
                ("1st-4th", "5th-6th", "7th-8th", "9th", "10th", "11th", "12th", "Assoc-acdm",
                 "Assoc-voc", "Bachelors", "Doctorate", "HS-grad", "Masters", "Preschool",
                 "Prof-school", "Some-college"),
            ),
            Column("hours-per-week", "binned", ("<=19", "20-29", "30-39", ">=40"), edges=(20, 30, 40)),
            Column("age", "binned", AGE_BINS, edges=AGE_EDGES),
            Column("native-country", "categorical", ("United-States", "other"),
                   catch_all="other"),
            Column(
                "race", "categorical",
                ("Amer-Indian-Eskimo", "Asian-Pac-Islander", "Black", "White", "Other"),
            ),
        ),
        protected="gender",
        target="income",
    ),
    "germancredit": FeatureSchema(
        "germancredit",
        (
            Column("Age", "binned", AGE_BINS, edges=AGE_EDGES),
            Column("Saving accounts", "categorical", ("little", "moderate", "quite rich", "rich"),
                   missing=("NA",)),
            Column("Checking account", "categorical", ("little", "moderate", "rich"),
                   missing=("NA",)),
            Column("Duration", "numeric"),
            Column("Credit amount", "numeric"),
        ),
        protected="Sex",
        target="Risk",
    ),
    "drugs": FeatureSchema(
        "drugs",
        tuple(
            Column(c, "numeric")
            for c in ("Age", "Education", "Country", "Ethnicity", "Nscore", "Escore", "Oscore",
                      "Ascore", "Cscore", "Impulsive", "SS")
        ),
        protected="Gender",
        target="Coke",
    ),
}

DRUGS_RAW_COLUMNS = (
    "ID", "Age", "Gender", "Education", "Country", "Ethnicity", "Nscore", "Escore", "Oscore",
    "Ascore", "Cscore", "Impulsive", "SS", "Alcohol", "Amphet", "Amyl", "Benzos", "Caff",
    "Cannabis", "Choc", "Coke", "Crack", "Ecstasy", "Heroin", "Ketamine", "Legalh", "LSD",
    "Meth", "Mushrooms", "Nicotine", "Semer", "VSA",
)

# drug consumption stores gender as a precomputed real: 0.48246 female, -0.48246 male
DRUGS_FEMALE = 0.48246


def _encode_column(col: Column, raw: pd.Series) -> np.ndarray:
    if col.kind == "numeric":
        vals = pd.to_numeric(raw, errors="coerce")
        if vals.isna().any():
            row = int(np.flatnonzero(vals.isna().to_numpy())[0])
            raise SchemaMismatchError(f"column {col.name!r}: non-numeric value at row {row}")
        return vals.to_numpy(dtype=float)[:, None]

    if col.kind == "binned":
        vals = pd.to_numeric(raw, errors="coerce")
        if vals.isna().any():
            row = int(np.flatnonzero(vals.isna().to_numpy())[0])
            raise SchemaMismatchError(f"column {col.name!r}: non-numeric value at row {row}")
        codes = np.searchsorted(np.asarray(col.edges, dtype=float), vals.to_numpy(), side="right")
        out = np.zeros((len(raw), len(col.values)))
        out[np.arange(len(raw)), codes] = 1.0
        return out

    text = raw.astype(str).str.strip()
    if col.catch_all is not None:
        text = text.where(text.isin(col.values), col.catch_all)
    if col.aliases:
        text = text.replace(dict(col.aliases))
    is_missing = raw.isna().to_numpy() | text.isin(col.missing).to_numpy()
    lookup = {v: i for i, v in enumerate(col.values)}
    codes = text.map(lookup)
    bad = codes.isna().to_numpy() & ~is_missing
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise SchemaMismatchError(
            f"column {col.name!r}: unlisted value {text.iloc[row]!r} at row {row}")
    out = np.zeros((len(raw), len(col.values)))
    ok = ~is_missing
    out[np.flatnonzero(ok), codes[ok].to_numpy(dtype=int)] = 1.0
    return out


def _binary(raw: pd.Series, positive: set, negative: set, name: str) -> np.ndarray:
    text = raw.astype(str).str.strip()
    pos = text.isin(positive).to_numpy()
    neg = text.isin(negative).to_numpy()
    bad = ~(pos | neg)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise SchemaMismatchError(f"column {name!r}: unexpected value {text.iloc[row]!r} at row {row}")
    return pos.astype(np.int8)


def _require(df: pd.DataFrame, names, dataset_id: str):
    missing = [c for c in names if c not in df.columns]
    if missing:
        raise SchemaMismatchError(f"{dataset_id}: missing column(s) {missing}")


def _filter_compas(df: pd.DataFrame) -> pd.DataFrame:
    # ProPublica compas-analysis predicate; drop identifying columns first
    df = df.drop(columns=[c for c in ("name", "first", "last", "dob") if c in df.columns])
    _require(df, ["days_b_screening_arrest", "is_recid", "c_charge_degree", "score_text"], "compas")
    days = pd.to_numeric(df["days_b_screening_arrest"], errors="coerce")
    keep = (
        (days <= 30) & (days >= -30)
        & (df["is_recid"] != -1)
        & (df["c_charge_degree"] != "O")
        & (df["score_text"].astype(str) != "N/A")
        & df["score_text"].notna()
    )
    return df[keep].reset_index(drop=True)


def _protected_and_target(dataset_id: str, df: pd.DataFrame):
    if dataset_id == "compas":
        a = _binary(df["sex"], {"Female"}, {"Male"}, "sex")
        y = _binary(df["two_year_recid"], {"1"}, {"0"}, "two_year_recid")
    elif dataset_id == "adult":
        a = _binary(df["gender"], {"Female"}, {"Male"}, "gender")
        y = _binary(df["income"].astype(str).str.rstrip("."), {">50K"}, {"<=50K"}, "income")
    elif dataset_id == "germancredit":
        a = _binary(df["Sex"], {"female"}, {"male"}, "Sex")
        y = _binary(df["Risk"], {"good"}, {"bad"}, "Risk")
    else:
        g = pd.to_numeric(df["Gender"], errors="coerce").to_numpy()
        female = np.isclose(g, DRUGS_FEMALE, atol=1e-4)
        male = np.isclose(g, -DRUGS_FEMALE, atol=1e-4)
        if not (female | male).all():
            row = int(np.flatnonzero(~(female | male))[0])
            raise SchemaMismatchError(f"column 'Gender': unexpected value at row {row}")
        a = female.astype(np.int8)
        y = _binary(df["Coke"], {"CL1", "CL2", "CL3", "CL4", "CL5", "CL6"}, {"CL0"}, "Coke")
    return a, y


def _read_csv(path: Path, dataset_id: str) -> pd.DataFrame:
    if dataset_id == "germancredit":
        return pd.read_csv(path, keep_default_na=False, dtype=str)
    if dataset_id == "adult":
        return pd.read_csv(path, dtype=str, skipinitialspace=True, keep_default_na=False)
    if dataset_id == "drugs":
        df = pd.read_csv(path)
        if "Coke" not in df.columns and df.shape[1] == len(DRUGS_RAW_COLUMNS):
            df = pd.read_csv(path, header=None, names=list(DRUGS_RAW_COLUMNS))
        return df
    return pd.read_csv(path)


def resolve_path(dataset_id: str, path=None) -> Path:
    """Return ``path`` or the default file for ``dataset_id`` under ``$FLEA_DATA_DIR``."""
    if path is not None:
        return Path(path)
    base = Path(os.environ.get(DATA_DIR_ENV, "data"))
    return base / DEFAULT_FILENAMES[dataset_id]


def load_dataset(path, dataset_id: str, *, include_protected: bool = True,
                 strict: bool = True) -> Dataset:
    """Read and preprocess one of the four benchmark CSVs.

    With ``strict`` the preprocessed row count must equal
    ``EXPECTED_ROWS[dataset_id]``; disable it for subsets and fixtures.
    """
    if dataset_id not in SCHEMAS:
        raise ValueError(f"unknown dataset {dataset_id!r}; expected one of {sorted(SCHEMAS)}")
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"{dataset_id}: no such file {path}")
    schema = SCHEMAS[dataset_id]
    if not include_protected:
        schema = FeatureSchema(schema.dataset_id, schema.columns, schema.protected,
                               schema.target, include_protected_in_features=False)

    df = _read_csv(path, dataset_id)
    if dataset_id == "compas":
        df = _filter_compas(df)
    _require(df, [c.name for c in schema.columns] + [schema.protected, schema.target], dataset_id)
    if strict and len(df) != EXPECTED_ROWS[dataset_id]:
        raise SchemaMismatchError(
            f"{dataset_id}: {len(df)} rows after preprocessing, expected {EXPECTED_ROWS[dataset_id]}")

    a, y = _protected_and_target(dataset_id, df)
    blocks = [_encode_column(col, df[col.name]) for col in schema.columns]
    if schema.include_protected_in_features:
        blocks.append(a[:, None].astype(float))
    return Dataset(np.hstack(blocks), y, a, schema)


# --------------------------------------------------------------------------
# splits

def train_test_split(d: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n_train = int(np.floor(train_fraction * d.n))
    if n_train < 1 or n_train >= d.n:
        raise ValueError(f"degenerate split: {n_train} of {d.n} rows for training")
    perm = np.random.default_rng(seed).permutation(d.n)
    return d.subset(np.sort(perm[:n_train])), d.subset(np.sort(perm[n_train:]))


def split_sources(d: Dataset, n_sources: int, seed: int) -> SourceBundle:
    """Randomly partition ``d`` into ``n_sources`` parts of near-equal size.

    The first ``n % n_sources`` parts receive one extra row.
    """
    if n_sources < 2:
        raise ValueError("need at least two sources")
    if n_sources > d.n:
        raise ValueError(f"cannot split {d.n} rows into {n_sources} sources")
    perm = np.random.default_rng(seed).permutation(d.n)
    base, extra = divmod(d.n, n_sources)
    sizes = [base + (i < extra) for i in range(n_sources)]
    bounds = np.cumsum([0] + sizes)
    parts = [d.subset(np.sort(perm[bounds[i]:bounds[i + 1]])) for i in range(n_sources)]
    return SourceBundle(tuple(parts), (True,) * n_sources)


def group_fraction(d: Dataset) -> float:
    """Fraction of rows in the smaller protected group."""
    return min(d.group_counts()) / d.n


def protected_fraction(d: Dataset) -> float:
    return float(d.protected.mean())


def standardize(train: Dataset, *others: Dataset) -> tuple[Dataset, ...]:
    """Z-score the schema's numeric columns with statistics of ``train``."""
    if train.schema is None or not train.schema.numeric_indices:
        return (train, *others)
    idx = train.schema.numeric_indices
    mu = train.features[:, idx].mean(axis=0)
    sd = train.features[:, idx].std(axis=0)
    sd[sd == 0] = 1.0

    def apply(d):
        X = d.features.copy()
        X[:, idx] = (X[:, idx] - mu) / sd
        return d.with_features(X)

    return tuple(apply(d) for d in (train, *others))


def write_canonical_csv(d: Dataset, path) -> None:
    """Dump ``d`` as CSV with header ``f0..f{d-1},label,protected``."""
    cols = {f"f{j}": d.features[:, j] for j in range(d.dim)}
    cols["label"] = d.labels
    cols["protected"] = d.protected
    pd.DataFrame(cols).to_csv(path, index=False, float_format="%.17g")


def read_canonical_csv(path, schema: FeatureSchema | None = None) -> Dataset:
    df = pd.read_csv(path, float_precision="round_trip")
    fcols = [c for c in df.columns if c.startswith("f")]
    return Dataset(df[fcols].to_numpy(float), df["label"].to_numpy(), df["protected"].to_numpy(),
                   schema)
