"""Dataset loading, preprocessing, stratified splits and initial labeled pools."""
import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._util import atomic_write_text, canonical_json, digest, make_rng, round_half_up
from .errors import (
    DatasetError,
    FormatError,
    IntegrityError,
    ParseError,
    SchemaError,
    StratificationError,
)

logger = logging.getLogger(__name__)

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"
PLAUSIBLE_MIN_ROWS = 10000


@dataclass(frozen=True)
class DatasetSchema:
    label_column: str
    feature_columns: tuple  # of (name, kind)
    dataset_id: str
    classes: tuple = None  # expected class labels, optional

    def __post_init__(self):
        object.__setattr__(
            self, "feature_columns", tuple((str(n), str(k)) for n, k in self.feature_columns)
        )
        if self.classes is not None:
            object.__setattr__(self, "classes", tuple(str(c) for c in self.classes))
        names = [n for n, _ in self.feature_columns]
        if not names:
            raise SchemaError("schema needs at least one feature column")
        if len(set(names)) != len(names):
            raise SchemaError("duplicate feature column names")
        if self.label_column in names:
            raise SchemaError(f"label column {self.label_column!r} is also listed as a feature")
        for name, kind in self.feature_columns:
            if kind not in (CONTINUOUS, CATEGORICAL):
                raise SchemaError(f"column {name!r}: unknown kind {kind!r}")

    @property
    def feature_names(self):
        return [n for n, _ in self.feature_columns]

    def kind_counts(self):
        kinds = [k for _, k in self.feature_columns]
        return kinds.count(CONTINUOUS), kinds.count(CATEGORICAL)

    def to_dict(self):
        out = {
            "label": self.label_column,
            "features": [{"name": n, "kind": k} for n, k in self.feature_columns],
            "dataset_id": self.dataset_id,
        }
        if self.classes is not None:
            out["classes"] = list(self.classes)
        return out

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                label_column=d["label"],
                feature_columns=[(f["name"], f["kind"]) for f in d["features"]],
                dataset_id=str(d["dataset_id"]),
                classes=d.get("classes"),
            )
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed schema: {exc}") from exc

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class Dataset:
    X_raw: dict  # column name -> 1-D array (float for continuous, str for categorical)
    y: np.ndarray
    schema: DatasetSchema

    def __post_init__(self):
        self.y = np.asarray(self.y)
        if self.n < 2:
            raise DatasetError(f"dataset needs at least 2 rows, got {self.n}")
        for name, col in self.X_raw.items():
            if len(col) != self.n:
                raise DatasetError(f"column {name!r} has {len(col)} rows, labels have {self.n}")
        self.classes, self.y_codes = np.unique(self.y, return_inverse=True)
        if len(self.classes) < 2:
            raise DatasetError("dataset needs at least 2 classes")
        if self.schema.classes is not None:
            present = {str(c) for c in self.classes}
            absent = [c for c in self.schema.classes if c not in present]
            if absent:
                raise DatasetError(f"classes absent from data: {absent}")

    @property
    def n(self):
        return len(self.y)

    @property
    def n_classes(self):
        return len(self.classes)

    @property
    def dataset_id(self):
        return self.schema.dataset_id

    def class_balance(self):
        return np.bincount(self.y_codes, minlength=self.n_classes) / self.n


def load_dataset(path, schema):
    """Read a CSV file (header row, RFC 4180 quoting) into a Dataset."""
    path = Path(path)
    if not path.exists():
        raise FormatError(f"no such file: {path}")
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise FormatError(f"{path} is empty")
        rows = list(reader)
    header = [h.strip() for h in header]
    wanted = [schema.label_column] + schema.feature_names
    missing = [c for c in wanted if c not in header]
    if missing:
        raise SchemaError(f"columns missing from {path.name}: {missing}")
    if not rows:
        raise FormatError(f"{path} has a header but no data rows")
    pos = {name: header.index(name) for name in wanted}
    width = len(header)
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ParseError(f"row {i + 1}: expected {width} fields, got {len(row)}", row=i + 1)

    X_raw = {}
    for name, kind in schema.feature_columns:
        j = pos[name]
        if kind == CONTINUOUS:
            col = np.empty(len(rows))
            for i, row in enumerate(rows):
                cell = row[j].strip()
                try:
                    col[i] = float(cell)
                except ValueError:
                    raise ParseError(
                        f"row {i + 1}, column {name!r}: cannot parse {cell!r} as a number",
                        row=i + 1,
                        column=name,
                    ) from None
                if not np.isfinite(col[i]):
                    raise ParseError(
                        f"row {i + 1}, column {name!r}: non-finite value", row=i + 1, column=name
                    )
        else:
            # empty categorical cells are kept as their own category ""
            col = np.array([row[j].strip() for row in rows], dtype=object)
        X_raw[name] = col
    y = np.array([row[pos[schema.label_column]].strip() for row in rows])
    return Dataset(X_raw=X_raw, y=y, schema=schema)


@dataclass
class PlausibilityReport:
    dataset_id: str
    n: int
    passed: bool
    overridden: bool
    warnings: list = field(default_factory=list)


def check_plausibility(ds, override=False):
    """A dataset is worth an AL pipeline only with at least 10000 rows."""
    big_enough = ds.n >= PLAUSIBLE_MIN_ROWS
    warnings = []
    if not big_enough and override:
        warnings.append(
            f"{ds.dataset_id}: n={ds.n} is below {PLAUSIBLE_MIN_ROWS}; accepted by override"
        )
        logger.warning(warnings[-1])
    return PlausibilityReport(
        dataset_id=ds.dataset_id,
        n=ds.n,
        passed=big_enough or bool(override),
        overridden=bool(override) and not big_enough,
        warnings=warnings,
    )


@dataclass
class FeatureMatrix:
    X: np.ndarray
    column_provenance: list  # source column name for every encoded column
    column_names: list

    @property
    def d(self):
        return self.X.shape[1]


def preprocess(ds, fit_idx):
    """Standardize continuous columns and one-hot encode categorical ones.

    All statistics (means, deviations, vocabularies) come from the rows in
    ``fit_idx`` only; the transform is then applied to every row.
    """
    fit_idx = np.asarray(fit_idx, dtype=np.int64)
    if fit_idx.size == 0:
        raise DatasetError("preprocess needs a nonempty fit set")
    blocks, provenance, names = [], [], []
    for name, kind in ds.schema.feature_columns:
        col = ds.X_raw[name]
        if kind == CONTINUOUS:
            col = np.asarray(col, dtype=float)
            mu = col[fit_idx].mean()
            sd = col[fit_idx].std()
            if sd > 0:
                z = (col - mu) / sd
            else:
                z = np.zeros(ds.n)
            blocks.append(z[:, None])
            provenance.append(name)
            names.append(name)
        else:
            vocab = sorted(set(col[fit_idx].tolist()))
            lookup = {v: i for i, v in enumerate(vocab)}
            onehot = np.zeros((ds.n, len(vocab)))
            for i, v in enumerate(col):
                k = lookup.get(v)
                if k is not None:
                    onehot[i, k] = 1.0
            blocks.append(onehot)
            provenance.extend([name] * len(vocab))
            names.extend(f"{name}={v}" for v in vocab)
    X = np.hstack(blocks)
    fit_rows = X[fit_idx]
    if not np.any(fit_rows.max(axis=0) > fit_rows.min(axis=0)):
        raise DatasetError("every feature is constant on the fit rows: no usable features")
    return FeatureMatrix(X=X, column_provenance=provenance, column_names=names)


@dataclass
class Split:
    fold_index: int
    train_idx: np.ndarray
    test_idx: np.ndarray
    seed: int


@dataclass
class LabeledPool:
    labeled_idx: np.ndarray
    iteration: int = 0

    def extend(self, new_idx):
        new_idx = np.asarray(new_idx, dtype=np.int64)
        if np.intersect1d(new_idx, self.labeled_idx).size or len(np.unique(new_idx)) != len(new_idx):
            raise DatasetError("batch revisits an already labeled index")
        return LabeledPool(np.concatenate([self.labeled_idx, new_idx]), self.iteration + 1)


def _test_allocation(counts, n_test):
    """Per-class test counts: floor of the exact share plus largest remainders."""
    exact = counts * (n_test / counts.sum())
    alloc = np.floor(exact).astype(np.int64)
    short = n_test - alloc.sum()
    order = np.argsort(-(exact - alloc), kind="stable")
    alloc[order[:short]] += 1
    return alloc


def stratified_shuffle_split(ds, folds=10, test_frac=0.2, seed=0):
    if folds < 1:
        raise StratificationError("folds must be >= 1")
    if not 0 < test_frac < 1:
        raise StratificationError("test_frac must lie in (0, 1)")
    counts = np.bincount(ds.y_codes, minlength=ds.n_classes)
    small = [str(ds.classes[c]) for c in np.flatnonzero(counts < 2)]
    if small:
        raise StratificationError(f"classes with fewer than 2 rows cannot be split: {small}")
    n_test = round_half_up(test_frac * ds.n)
    if n_test < 1 or n_test >= ds.n:
        raise StratificationError(f"test_frac={test_frac} gives {n_test} test rows out of {ds.n}")
    alloc = _test_allocation(counts, n_test)
    if np.any(alloc >= counts):
        bad = [str(ds.classes[c]) for c in np.flatnonzero(alloc >= counts)]
        raise StratificationError(f"test share would leave no training rows for classes {bad}")
    members = [np.flatnonzero(ds.y_codes == c) for c in range(ds.n_classes)]
    splits = []
    for fold in range(folds):
        rng = make_rng(seed, "split", fold)
        test_parts = []
        for c in range(ds.n_classes):
            if alloc[c]:
                test_parts.append(rng.permutation(members[c])[: alloc[c]])
        test_idx = np.sort(np.concatenate(test_parts))
        train_idx = np.setdiff1d(np.arange(ds.n), test_idx)
        splits.append(Split(fold, train_idx, test_idx, seed))
    return splits


def init_size(n, n_classes, init_frac=0.001):
    return max(n_classes, round_half_up(init_frac * n))


def init_pool(split, ds, init_frac=0.001, seed=None):
    """Random initial labeled pool drawn from the training rows, covering every class."""
    seed = split.seed if seed is None else seed
    train = np.asarray(split.train_idx)
    train_classes = np.unique(ds.y_codes[train])
    if len(train_classes) != ds.n_classes:
        absent = sorted(set(range(ds.n_classes)) - set(train_classes.tolist()))
        raise DatasetError(f"training rows miss classes {[str(ds.classes[c]) for c in absent]}")
    size = init_size(ds.n, ds.n_classes, init_frac)
    if size > len(train):
        raise DatasetError(f"initial pool of {size} exceeds {len(train)} training rows")
    rng = make_rng(seed, "init", split.fold_index)
    picked = rng.permutation(train)[:size]
    labels = ds.y_codes[picked]
    counts = np.bincount(labels, minlength=ds.n_classes)
    protected = set()
    for c in np.flatnonzero(counts == 0):
        candidate = rng.choice(train[ds.y_codes[train] == c])
        # overwrite the lowest-priority pick whose class stays covered without it
        for j in range(size - 1, -1, -1):
            if j not in protected and counts[labels[j]] > 1:
                counts[labels[j]] -= 1
                picked[j], labels[j] = candidate, c
                counts[c] += 1
                protected.add(j)
                break
    return LabeledPool(picked.astype(np.int64), 0)


def _index_body(splits, pools, dataset_id, seed):
    return {
        "dataset_id": dataset_id,
        "seed": seed,
        "folds": [
            {
                "fold": s.fold_index,
                "train": [int(i) for i in s.train_idx],
                "test": [int(i) for i in s.test_idx],
                "init": [int(i) for i in p.labeled_idx],
            }
            for s, p in zip(splits, pools)
        ],
    }


def persist_indices(splits, pools, path, dataset_id="", seed=None):
    if len(splits) != len(pools):
        raise DatasetError("one initial pool per split is required")
    if seed is None:
        seed = splits[0].seed if splits else 0
    body = _index_body(splits, pools, dataset_id, int(seed))
    body["checksum"] = digest(canonical_json(body))
    atomic_write_text(path, canonical_json(body) + "\n")


def read_index_file(path):
    """Parse and verify an index file, returning its JSON body."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        body = json.loads(text)
        checksum = body.pop("checksum")
    except (ValueError, KeyError, AttributeError) as exc:
        raise IntegrityError(f"{path}: unreadable index file ({exc})") from exc
    if digest(canonical_json(body)) != checksum:
        raise IntegrityError(f"{path}: checksum mismatch")
    return body


def load_indices(path):
    body = read_index_file(path)
    splits, pools = [], []
    for entry in body["folds"]:
        splits.append(
            Split(
                entry["fold"],
                np.asarray(entry["train"], dtype=np.int64),
                np.asarray(entry["test"], dtype=np.int64),
                body["seed"],
            )
        )
        pools.append(LabeledPool(np.asarray(entry["init"], dtype=np.int64), 0))
    return splits, pools
