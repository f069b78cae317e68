"""Dataset registry: CSV/schema pairs on disk plus bundled synthetic generators.

Synthetic ids accept an optional row-count suffix, e.g. ``synth-xor:2000``.
"""
from pathlib import Path

import numpy as np

from ._util import cache_root
from .data import CATEGORICAL, CONTINUOUS, Dataset, DatasetSchema, load_dataset
from .errors import DatasetError

DEFAULT_SYNTH_ROWS = 10000
SYNTH_SEED = 20230601


def _continuous_schema(dataset_id, names):
    return DatasetSchema("label", [(n, CONTINUOUS) for n in names], dataset_id)


def make_blobs(n=DEFAULT_SYNTH_ROWS, seed=SYNTH_SEED, dataset_id="synth-blobs"):
    """Two unit-variance Gaussian classes in 4-D, centres 6 apart along the first axis."""
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    X = rng.normal(size=(n, 4))
    X[:, 0] += np.where(y == 1, 3.0, -3.0)
    names = [f"x{i}" for i in range(4)]
    return Dataset({nm: X[:, i] for i, nm in enumerate(names)}, y, _continuous_schema(dataset_id, names))


def make_xor(n=DEFAULT_SYNTH_ROWS, seed=SYNTH_SEED, dataset_id="synth-xor"):
    """Four Gaussian clusters on the corners of a square, labelled by parity."""
    rng = np.random.default_rng(seed)
    corner = np.arange(n) % 4
    sx = np.where(corner % 2 == 0, -1.0, 1.0)
    sy = np.where(corner < 2, -1.0, 1.0)
    X = np.column_stack([sx * 2.0, sy * 2.0]) + 0.5 * rng.normal(size=(n, 2))
    y = (corner % 2) ^ (corner // 2)
    names = ["x0", "x1"]
    return Dataset({nm: X[:, i] for i, nm in enumerate(names)}, y, _continuous_schema(dataset_id, names))


def make_rgb(n=DEFAULT_SYNTH_ROWS, seed=SYNTH_SEED, dataset_id="synth-rgb"):
    """Colour-channel task: uniform RGB pixels, 'skin' iff a fixed linear colour rule holds.

    Separable by construction, with about a fifth of the rows positive.
    """
    rng = np.random.default_rng(seed)
    rgb = rng.uniform(0.0, 255.0, size=(n, 3))
    score = 0.7 * rgb[:, 0] - 0.25 * rgb[:, 1] - 0.35 * rgb[:, 2]
    y = (score > 66.5).astype(int)
    names = ["red", "green", "blue"]
    return Dataset({nm: rgb[:, i] for i, nm in enumerate(names)}, y, _continuous_schema(dataset_id, names))


SYNTHETIC = {"synth-blobs": make_blobs, "synth-xor": make_xor, "synth-rgb": make_rgb}


def data_dir(path=None):
    return Path(path) if path is not None else cache_root() / "datasets"


def _split_id(dataset_id):
    base, _, rows = dataset_id.partition(":")
    return base, rows


def registered_ids(directory=None):
    ids = list(SYNTHETIC)
    d = data_dir(directory)
    if d.is_dir():
        ids.extend(sorted(p.name[: -len(".schema.json")] for p in d.glob("*.schema.json")
                          if (d / (p.name[: -len(".schema.json")] + ".csv")).exists()))
    return ids


def is_registered(dataset_id, directory=None):
    base, _ = _split_id(dataset_id)
    if base in SYNTHETIC:
        return True
    d = data_dir(directory)
    return (d / f"{dataset_id}.csv").exists() and (d / f"{dataset_id}.schema.json").exists()


def get_dataset(dataset_id, directory=None):
    base, rows = _split_id(dataset_id)
    if base in SYNTHETIC:
        n = DEFAULT_SYNTH_ROWS
        if rows:
            try:
                n = int(rows)
            except ValueError:
                raise DatasetError(f"bad row count in {dataset_id!r}") from None
        return SYNTHETIC[base](n=n, dataset_id=dataset_id)
    d = data_dir(directory)
    csv_path, schema_path = d / f"{dataset_id}.csv", d / f"{dataset_id}.schema.json"
    if not (csv_path.exists() and schema_path.exists()):
        raise DatasetError(
            f"unknown dataset {dataset_id!r}; registered: {', '.join(registered_ids(directory))}"
        )
    return load_dataset(csv_path, DatasetSchema.load(schema_path))


def dataset_stats(ds):
    """Table-style summary: n, classes, continuous/categorical counts, class balance."""
    cont, cat = ds.schema.kind_counts()
    balance = "/".join(f"{b:.2f}".rstrip("0").rstrip(".") if b else "0" for b in ds.class_balance())
    return {
        "dataset_id": ds.dataset_id,
        "n": ds.n,
        "classes": ds.n_classes,
        "features": f"{cont}/{cat}",
        "balance": balance,
    }


def format_stats_row(stats):
    return f"{stats['n']}, {stats['classes']}, {stats['features']}, {stats['balance']}"


__all__ = [
    "CATEGORICAL",
    "CONTINUOUS",
    "SYNTHETIC",
    "dataset_stats",
    "format_stats_row",
    "get_dataset",
    "is_registered",
    "make_blobs",
    "make_rgb",
    "make_xor",
    "registered_ids",
]
