"""Experiment orchestration: initial conditions, configs, cached runs, aggregation."""
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from ._util import atomic_write_text, cache_root, canonical_json, derive_seed, digest, round_half_up
from .data import (
    init_pool,
    init_size,
    load_indices,
    persist_indices,
    preprocess,
    read_index_file,
    stratified_shuffle_split,
)
from .datasets import get_dataset, is_registered, registered_ids
from .errors import ConfigError, DatasetError, MetricError
from .metrics import METRIC_NAMES, IterationSnapshot, MetricRecord, compute_record
from .models import FOREST, LOGISTIC, ModelSpec, embedding_for, fit, predict_1nn, select_model
from .samplers import NEEDS_EMBEDDING, QueryContext, SamplerSpec, select

logger = logging.getLogger(__name__)

ENGINE_VERSION = __version__
OK = "ok"
FAILED = "failed"


@dataclass
class InitialConditions:
    dataset_id: str
    seed: int
    splits: list
    pools: list
    path: Path
    checksum: str
    params: dict = field(default_factory=dict)

    @property
    def folds(self):
        return len(self.splits)


def _index_path(root, dataset_id, params):
    safe = dataset_id.replace("/", "_").replace(":", "_")
    return Path(root) / "indices" / f"{safe}-{digest(params)[:12]}.json"


def load_initial_conditions(
    dataset_id, seed=0, folds=10, test_frac=0.2, init_frac=0.001, init_relative_to="dataset",
    root=None, data_dir=None,
):
    """Canonical splits and initial pools for a dataset, persisted on first use.

    Later calls read the persisted index file, so every caller sees the same
    indices regardless of random-stream differences between machines.
    """
    if not is_registered(dataset_id, data_dir):
        raise DatasetError(
            f"unknown dataset {dataset_id!r}; registered: {', '.join(registered_ids(data_dir))}"
        )
    if init_relative_to not in ("dataset", "train"):
        raise ConfigError("init_relative_to must be 'dataset' or 'train'")
    params = {
        "dataset_id": dataset_id,
        "seed": int(seed),
        "folds": int(folds),
        "test_frac": float(test_frac),
        "init_frac": float(init_frac),
        "init_relative_to": init_relative_to,
    }
    path = _index_path(root or cache_root(), dataset_id, params)
    if not path.exists():
        ds = get_dataset(dataset_id, data_dir)
        splits = stratified_shuffle_split(ds, folds, test_frac, seed)
        frac = init_frac
        if init_relative_to == "train":
            frac = init_frac * len(splits[0].train_idx) / ds.n
        pools = [init_pool(s, ds, frac, seed) for s in splits]
        persist_indices(splits, pools, path, dataset_id=dataset_id, seed=seed)
    body = read_index_file(path)
    splits, pools = load_indices(path)
    return InitialConditions(dataset_id, int(seed), splits, pools, path, digest(canonical_json(body)), params)


@dataclass
class ExperimentConfig:
    dataset_id: str
    model: ModelSpec
    samplers: tuple
    n: int
    n_classes: int
    init_size: int
    batch_size: int
    indices_checksum: str
    folds: int = 10
    test_frac: float = 0.2
    init_frac: float = 0.001
    batch_frac: float = 0.001
    iterations: int = 9
    seed: int = 0
    alpha: float = 3.0
    record_durations: bool = False

    @property
    def final_pool_size(self):
        return self.init_size + self.iterations * self.batch_size

    def experiment_dict(self):
        """Everything that determines a cell's content except the sampler itself."""
        return {
            "dataset_id": self.dataset_id,
            "model": self.model.to_dict(),
            "n": self.n,
            "n_classes": self.n_classes,
            "init_size": self.init_size,
            "batch_size": self.batch_size,
            "indices_checksum": self.indices_checksum,
            "folds": self.folds,
            "test_frac": self.test_frac,
            "init_frac": self.init_frac,
            "batch_frac": self.batch_frac,
            "iterations": self.iterations,
            "seed": self.seed,
            "alpha": self.alpha,
            "record_durations": self.record_durations,
        }

    def to_dict(self):
        out = self.experiment_dict()
        out["samplers"] = [s.to_dict() for s in self.samplers]
        return out

    @property
    def config_hash(self):
        return digest(self.experiment_dict(), ENGINE_VERSION)

    def cell_key(self, sampler, fold):
        return digest(self.experiment_dict(), sampler.to_dict(), int(fold), ENGINE_VERSION)


def _selection_cache(root, dataset_id, specs, seed):
    key = digest(dataset_id, [s.to_dict() for s in specs], seed, ENGINE_VERSION)
    return Path(root) / "selection" / f"{key[:16]}.json"


def resolve_model(model, ds, seed, root):
    """A ModelSpec, or the 5-fold CV winner among the built-in learners for 'auto'."""
    if isinstance(model, ModelSpec):
        return model
    if isinstance(model, dict):
        return ModelSpec.from_dict(model)
    if model in (LOGISTIC, FOREST):
        return ModelSpec(model, seed=seed)
    if model != "auto":
        raise ConfigError(f"unknown model {model!r}; expected logistic, forest or auto")
    specs = [ModelSpec(LOGISTIC, seed=seed), ModelSpec(FOREST, seed=seed)]
    path = _selection_cache(root, ds.dataset_id, specs, seed)
    if path.exists():
        return ModelSpec.from_dict(json.loads(path.read_text())["selected"])
    best, scores = select_model(specs, ds, k=5, seed=seed, return_scores=True)
    atomic_write_text(
        path, canonical_json({"selected": best.to_dict(), "scores": scores}) + "\n"
    )
    return best


def load_experiment(
    dataset_id, initial_conditions, model=LOGISTIC, samplers=("random", "margin"), folds=None,
    batch_frac=0.001, iterations=9, alpha=3.0, beta=None, record_durations=False,
    root=None, data_dir=None,
):
    """Experimental parameters for a dataset under the fixed protocol."""
    ic = initial_conditions
    if ic.dataset_id != dataset_id:
        raise ConfigError(f"initial conditions belong to {ic.dataset_id!r}, not {dataset_id!r}")
    if folds is not None and folds != ic.folds:
        raise ConfigError(f"config asks for {folds} folds, initial conditions hold {ic.folds}")
    if iterations < 0 or batch_frac <= 0:
        raise ConfigError("iterations must be >= 0 and batch_frac positive")
    ds = get_dataset(dataset_id, data_dir)
    specs = []
    for s in samplers:
        if isinstance(s, SamplerSpec):
            spec = s
        elif isinstance(s, dict):
            spec = SamplerSpec.from_dict(s)
        else:
            spec = SamplerSpec(s) if beta is None or s not in ("wkmeans", "iwkmeans") else SamplerSpec(s, beta=beta)
        specs.append(spec)
    kinds = [s.kind for s in specs]
    if not specs:
        raise ConfigError("at least one sampler is required")
    if len(set(kinds)) != len(kinds):
        raise ConfigError(f"duplicate sampler kinds: {kinds}")
    seed = ic.seed
    model_spec = resolve_model(model, ds, seed, root or cache_root())
    return ExperimentConfig(
        dataset_id=dataset_id,
        model=model_spec,
        samplers=tuple(specs),
        n=ds.n,
        n_classes=ds.n_classes,
        init_size=len(ic.pools[0].labeled_idx),
        batch_size=max(1, round_half_up(batch_frac * ds.n)),
        indices_checksum=ic.checksum,
        folds=ic.folds,
        test_frac=ic.params.get("test_frac", 0.2),
        init_frac=ic.params.get("init_frac", 0.001),
        batch_frac=batch_frac,
        iterations=iterations,
        seed=seed,
        alpha=alpha,
        record_durations=record_durations,
    )


def protocol_sizes(n, n_classes, init_frac=0.001, batch_frac=0.001, iterations=9):
    """(initial pool, batch, final pool) sizes implied by the protocol."""
    init = init_size(n, n_classes, init_frac)
    batch = max(1, round_half_up(batch_frac * n))
    return init, batch, init + iterations * batch


@dataclass
class IterationRecord:
    fold: int
    iteration: int
    sampler: str
    metrics: MetricRecord
    selected: list
    pool_size: int
    duration_s: float = None

    def to_json(self):
        return canonical_json(
            {
                "fold": self.fold,
                "iteration": self.iteration,
                "sampler": self.sampler,
                "metrics": self.metrics.to_named(),
                "selected": [int(i) for i in self.selected],
                "pool_size": self.pool_size,
                "duration_s": self.duration_s,
            }
        )

    @classmethod
    def from_json(cls, line):
        d = json.loads(line)
        return cls(
            fold=d["fold"],
            iteration=d["iteration"],
            sampler=d["sampler"],
            metrics=MetricRecord.from_named(d["metrics"]),
            selected=d["selected"],
            pool_size=d["pool_size"],
            duration_s=d.get("duration_s"),
        )


@dataclass
class ResultSet:
    config_hash: str
    records: list
    cells: list  # dicts: sampler, fold, status, path, error
    provenance: dict
    run_dir: Path = None
    stats: dict = field(default_factory=dict)

    @property
    def partial(self):
        return any(c["status"] != OK for c in self.cells)

    def samplers(self):
        seen = []
        for c in self.cells:
            if c["sampler"] not in seen:
                seen.append(c["sampler"])
        return seen

    def complete_records(self, sampler):
        ok = {c["fold"] for c in self.cells if c["sampler"] == sampler and c["status"] == OK}
        return [r for r in self.records if r.sampler == sampler and r.fold in ok]


class _FoldData:
    """Per-fold preprocessed features, built lazily and shared across samplers."""

    def __init__(self, ds, ic):
        self.ds = ds
        self.ic = ic
        self._fm = {}

    def features(self, fold):
        if fold not in self._fm:
            self._fm[fold] = preprocess(self.ds, self.ic.splits[fold].train_idx)
        return self._fm[fold]


def run_cell(config, sampler, fold, ds, fm, split, pool0):
    """Run one (sampler, fold) active-learning trajectory; returns (records, n_fits)."""
    X, y = fm.X, ds.y_codes
    test = split.test_idx
    labeled = np.asarray(pool0.labeled_idx, dtype=np.int64)
    cell_seed = derive_seed(config.seed, sampler.kind, int(fold))
    records, prev, fits = [], None, 0
    selected = labeled.copy()
    for t in range(config.iterations + 1):
        started = time.perf_counter()
        model = fit(config.model, X[labeled], y[labeled])
        fits += 1
        knn_pred, dist = predict_1nn(X[labeled], y[labeled], X[test], return_distance=True)
        snap = IterationSnapshot(t, model.predict(X[test]), knn_pred, dist, X[labeled], X[test])
        metrics = compute_record(prev, snap, y[test], alpha=config.alpha)
        prev = snap
        if t < config.iterations:
            unlabeled = np.setdiff1d(split.train_idx, labeled)
            ctx = QueryContext(unlabeled, min(config.batch_size, len(unlabeled)),
                               probs=model.predict_proba(X[unlabeled]))
            if sampler.kind in NEEDS_EMBEDDING:
                emb = embedding_for(config.model, model, X[labeled], X[np.concatenate([unlabeled, labeled])])
                ctx.Z_unlabeled = emb.Z[: len(unlabeled)]
                ctx.Z_labeled = emb.Z[len(unlabeled):]
            batch = select(sampler, ctx, derive_seed(cell_seed, t))
        duration = time.perf_counter() - started if config.record_durations else None
        records.append(
            IterationRecord(int(fold), t, sampler.kind, metrics, [int(i) for i in selected],
                            len(labeled), duration)
        )
        if t < config.iterations:
            labeled = np.concatenate([labeled, batch])
            selected = batch
    return records, fits


def _cell_path(run_dir, config, sampler, fold):
    return Path(run_dir) / "cells" / f"{sampler.kind}-{config.cell_key(sampler, fold)[:12]}-fold{fold:02d}.jsonl"


def _read_cell(path, config):
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        records = [IterationRecord.from_json(line) for line in lines]
    except (OSError, ValueError, KeyError):
        return None
    if len(records) != config.iterations + 1:
        return None
    return records


def _compute_cell_job(args):
    config, sampler, fold, ic, data_dir = args
    ds = get_dataset(config.dataset_id, data_dir)
    fm = preprocess(ds, ic.splits[fold].train_idx)
    return run_cell(config, sampler, fold, ds, fm, ic.splits[fold], ic.pools[fold])


def run(config, samplers=None, initial_conditions=None, root=None, out=None, jobs=1, data_dir=None,
        progress=None):
    """Run every (sampler, fold) cell, reusing cached cells, and write the manifest."""
    root = Path(root) if root else cache_root()
    specs = list(config.samplers if samplers is None else samplers)
    specs = [s if isinstance(s, SamplerSpec) else SamplerSpec(s) for s in specs]
    if not specs:
        raise ConfigError("no samplers to run")
    ic = initial_conditions
    if ic is None:
        ic = load_initial_conditions(
            config.dataset_id, config.seed, config.folds, config.test_frac, config.init_frac,
            root=root, data_dir=data_dir,
        )
    if ic.checksum != config.indices_checksum:
        raise ConfigError("initial conditions do not match the config's index checksum")
    run_dir = Path(out) / config.config_hash[:16] if out else root / "runs" / config.config_hash[:16]
    stats = {"fits": 0, "cells_computed": 0, "cells_cached": 0}
    results, pending = {}, []
    for sampler in specs:
        for fold in range(config.folds):
            path = _cell_path(run_dir, config, sampler, fold)
            cached = _read_cell(path, config) if path.exists() else None
            if cached is not None:
                results[(sampler.kind, fold)] = (OK, cached, None)
                stats["cells_cached"] += 1
            else:
                pending.append((sampler, fold, path))

    def finish(sampler, fold, path, outcome):
        if isinstance(outcome, BaseException):
            logger.error("cell %s/fold %d failed: %s", sampler.kind, fold, outcome)
            results[(sampler.kind, fold)] = (FAILED, [], f"{type(outcome).__name__}: {outcome}")
            return
        records, fits = outcome
        stats["fits"] += fits
        stats["cells_computed"] += 1
        atomic_write_text(path, "".join(r.to_json() + "\n" for r in records))
        results[(sampler.kind, fold)] = (OK, records, None)
        if progress:
            progress(f"{config.dataset_id} {sampler.kind} fold {fold}: done")

    if pending and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [(s, f, p, pool.submit(_compute_cell_job, (config, s, f, ic, data_dir)))
                       for s, f, p in pending]
            for s, f, p, fut in futures:
                try:
                    outcome = fut.result()
                except Exception as exc:  # a failing cell must not abort the run
                    outcome = exc
                finish(s, f, p, outcome)
    elif pending:
        ds = get_dataset(config.dataset_id, data_dir)
        folds = _FoldData(ds, ic)
        for s, f, p in pending:
            try:
                outcome = run_cell(config, s, f, ds, folds.features(f), ic.splits[f], ic.pools[f])
            except Exception as exc:  # a failing cell must not abort the run
                outcome = exc
            finish(s, f, p, outcome)

    cells, records = [], []
    for sampler in specs:
        for fold in range(config.folds):
            status, recs, error = results[(sampler.kind, fold)]
            entry = {
                "sampler": sampler.kind,
                "fold": fold,
                "status": status,
                "path": _cell_path(run_dir, config, sampler, fold).relative_to(run_dir).as_posix(),
            }
            if error:
                entry["error"] = error
            cells.append(entry)
            records.extend(recs)
    full_config = config.to_dict()
    full_config["samplers"] = [s.to_dict() for s in specs]
    manifest = {
        "config": full_config,
        "config_hash": config.config_hash,
        "engine_version": ENGINE_VERSION,
        "cells": cells,
    }
    atomic_write_text(run_dir / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    provenance = {"engine_version": ENGINE_VERSION, "config": full_config}
    return ResultSet(config.config_hash, records, cells, provenance, run_dir, stats)


def load_results(run_dir):
    """Rebuild a ResultSet from a run directory's manifest and cell files."""
    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
    records, cells = [], []
    for cell in manifest["cells"]:
        cell = dict(cell)
        if cell["status"] == OK:
            try:
                lines = (run_dir / cell["path"]).read_text(encoding="utf-8").splitlines()
                records.extend(IterationRecord.from_json(line) for line in lines)
            except (OSError, ValueError):
                cell["status"] = FAILED
                cell["error"] = "cell file missing or unreadable"
        cells.append(cell)
    provenance = {"engine_version": manifest["engine_version"], "config": manifest["config"]}
    return ResultSet(manifest["config_hash"], records, cells, provenance, run_dir)


def metric_field(metric):
    """Accept either the published name ('Hard-Exploration') or the field name."""
    if metric in METRIC_NAMES:
        return metric
    reverse = {v: k for k, v in METRIC_NAMES.items()}
    if metric in reverse:
        return reverse[metric]
    raise MetricError(f"unknown metric {metric!r}; valid: {', '.join(METRIC_NAMES.values())}")


def _fold_matrix(rs, sampler, field_name):
    """(folds, iterations) matrix of metric values over the complete cells of a sampler."""
    by_fold = {}
    for r in rs.complete_records(sampler):
        by_fold.setdefault(r.fold, {})[r.iteration] = getattr(r.metrics, field_name)
    folds = sorted(by_fold)
    if not folds:
        return folds, np.zeros((0, 0))
    iters = sorted(by_fold[folds[0]])
    return folds, np.array([[by_fold[f][t] for t in iters] for f in folds])


def aggregate(rs, metric):
    """Per sampler and iteration: mean, 10th and 90th percentile over folds."""
    field_name = metric_field(metric)
    bands = {}
    for sampler in rs.samplers():
        failed = [c["fold"] for c in rs.cells if c["sampler"] == sampler and c["status"] != OK]
        if failed:
            logger.warning("%s: excluding failed folds %s from aggregation", sampler, failed)
        folds, M = _fold_matrix(rs, sampler, field_name)
        if len(folds) < 2:
            raise MetricError(f"{sampler}: aggregation needs at least 2 complete folds, have {len(folds)}")
        p10, p90 = np.percentile(M, [10, 90], axis=0)
        mean = M.mean(axis=0)
        bands[sampler] = [
            {"iteration": t, "mean": float(mean[t]), "p10": float(p10[t]), "p90": float(p90[t]),
             "folds": len(folds)}
            for t in range(M.shape[1])
        ]
    return bands


@dataclass
class DominanceRow:
    iteration: object  # int, or "final" for the summary row
    mean_diff: float
    sign: int
    wins: int
    losses: int
    ties: int


def compare(rs, sampler_a, sampler_b, metric="Accuracy"):
    """Fold-wise dominance of sampler_a over sampler_b at every iteration."""
    field_name = metric_field(metric)
    folds_a, A = _fold_matrix(rs, sampler_a, field_name)
    folds_b, B = _fold_matrix(rs, sampler_b, field_name)
    if not folds_a or folds_a != folds_b or A.shape != B.shape:
        raise MetricError(f"{sampler_a} and {sampler_b} have incomparable result grids")
    rows = []
    for t in range(A.shape[1]):
        diff = A[:, t] - B[:, t]
        mean_diff = float(A[:, t].mean() - B[:, t].mean())
        rows.append(
            DominanceRow(t, mean_diff, int(np.sign(mean_diff)), int(np.sum(diff > 0)),
                         int(np.sum(diff < 0)), int(np.sum(diff == 0)))
        )
    last = rows[-1]
    rows.append(DominanceRow("final", last.mean_diff, last.sign, last.wins, last.losses, last.ties))
    return rows


def format_band(mean, p10, p90, scale=100.0, digits=1):
    """'mean ± half-spread' summary, e.g. '87.1 ± 0.4'."""
    return f"{mean * scale:.{digits}f} ± {(p90 - p10) / 2 * scale:.{digits}f}"
