"""Command-line interface.

Exit codes: 0 success, 1 usage or setup error, 2 partial completion.
"""
import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

from ._util import cache_root
from .data import check_plausibility
from .datasets import dataset_stats, format_stats_row, get_dataset, registered_ids
from .errors import OpenALError
from .metrics import METRIC_NAMES
from .report import comparison_table, write_report
from .runner import load_experiment, load_initial_conditions, load_results, run
from .samplers import SAMPLER_KINDS

EXIT_OK, EXIT_SETUP, EXIT_PARTIAL = 0, 1, 2

CONFIG_KEYS = {
    "dataset_id": "dataset",
    "samplers": "samplers",
    "model": "model",
    "seed": "seed",
    "folds": "folds",
    "init_frac": "init_frac",
    "batch_frac": "batch_frac",
    "iterations": "iterations",
    "beta": "beta",
    "alpha": "alpha",
    "jobs": "jobs",
    "test_frac": "test_frac",
}
DEFAULTS = {
    "dataset": None,
    "samplers": "random,margin",
    "model": "logistic",
    "seed": 0,
    "folds": 10,
    "init_frac": 0.001,
    "batch_frac": 0.001,
    "iterations": 9,
    "beta": None,
    "alpha": 3.0,
    "jobs": 1,
    "test_frac": 0.2,
}


def _err(msg):
    print(f"openalx: {msg}", file=sys.stderr)


def _experiment_flags(p):
    p.add_argument("--config", type=Path, help="JSON file mirroring the experiment config")
    p.add_argument("--dataset", help="dataset id, or a comma list where supported")
    p.add_argument("--samplers", help=f"comma list from: {','.join(SAMPLER_KINDS)}")
    p.add_argument("--model", choices=["logistic", "forest", "auto"])
    p.add_argument("--seed", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--init-frac", dest="init_frac", type=float)
    p.add_argument("--batch-frac", dest="batch_frac", type=float)
    p.add_argument("--iterations", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--jobs", type=int)
    p.add_argument("--out", type=Path, help="root directory for run directories")


def build_parser():
    parser = argparse.ArgumentParser(prog="openalx", description="Active-learning benchmark engine")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("run", help="run (or resume) an experiment")
    _experiment_flags(p)
    p.add_argument("--override-plausibility", action="store_true")

    p = sub.add_parser("report", help="export curve CSVs and SVG plots for a run")
    _experiment_flags(p)

    p = sub.add_parser("compare", help="final-iteration table across datasets and samplers")
    _experiment_flags(p)
    p.add_argument("--metric", default="Accuracy", choices=list(METRIC_NAMES.values()))
    p.add_argument("--format", choices=["text", "csv", "json"], default="text")

    p = sub.add_parser("export-indices", help="write the persisted split/init index file")
    _experiment_flags(p)

    sub.add_parser("list-datasets", help="registered datasets with their statistics")

    p = sub.add_parser("validate", help="check a dataset against its schema and plausibility rule")
    p.add_argument("--dataset", required=True)
    p.add_argument("--override-plausibility", action="store_true")
    return parser


def resolve_options(args):
    """Defaults, then the config file, then explicit flags."""
    opts = dict(DEFAULTS)
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            file_cfg = json.load(fh)
        unknown = set(file_cfg) - set(CONFIG_KEYS)
        if unknown:
            raise OpenALError(f"unknown config keys: {sorted(unknown)}")
        for key, value in file_cfg.items():
            if key == "samplers" and isinstance(value, list):
                value = ",".join(v if isinstance(v, str) else v["kind"] for v in value)
            opts[CONFIG_KEYS[key]] = value
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            opts[key] = value
    if not opts["dataset"]:
        raise OpenALError("--dataset is required")
    samplers = [s.strip() for s in str(opts["samplers"]).split(",") if s.strip()]
    bad = [s for s in samplers if s not in SAMPLER_KINDS]
    if bad:
        raise OpenALError(f"unknown samplers {bad}; valid: {', '.join(SAMPLER_KINDS)}")
    opts["samplers"] = samplers
    opts["datasets"] = [d.strip() for d in str(opts["dataset"]).split(",") if d.strip()]
    return opts


def _config_for(dataset_id, opts, root):
    ic = load_initial_conditions(
        dataset_id, seed=opts["seed"], folds=opts["folds"], test_frac=opts["test_frac"],
        init_frac=opts["init_frac"], root=root,
    )
    config = load_experiment(
        dataset_id, ic, model=opts["model"], samplers=opts["samplers"], batch_frac=opts["batch_frac"],
        iterations=opts["iterations"], alpha=opts["alpha"], beta=opts["beta"], root=root,
    )
    return ic, config


def _run_dir(config, opts, root):
    base = Path(opts["out"]) if opts.get("out") else root / "runs"
    return base / config.config_hash[:16]


def cmd_run(args):
    opts = resolve_options(args)
    opts["out"] = args.out
    root = cache_root()
    status = EXIT_OK
    for dataset_id in opts["datasets"]:
        report = check_plausibility(get_dataset(dataset_id), override=args.override_plausibility)
        if not report.passed:
            _err(f"{dataset_id}: n={report.n} < 10000; use --override-plausibility to run anyway")
            return EXIT_SETUP
        ic, config = _config_for(dataset_id, opts, root)
        print(f"running {dataset_id}: {len(config.samplers)} samplers x {config.folds} folds "
              f"(init {config.init_size}, batch {config.batch_size}, {config.iterations} iterations)",
              file=sys.stderr)
        rs = run(config, initial_conditions=ic, root=root, out=opts["out"], jobs=opts["jobs"],
                 progress=lambda msg: print(msg, file=sys.stderr))
        print(f"{dataset_id}: {rs.stats['cells_computed']} cells computed, "
              f"{rs.stats['cells_cached']} from cache -> {rs.run_dir / 'manifest.json'}", file=sys.stderr)
        print(rs.run_dir)
        for cell in rs.cells:
            if cell["status"] != "ok":
                _err(f"{dataset_id}: {cell['sampler']} fold {cell['fold']} failed: {cell.get('error')}")
        if rs.partial:
            status = EXIT_PARTIAL
    return status


def _load_run(dataset_id, opts, root):
    _, config = _config_for(dataset_id, opts, root)
    run_dir = _run_dir(config, opts, root)
    if not (run_dir / "manifest.json").exists():
        raise OpenALError(f"{dataset_id}: no results under {run_dir}; run the experiment first")
    return load_results(run_dir)


def cmd_report(args):
    opts = resolve_options(args)
    opts["out"] = args.out
    root = cache_root()
    for dataset_id in opts["datasets"]:
        rs = _load_run(dataset_id, opts, root)
        if not rs.records:
            _err(f"{dataset_id}: result set is empty")
            return EXIT_SETUP
        for path in write_report(rs, rs.run_dir / "report"):
            print(path)
    return EXIT_OK


def cmd_compare(args):
    opts = resolve_options(args)
    opts["out"] = args.out
    root = cache_root()
    results = {d: _load_run(d, opts, root) for d in opts["datasets"]}
    sys.stdout.write(comparison_table(results, metric=args.metric, fmt=args.format))
    return EXIT_OK


def cmd_export_indices(args):
    opts = resolve_options(args)
    root = cache_root()
    for dataset_id in opts["datasets"]:
        ic = load_initial_conditions(
            dataset_id, seed=opts["seed"], folds=opts["folds"], test_frac=opts["test_frac"],
            init_frac=opts["init_frac"], root=root,
        )
        dest = Path(args.out) if args.out else Path.cwd()
        if dest.suffix != ".json":
            dest = dest / f"indices-{dataset_id.replace(':', '_')}.json"
        dest.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(ic.path, dest)
        print(dest)
    return EXIT_OK


def cmd_list_datasets(args):
    print("dataset_id: n, classes, continuous/categorical, class balance")
    for dataset_id in registered_ids():
        stats = dataset_stats(get_dataset(dataset_id))
        print(f"{dataset_id}: {format_stats_row(stats)}")
    return EXIT_OK


def cmd_validate(args):
    ds = get_dataset(args.dataset)
    report = check_plausibility(ds, override=args.override_plausibility)
    print(f"{ds.dataset_id}: {format_stats_row(dataset_stats(ds))}")
    for warning in report.warnings:
        _err(warning)
    if not report.passed:
        _err(f"{ds.dataset_id}: n={ds.n} is below the 10000-row plausibility floor")
        return EXIT_SETUP
    print("ok")
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "report": cmd_report,
    "compare": cmd_compare,
    "export-indices": cmd_export_indices,
    "list-datasets": cmd_list_datasets,
    "validate": cmd_validate,
}


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_SETUP if exc.code else EXIT_OK
    try:
        return COMMANDS[args.verb](args)
    except (OpenALError, OSError, ValueError) as exc:
        _err(str(exc))
        return EXIT_SETUP


if __name__ == "__main__":
    sys.exit(main())
