import json

import numpy as np
import pytest

from openalx.datasets import data_dir
from openalx.errors import ConfigError, DatasetError, IntegrityError, MetricError
from openalx.metrics import MetricRecord
from openalx.runner import (
    ResultSet,
    aggregate,
    compare,
    format_band,
    load_experiment,
    load_initial_conditions,
    load_results,
    protocol_sizes,
    run,
)
from registry import labels_with_fractions, register_csv


@pytest.fixture(scope="module")
def blobs_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("runner-cache")
    ic = load_initial_conditions("synth-blobs", root=root)
    config = load_experiment("synth-blobs", ic, samplers=("random", "margin"), root=root)
    rs = run(config, initial_conditions=ic, root=root)
    return root, ic, config, rs


def cell_bytes(run_dir):
    return {p.name: p.read_bytes() for p in sorted((run_dir / "cells").iterdir())}


class TestInitialConditions:
    def test_ten_folds_with_valid_pools(self):
        ic = load_initial_conditions("synth-xor:3000")
        assert ic.folds == 10
        for split, pool in zip(ic.splits, ic.pools):
            assert set(pool.labeled_idx) <= set(split.train_idx)
            assert len(pool.labeled_idx) == len(set(pool.labeled_idx))

    def test_idempotent(self):
        a = load_initial_conditions("synth-xor:3000")
        b = load_initial_conditions("synth-xor:3000")
        assert a.checksum == b.checksum and a.path == b.path
        for sa, sb in zip(a.splits, b.splits):
            assert np.array_equal(sa.train_idx, sb.train_idx) and np.array_equal(sa.test_idx, sb.test_idx)

    def test_persisted_file_wins(self):
        a = load_initial_conditions("synth-xor:3000")
        mtime = a.path.stat().st_mtime_ns
        load_initial_conditions("synth-xor:3000")
        assert a.path.stat().st_mtime_ns == mtime

    def test_tampered(self):
        ic = load_initial_conditions("synth-xor:3000")
        body = json.loads(ic.path.read_text())
        body["folds"][0]["init"][0] += 1
        ic.path.write_text(json.dumps(body))
        with pytest.raises(IntegrityError):
            load_initial_conditions("synth-xor:3000")

    def test_unknown_dataset_lists_registered(self):
        with pytest.raises(DatasetError, match="synth-blobs"):
            load_initial_conditions("no-such-set")


class TestLoadExperiment:
    def test_bank_sized_protocol(self):
        ic = load_initial_conditions("synth-blobs:45221")
        config = load_experiment("synth-blobs:45221", ic)
        assert (config.init_size, config.batch_size, config.final_pool_size) == (45, 45, 450)

    def test_class_floor_protocol(self):
        register_csv(data_dir(), "ten", labels_with_fractions(5000, [0.1] * 10))
        ic = load_initial_conditions("ten")
        config = load_experiment("ten", ic)
        assert (config.init_size, config.batch_size, config.final_pool_size) == (10, 5, 55)
        assert protocol_sizes(5000, 10) == (10, 5, 55)

    def test_hash_stable(self):
        ic = load_initial_conditions("synth-xor:3000")
        a = load_experiment("synth-xor:3000", ic).config_hash
        b = load_experiment("synth-xor:3000", load_initial_conditions("synth-xor:3000")).config_hash
        assert a == b and len(a) == 64

    def test_hash_changes_with_config(self):
        ic = load_initial_conditions("synth-xor:3000")
        a = load_experiment("synth-xor:3000", ic)
        b = load_experiment("synth-xor:3000", ic, alpha=2.0)
        c = load_experiment("synth-xor:3000", ic, model="forest")
        assert len({a.config_hash, b.config_hash, c.config_hash}) == 3
        from openalx.samplers import SamplerSpec

        assert a.cell_key(SamplerSpec("margin"), 0) != b.cell_key(SamplerSpec("margin"), 0)
        assert a.cell_key(SamplerSpec("margin"), 0) != a.cell_key(SamplerSpec("margin"), 1)

    def test_fold_mismatch(self):
        ic = load_initial_conditions("synth-xor:3000")
        with pytest.raises(ConfigError):
            load_experiment("synth-xor:3000", ic, folds=5)

    def test_duplicate_samplers(self):
        ic = load_initial_conditions("synth-xor:3000")
        with pytest.raises(ConfigError):
            load_experiment("synth-xor:3000", ic, samplers=("margin", "margin"))


class TestRun:
    def test_grid_cardinality(self, blobs_run):
        _, _, config, rs = blobs_run
        assert len(rs.records) == 200
        assert not rs.partial
        assert sorted(rs.samplers()) == ["margin", "random"]

    def test_pool_monotone(self, blobs_run):
        _, ic, config, rs = blobs_run
        for sampler in ("random", "margin"):
            for fold in range(10):
                recs = sorted((r for r in rs.records if r.sampler == sampler and r.fold == fold),
                              key=lambda r: r.iteration)
                pool = set(recs[0].selected)
                assert pool == set(ic.pools[fold].labeled_idx)
                train = set(ic.splits[fold].train_idx)
                for r in recs[1:]:
                    new = set(r.selected)
                    assert len(new) == config.batch_size
                    assert not new & pool and new <= train
                    pool |= new
                    assert r.pool_size == len(pool) == config.init_size + r.iteration * config.batch_size

    def test_samplers_share_initial_pool(self, blobs_run):
        rs = blobs_run[3]
        for fold in range(10):
            a = [r for r in rs.records if r.fold == fold and r.iteration == 0]
            assert a[0].selected == a[1].selected

    def test_contradiction_bound(self, blobs_run):
        rs = blobs_run[3]
        by_cell = {}
        for r in rs.records:
            by_cell.setdefault((r.sampler, r.fold), {})[r.iteration] = r.metrics
        for cell in by_cell.values():
            for t in range(1, 10):
                assert abs(cell[t].accuracy - cell[t - 1].accuracy) <= cell[t].contradictions + 1e-12

    def test_separable_blobs_learned(self, blobs_run):
        rs = blobs_run[3]
        # a skewed 10-row initial pool can start low; the final pool is large enough
        assert min(r.metrics.accuracy for r in rs.records if r.iteration == 9) > 0.95

    def test_rerun_hits_cache(self, blobs_run):
        root, ic, config, rs = blobs_run
        before = cell_bytes(rs.run_dir)
        manifest = (rs.run_dir / "manifest.json").read_bytes()
        again = run(config, initial_conditions=ic, root=root)
        assert again.stats["fits"] == 0 and again.stats["cells_cached"] == 20
        assert cell_bytes(again.run_dir) == before
        assert (again.run_dir / "manifest.json").read_bytes() == manifest

    def test_deleted_cell_recomputed(self, blobs_run):
        root, ic, config, rs = blobs_run
        before = cell_bytes(rs.run_dir)
        victim = sorted((rs.run_dir / "cells").iterdir())[3]
        victim.unlink()
        again = run(config, initial_conditions=ic, root=root)
        assert again.stats["cells_computed"] == 1 and again.stats["cells_cached"] == 19
        assert again.stats["fits"] == 10
        assert cell_bytes(again.run_dir) == before

    def test_load_results_round_trip(self, blobs_run):
        rs = blobs_run[3]
        loaded = load_results(rs.run_dir)
        assert loaded.config_hash == rs.config_hash
        assert [r.to_json() for r in loaded.records] == [r.to_json() for r in rs.records]

    def test_manifest_layout(self, blobs_run):
        rs = blobs_run[3]
        manifest = json.loads((rs.run_dir / "manifest.json").read_text())
        assert set(manifest) == {"config", "config_hash", "engine_version", "cells"}
        assert rs.run_dir.name == manifest["config_hash"][:16]
        assert all(c["status"] == "ok" for c in manifest["cells"])
        line = json.loads((rs.run_dir / manifest["cells"][0]["path"]).read_text().splitlines()[0])
        assert set(line) == {"fold", "iteration", "sampler", "metrics", "selected", "pool_size", "duration_s"}

    def test_adding_sampler_keeps_existing_cells(self, blobs_run):
        root, ic, config, rs = blobs_run
        before = cell_bytes(rs.run_dir)
        cfg = load_experiment("synth-blobs", ic, samplers=("random", "margin", "entropy"), root=root)
        assert cfg.config_hash == config.config_hash
        again = run(cfg, initial_conditions=ic, root=root)
        assert again.stats["cells_cached"] == 20 and again.stats["cells_computed"] == 10
        after = cell_bytes(again.run_dir)
        assert all(after[k] == v for k, v in before.items())
        # binary problem: entropy and margin pick the same rows
        ent = [r.selected for r in again.records if r.sampler == "entropy"]
        mar = [r.selected for r in again.records if r.sampler == "margin"]
        assert ent == mar
        run(config, initial_conditions=ic, root=root)  # restore the two-sampler manifest


class TestFailures:
    def test_failing_cell_marks_partial(self, monkeypatch):
        import openalx.runner as runner_mod

        ic = load_initial_conditions("synth-xor:2000", folds=3)
        config = load_experiment("synth-xor:2000", ic, samplers=("random",), iterations=2)
        real = runner_mod.run_cell

        def flaky(config, sampler, fold, *args):
            if fold == 1:
                raise RuntimeError("boom")
            return real(config, sampler, fold, *args)

        monkeypatch.setattr(runner_mod, "run_cell", flaky)
        rs = run(config, initial_conditions=ic)
        assert rs.partial
        assert [c["status"] for c in rs.cells] == ["ok", "failed", "ok"]
        assert "boom" in rs.cells[1]["error"]
        assert not (rs.run_dir / rs.cells[1]["path"]).exists()
        bands = aggregate(rs, "Accuracy")
        assert bands["random"][0]["folds"] == 2
        monkeypatch.setattr(runner_mod, "run_cell", real)
        healed = run(config, initial_conditions=ic)
        assert not healed.partial and healed.stats["cells_computed"] == 1

    def test_parallel_matches_serial(self, tmp_path):
        ic = load_initial_conditions("synth-xor:2000", folds=2, root=tmp_path / "a")
        config = load_experiment("synth-xor:2000", ic, samplers=("random", "kcenter"), iterations=2,
                                 root=tmp_path / "a")
        serial = run(config, initial_conditions=ic, root=tmp_path / "a")
        ic_b = load_initial_conditions("synth-xor:2000", folds=2, root=tmp_path / "b")
        parallel = run(config, initial_conditions=ic_b, root=tmp_path / "b", jobs=2)
        assert cell_bytes(serial.run_dir) == cell_bytes(parallel.run_dir)


def synthetic_rs(values_by_sampler):
    """ResultSet whose Accuracy is values[sampler][fold][iteration]."""
    from openalx.runner import IterationRecord

    records, cells = [], []
    for sampler, folds in values_by_sampler.items():
        for f, series in enumerate(folds):
            cells.append({"sampler": sampler, "fold": f, "status": "ok", "path": ""})
            for t, v in enumerate(series):
                m = MetricRecord(v, v, 1.0, 0.0, 0.0, 0.0, 0.0)
                records.append(IterationRecord(f, t, sampler, m, [], 0))
    return ResultSet("x" * 64, records, cells, {})


class TestAggregate:
    def test_constant(self):
        rs = synthetic_rs({"a": [[0.7, 0.8]] * 5})
        for row, v in zip(aggregate(rs, "Accuracy")["a"], (0.7, 0.8)):
            assert row["mean"] == pytest.approx(v) and row["p10"] == pytest.approx(v) and row["p90"] == pytest.approx(v)

    def test_linear_quantiles(self):
        rs = synthetic_rs({"a": [[float(v)] for v in range(1, 11)]})
        row = aggregate(rs, "Accuracy")["a"][0]
        assert row["p10"] == pytest.approx(1.9) and row["p90"] == pytest.approx(9.1)
        assert row["mean"] == pytest.approx(5.5)

    def test_field_name_alias(self):
        rs = synthetic_rs({"a": [[0.5], [0.6]]})
        assert aggregate(rs, "f_score") == aggregate(rs, "F-Score")

    def test_unknown_metric(self):
        with pytest.raises(MetricError, match="Hard-Exploration"):
            aggregate(synthetic_rs({"a": [[0.5], [0.6]]}), "AUC")

    def test_needs_two_folds(self):
        with pytest.raises(MetricError):
            aggregate(synthetic_rs({"a": [[0.5]]}), "Accuracy")

    def test_format(self):
        assert format_band(0.871, 0.867, 0.875) == "87.1 ± 0.4"


class TestCompare:
    def test_reflexive(self):
        rs = synthetic_rs({"a": [[0.5, 0.6], [0.4, 0.7], [0.3, 0.9]]})
        for row in compare(rs, "a", "a"):
            assert row.sign == 0 and row.wins == row.losses == 0 and row.ties == 3

    def test_strict_winner(self):
        rng = np.random.default_rng(0)
        base = rng.random((10, 3))
        rs = synthetic_rs({"a": (base + 0.1).tolist(), "b": base.tolist()})
        final = compare(rs, "a", "b")[-1]
        assert final.iteration == "final" and final.wins == 10 and final.sign == 1

    def test_antisymmetric(self):
        rng = np.random.default_rng(1)
        rs = synthetic_rs({"a": rng.random((6, 4)).tolist(), "b": rng.random((6, 4)).tolist()})
        for ab, ba in zip(compare(rs, "a", "b"), compare(rs, "b", "a")):
            assert ab.sign == -ba.sign and ab.mean_diff == pytest.approx(-ba.mean_diff)
            assert ab.wins == ba.losses and ab.ties == ba.ties

    def test_incomparable(self):
        rs = synthetic_rs({"a": [[0.5, 0.6]] * 3, "b": [[0.5, 0.6]] * 2})
        with pytest.raises(MetricError):
            compare(rs, "a", "b")
