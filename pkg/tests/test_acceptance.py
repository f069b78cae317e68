"""Acceptance gate: one test per criterion, each recording a PASS/FAIL/SKIP line."""
import math
import time
from pathlib import Path

import numpy as np
import pytest

from openalx._util import cache_root
from openalx.cli import main
from openalx.datasets import data_dir, is_registered
from openalx.metrics import conformance_violations
from openalx.models import FOREST, ModelSpec, fit, leaf_embedding, loss_and_grad
from openalx.runner import aggregate, load_experiment, load_initial_conditions, run
from openalx.samplers import QueryContext, select_kcenter, select_uncertainty, weighted_kmeans
from oracles import (
    exhaustive_weighted_kmeans,
    gaussian_tail_rate,
    naive_kcenter,
    numeric_gradient,
    pca_by_covariance_eigh,
)
from registry import labels_with_fractions, register_csv

RESULTS = {}
# captured at import, before the per-test cache override, so a user-supplied export is visible
USER_DATA_DIR = cache_root() / "datasets"


def record(n, ok, detail):
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def rgb_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("rgb")
    ic = load_initial_conditions("synth-rgb", root=root)
    config = load_experiment("synth-rgb", ic, samplers=("random", "margin", "wkmeans", "kcenter"), root=root)
    start = time.perf_counter()
    rs = run(config, initial_conditions=ic, root=root)
    return rs, time.perf_counter() - start


def test_01_kcenter_oracle():
    rng = np.random.default_rng(101)
    matches, elapsed = 0, 0.0
    for _ in range(100):
        n_u, d = int(rng.integers(5, 201)), int(rng.integers(1, 9))
        m, B = int(rng.integers(1, 11)), int(rng.integers(1, 11))
        Z = rng.normal(size=(n_u, d))
        L = rng.normal(size=(m, d))
        ctx = QueryContext(np.arange(n_u), min(B, n_u), Z_unlabeled=Z, Z_labeled=L)
        start = time.perf_counter()
        got = select_kcenter(ctx)
        elapsed += time.perf_counter() - start
        matches += list(got) == naive_kcenter(Z, L, ctx.B)
    record(1, matches == 100 and elapsed < 10, f"k-center matches naive oracle {matches}/100, {elapsed:.2f}s")


def blob_instance(rng):
    k = int(rng.integers(2, 4))
    n = int(rng.integers(2 * k, 13))
    d = int(rng.integers(1, 3))
    centres = rng.normal(scale=10.0, size=(k, d))
    while k > 1 and min(np.linalg.norm(a - b) for i, a in enumerate(centres) for b in centres[i + 1:]) < 6:
        centres = rng.normal(scale=10.0, size=(k, d))
    member = np.arange(n) % k
    Z = centres[member] + rng.normal(size=(n, d))
    return Z, rng.uniform(0.1, 1.0, n), k


def test_02_weighted_kmeans_oracle():
    rng = np.random.default_rng(202)
    hits, elapsed = 0, 0.0
    for _ in range(50):
        Z, w, k = blob_instance(rng)
        start = time.perf_counter()
        res = weighted_kmeans(Z, w, k, seed=int(rng.integers(1 << 30)))
        elapsed += time.perf_counter() - start
        best, _ = exhaustive_weighted_kmeans(Z, w, k)
        hits += abs(res.objective - best) <= 1e-9
    record(2, hits >= 45 and elapsed < 30, f"weighted k-means at exhaustive optimum {hits}/50, {elapsed:.2f}s")


def test_03_binary_rank_equivalence():
    rng = np.random.default_rng(303)
    agree = total = 0
    for _ in range(200):
        n = int(rng.integers(20, 200))
        p = rng.random(n)
        P = np.column_stack([p, 1 - p])
        for B in (1, 5, 20):
            ctx = QueryContext(np.arange(n), B, probs=P)
            picks = [list(select_uncertainty(ctx, k)) for k in ("confidence", "margin", "entropy")]
            agree += picks[0] == picks[1] == picks[2]
            total += 1
    record(3, agree == total, f"identical uncertainty batches {agree}/{total}")


def test_04_contradiction_bound(rgb_run):
    rs, _ = rgb_run
    cells = {}
    for r in rs.records:
        cells.setdefault((r.sampler, r.fold), {})[r.iteration] = r.metrics
    m = 2000  # test rows per fold; compare integer counts so the check is exact
    checked = violated = 0
    for series in cells.values():
        counts = {t: (round(r.accuracy * m), round(r.contradictions * m)) for t, r in series.items()}
        assert all(abs(r.accuracy * m - counts[t][0]) < 1e-6 for t, r in series.items())
        for t in range(1, len(series)):
            checked += 1
            violated += abs(counts[t][0] - counts[t - 1][0]) > counts[t][1]
    ok = violated == 0 and len(cells) == 40 and checked == 40 * 9
    record(4, ok, f"accuracy change <= contradictions on {checked - violated}/{checked} steps (40 cells)")


def test_05_violation_calibration():
    rng = np.random.default_rng(505)
    d, n = 5, 10_000
    T = rng.normal(size=(n, d))
    L = rng.normal(size=(n, d))
    got = conformance_violations(T, L, alpha=3.0)
    target = d * 0.0027
    oracle = d * gaussian_tail_rate(3.0)
    exact = d * math.erfc(3.0 / math.sqrt(2.0))
    # the sampled oracle carries ~6% noise of its own, so the gate uses the stated target
    cal_ok = abs(got - target) <= 0.2 * target and abs(oracle - exact) <= 0.2 * exact
    pc1 = pca_by_covariance_eigh(T)[1][:, 0]
    sd1 = (T @ pc1).std(ddof=1)
    shifted = conformance_violations(T, L + 30 * sd1 * pc1, alpha=3.0)
    record(5, cal_ok and shifted >= 1,
           f"iid mean count {got:.5f} vs {target:.4f} (sampled {oracle:.5f}, exact {exact:.5f}); "
           f"shifted mean count {shifted:.3f}")


def test_06_violation_degeneracy(tmp_path):
    d = 12
    register_csv(tmp_path / "data", "wide", labels_with_fractions(10_000, [0.6, 0.4]), n_cont=d)
    ic = load_initial_conditions("wide", folds=3, root=tmp_path, data_dir=tmp_path / "data")
    config = load_experiment("wide", ic, samplers=("random",), iterations=2, root=tmp_path,
                             data_dir=tmp_path / "data")
    rs = run(config, initial_conditions=ic, root=tmp_path, data_dir=tmp_path / "data")
    small = [r for r in rs.records if r.pool_size < d + 1]
    first = [r for r in rs.records if r.iteration == 0]
    ok = bool(small) and all(r.metrics.violations == 0.0 for r in small) and all(r.pool_size < d + 1 for r in first)
    record(6, ok, f"{len(small)} records with pool < d+1={d + 1}, all with zero violations")


def test_07_protocol_arithmetic(tmp_path):
    n = 45221
    register_csv(tmp_path / "data", "bank", labels_with_fractions(n, [0.88, 0.12]), n_cont=1)
    ic = load_initial_conditions("bank", root=tmp_path, data_dir=tmp_path / "data")
    config = load_experiment("bank", ic, root=tmp_path, data_dir=tmp_path / "data")
    sizes = (config.init_size, config.batch_size, config.final_pool_size)
    pools_ok = all(len(p.labeled_idx) == 45 for p in ic.pools)
    # ten rounded 0.1% steps cannot land exactly on round(1% of n) = 452; each step loses < 0.5
    slack = abs(config.final_pool_size - 0.01 * n) <= 0.5 * (config.iterations + 1)
    record(7, sizes == (45, 45, 450) and pools_ok and slack,
           f"init/batch/final = {sizes}; 1% of n = {0.01 * n:.2f}")


def _tree_bytes(path):
    return {p.relative_to(path).as_posix(): p.read_bytes() for p in sorted(path.rglob("*")) if p.is_file()}


def test_08_determinism(tmp_path, monkeypatch, capsys):
    argv = ["--dataset", "synth-blobs", "--samplers", "random,wkmeans"]
    trees = []
    for name in ("first", "second"):
        monkeypatch.setenv("OPENALX_CACHE_DIR", str(tmp_path / name))
        assert main(["run", *argv]) == 0
        assert main(["report", *argv]) == 0
        run_dir = Path(capsys.readouterr().out.splitlines()[0])
        trees.append((run_dir, _tree_bytes(run_dir)))
    same_runs = trees[0][1] == trees[1][1]
    run_dir, before = trees[1]
    victim = sorted((run_dir / "cells").iterdir())[7]
    victim.unlink()
    assert main(["run", *argv]) == 0
    err = capsys.readouterr().err
    restored = _tree_bytes(run_dir) == before and "1 cells computed, 19 from cache" in err
    record(8, same_runs and restored,
           f"independent runs byte-identical: {same_runs}; deleted cell restored identically: {restored}")


def test_09_qualitative_reproduction(rgb_run):
    rs, elapsed = rgb_run
    finals = {s: rows[-1]["mean"] for s, rows in aggregate(rs, "Accuracy").items()}
    ok = (finals["margin"] > finals["random"] and finals["wkmeans"] > finals["random"]
          and finals["wkmeans"] >= finals["margin"] - 0.005 and elapsed < 300)
    detail = ", ".join(f"{s} {v:.4f}" for s, v in finals.items())
    record(9, ok, f"final mean accuracy {detail}; 4-sampler run {elapsed:.0f}s")


def test_10_gradient_check():
    rng = np.random.default_rng(1010)
    worst = 0.0
    for _ in range(20):
        n, d, C = int(rng.integers(3, 20)), int(rng.integers(1, 6)), int(rng.integers(2, 5))
        X = rng.normal(size=(n, d))
        Y = np.eye(C)[rng.integers(0, C, n)]
        W, b, l2 = rng.normal(size=(d, C)), rng.normal(size=C), float(rng.uniform(0, 0.5))
        _, gW, gb = loss_and_grad(W, b, X, Y, l2)
        nW = numeric_gradient(lambda v: loss_and_grad(v, b, X, Y, l2)[0], W.copy())
        nb = numeric_gradient(lambda v: loss_and_grad(W, v, X, Y, l2)[0], b.copy())
        g, ng = np.r_[gW.ravel(), gb], np.r_[nW.ravel(), nb]
        worst = max(worst, np.linalg.norm(g - ng) / max(np.linalg.norm(g), np.linalg.norm(ng), 1e-300))
    record(10, worst < 1e-5, f"worst relative gradient error {worst:.2e} over 20 instances")


def _gap_cut(vals, want, rel=1e-6):
    """Largest k <= want whose k-th eigenvalue is separated from the next."""
    for k in range(min(want, len(vals) - 1), 0, -1):
        if vals[k - 1] - vals[k] > rel * vals[0]:
            return k
    return 0


def test_11_leaf_embedding_pca():
    rng = np.random.default_rng(1111)
    worst_orth = worst_proj = 0.0
    compared = 0
    for _ in range(10):
        n = int(rng.integers(50, 501))
        X = rng.normal(size=(n, 4))
        y = (X[:, 0] + 0.5 * X[:, 1] ** 2 + 0.3 * rng.normal(size=n) > 0.3).astype(int)
        m = fit(ModelSpec(FOREST, {"n_trees": int(rng.integers(3, 12)), "max_depth": 4},
                          seed=int(rng.integers(1000))), X, y)
        A = m.leaf_onehot(X)
        vals, vecs = pca_by_covariance_eigh(A)
        k = _gap_cut(vals, 8)
        if k == 0:
            continue
        emb = leaf_embedding(m, X, X, k)
        V = emb.params["components"]
        worst_orth = max(worst_orth, np.abs(V @ V.T - np.eye(k)).max())
        ref = (A - A.mean(axis=0)) @ vecs[:, :k]
        # compare within groups of equal eigenvalues, where the basis is not unique
        start = 0
        while start < k:
            end = start + 1
            while end < k and vals[end - 1] - vals[end] <= 1e-6 * vals[0]:
                end += 1
            G1 = emb.Z[:, start:end] @ emb.Z[:, start:end].T
            G2 = ref[:, start:end] @ ref[:, start:end].T
            worst_proj = max(worst_proj, np.abs(G1 - G2).max())
            start = end
        compared += 1
    ok = compared >= 8 and worst_orth < 1e-8 and worst_proj < 1e-6
    record(11, ok, f"{compared} forests: orthonormality error {worst_orth:.1e}, projection error {worst_proj:.1e}")


def test_12_extended_1471(tmp_path):
    if not is_registered("1471", USER_DATA_DIR):
        RESULTS[12] = "criterion 12: SKIP  no local export of dataset 1471 under " + str(USER_DATA_DIR)
        pytest.skip("dataset 1471 not supplied")
    ic = load_initial_conditions("1471", root=tmp_path, data_dir=USER_DATA_DIR)
    config = load_experiment("1471", ic, samplers=("random", "margin", "wkmeans"), root=tmp_path,
                             data_dir=USER_DATA_DIR)
    rs = run(config, initial_conditions=ic, root=tmp_path, data_dir=USER_DATA_DIR)
    finals = {s: rows[-1]["mean"] for s, rows in aggregate(rs, "Accuracy").items()}
    record(12, not rs.partial and finals["wkmeans"] > finals["random"],
           f"1471 final mean accuracy wkmeans {finals['wkmeans']:.4f} vs random {finals['random']:.4f}")
