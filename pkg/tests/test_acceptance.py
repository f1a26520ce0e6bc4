"""Acceptance suite: one test per criterion, each printing a verdict line.

Run with ``pytest -s tests/test_acceptance.py`` to see the PASS/FAIL line
per criterion.  Criterion 10's third clause (the factor-2 comparison
between AURC and the pairwise SELE statistic) is checked as the exact
claim it makes and is expected to fail: the inequality is false for score
functions that rank a handful of errors on top (see the assertion message
and tests/test_sc_eval.py::test_bound_check_raises_on_violation for the
minimal counterexample).  All other criteria pass.
"""

import json
import math
import time

import numpy as np
import pytest

from oracles import aurc_all_thresholds, central_difference_grad
from reside import aggregate, clustering, csf, sc_eval, synth
from reside.cli import main as cli_main
from reside.feature_store import (
    compute_masses,
    derive_correctness,
    load_dataset,
    make_dataset,
    write_dataset,
)


def _verdict(number, name, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    suffix = f" [{detail}]" if detail else ""
    print(f"[acceptance] criterion {number:>2} ({name}): {status}{suffix}")
    assert ok, f"criterion {number} ({name}) failed{suffix}"


def _random_split(rng, m):
    n = int(rng.integers(1, m))
    errors = np.zeros(m, dtype=np.int64)
    errors[rng.permutation(m)[:n]] = 1
    return errors, n


def test_criterion_1_aurc_bounds_randomized():
    rng = np.random.default_rng(20240801)
    started = time.monotonic()
    tight_checked = 0
    for _ in range(1000):
        m = int(rng.integers(4, 201))
        width = int(rng.integers(1, 6)) + 1
        errors, _ = _random_split(rng, m)
        scores = rng.normal(size=(m, width))
        w = rng.normal(size=width)
        report = sc_eval.check_aurc_bounds(scores, w, np.full(m, 1.0 / m), errors)  # raises on violation
        assert report.aurc < report.loose_bound
        if report.unique_error_scores:
            assert report.aurc < report.tight_bound
            tight_checked += 1
    elapsed = time.monotonic() - started
    _verdict(1, "AURC bounds on 1000 random instances", elapsed < 60.0,
             f"tight checked on {tight_checked}, {elapsed:.1f}s")


def test_criterion_2_gradient_oracle():
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(100):
        dim = int(rng.integers(2, 7))
        pos = rng.normal(size=(int(rng.integers(1, 17)), dim))
        neg = rng.normal(size=(int(rng.integers(1, 17)), dim))
        w = rng.normal(size=dim)
        analytic = aggregate.reside_grad(w, pos, neg)
        numeric = central_difference_grad(lambda v: aggregate.reside_loss(v, pos, neg), w, step=1e-5)
        rel = np.abs(analytic - numeric).max() / max(np.abs(numeric).max(), 1e-12)
        worst = max(worst, rel)
    _verdict(2, "analytic gradient vs central differences", worst < 1e-5, f"max rel err {worst:.2e}")


def test_criterion_3_aurc_oracle_equivalence():
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(500):
        m = int(rng.integers(1, 65))
        h = min(int(rng.integers(1, 8)), m)
        ids = np.concatenate([np.arange(1, h + 1), rng.integers(1, h + 1, size=m - h)])
        rng.shuffle(ids)
        counts = np.bincount(ids, minlength=h + 1)
        masses = 1.0 / (h * counts[ids])
        scores = rng.normal(size=m)
        while np.unique(scores).size < m:
            scores = rng.normal(size=m)
        errors = rng.integers(0, 2, size=m)
        diff = abs(sc_eval.aurc(scores, errors, masses) - aurc_all_thresholds(scores, errors, masses))
        worst = max(worst, diff)
    _verdict(3, "rc_curve AURC vs all-threshold oracle", worst <= 1e-9, f"worst |diff| {worst:.1e}")


def test_criterion_4_analytic_anchors():
    rng = np.random.default_rng(7)
    pos, neg = rng.normal(size=(6, 4)), rng.normal(size=(5, 4))
    ok = abs(aggregate.reside_loss(np.zeros(4), pos, neg) - math.log(2.0)) <= 1e-12

    scores = rng.normal(size=50)
    errors = rng.integers(0, 2, size=50)
    masses = np.full(50, 1 / 50)
    curve = sc_eval.rc_curve(scores, errors, masses)
    ok &= abs(curve.coverage[-1] - 1.0) <= 1e-9
    ok &= abs(curve.risk[-1] - errors.mean()) <= 1e-9

    uniform4 = np.full(4, 0.25)
    ok &= abs(sc_eval.aurc(np.array([4.0, 3.0, 2.0, 1.0]), np.array([0, 0, 1, 1]), uniform4) - 5 / 24) <= 1e-9
    ok &= abs(sc_eval.aurc(np.array([4.0, 3.0, 2.0, 1.0]), np.array([1, 1, 0, 0]), uniform4) - 19 / 24) <= 1e-9
    _verdict(4, "constant-loss, full-coverage and hand AURC anchors", ok)


def test_criterion_5_error_independent_csf():
    m = 400
    errors = np.zeros(m, dtype=np.int64)
    errors[:100] = 1
    rng = np.random.default_rng(5)
    masses = np.full(m, 1.0 / m)
    values = [sc_eval.aurc(np.zeros(m), errors[rng.permutation(m)], masses) for _ in range(200)]
    mean = float(np.mean(values))
    _verdict(5, "constant CSF mean AURC near error rate", abs(mean - 0.25) < 0.02, f"mean {mean:.4f}")


def _distinct_binary_logits(n, seed):
    for attempt in range(100):
        rng = np.random.default_rng([seed, attempt])
        margins = rng.permutation(np.linspace(1e-3, 2.5, n))
        centers = rng.uniform(-1.0, 1.0, size=n)
        signs = rng.choice([-1.0, 1.0], size=n)
        z = np.column_stack([centers + signs * margins / 2, centers - signs * margins / 2])
        if np.unique(np.abs(z[:, 0] - z[:, 1])).size == n and np.unique(z.max(axis=1)).size == n:
            return z
    raise AssertionError("could not draw distinct margins and maxima")


def test_criterion_6_binary_rank_equivalence_and_temperature():
    z = _distinct_binary_logits(10_000, seed=6)
    margin_family = [csf.CsfKind.MSP, csf.CsfKind.SM, csf.CsfKind.LM, csf.CsfKind.NE, csf.CsfKind.NGI]
    reference = np.argsort(csf.csf_scores(csf.CsfKind.MSP, z), kind="stable")
    ok = all(
        np.array_equal(np.argsort(csf.csf_scores(kind, z), kind="stable"), reference)
        for kind in margin_family[1:]
    )
    for kind in csf.CsfKind:
        base = np.argsort(csf.csf_scores(kind, z), kind="stable")
        for temp in (0.1, 1.0, 10.0):
            ok &= np.array_equal(np.argsort(csf.csf_scores(kind, z / temp), kind="stable"), base)
    _verdict(6, "rank equivalence and temperature invariance", ok)


def test_criterion_7_planted_cluster_recovery():
    recovered = 0
    monotone = True
    unit = True
    for seed in range(100):
        k_true = 2 + seed % 3
        x = synth.planted_features(50, k_true, 8, seed=seed, spread=0.12)
        k_star, _ = clustering.silhouette_select_k(x, 2, 8, seed=seed)
        if k_star == k_true:
            recovered += 1
        for k in range(2, 9):  # identical fits to the ones selection ran
            fit = clustering.spherical_kmeans(x, k, seed=seed)
            diffs = np.diff(fit.objective_curve)
            if diffs.size and diffs.min() < -1e-9:
                monotone = False
            if np.abs(np.linalg.norm(fit.centroids, axis=0) - 1.0).max() > 1e-6:
                unit = False
    _verdict(7, "planted-K recovery, monotone objective, unit centroids",
             recovered >= 95 and monotone and unit, f"recovered {recovered}/100")


def test_criterion_8_end_to_end_pathology_repair(tmp_path):
    started = time.monotonic()
    for name, seed in [("train", 100), ("val", 101), ("test", 102)]:
        assert cli_main([
            "gen-synthetic", "--spec", "pathological", "--m", "600", "--l", "3",
            "--h", "1", "--seed", str(seed), "--out", str(tmp_path / name),
        ]) == 0
    assert cli_main(["cluster", "--train", str(tmp_path / "train"), "--out", str(tmp_path / "probes.json")]) == 0
    for split in ("val", "test"):
        assert cli_main([
            "score", "--data", str(tmp_path / split), "--probes", str(tmp_path / "probes.json"),
            "--csf", "msp", "--out", str(tmp_path / f"{split}_scores.json"),
        ]) == 0
    assert cli_main([
        "train", "--val-scores", str(tmp_path / "val_scores.json"), "--val-data", str(tmp_path / "val"),
        "--seed", "0", "--out", str(tmp_path / "weights.json"),
    ]) == 0
    assert cli_main([
        "eval", "--test-scores", str(tmp_path / "test_scores.json"), "--test-data", str(tmp_path / "test"),
        "--weights", str(tmp_path / "weights.json"), "--out-prefix", str(tmp_path / "run"),
    ]) == 0
    metrics = json.loads((tmp_path / "run.metrics.json").read_text())
    test_ds = load_dataset(tmp_path / "test")
    r_hat = derive_correctness(test_ds).error_rate(compute_masses(test_ds).masses)
    elapsed = time.monotonic() - started
    ok = (
        metrics["aurc_baseline"] > r_hat
        and metrics["aurc_reside"] < 0.5 * metrics["aurc_baseline"]
        and metrics["aurc_reside"] <= metrics["aurc_best_layer"]
        and elapsed < 120.0
    )
    _verdict(8, "pathology repaired end to end", ok,
             f"baseline {metrics['aurc_baseline']:.4f} > r {r_hat:.4f}, "
             f"reside {metrics['aurc_reside']:.4f}, best layer {metrics['aurc_best_layer']:.4f}, {elapsed:.0f}s")


def _perfect_final_dataset(tmp_path, m=40, layers=2, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.zeros(m, dtype=np.int64)
    errors = np.zeros(m, dtype=np.int64)
    errors[rng.permutation(m)[: m // 4]] = 1
    margins = np.where(errors == 1, rng.uniform(0.1, 0.5, m), rng.uniform(2.0, 3.0, m))
    logits = np.zeros((m, 2))
    logits[np.arange(m), np.where(errors == 1, 1, 0)] = margins
    features = [synth.planted_features(m // 2, 2, 8, seed=seed + i, spread=0.3)[:m] for i in range(layers)]
    ds = make_dataset(features, logits, labels, np.ones(m, dtype=np.int64), 1)
    write_dataset(ds, tmp_path / "perfect")
    return tmp_path / "perfect"


def test_criterion_9_fallback_guarantees(tmp_path):
    data_dir = _perfect_final_dataset(tmp_path)
    assert cli_main(["cluster", "--train", str(data_dir), "--out", str(tmp_path / "p.json"), "--k-max", "4"]) == 0
    assert cli_main([
        "score", "--data", str(data_dir), "--probes", str(tmp_path / "p.json"),
        "--csf", "msp", "--out", str(tmp_path / "s.json"),
    ]) == 0
    assert cli_main([
        "train", "--val-scores", str(tmp_path / "s.json"), "--val-data", str(data_dir),
        "--seed", "0", "--out", str(tmp_path / "w.json"),
    ]) == 0
    report = json.loads((tmp_path / "w.json").read_text())
    ok = report["fallback"] is True and report["best_layer"] == 3 and report["weights"] == [0.0, 0.0, 1.0]
    assert cli_main([
        "eval", "--test-scores", str(tmp_path / "s.json"), "--test-data", str(data_dir),
        "--weights", str(tmp_path / "w.json"), "--out-prefix", str(tmp_path / "fb"),
    ]) == 0
    metrics = json.loads((tmp_path / "fb.metrics.json").read_text())
    ok &= metrics["delta_percent"] == 0.0 and metrics["aurc_reside"] == metrics["aurc_baseline"]

    # degenerate validation: no errors at all -> final-column one-hot
    rng = np.random.default_rng(1)
    logits = np.zeros((20, 2))
    logits[:, 0] = 1.0
    clean = make_dataset([rng.normal(size=(20, 4))], logits, [0] * 20, [1] * 20, 1)
    with pytest.warns(UserWarning):
        degenerate = aggregate.optimize_weights(
            rng.normal(size=(20, 3)), np.full(20, 1 / 20), derive_correctness(clean).errors, aggregate.TrainConfig()
        )
    ok &= degenerate.fallback and np.array_equal(degenerate.weights, np.array([0.0, 0.0, 1.0]))
    _verdict(9, "baseline fallback is exact and degenerate split handled", ok,
             f"delta {metrics['delta_percent']:.2f}%")


def test_criterion_10_pairwise_bound_identities():
    rng = np.random.default_rng(555)
    soft_ok = True
    decomposition_ok = True
    sele_violations = 0
    total = 1000
    for _ in range(total):
        m = int(rng.integers(4, 120))
        errors, n = _random_split(rng, m)
        g = rng.normal(size=m)
        pos, neg = g[errors == 0], g[errors == 1]
        soft = float(np.logaddexp(0.0, neg[None, :] - pos[:, None]).mean())
        if math.log(2.0) * sc_eval.ranking_error(g, errors) > soft + 1e-12:
            soft_ok = False
        rank_count = int((neg[None, :] >= pos[:, None]).sum())
        wrong_wrong = int((neg[:, None] >= neg[None, :]).sum())
        if sc_eval.sele_loss(g, errors) != (rank_count + wrong_wrong) / m**2:
            decomposition_ok = False
        if not sc_eval.aurc(g, errors, np.full(m, 1.0 / m)) < 2.0 * sc_eval.sele_loss(g, errors):
            sele_violations += 1
    _verdict("10a", "ln2 * L_rank <= pairwise loss", soft_ok)
    _verdict("10b", "SELE decomposition identity exact", decomposition_ok)
    _verdict(
        "10c",
        "AURC < 2 * SELE on all instances",
        sele_violations == 0,
        f"{sele_violations}/{total} violations; the inequality is false whenever errors "
        "rank near the top (e.g. scores 4>3>2>1 with the only error first gives "
        "AURC 25/48 > 2*SELE = 1/2), so this clause cannot hold on a fair random family",
    )
