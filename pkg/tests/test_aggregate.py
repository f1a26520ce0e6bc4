import math

import numpy as np
import pytest

from oracles import central_difference_grad, pairwise_loss_enumerated, perfect_ranking_aurc
from reside.aggregate import (
    TrainConfig,
    TrainReport,
    aggregate_score,
    best_layer,
    optimize_weights,
    reside_grad,
    reside_loss,
)
from reside.sc_eval import DegenerateSplitError, aurc


def test_loss_constant_aggregate_is_ln2():
    rng = np.random.default_rng(0)
    pos, neg = rng.normal(size=(5, 3)), rng.normal(size=(4, 3))
    assert abs(reside_loss(np.zeros(3), pos, neg) - math.log(2.0)) <= 1e-12


def test_loss_single_pair_closed_form():
    # g(u+) - g(u-) = 1
    pos, neg = np.array([[1.0]]), np.array([[0.0]])
    assert reside_loss(np.array([1.0]), pos, neg) == pytest.approx(math.log(1 + math.exp(-1)), abs=1e-12)


def test_loss_matches_enumeration_two_by_two():
    w = np.array([0.7, -0.3])
    pos = np.array([[1.0, 0.0], [0.5, 2.0]])
    neg = np.array([[0.0, 1.0], [-1.0, 0.5]])
    assert reside_loss(w, pos, neg) == pytest.approx(pairwise_loss_enumerated(w, pos, neg), abs=1e-12)


def test_loss_requires_both_sets():
    with pytest.raises(DegenerateSplitError):
        reside_loss(np.zeros(2), np.empty((0, 2)), np.ones((1, 2)))


def test_grad_symmetric_single_pair():
    s_pos = np.array([0.4, -1.2, 2.0])
    grad = reside_grad(np.zeros(3), s_pos[None, :], -s_pos[None, :])
    assert np.allclose(grad, -s_pos, atol=1e-12)  # sigmoid(0) = 0.5, diff = -2 s(u+)


def test_grad_matches_central_differences():
    rng = np.random.default_rng(1)
    for _ in range(20):
        dim = int(rng.integers(2, 6))
        pos = rng.normal(size=(int(rng.integers(1, 8)), dim))
        neg = rng.normal(size=(int(rng.integers(1, 8)), dim))
        w = rng.normal(size=dim)
        analytic = reside_grad(w, pos, neg)
        numeric = central_difference_grad(lambda v: reside_loss(v, pos, neg), w)
        denom = max(np.abs(numeric).max(), 1e-12)
        assert np.abs(analytic - numeric).max() / denom < 1e-5


def test_grad_vanishes_when_saturated():
    pos = np.array([[100.0, 0.0]])
    neg = np.array([[0.0, 0.0]])
    grad = reside_grad(np.array([1.0, 0.0]), pos, neg)
    assert np.abs(grad).max() < 1e-30


def test_aggregate_score():
    assert aggregate_score(np.array([0.0, 0.0, 1.0]), np.array([5.0, 6.0, 7.0])) == 7.0
    assert aggregate_score(np.zeros(3), np.ones(3)) == 0.0
    assert aggregate_score(np.array([1.0, 2.0]), np.array([0.5, 0.25])) == 1.0
    with pytest.raises(ValueError):
        aggregate_score(np.zeros(2), np.zeros(3))


def _column_instance():
    # only column 2 (1-based) ranks the errors below every correct sample
    rng = np.random.default_rng(4)
    errors = np.array([0, 1, 0, 1, 0, 0])
    informative = np.where(errors == 1, -1.0, 1.0) + 0.01 * rng.normal(size=6)
    noise1 = rng.normal(size=6)
    noise3 = rng.normal(size=6)
    return np.column_stack([noise1, informative, noise3]), errors


def test_best_layer_prefers_informative_column():
    scores, errors = _column_instance()
    assert best_layer(scores, np.full(6, 1 / 6), errors) == 2


def test_best_layer_tie_goes_to_final_column():
    column = np.array([3.0, 2.0, 1.0, 0.0])
    scores = np.column_stack([column, column, column])
    errors = np.array([0, 1, 0, 1])
    assert best_layer(scores, np.full(4, 0.25), errors) == 3


def test_best_layer_no_errors_returns_final():
    scores = np.random.default_rng(0).normal(size=(5, 4))
    assert best_layer(scores, np.full(5, 0.2), np.zeros(5, dtype=int)) == 4


SUM_SEPARABLE_POS = np.array(
    [
        [1.6, 0.4], [0.4, 1.6], [1.2, 0.8], [0.8, 1.2], [1.5, 0.5], [0.5, 1.5],
        [1.0, 1.0], [1.3, 0.7], [0.7, 1.3], [1.4, 0.6], [0.6, 1.4], [1.1, 0.9],
    ]
)
SUM_SEPARABLE_NEG = np.array(
    [
        [1.45, -1.0], [-1.0, 1.45], [0.9, -0.5], [-0.5, 0.9],
        [1.3, -0.9], [-0.9, 1.3], [0.35, 0.0], [0.0, 0.35],
    ]
)


def _sum_separable():
    scores = np.vstack([SUM_SEPARABLE_POS, SUM_SEPARABLE_NEG])
    errors = np.array([0] * 12 + [1] * 8)
    return scores, errors, np.full(20, 1 / 20)


def test_optimizer_reaches_optimum_when_sum_separates():
    scores, errors, masses = _sum_separable()
    # sanity: the sum ranks perfectly, neither column does
    assert aurc(scores.sum(axis=1), errors, masses) == pytest.approx(perfect_ranking_aurc(20, 8), abs=1e-12)
    for j in (0, 1):
        assert aurc(scores[:, j], errors, masses) > 0.2
    report = optimize_weights(scores, masses, errors, TrainConfig(seed=0))
    assert abs(report.aurc_curve[report.best_epoch] - perfect_ranking_aurc(20, 8)) < 1e-3
    assert aurc(scores @ report.weights, errors, masses) == pytest.approx(
        report.aurc_curve[report.best_epoch], abs=1e-12
    )


def test_checkpointing_never_loses_to_best_layer():
    scores, errors, masses = _sum_separable()
    report = optimize_weights(scores, masses, errors, TrainConfig(seed=3, epochs=5))
    init_aurc = aurc(scores[:, report.best_layer - 1], errors, masses)
    assert report.aurc_curve[report.best_epoch] <= init_aurc
    assert report.aurc_curve[0] == pytest.approx(init_aurc, abs=1e-12)
    running_min = np.minimum.accumulate(report.aurc_curve)
    assert report.aurc_curve[report.best_epoch] == running_min[-1]


def test_fallback_when_final_column_is_perfect():
    rng = np.random.default_rng(7)
    errors = (rng.random(30) < 0.3).astype(int)
    errors[0], errors[1] = 1, 0
    perfect = np.where(errors == 1, 0.0, 1.0) + 0.01 * rng.random(30)
    scores = np.column_stack([rng.normal(size=30), perfect])
    report = optimize_weights(scores, np.full(30, 1 / 30), errors, TrainConfig(seed=0, epochs=20))
    assert report.best_layer == 2
    assert report.fallback and report.best_epoch == 0
    assert np.array_equal(report.weights, np.array([0.0, 1.0]))


def test_degenerate_split_returns_final_one_hot():
    scores = np.random.default_rng(0).normal(size=(6, 3))
    with pytest.warns(UserWarning):
        report = optimize_weights(scores, np.full(6, 1 / 6), np.zeros(6, dtype=int), TrainConfig())
    assert report.fallback and np.array_equal(report.weights, np.array([0.0, 0.0, 1.0]))
    with pytest.warns(UserWarning):
        report = optimize_weights(scores, np.full(6, 1 / 6), np.ones(6, dtype=int), TrainConfig())
    assert report.fallback and np.array_equal(report.weights, np.array([0.0, 0.0, 1.0]))


def test_training_is_deterministic():
    scores, errors, masses = _sum_separable()
    a = optimize_weights(scores, masses, errors, TrainConfig(seed=11, epochs=12))
    b = optimize_weights(scores, masses, errors, TrainConfig(seed=11, epochs=12))
    assert a.loss_curve == b.loss_curve
    assert a.aurc_curve == b.aurc_curve
    assert np.array_equal(a.weights, b.weights)
    assert a.best_epoch == b.best_epoch


def test_epoch_aurc_stays_below_loss_bound():
    # with uniform masses the checkpoint AURC is the bound's AURC, so the
    # recorded curves must satisfy the loose bound at every epoch
    scores, errors, masses = _sum_separable()
    report = optimize_weights(scores, masses, errors, TrainConfig(seed=2, epochs=30))
    m, n = 20, 8
    scale = 2 * (m - n) * n / (m * m * math.log(2.0))
    for loss_e, aurc_e in zip(report.loss_curve, report.aurc_curve):
        assert aurc_e < scale * loss_e + 2 * n * n / (m * m)


def test_standardized_training_returns_raw_space_weights():
    scores, errors, masses = _sum_separable()
    report = optimize_weights(scores, masses, errors, TrainConfig(seed=0, epochs=40, standardize_scores=True))
    achieved = aurc(scores @ report.weights, errors, masses)
    assert achieved <= report.aurc_curve[0] + 1e-12


def test_report_round_trip(tmp_path):
    scores, errors, masses = _sum_separable()
    report = optimize_weights(scores, masses, errors, TrainConfig(seed=5, epochs=3))
    path = report.save(tmp_path / "report.json")
    loaded = TrainReport.load(path)
    assert loaded.loss_curve == report.loss_curve
    assert loaded.aurc_curve == report.aurc_curve
    assert np.array_equal(loaded.weights, report.weights)
    assert loaded.best_epoch == report.best_epoch
    assert loaded.fallback == report.fallback
    assert loaded.best_layer == report.best_layer
    assert loaded.config == report.config
