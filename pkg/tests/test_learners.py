import logging
import math

import numpy as np
import pytest
from scipy import stats

from pam_curator.errors import ValidationError
from pam_curator.learners import (
    LinearModel,
    SearchSpace,
    binary_entropy,
    logreg_loss_grad,
    predict_forest_voted,
    predict_proba,
    random_search,
    train_forest,
    train_lda,
    train_logreg,
    train_loss_estimator,
    write_trial_log,
)


def blobs(n_per_class=50, sep=4.0, dim=2, seed=0):
    rng = np.random.default_rng(seed)
    X0 = rng.normal(-sep / 2, 1.0, size=(n_per_class, dim))
    X1 = rng.normal(sep / 2, 1.0, size=(n_per_class, dim))
    X = np.vstack([X0, X1])
    y = np.array([0] * n_per_class + [1] * n_per_class)
    return X, y


class TestLogreg:
    def test_separable_blobs_perfect_training_accuracy(self):
        X, y = blobs(sep=6.0)
        model = train_logreg(X, y, l2_lambda=1e-4)
        preds = (predict_proba(model, X)[:, 1] > 0.5).astype(int)
        assert np.array_equal(preds, y)

    def test_huge_lambda_shrinks_weights_to_prior(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(90, 3))
        y = np.array([1] * 30 + [0] * 60)
        model = train_logreg(X, y, l2_lambda=1e9)
        assert np.linalg.norm(model.weights) < 1e-6
        probs = predict_proba(model, X)[:, 1]
        assert np.allclose(probs, 1 / 3, atol=0.01)

    def test_gradient_matches_central_finite_differences(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(40, 5))
        y = rng.integers(0, 2, size=40).astype(float)
        y[0], y[1] = 0, 1
        lam = 0.01
        eps = 1e-6
        for _ in range(5):
            w = rng.normal(size=5)
            b = float(rng.normal())
            _, grad_w, grad_b = logreg_loss_grad(w, b, X, y, lam)
            for j in range(5):
                wp, wm = w.copy(), w.copy()
                wp[j] += eps
                wm[j] -= eps
                lp, _, _ = logreg_loss_grad(wp, b, X, y, lam)
                lm, _, _ = logreg_loss_grad(wm, b, X, y, lam)
                assert abs(grad_w[j] - (lp - lm) / (2 * eps)) < 1e-5
            lp, _, _ = logreg_loss_grad(w, b + eps, X, y, lam)
            lm, _, _ = logreg_loss_grad(w, b - eps, X, y, lam)
            assert abs(grad_b - (lp - lm) / (2 * eps)) < 1e-5

    def test_loss_nonincreasing_per_epoch(self):
        X, y = blobs(sep=2.0, seed=3)
        history = []
        train_logreg(X, y, l2_lambda=1e-3, record_loss=history)
        assert len(history) > 1
        assert all(b <= a + 1e-12 for a, b in zip(history, history[1:]))

    def test_single_class_input_names_missing_class(self):
        X = np.zeros((5, 2))
        with pytest.raises(ValidationError, match="class 1"):
            train_logreg(X, np.zeros(5), l2_lambda=0.01)
        with pytest.raises(ValidationError, match="class 0"):
            train_logreg(X, np.ones(5), l2_lambda=0.01)

    def test_deterministic_given_seed(self):
        X, y = blobs(seed=4)
        a = train_logreg(X, y, l2_lambda=0.01, seed=7)
        b = train_logreg(X, y, l2_lambda=0.01, seed=7)
        assert np.array_equal(a.weights, b.weights) and a.bias == b.bias


class TestPredictProba:
    def test_zero_model_is_uniform(self):
        model = LinearModel(weights=np.zeros(3), bias=0.0)
        probs = predict_proba(model, np.ones((1, 3)))
        assert np.allclose(probs, 0.5)

    def test_large_margin_saturates(self):
        model = LinearModel(weights=np.array([10.0, 0.0]), bias=0.0)
        probs = predict_proba(model, np.array([[5.0, 0.0]]))
        assert probs[0, 1] > 0.99

    def test_matches_direct_sigmoid(self):
        rng = np.random.default_rng(5)
        model = LinearModel(weights=rng.normal(size=4), bias=float(rng.normal()))
        X = rng.normal(size=(50, 4))
        probs = predict_proba(model, X)
        direct = 1.0 / (1.0 + np.exp(-(X @ model.weights + model.bias)))
        assert np.max(np.abs(probs[:, 1] - direct)) < 1e-12
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-15)

    def test_dim_mismatch_raises(self):
        model = LinearModel(weights=np.zeros(3), bias=0.0)
        with pytest.raises(ValidationError):
            predict_proba(model, np.zeros((1, 4)))


class TestLda:
    def test_recovers_axis_within_5_degrees(self):
        rng = np.random.default_rng(6)
        n, dim = 1500, 5
        e1 = np.zeros(dim)
        e1[0] = 1.0
        X0 = rng.normal(size=(n, dim)) - e1
        X1 = rng.normal(size=(n, dim)) + e1
        model = train_lda(np.vstack([X0, X1]), np.array([0] * n + [1] * n))
        w = model.weights / np.linalg.norm(model.weights)
        angle = math.degrees(math.acos(abs(float(w @ e1))))
        assert angle < 5.0

    def test_identical_means_flagged_degenerate(self):
        rng = np.random.default_rng(7)
        X = rng.normal(size=(100, 3))
        y = np.array([0, 1] * 50)
        X[y == 1] = X[y == 0]  # identical class distributions
        model = train_lda(X, y)
        assert model.meta.get("degenerate") is True

    def test_class_swap_negates_direction(self):
        X, y = blobs(seed=8)
        a = train_lda(X, y)
        b = train_lda(X, 1 - y)
        cos = float(a.weights @ b.weights) / (
            np.linalg.norm(a.weights) * np.linalg.norm(b.weights))
        assert cos == pytest.approx(-1.0, abs=1e-9)
        preds_a = (a.decision(X) > 0).astype(int)
        preds_b = (b.decision(X) > 0).astype(int)
        assert np.array_equal(preds_a, 1 - preds_b)

    def test_midpoint_threshold(self):
        X, y = blobs(sep=6.0, seed=9)
        model = train_lda(X, y)
        mu0 = X[y == 0].mean(axis=0)
        mu1 = X[y == 1].mean(axis=0)
        midpoint_score = model.decision(0.5 * (mu0 + mu1)[None, :])
        assert abs(midpoint_score[0]) < 1e-9


class TestForest:
    def test_contour_majority_vote(self):
        X, y = blobs(sep=6.0, seed=10)
        model = train_forest(X, y, n_trees=15, seed=0)
        pos = X[y == 1][:2]
        neg = X[y == 0][:1]
        label, info = predict_forest_voted(model, np.vstack([pos, neg]))
        assert label == 1
        assert info["votes"] == {0: 1, 1: 2}

    def test_zero_contours_negative_with_flag(self):
        X, y = blobs(seed=11)
        model = train_forest(X, y, n_trees=3, seed=0)
        label, info = predict_forest_voted(model, np.empty((0, 2)))
        assert label == 0 and info["zero_contours"] is True

    def test_tie_breaks_positive(self):
        X, y = blobs(sep=6.0, seed=12)
        model = train_forest(X, y, n_trees=15, seed=0)
        sample = np.vstack([X[y == 1][0], X[y == 0][0]])
        label, info = predict_forest_voted(model, sample)
        if info["votes"] == {0: 1, 1: 1}:
            assert label == 1

    def test_single_tree_reproduces_pure_training_set(self):
        X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
        y = np.array([0, 0, 1, 1])
        rng_hits = 0
        for seed in range(10):
            model = train_forest(X, y, n_trees=1, max_depth=4, seed=seed)
            if np.array_equal(model.predict(X), y):
                rng_hits += 1
        # Bootstrap may omit a class for one seed; most seeds must succeed.
        assert rng_hits >= 7

    def test_vote_invariant_to_contour_order(self):
        X, y = blobs(sep=5.0, seed=13)
        model = train_forest(X, y, n_trees=9, seed=1)
        contours = X[:7]
        a, _ = predict_forest_voted(model, contours)
        b, _ = predict_forest_voted(model, contours[::-1])
        assert a == b

    def test_deterministic_given_seed(self):
        X, y = blobs(seed=14)
        a = train_forest(X, y, n_trees=5, seed=3)
        b = train_forest(X, y, n_trees=5, seed=3)
        assert np.array_equal(a.predict(X), b.predict(X))


class TestLossEstimator:
    def test_constant_losses_constant_prediction(self):
        rng = np.random.default_rng(15)
        X = rng.normal(size=(30, 4))
        est = train_loss_estimator(X, np.full(30, 0.7))
        preds = est.predict(X)
        assert np.allclose(preds, 0.7, atol=1e-6)

    def test_linear_target_high_r2(self):
        rng = np.random.default_rng(16)
        X = rng.normal(size=(100, 4))
        w = np.array([1.0, -2.0, 0.5, 3.0])
        losses = X @ w + 0.25
        est = train_loss_estimator(X, losses)
        preds = est.predict(X)
        ss_res = np.sum((losses - preds) ** 2)
        ss_tot = np.sum((losses - losses.mean()) ** 2)
        assert 1 - ss_res / ss_tot > 0.99

    def test_ranking_correlates_with_true_loss(self):
        rhos = []
        for seed in range(20):
            rng = np.random.default_rng(100 + seed)
            X = rng.normal(size=(60, 5))
            w = rng.normal(size=5)
            true_loss = X @ w + rng.normal(0, 0.5, size=60)
            est = train_loss_estimator(X[:40], true_loss[:40])
            held_preds = est.predict(X[40:])
            rho = stats.spearmanr(held_preds, true_loss[40:]).statistic
            rhos.append(rho)
        assert np.mean(rhos) > 0

    def test_too_few_samples_falls_back_with_warning(self, caplog):
        X = np.zeros((5, 3))
        with caplog.at_level(logging.WARNING):
            est = train_loss_estimator(X, np.zeros(5))
        assert est.kind == "entropy_fallback"
        assert any("falling back" in r.message for r in caplog.records)
        probs = np.array([0.5, 0.9])
        ranks = est.predict(np.zeros((2, 3)), probs=probs)
        assert ranks[0] > ranks[1]  # p=0.5 has max entropy

    def test_entropy_helper(self):
        assert binary_entropy(np.array([0.5]))[0] == pytest.approx(math.log(2))


class TestRandomSearch:
    def test_budget_one_returns_that_configuration(self):
        space = SearchSpace({"x": ("uniform", 0, 1)}, budget=1, seed=0)
        best, log = random_search(space, lambda p: p["x"])
        assert len(log) == 1
        assert best == log[0].params

    def test_fixed_seed_identical_trials(self):
        space = SearchSpace(
            {"x": ("uniform", 0, 1), "k": ("odd_int", 3, 21),
             "c": ("choice", ["a", "b"]), "n": ("int_uniform", 1, 9),
             "g": ("log_uniform", 0.1, 10)},
            budget=12, seed=42)
        _, log_a = random_search(space, lambda p: 0.0)
        _, log_b = random_search(space, lambda p: 0.0)
        assert [r.params for r in log_a] == [r.params for r in log_b]
        for r in log_a:
            assert r.params["k"] % 2 == 1 and 3 <= r.params["k"] <= 21
            assert 1 <= r.params["n"] <= 9

    def test_failed_trials_do_not_stop_search(self):
        space = SearchSpace({"x": ("uniform", 0, 1)}, budget=10, seed=1)

        def objective(params):
            if params["x"] < 0.5:
                raise RuntimeError("boom")
            return params["x"]

        best, log = random_search(space, objective)
        assert sum(r.status == "failed" for r in log) >= 1
        assert best is not None and best["x"] >= 0.5

    def test_hit_probability_of_grid_optimum(self):
        # Optimum is one cell of a 4-cell grid: hit probability per trial is
        # q = 1/4, so P(found within budget b) = 1 - (1 - q)^b.
        budget = 8
        hits = 0
        runs = 300
        for seed in range(runs):
            space = SearchSpace({"cell": ("int_uniform", 0, 3)},
                                budget=budget, seed=seed)
            best, _ = random_search(space, lambda p: 1.0 if p["cell"] == 2 else 0.0)
            hits += best["cell"] == 2
        expected = 1 - (1 - 0.25) ** budget  # ~0.9
        assert abs(hits / runs - expected) < 0.06

    def test_trial_log_csv(self, tmp_path):
        space = SearchSpace({"x": ("uniform", 0, 1)}, budget=3, seed=2)
        path = tmp_path / "trials.csv"
        random_search(space, lambda p: p["x"], log_path=path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "trial_id,x,objective,status"
        assert len(lines) == 4


class TestModelPersistence:
    def test_json_roundtrip(self, tmp_path):
        model = LinearModel(weights=np.array([1.5, -2.0]), bias=0.25,
                            l2_lambda=0.01, classes=(0, 1), kind="logistic",
                            feature_kind="embedding", meta={"seed": 3})
        path = tmp_path / "model.json"
        model.save(path)
        back = LinearModel.load(path)
        assert np.array_equal(back.weights, model.weights)
        assert back.bias == model.bias
        assert back.kind == "logistic"
        assert back.meta["seed"] == 3
