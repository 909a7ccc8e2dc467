"""Classifier zoo: L2 logistic regression (the primary detector), a Fisher
discriminant, a random forest with contour-vote ensembling, a ridge
loss-estimate regressor, and the random hyperparameter search harness.

Training is deterministic under a fixed seed; the logistic optimizer is
full-batch gradient descent with a backtracking line search, so the training
loss is non-increasing per epoch by construction.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import DataError, ValidationError

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
GRAD_TOL = 1e-6
MAX_EPOCHS = 1000
LOSS_ESTIMATOR_MIN_SAMPLES = 10


@dataclass
class LinearModel:
    weights: np.ndarray
    bias: float
    l2_lambda: float = 0.0
    classes: tuple = (0, 1)
    kind: str = "logistic"  # logistic | discriminant | ridge_regression
    feature_kind: str = "embedding"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if not np.all(np.isfinite(self.weights)) or not math.isfinite(self.bias):
            raise ValidationError("model parameters must be finite")
        if self.l2_lambda < 0:
            raise ValidationError("l2_lambda must be >= 0")

    def decision(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.weights.size:
            raise ValidationError(
                f"feature dim {X.shape[1]} != model dim {self.weights.size}")
        return X @ self.weights + self.bias

    def save(self, path: str | Path) -> None:
        doc = {
            "format_version": MODEL_FORMAT_VERSION,
            "kind": self.kind,
            "weights": self.weights.tolist(),
            "bias": self.bias,
            "l2_lambda": self.l2_lambda,
            "classes": list(self.classes),
            "feature_kind": self.feature_kind,
            "meta": self.meta,
        }
        Path(path).write_text(json.dumps(doc, indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "LinearModel":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if doc.get("format_version") != MODEL_FORMAT_VERSION:
            raise DataError(f"unsupported model format {doc.get('format_version')}")
        return cls(weights=np.asarray(doc["weights"]), bias=doc["bias"],
                   l2_lambda=doc["l2_lambda"], classes=tuple(doc["classes"]),
                   kind=doc["kind"], feature_kind=doc.get("feature_kind", "embedding"),
                   meta=doc.get("meta", {}))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logreg_loss_grad(weights: np.ndarray, bias: float, X: np.ndarray,
                     y: np.ndarray, l2_lambda: float) -> tuple[float, np.ndarray, float]:
    """Mean log-loss + (lambda/2)||w||^2 (bias unregularized) and its gradient."""
    z = X @ weights + bias
    # log(1 + e^z) - y*z, computed stably.
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    loss += 0.5 * l2_lambda * float(weights @ weights)
    residual = _sigmoid(z) - y
    grad_w = X.T @ residual / X.shape[0] + l2_lambda * weights
    grad_b = float(np.mean(residual))
    return loss, grad_w, grad_b


def train_logreg(X: np.ndarray, y: Sequence[int], l2_lambda: float,
                 seed: int = 0, max_epochs: int = MAX_EPOCHS,
                 grad_tol: float = GRAD_TOL,
                 record_loss: list | None = None) -> LinearModel:
    """L2-penalized logistic regression via deterministic full-batch descent."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ValidationError("X must be [n, d] with one label per row")
    present = set(np.unique(y).tolist())
    for cls in (0.0, 1.0):
        if cls not in present:
            raise ValidationError(f"training data has no samples of class {int(cls)}")
    if l2_lambda < 0:
        raise ValidationError("l2_lambda must be >= 0")

    weights = np.zeros(X.shape[1])
    bias = 0.0
    step = 1.0
    # Diagonal preconditioner: the weight block's curvature grows with lambda
    # while the (unregularized) bias does not; without this, a huge lambda
    # forces line-search steps so small the bias never reaches the prior.
    w_scale = 1.0 / (1.0 + l2_lambda)
    loss, grad_w, grad_b = logreg_loss_grad(weights, bias, X, y, l2_lambda)
    for _ in range(max_epochs):
        grad_norm = math.sqrt(float(grad_w @ grad_w) + grad_b * grad_b)
        if grad_norm <= grad_tol:
            break
        descent = w_scale * float(grad_w @ grad_w) + grad_b * grad_b
        # Backtracking line search (Armijo): guarantees monotone loss.
        step = min(step * 2.0, 1e6)
        while True:
            new_w = weights - step * w_scale * grad_w
            new_b = bias - step * grad_b
            new_loss, new_gw, new_gb = logreg_loss_grad(new_w, new_b, X, y, l2_lambda)
            if new_loss <= loss - 1e-4 * step * descent or step < 1e-16:
                break
            step *= 0.5
        weights, bias = new_w, new_b
        loss, grad_w, grad_b = new_loss, new_gw, new_gb
        if record_loss is not None:
            record_loss.append(loss)
    return LinearModel(weights=weights, bias=bias, l2_lambda=l2_lambda,
                       classes=(0, 1), kind="logistic",
                       meta={"seed": seed, "final_loss": loss})


def predict_proba(model: LinearModel, X: np.ndarray) -> np.ndarray:
    """Per-class probabilities [n, 2] (columns follow model.classes)."""
    p1 = _sigmoid(model.decision(X))
    return np.stack([1.0 - p1, p1], axis=1)


def predict_score(model: LinearModel, X: np.ndarray) -> np.ndarray:
    """Positive-class probability (logistic) or raw decision value."""
    if model.kind == "logistic":
        return _sigmoid(model.decision(X))
    return model.decision(X)


def binary_entropy(p: np.ndarray) -> np.ndarray:
    p = np.clip(p, 1e-12, 1.0 - 1e-12)
    return -(p * np.log(p) + (1.0 - p) * np.log(1.0 - p))


def train_lda(X: np.ndarray, y: Sequence[int],
              jitter: float = 1e-6) -> LinearModel:
    """Fisher discriminant with the threshold at the projected-mean midpoint."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=int)
    X0, X1 = X[y == 0], X[y == 1]
    if len(X0) < 2 or len(X1) < 2:
        raise ValidationError("LDA needs at least 2 samples per class")
    mu0, mu1 = X0.mean(axis=0), X1.mean(axis=0)
    scatter = np.cov(X0, rowvar=False) * (len(X0) - 1) + \
        np.cov(X1, rowvar=False) * (len(X1) - 1)
    pooled = scatter / (len(X0) + len(X1) - 2)
    pooled += jitter * np.eye(X.shape[1])
    try:
        chol = np.linalg.cholesky(pooled)
        w = np.linalg.solve(chol.T, np.linalg.solve(chol, mu1 - mu0))
    except np.linalg.LinAlgError as exc:
        raise DataError(f"pooled covariance singular after jitter {jitter}") from exc
    midpoint = 0.5 * (mu0 + mu1)
    separation = float(np.linalg.norm(mu1 - mu0))
    meta = {"jitter": jitter}
    if separation < 1e-9:
        meta["degenerate"] = True
    return LinearModel(weights=w, bias=-float(w @ midpoint), classes=(0, 1),
                       kind="discriminant", feature_kind="lda9", meta=meta)


# --- random forest -----------------------------------------------------------

@dataclass
class _TreeNode:
    feature: int = -1
    threshold: float = 0.0
    left: "_TreeNode | None" = None
    right: "_TreeNode | None" = None
    distribution: np.ndarray | None = None  # leaf class distribution, sums to 1


def _gini(counts: np.ndarray) -> float:
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts / total
    return 1.0 - float(p @ p)


def _grow_tree(X, y, n_classes, depth, max_depth, min_leaf, n_feats, rng):
    counts = np.bincount(y, minlength=n_classes).astype(float)
    node = _TreeNode()
    if depth >= max_depth or counts.max() == counts.sum() or y.size < 2 * min_leaf:
        node.distribution = counts / counts.sum()
        return node
    best = None
    features = rng.choice(X.shape[1], size=min(n_feats, X.shape[1]), replace=False)
    for feat in sorted(features):
        order = np.argsort(X[:, feat], kind="stable")
        xs, ys = X[order, feat], y[order]
        left_counts = np.zeros(n_classes)
        right_counts = np.bincount(ys, minlength=n_classes).astype(float)
        for i in range(y.size - 1):
            left_counts[ys[i]] += 1
            right_counts[ys[i]] -= 1
            if xs[i] == xs[i + 1]:
                continue
            n_left = i + 1
            n_right = y.size - n_left
            if n_left < min_leaf or n_right < min_leaf:
                continue
            impurity = (n_left * _gini(left_counts) +
                        n_right * _gini(right_counts)) / y.size
            if best is None or impurity < best[0]:
                best = (impurity, feat, 0.5 * (xs[i] + xs[i + 1]))
    if best is None:
        node.distribution = counts / counts.sum()
        return node
    _, node.feature, node.threshold = best
    mask = X[:, node.feature] <= node.threshold
    node.left = _grow_tree(X[mask], y[mask], n_classes, depth + 1, max_depth,
                           min_leaf, n_feats, rng)
    node.right = _grow_tree(X[~mask], y[~mask], n_classes, depth + 1, max_depth,
                            min_leaf, n_feats, rng)
    return node


def _tree_predict_one(node: _TreeNode, x: np.ndarray) -> np.ndarray:
    while node.distribution is None:
        node = node.left if x[node.feature] <= node.threshold else node.right
    return node.distribution


@dataclass
class ForestModel:
    trees: list
    n_classes: int = 2
    max_depth: int = 8
    n_trees: int = 50
    min_leaf: int = 1
    feature_kind: str = "rocca"

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        out = np.zeros((X.shape[0], self.n_classes))
        for tree in self.trees:
            for i in range(X.shape[0]):
                out[i] += _tree_predict_one(tree, X[i])
        return out / len(self.trees)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)


def train_forest(X: np.ndarray, y: Sequence[int], n_trees: int = 50,
                 max_depth: int = 8, min_leaf: int = 1,
                 seed: int = 0) -> ForestModel:
    """Bootstrap-aggregated Gini trees with sqrt(d) feature subsampling."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=int)
    if X.shape[0] != y.size or X.ndim != 2:
        raise ValidationError("X must be [n, d] with one label per row")
    if y.min() < 0:
        raise ValidationError("labels must be non-negative integers")
    n_classes = int(y.max()) + 1
    rng = np.random.default_rng(seed)
    n_feats = max(1, int(math.sqrt(X.shape[1])))
    trees = []
    for _ in range(n_trees):
        idx = rng.integers(0, X.shape[0], size=X.shape[0])
        trees.append(_grow_tree(X[idx], y[idx], n_classes, 0, max_depth,
                                min_leaf, n_feats, rng))
    return ForestModel(trees=trees, n_classes=n_classes, max_depth=max_depth,
                       n_trees=n_trees, min_leaf=min_leaf)


def predict_forest_voted(model: ForestModel,
                         contour_vectors: np.ndarray) -> tuple[int, dict]:
    """Spectrogram-level label: majority vote over its contours' predictions.

    Ties break toward positive (class 1); zero contours predict negative with
    a flag. Vote counts ride along for inspection.
    """
    if contour_vectors is None or len(contour_vectors) == 0:
        return 0, {"zero_contours": True, "votes": {}}
    preds = model.predict(np.asarray(contour_vectors, dtype=np.float64))
    counts = np.bincount(preds, minlength=model.n_classes)
    top = counts.max()
    winners = np.nonzero(counts == top)[0]
    label = 1 if (len(winners) > 1 and 1 in winners) else int(winners[0])
    return label, {"zero_contours": False,
                   "votes": {int(c): int(n) for c, n in enumerate(counts) if n}}


# --- loss estimator ----------------------------------------------------------

@dataclass
class LossEstimator:
    kind: str                       # "ridge" | "entropy_fallback"
    model: LinearModel | None = None

    def predict(self, X: np.ndarray,
                probs: np.ndarray | None = None) -> np.ndarray:
        if self.kind == "ridge":
            return self.model.decision(X)
        if probs is None:
            raise ValidationError("entropy fallback needs class probabilities")
        return binary_entropy(np.asarray(probs))


def train_loss_estimator(X: np.ndarray, realized_losses: Sequence[float],
                         ridge_lambda: float = 1e-3) -> LossEstimator:
    """Ridge regression predicting per-sample log-loss; ranking use only.

    Falls back to entropy ranking (with a warning) below
    LOSS_ESTIMATOR_MIN_SAMPLES labeled samples.
    """
    X = np.asarray(X, dtype=np.float64)
    losses = np.asarray(realized_losses, dtype=np.float64)
    if X.shape[0] != losses.size:
        raise ValidationError("one realized loss per sample required")
    if losses.size < LOSS_ESTIMATOR_MIN_SAMPLES:
        logger.warning(
            "loss estimator: only %d labeled samples (<%d); falling back to "
            "entropy ranking", losses.size, LOSS_ESTIMATOR_MIN_SAMPLES)
        return LossEstimator(kind="entropy_fallback")
    # Closed-form ridge with unpenalized intercept via centering.
    x_mean = X.mean(axis=0)
    y_mean = losses.mean()
    Xc = X - x_mean
    A = Xc.T @ Xc + ridge_lambda * np.eye(X.shape[1])
    w = np.linalg.solve(A, Xc.T @ (losses - y_mean))
    bias = float(y_mean - w @ x_mean)
    model = LinearModel(weights=w, bias=bias, l2_lambda=ridge_lambda,
                        kind="ridge_regression")
    return LossEstimator(kind="ridge", model=model)


# --- random hyperparameter search ---------------------------------------------

@dataclass
class SearchSpace:
    """Per-hyperparameter sampling distributions.

    Each entry is a tuple: ("uniform", lo, hi), ("log_uniform", lo, hi),
    ("int_uniform", lo, hi), ("odd_int", lo, hi) or ("choice", [options]).
    """
    dimensions: dict
    budget: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.budget < 1:
            raise ValidationError("search budget must be >= 1")

    def sample(self, rng: np.random.Generator) -> dict:
        params = {}
        for name in sorted(self.dimensions):
            spec = self.dimensions[name]
            kind = spec[0]
            if kind == "uniform":
                params[name] = float(rng.uniform(spec[1], spec[2]))
            elif kind == "log_uniform":
                params[name] = float(np.exp(rng.uniform(math.log(spec[1]),
                                                        math.log(spec[2]))))
            elif kind == "int_uniform":
                params[name] = int(rng.integers(spec[1], spec[2] + 1))
            elif kind == "odd_int":
                lo = spec[1] // 2
                hi = (spec[2] - 1) // 2
                params[name] = int(rng.integers(lo, hi + 1)) * 2 + 1
            elif kind == "choice":
                params[name] = spec[1][int(rng.integers(0, len(spec[1])))]
            else:
                raise ValidationError(f"unknown dimension kind {kind!r}")
        return params


DETECTOR_SEARCH_SPACE = {
    "gamma": ("log_uniform", 0.3, 10.0),
    "p": ("uniform", 0.5, 4.0),
    "alpha": ("uniform", 0.8, 0.99),
    "kappa": ("odd_int", 5, 41),
    "beta": ("uniform", 4.0, 15.0),
    "min_length": ("int_uniform", 4, 30),
    "min_count": ("int_uniform", 10, 120),
    "use_highpass_1khz": ("choice", [True, False]),
    "gauss_sigma": ("uniform", 0.5, 3.0),
    "slice_len": ("int_uniform", 3, 12),
}


@dataclass
class TrialResult:
    trial_id: int
    params: dict
    objective: float
    status: str  # "ok" | "failed"


def random_search(space: SearchSpace,
                  objective: Callable[[dict], float],
                  log_path: str | Path | None = None) -> tuple[dict | None, list[TrialResult]]:
    """Evaluate `budget` sampled configurations; return the argmax and full log.

    A failing objective marks the trial failed and the search continues. The
    trial sequence is fully determined by the seed.
    """
    rng = np.random.default_rng(space.seed)
    configs = [space.sample(rng) for _ in range(space.budget)]
    results: list[TrialResult] = []
    best_params, best_value = None, -math.inf
    for trial_id, params in enumerate(configs):
        try:
            value = float(objective(params))
            status = "ok"
        except Exception as exc:  # objective errors are data, not bugs
            logger.warning("trial %d failed: %s", trial_id, exc)
            value, status = float("nan"), "failed"
        results.append(TrialResult(trial_id, params, value, status))
        if status == "ok" and value > best_value:
            best_params, best_value = params, value
    if log_path is not None:
        write_trial_log(log_path, results)
    return best_params, results


def write_trial_log(path: str | Path, results: list[TrialResult]) -> None:
    param_names = sorted({k for r in results for k in r.params})
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trial_id", *param_names, "objective", "status"])
        for r in sorted(results, key=lambda r: r.trial_id):
            writer.writerow([r.trial_id,
                             *[r.params.get(k, "") for k in param_names],
                             repr(r.objective), r.status])
