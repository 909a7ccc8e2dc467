"""Evaluation metrics: specificity at fixed sensitivity, Cohen's kappa,
mapped top-1 accuracy, positivity rates, and the PU convergence-rate bound.

All metrics return a MetricsRow so undefined results are flagged explicitly
instead of propagating NaN.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, Mapping, Sequence

import numpy as np

from .errors import ValidationError

UNMAPPED = "unmapped"


@dataclass
class MetricsRow:
    name: str
    value: float
    support: int
    params: dict = field(default_factory=dict)
    defined: bool = True

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "value": self.value,
            "support": self.support,
            "defined": self.defined,
            **{f"param_{k}": v for k, v in sorted(self.params.items())},
        }


def _undefined(name: str, support: int, **params) -> MetricsRow:
    return MetricsRow(name=name, value=float("nan"), support=support,
                      params=params, defined=False)


def spec_at_sens(scores: Sequence[float], labels: Sequence[int],
                 target_sens: float = 0.95) -> MetricsRow:
    """Specificity at the largest score threshold reaching the target sensitivity.

    Threshold semantics: a sample is predicted positive iff score >= threshold,
    thresholds are the distinct score values (ties form one group, no
    interpolation), and the chosen threshold is the largest one with
    sensitivity >= target_sens. The threshold ends up in params["threshold"].
    """
    if not 0.0 < target_sens <= 1.0:
        raise ValidationError(f"target_sens must be in (0, 1], got {target_sens}")
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValidationError("scores and labels must be 1-D and the same length")
    n = scores.size
    n_pos = int(np.sum(labels == 1))
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        return _undefined("spec_at_sens", n, sensitivity_target=target_sens)

    # Walk distinct thresholds from high to low; sensitivity only grows, so the
    # first (largest) threshold reaching the target is the answer.
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    tp = 0
    fp = 0
    i = 0
    while i < n:
        j = i
        while j < n and sorted_scores[j] == sorted_scores[i]:
            tp += int(sorted_labels[j] == 1)
            fp += int(sorted_labels[j] == 0)
            j += 1
        sens = tp / n_pos
        if sens >= target_sens:
            specificity = (n_neg - fp) / n_neg
            return MetricsRow(
                name="spec_at_sens", value=float(specificity), support=n,
                params={"sensitivity_target": target_sens,
                        "threshold": float(sorted_scores[i]),
                        "sensitivity": float(sens)})
        i = j
    # Unreachable: the lowest threshold classifies everything positive.
    raise AssertionError("no threshold reached the target sensitivity")


def cohens_kappa(a: Sequence[Hashable], b: Sequence[Hashable]) -> MetricsRow:
    """Cohen's kappa between two raters: (p_o - p_e) / (1 - p_e)."""
    if len(a) != len(b):
        raise ValidationError("rater label lists must have equal length")
    if len(a) == 0:
        raise ValidationError("rater label lists must be non-empty")
    n = len(a)
    classes = sorted(set(a) | set(b), key=repr)
    index = {c: i for i, c in enumerate(classes)}
    table = np.zeros((len(classes), len(classes)), dtype=float)
    for x, y in zip(a, b):
        table[index[x], index[y]] += 1
    p_o = float(np.trace(table)) / n
    marg_a = table.sum(axis=1) / n
    marg_b = table.sum(axis=0) / n
    p_e = float(np.dot(marg_a, marg_b))
    if p_e >= 1.0:
        return _undefined("cohens_kappa", n)
    kappa = (p_o - p_e) / (1.0 - p_e)
    return MetricsRow(name="cohens_kappa", value=float(kappa), support=n)


def mapped_top1(preds: Sequence[Hashable], truth: Sequence[Hashable],
                mapping: Mapping[Hashable, Hashable]) -> MetricsRow:
    """Top-1 accuracy after mapping train-class predictions into test classes.

    Every predicted class must appear in the mapping (use UNMAPPED for train
    classes with no test counterpart); a prediction is correct iff its mapped
    class equals the truth label.
    """
    if len(preds) != len(truth):
        raise ValidationError("preds and truth must have equal length")
    if len(preds) == 0:
        raise ValidationError("preds must be non-empty")
    missing = {p for p in preds if p not in mapping}
    if missing:
        raise ValidationError(f"mapping is not defined for train classes: {sorted(map(repr, missing))}")
    correct = sum(1 for p, t in zip(preds, truth) if mapping[p] == t)
    return MetricsRow(name="mapped_top1", value=correct / len(preds),
                      support=len(preds))


def pu_rate_bound(V: float, n: float, e_m: float, h: float) -> tuple[float, str]:
    """Piecewise PU-learning convergence-rate bound (constants taken as 1).

    Returns V/(n*e_m*h) tagged "linear" when h >= sqrt(V/(n*e_m)), otherwise
    sqrt(V/(n*e_m)) tagged "sqrt". Continuous at the branch boundary.
    """
    for name, val in (("V", V), ("n", n), ("e_m", e_m), ("h", h)):
        if not (isinstance(val, (int, float)) and math.isfinite(val) and val > 0):
            raise ValidationError(f"{name} must be a positive finite number, got {val!r}")
    if e_m > 1.0:
        raise ValidationError(f"e_m must be <= 1, got {e_m}")
    boundary = math.sqrt(V / (n * e_m))
    if h >= boundary:
        return V / (n * e_m * h), "linear"
    return boundary, "sqrt"


def positivity_rate(n_positive_labeled: int, n_labeled: int,
                    dataset_constant: float | None = None) -> MetricsRow:
    """Fraction of labeled samples that are positive.

    dataset_constant, when known (oracle-wide positivity), is carried along in
    the params for plotting the dashed reference line.
    """
    if n_positive_labeled < 0 or n_labeled < 0 or n_positive_labeled > n_labeled:
        raise ValidationError("invalid labeled counts")
    params = {}
    if dataset_constant is not None:
        params["dataset_constant"] = float(dataset_constant)
    if n_labeled == 0:
        return _undefined("positivity_rate", 0, **params)
    return MetricsRow(name="positivity_rate",
                      value=n_positive_labeled / n_labeled,
                      support=n_labeled, params=params)
