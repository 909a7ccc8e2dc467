"""Pool-based active-learning state machine.

One ALEngine owns one run: it selects query batches under the configured
strategy, applies oracle or human labels (with optional positive-to-negative
noise flips), retrains the classifier on positives plus sampled presumed
negatives, and records the metric trajectory. Everything is deterministic
given (config, seed, oracle).
"""
from __future__ import annotations

import copy
import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .learners import (
    LinearModel,
    binary_entropy,
    predict_score,
    train_logreg,
    train_loss_estimator,
)
from .metrics import spec_at_sens
from .pool import SampleRecord, SplitBounds

STRATEGIES = ("positive_only", "entropy", "loss_estimate", "mixed",
              "alternating", "random")

PSEUDO_LABEL_GAP_S = 300.0

HISTORY_COLUMNS = ("seed", "iteration", "strategy_used", "n_labeled",
                   "n_pos_found", "positivity_rate", "val_spec_at_95sens",
                   "test_spec_at_95sens")


@dataclass
class ALConfig:
    strategy: str = "entropy"
    batch_size: int = 500
    flip_rate: float = 0.0
    seeds: tuple = (0, 1, 2, 3, 4)
    negative_sample_multiplier: float = 5.0
    use_definitive_negatives: bool = False
    l2_lambda: float = 1e-2
    iteration_cap: int | None = None
    target_sensitivity: float = 0.95
    bounds: SplitBounds = field(default_factory=SplitBounds)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"unknown strategy {self.strategy!r}")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if not 0.0 <= self.flip_rate <= 1.0:
            raise ValidationError("flip_rate must be in [0, 1]")
        if self.negative_sample_multiplier < 0:
            raise ValidationError("negative_sample_multiplier must be >= 0")


@dataclass
class BatchSelection:
    ids: list[str]
    substrategy: dict  # sample_id -> strategy that picked it


@dataclass
class HistoryRow:
    seed: int
    iteration: int
    strategy_used: str
    n_labeled: int
    n_pos_found: int
    positivity_rate: float
    val_spec_at_95sens: float
    test_spec_at_95sens: float

    def as_csv_row(self) -> list[str]:
        return [str(self.seed), str(self.iteration), self.strategy_used,
                str(self.n_labeled), str(self.n_pos_found),
                repr(self.positivity_rate), repr(self.val_spec_at_95sens),
                repr(self.test_spec_at_95sens)]


class ALEngine:
    """Single-owner active-learning state; all mutations go through the
    select/apply/retrain methods in order."""

    def __init__(self, records: list[SampleRecord], features: dict,
                 cfg: ALConfig, seed: int = 0, oracle: dict | None = None):
        self.cfg = cfg
        self.seed = seed
        self.oracle = oracle
        self.records = {r.sample_id: r for r in records}
        if len(self.records) != len(records):
            raise ValidationError("duplicate sample_ids in pool")
        self._ids = sorted(self.records)
        missing = [sid for sid in self._ids
                   if self.records[sid].feature_ref not in features]
        if missing:
            raise ValidationError(f"missing features for {len(missing)} samples "
                                  f"(first: {missing[0]})")
        self._X = np.stack([np.asarray(features[self.records[sid].feature_ref],
                                       dtype=np.float64)
                            for sid in self._ids])
        self._row = {sid: i for i, sid in enumerate(self._ids)}
        self.rng = np.random.default_rng(seed)
        self.model: LinearModel | None = None
        self.iteration = 0
        self.batches_selected = 0
        self.history: list[HistoryRow] = []
        self.n_labeled_total = 0
        self.n_pos_found = 0
        self.last_selection: BatchSelection | None = None
        self._last_strategy_used = "seed"

    # -- pool views -----------------------------------------------------------

    def split_of(self, rec: SampleRecord) -> str:
        return self.cfg.bounds.split_for(rec.recorded_at)

    def ids_in(self, split: str | None = None,
               label_state: str | None = None) -> list[str]:
        out = []
        for sid in self._ids:
            rec = self.records[sid]
            if split is not None and self.split_of(rec) != split:
                continue
            if label_state is not None and rec.label_state != label_state:
                continue
            out.append(sid)
        return out

    def pool_counts(self) -> dict:
        counts = {state: 0 for state in
                  ("unlabeled", "positive", "negative", "pseudo_positive")}
        for rec in self.records.values():
            counts[rec.label_state] += 1
        return counts

    def scores_for(self, ids: list[str]) -> np.ndarray:
        rows = [self._row[sid] for sid in ids]
        return predict_score(self.model, self._X[rows])

    # -- operations -------------------------------------------------------------

    def _rank(self, ids: list[str], keys: np.ndarray) -> list[str]:
        # Descending by key, sample_id as the deterministic tie-break.
        order = sorted(range(len(ids)), key=lambda i: (-keys[i], ids[i]))
        return [ids[i] for i in order]

    def _positive_ranking(self, ids: list[str]) -> list[str]:
        return self._rank(ids, self.scores_for(ids))

    def _entropy_ranking(self, ids: list[str]) -> list[str]:
        return self._rank(ids, binary_entropy(self.scores_for(ids)))

    def _loss_estimate_ranking(self, ids: list[str]) -> tuple[list[str], str]:
        labeled = [sid for sid in self.ids_in(split="train")
                   if self.records[sid].is_labeled]
        rows = [self._row[sid] for sid in labeled]
        X_labeled = self._X[rows]
        y = np.array([1.0 if self.records[sid].is_positive else 0.0
                      for sid in labeled])
        p = np.clip(predict_score(self.model, X_labeled), 1e-12, 1 - 1e-12) \
            if labeled else np.zeros(0)
        realized = -(y * np.log(p) + (1 - y) * np.log(1 - p)) if labeled else np.zeros(0)
        estimator = train_loss_estimator(X_labeled, realized)
        pool_rows = [self._row[sid] for sid in ids]
        if estimator.kind == "ridge":
            keys = estimator.predict(self._X[pool_rows])
            return self._rank(ids, keys), "loss_estimate"
        keys = estimator.predict(self._X[pool_rows],
                                 probs=self.scores_for(ids))
        return self._rank(ids, keys), "loss_estimate"

    def select_batch(self) -> BatchSelection:
        """Pick up to batch_size unlabeled training samples for labeling."""
        if self.model is None:
            raise ValidationError("model not trained yet; call retrain() first")
        candidates = self.ids_in(split="train", label_state="unlabeled")
        if not candidates:
            raise ValidationError("unlabeled training pool is empty")
        k = min(self.cfg.batch_size, len(candidates))
        strategy = self.cfg.strategy
        round_idx = self.batches_selected

        if strategy == "alternating":
            strategy = "positive_only" if round_idx % 2 == 0 else "entropy"

        if strategy == "positive_only":
            picked = self._positive_ranking(candidates)[:k]
            sub = {sid: "positive_only" for sid in picked}
        elif strategy == "entropy":
            picked = self._entropy_ranking(candidates)[:k]
            sub = {sid: "entropy" for sid in picked}
        elif strategy == "loss_estimate":
            ranked, used = self._loss_estimate_ranking(candidates)
            picked = ranked[:k]
            sub = {sid: used for sid in picked}
        elif strategy == "random":
            perm = self.rng.permutation(len(candidates))
            picked = [candidates[i] for i in perm[:k]]
            sub = {sid: "random" for sid in picked}
        elif strategy == "mixed":
            k_pos = math.ceil(k / 2)
            pos_ranked = self._positive_ranking(candidates)
            ent_ranked = self._entropy_ranking(candidates)
            picked = pos_ranked[:k_pos]
            sub = {sid: "positive_only" for sid in picked}
            chosen = set(picked)
            # Remainder from the entropy ranking, de-duplicated then
            # backfilled from the same ranking.
            for sid in ent_ranked:
                if len(picked) >= k:
                    break
                if sid in chosen:
                    continue
                picked.append(sid)
                chosen.add(sid)
                sub[sid] = "entropy"
        else:
            raise AssertionError(f"unhandled strategy {strategy}")

        self.batches_selected += 1
        self.last_selection = BatchSelection(ids=picked, substrategy=sub)
        self._last_strategy_used = self.cfg.strategy if self.cfg.strategy in (
            "mixed", "random", "loss_estimate") else strategy
        return self.last_selection

    def apply_labels(self, selection: BatchSelection, labels: dict,
                     source: str = "oracle") -> None:
        """Record labels for a selected batch.

        labels maps sample_id to "positive"/"negative" (optionally a dict
        {"label": ..., "species": ..., "ecotype": ...}). Would-be positives
        flip to negative with probability flip_rate; negatives are only
        retained as guaranteed negatives under the entropy/loss_estimate
        sub-strategies (or when use_definitive_negatives is set).
        """
        for sid in selection.ids:
            rec = self.records.get(sid)
            if rec is None:
                raise ValidationError(f"unknown sample {sid}")
            if rec.label_state != "unlabeled":
                raise ValidationError(f"sample {sid} is already labeled")
        for sid in selection.ids:
            rec = self.records[sid]
            entry = labels.get(sid, "negative")
            if isinstance(entry, dict):
                label = entry.get("label", "negative")
                species, ecotype = entry.get("species"), entry.get("ecotype")
            else:
                label, species, ecotype = entry, None, None
            sub = selection.substrategy.get(sid, self.cfg.strategy)
            retain_negatives = (sub in ("entropy", "loss_estimate", "random")
                                or self.cfg.use_definitive_negatives)
            self.n_labeled_total += 1
            if label == "positive":
                flipped = (self.cfg.flip_rate > 0.0
                           and self.rng.random() < self.cfg.flip_rate)
                if flipped:
                    if retain_negatives:
                        rec.label_state = "negative"
                        rec.label_source = "noise_flip"
                    # Under positive-only ranking a flipped sample simply
                    # returns to the unlabeled pool.
                else:
                    rec.label_state = "positive"
                    rec.label_source = source
                    rec.species = species
                    rec.ecotype = ecotype
                    self.n_pos_found += 1
            elif label == "negative":
                if retain_negatives:
                    rec.label_state = "negative"
                    rec.label_source = source
            else:
                raise ValidationError(f"bad label {label!r} for {sid}")

    def retrain(self) -> LinearModel:
        """Refresh the classifier and append a metrics row.

        Training set: all positives, guaranteed negatives, and random
        unlabeled draws as presumed negatives (multiplier x positives), all
        from the training split.
        """
        train_ids = self.ids_in(split="train")
        positives = [sid for sid in train_ids if self.records[sid].is_positive]
        if not positives:
            raise ValidationError("cannot retrain with no positive samples")
        negatives = [sid for sid in train_ids
                     if self.records[sid].label_state == "negative"]
        unlabeled = [sid for sid in train_ids
                     if self.records[sid].label_state == "unlabeled"]
        n_presumed = int(round(self.cfg.negative_sample_multiplier * len(positives)))
        n_presumed = min(n_presumed, len(unlabeled))
        presumed: list[str] = []
        if n_presumed > 0:
            idx = self.rng.choice(len(unlabeled), size=n_presumed, replace=False)
            presumed = [unlabeled[i] for i in sorted(idx.tolist())]
        ids = positives + negatives + presumed
        y = np.array([1.0] * len(positives) + [0.0] * (len(negatives) + len(presumed)))
        rows = [self._row[sid] for sid in ids]
        self.model = train_logreg(self._X[rows], y, self.cfg.l2_lambda,
                                  seed=self.seed)
        self.iteration += 1
        self.history.append(self._metrics_row())
        return self.model

    def _spec_for_split(self, split: str) -> float:
        if self.oracle is None:
            return float("nan")
        ids = self.ids_in(split=split)
        if not ids:
            return float("nan")
        labels = np.array([1 if self.oracle[sid] else 0 for sid in ids])
        if labels.sum() in (0, labels.size):
            return float("nan")
        row = spec_at_sens(self.scores_for(ids), labels,
                           self.cfg.target_sensitivity)
        return row.value if row.defined else float("nan")

    def _metrics_row(self) -> HistoryRow:
        rate = (self.n_pos_found / self.n_labeled_total
                if self.n_labeled_total else float("nan"))
        return HistoryRow(
            seed=self.seed,
            iteration=self.iteration,
            strategy_used=self._last_strategy_used,
            n_labeled=self.n_labeled_total,
            n_pos_found=self.n_pos_found,
            positivity_rate=rate,
            val_spec_at_95sens=self._spec_for_split("val"),
            test_spec_at_95sens=self._spec_for_split("test"),
        )

    def dataset_positivity_constant(self) -> float:
        if self.oracle is None:
            return float("nan")
        flags = [1 if self.oracle[sid] else 0 for sid in self._ids]
        return float(np.mean(flags))


def pool_positivity_rate(records: list[SampleRecord],
                         oracle: dict | None = None):
    """Positivity of the labeled subset of a pool, as a MetricsRow.

    Pseudo-positives count as positives; the oracle, when supplied, provides
    the dataset-wide constant used for the dashed reference line.
    """
    from .metrics import positivity_rate

    labeled = [r for r in records if r.is_labeled]
    n_pos = sum(1 for r in labeled if r.is_positive)
    constant = None
    if oracle:
        constant = sum(1 for v in oracle.values() if v) / len(oracle)
    return positivity_rate(n_pos, len(labeled), dataset_constant=constant)


def propagate_pseudo_labels(records: list[SampleRecord],
                            gap_s: float = PSEUDO_LABEL_GAP_S) -> list[SampleRecord]:
    """Spread positive labels to chronological neighbours.

    Co-deployed devices (same site, same timestamp) share labels outright;
    unlabeled records within gap_s of a real positive at the same site become
    pseudo_positive. Human/oracle labels are never overwritten.
    """
    by_site: dict[str, list[SampleRecord]] = {}
    for rec in records:
        by_site.setdefault(rec.site, []).append(rec)

    for site_records in by_site.values():
        site_records.sort(key=lambda r: (r.recorded_at, r.sample_id))
        # Same-timestamp co-deployments share the label (positive wins).
        by_time: dict = {}
        for rec in site_records:
            by_time.setdefault(rec.recorded_at, []).append(rec)
        for group in by_time.values():
            labeled = [r for r in group if r.is_labeled]
            if not labeled:
                continue
            donor = next((r for r in labeled if r.is_positive), labeled[0])
            for rec in group:
                if rec.label_state == "unlabeled":
                    rec.label_state = donor.label_state
                    rec.label_source = "pseudo"
                    rec.species = donor.species
                    rec.ecotype = donor.ecotype

        # Chronological adjacency: previous/next record within the gap.
        real_positive = [
            r.label_state == "positive" and r.label_source in ("seed", "human", "oracle")
            for r in site_records
        ]
        for i, rec in enumerate(site_records):
            if not real_positive[i]:
                continue
            for j in (i - 1, i + 1):
                if not 0 <= j < len(site_records):
                    continue
                neighbour = site_records[j]
                delta = abs((neighbour.recorded_at - rec.recorded_at).total_seconds())
                if neighbour.label_state == "unlabeled" and delta <= gap_s:
                    neighbour.label_state = "pseudo_positive"
                    neighbour.label_source = "pseudo"
                    neighbour.species = rec.species
                    neighbour.ecotype = rec.ecotype
    return records


def run_one_seed(records: list[SampleRecord], features: dict, cfg: ALConfig,
                 seed: int, oracle: dict,
                 iteration_cap: int | None = None) -> tuple[ALEngine, list[HistoryRow]]:
    """One simulated labeling run: initial seed-label training plus labeling
    rounds until the cap or pool exhaustion."""
    engine = ALEngine(copy.deepcopy(records), features, cfg, seed=seed,
                      oracle=oracle)
    n_unlabeled = len(engine.ids_in(split="train", label_state="unlabeled"))
    cap = iteration_cap if iteration_cap is not None else cfg.iteration_cap
    if cap is None:
        cap = math.ceil(n_unlabeled / cfg.batch_size)
    if cap <= 0:
        raise ValidationError("iteration cap must be positive")
    engine.retrain()
    while engine.iteration < cap:
        if not engine.ids_in(split="train", label_state="unlabeled"):
            break
        selection = engine.select_batch()
        labels = {sid: ("positive" if oracle[sid] else "negative")
                  for sid in selection.ids}
        engine.apply_labels(selection, labels, source="oracle")
        engine.retrain()
    return engine, engine.history


def run_simulation(records: list[SampleRecord], features: dict, cfg: ALConfig,
                   oracle: dict, out_csv: str | Path | None = None,
                   iteration_cap: int | None = None) -> dict[int, list[HistoryRow]]:
    """Simulate the labeling loop once per configured seed.

    Returns seed -> per-iteration history; optionally writes the combined
    history CSV (deterministic bytes for replay comparison).
    """
    histories: dict[int, list[HistoryRow]] = {}
    for seed in cfg.seeds:
        _, history = run_one_seed(records, features, cfg, seed, oracle,
                                  iteration_cap=iteration_cap)
        histories[seed] = history
    if out_csv is not None:
        write_history_csv(out_csv, histories)
    return histories


def write_history_csv(path: str | Path,
                      histories: dict[int, list[HistoryRow]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_COLUMNS)
        for seed in sorted(histories):
            for row in histories[seed]:
                writer.writerow(row.as_csv_row())
