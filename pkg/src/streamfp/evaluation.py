"""Attack scoring: average precision, imbalance projection, trial harness.

AUPRC is computed as step-wise average precision with tied scores treated
as a single threshold. Precision at a recall operating point is projected
to an arbitrary noise:target ratio R by reweighting the empirical negative
class, which coincides with direct measurement when R equals the actual
test imbalance.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import features as feat
from . import gbdt
from . import mitigations
from .seeding import rng_from
from .traces import Dataset, NOISE, TARGET, ceil_frac, split_dataset

# Conversion used to express mean event payloads in generated-token units.
CHARS_PER_TOKEN = 4.52

DEFAULT_RECALLS = (0.05, 0.10, 0.20, 0.50)
DEFAULT_RATIO = 10_000.0


@dataclass(frozen=True)
class ScoredSet:
    """Classifier scores grouped by true class."""

    positives: np.ndarray
    negatives: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "positives",
                           np.asarray(self.positives, dtype=np.float64))
        object.__setattr__(self, "negatives",
                           np.asarray(self.negatives, dtype=np.float64))


def _require_both_classes(scored: ScoredSet) -> None:
    if len(scored.positives) == 0 or len(scored.negatives) == 0:
        raise ValueError("scored set needs at least one positive and one negative")


def auprc(scored: ScoredSet) -> float:
    """Step-wise average precision over descending unique score thresholds."""
    _require_both_classes(scored)
    pos, neg = scored.positives, scored.negatives
    scores = np.concatenate([pos, neg])
    is_pos = np.concatenate([np.ones(len(pos), dtype=np.int64),
                             np.zeros(len(neg), dtype=np.int64)])
    order = np.argsort(-scores, kind="stable")
    scores = scores[order]
    is_pos = is_pos[order]
    # group ties: cumulative counts at the last element of each tie group
    boundary = np.nonzero(np.diff(scores))[0]
    ends = np.concatenate([boundary, [len(scores) - 1]])
    cum_tp = np.cumsum(is_pos)[ends]
    cum_all = ends + 1
    P = len(pos)
    ap = 0.0
    prev_recall = 0.0
    for tp, total in zip(cum_tp, cum_all):
        recall = tp / P
        precision = tp / total
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return float(ap)


def precision_at_recall_projected(scored: ScoredSet, recall: float,
                                  ratio: float) -> float:
    """Precision at the threshold attaining ``recall``, at imbalance R.

    The threshold is the smallest score whose true-positive fraction is at
    least ``recall``. With c the attained positive fraction and f the
    negative fraction at that threshold, returns c / (c + f*R): the
    empirical negative class reweighted to R noise samples per target. At
    R = n_neg/n_pos this equals the directly measured precision.
    """
    _require_both_classes(scored)
    if not (0.0 < recall <= 1.0):
        raise ValueError(f"recall must be in (0, 1], got {recall}")
    if ratio < 1.0:
        raise ValueError(f"ratio must be >= 1, got {ratio}")
    pos = np.sort(scored.positives)[::-1]
    k = max(1, ceil_frac(recall, len(pos)))
    threshold = pos[k - 1]
    attained = float(np.count_nonzero(scored.positives >= threshold)) / len(pos)
    f = float(np.count_nonzero(scored.negatives >= threshold)) / len(scored.negatives)
    return attained / (attained + f * ratio)


def estimate_tokens_per_event(dataset: Dataset,
                              envelope_bytes: int = 120,
                              tls_overhead: int = 22) -> float:
    """Mean per-event generated-token count inferred from payload sizes.

    Payload is the event size minus the envelope and encryption overhead,
    floored at zero, divided by 4.52 characters per token; results within
    0.25 of 1.0 snap to exactly 1.0.
    """
    payloads = [max(e.size - envelope_bytes - tls_overhead, 0)
                for t in dataset for e in t.events]
    if not payloads:
        raise ValueError("dataset has no events")
    estimate = float(np.mean(payloads)) / CHARS_PER_TOKEN
    if abs(estimate - 1.0) <= 0.25:
        return 1.0
    return estimate


@dataclass(frozen=True)
class TrialResult:
    seed: int
    auprc: float
    precision_at_recall: dict[float, float]
    prevalence: float
    n_pos: int
    n_neg: int
    n_trees: int

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "auprc": self.auprc,
            "precision_at_recall": {f"{r:g}": v
                                    for r, v in self.precision_at_recall.items()},
            "prevalence": self.prevalence,
            "n_pos": self.n_pos,
            "n_neg": self.n_neg,
            "n_trees": self.n_trees,
        }


@dataclass(frozen=True)
class EvalReport:
    ratio: float
    recalls: tuple[float, ...]
    modality: str
    trials: tuple[TrialResult, ...]
    params: gbdt.TrainParams
    mitigation: dict | None = None

    @property
    def trial_seeds(self) -> tuple[int, ...]:
        return tuple(t.seed for t in self.trials)

    def median_auprc(self) -> float:
        return float(np.median([t.auprc for t in self.trials]))

    def median_precision_at_recall(self) -> dict[float, float]:
        return {r: float(np.median([t.precision_at_recall[r] for t in self.trials]))
                for r in self.recalls}

    def median_prevalence(self) -> float:
        return float(np.median([t.prevalence for t in self.trials]))

    def params_digest(self) -> str:
        blob = json.dumps(asdict(self.params), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "ratio": self.ratio,
            "recalls": list(self.recalls),
            "modality": self.modality,
            "trial_seeds": list(self.trial_seeds),
            "trials": [t.to_dict() for t in self.trials],
            "medians": {
                "auprc": self.median_auprc(),
                "precision_at_recall": {f"{r:g}": v for r, v in
                                        self.median_precision_at_recall().items()},
                "prevalence": self.median_prevalence(),
            },
            "params": asdict(self.params),
            "params_digest": self.params_digest(),
            "mitigation": self.mitigation,
        }


def write_report_json(report: EvalReport, path) -> None:
    Path(path).write_text(
        json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n",
        encoding="utf-8")


def write_report_csv(report: EvalReport, path) -> None:
    """Per-trial CSV: ``trial,auprc,p@5,p@10,p@20,p@50``."""
    header = "trial,auprc," + ",".join(f"p@{int(round(r * 100))}"
                                       for r in report.recalls)
    lines = [header]
    for i, t in enumerate(report.trials):
        vals = ",".join(repr(t.precision_at_recall[r]) for r in report.recalls)
        lines.append(f"{i},{t.auprc!r},{vals}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def run_single_trial(dataset: Dataset, params: gbdt.TrainParams, modality: str,
                     seed: int, ratio: float = DEFAULT_RATIO,
                     holdout_fraction: float = 0.2, val_fraction: float = 0.05,
                     recalls: Sequence[float] = DEFAULT_RECALLS,
                     mitigation: dict | None = None,
                     train_fraction: float = 1.0) -> TrialResult:
    """One split/fit/score round.

    Test traces are the held-out target prompts; the negative class for
    scoring is the validation noise traffic, which takes no part in
    gradient updates. Mitigations are applied to the whole dataset with
    injection statistics drawn from the training split only.
    """
    split = split_dataset(dataset, holdout_fraction, val_fraction, seed)
    if mitigation is not None:
        dataset = mitigations.apply_strategy(dataset, mitigation,
                                             stats_ids=split.train, seed=seed)
    index = dataset.id_index()
    train_ids = list(split.train)
    if not (0.0 < train_fraction <= 1.0):
        raise ValueError("train_fraction must be in (0, 1]")
    if train_fraction < 1.0:
        keep = max(1, int(round(train_fraction * len(train_ids))))
        order = rng_from(seed, 101).permutation(len(train_ids))
        chosen = set(int(i) for i in order[:keep])
        train_ids = [tid for i, tid in enumerate(train_ids) if i in chosen]

    train = [index[i] for i in train_ids]
    val = [index[i] for i in split.val]
    test = [index[i] for i in split.test]

    pad_len = feat.fit_pad_len(train)
    config = feat.FeatureConfig(modality, pad_len)
    fm_train = feat.vectorize(train, config)
    fm_val = feat.vectorize(val, config)
    model = gbdt.fit(fm_train, fm_val, params)

    pos_scores = gbdt.predict_proba(model, feat.vectorize(test, config))
    val_noise = [t for t in val if t.label == NOISE]
    if not val_noise:
        raise ValueError("validation split holds no noise traffic to score against")
    neg_scores = gbdt.predict_proba(model, feat.vectorize(val_noise, config))

    scored = ScoredSet(positives=pos_scores, negatives=neg_scores)
    pr = {float(r): precision_at_recall_projected(scored, r, ratio) for r in recalls}
    n_pos, n_neg = len(pos_scores), len(neg_scores)
    return TrialResult(seed=seed, auprc=auprc(scored), precision_at_recall=pr,
                       prevalence=n_pos / (n_pos + n_neg), n_pos=n_pos,
                       n_neg=n_neg, n_trees=len(model.trees))


def run_trials(dataset: Dataset, params: gbdt.TrainParams, modality: str,
               n_trials: int = 5, base_seed: int = 0,
               ratio: float = DEFAULT_RATIO, holdout_fraction: float = 0.2,
               val_fraction: float = 0.05,
               recalls: Sequence[float] = DEFAULT_RECALLS,
               mitigation: dict | None = None,
               train_fraction: float = 1.0) -> EvalReport:
    """Repeat split/fit/score with seeds base_seed..base_seed+n_trials-1.

    Trials are independent, so reports are keyed by trial seed and medians
    do not depend on execution order.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    trials = tuple(
        run_single_trial(dataset, params, modality, seed=base_seed + i,
                         ratio=ratio, holdout_fraction=holdout_fraction,
                         val_fraction=val_fraction, recalls=recalls,
                         mitigation=mitigation, train_fraction=train_fraction)
        for i in range(n_trials)
    )
    return EvalReport(ratio=ratio, recalls=tuple(float(r) for r in recalls),
                      modality=modality, trials=trials, params=params,
                      mitigation=mitigation)
