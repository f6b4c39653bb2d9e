"""Exact-match quadruple scoring and multi-trial aggregation.

A predicted quadruple counts as correct only when all four elements
(aspect span by kind and boundaries, opinion span, category, sentiment)
equal a gold quadruple. Precision/recall/F1 are micro-aggregated over the
corpus; the type breakdown buckets every quadruple by its own
explicit/implicit combination.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import AbstractSet, Iterable, Sequence

from .corpus import QuadType, Quadruple, quad_type


@dataclass(frozen=True)
class Score:
    """Precision/recall/F1 with the underlying counts.

    Counts are integers for raw scores; :func:`aggregate_trials` returns
    Score objects whose fields hold fractional means and deviations.
    """

    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "Score":
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        return cls(precision=precision, recall=recall, f1=f1, tp=tp, fp=fp, fn=fn)

    def as_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
        }


def score(pred: AbstractSet[Quadruple], gold: AbstractSet[Quadruple]) -> Score:
    """Exact-match P/R/F1 for one sentence's prediction and gold sets."""
    tp = len(set(pred) & set(gold))
    return Score.from_counts(tp=tp, fp=len(pred) - tp, fn=len(gold) - tp)


def score_corpus(
    pairs: Iterable[tuple[AbstractSet[Quadruple], AbstractSet[Quadruple]]]
) -> Score:
    """Micro-aggregate exact-match counts over (pred, gold) sentence pairs."""
    tp = fp = fn = 0
    for pred, gold in pairs:
        hits = len(set(pred) & set(gold))
        tp += hits
        fp += len(pred) - hits
        fn += len(gold) - hits
    return Score.from_counts(tp, fp, fn)


def score_by_type(
    pred: AbstractSet[Quadruple], gold: AbstractSet[Quadruple]
) -> dict[QuadType, Score]:
    return score_by_type_corpus([(pred, gold)])


def score_by_type_corpus(
    pairs: Iterable[tuple[AbstractSet[Quadruple], AbstractSet[Quadruple]]]
) -> dict[QuadType, Score]:
    """Per-type micro scores; every quadruple lands in its own type bucket.

    A false positive is counted under the predicted quadruple's type, a
    false negative under the gold quadruple's type, so the per-type counts
    partition the overall counts.
    """
    counts = {t: [0, 0, 0] for t in QuadType}  # tp, fp, fn
    for pred, gold in pairs:
        pred, gold = set(pred), set(gold)
        for q in pred & gold:
            counts[quad_type(q)][0] += 1
        for q in pred - gold:
            counts[quad_type(q)][1] += 1
        for q in gold - pred:
            counts[quad_type(q)][2] += 1
    return {t: Score.from_counts(*c) for t, c in counts.items()}


def aggregate_trials(scores: Sequence[Score]) -> tuple[Score, Score]:
    """Arithmetic mean and population standard deviation per metric."""
    if not scores:
        raise ValueError("no trials to aggregate")

    def stats(values: list[float]) -> tuple[float, float]:
        mean = sum(values) / len(values)
        var = sum((v - mean) ** 2 for v in values) / len(values)
        return mean, math.sqrt(var)

    fields = ("precision", "recall", "f1", "tp", "fp", "fn")
    means, stds = {}, {}
    for name in fields:
        means[name], stds[name] = stats([float(getattr(s, name)) for s in scores])
    return Score(**means), Score(**stds)


def bin_epoch_records(
    records: Iterable[dict], n_bins: int = 5, metric: str = "f1"
) -> list[dict]:
    """Bin per-epoch evaluation records into equal epoch ranges per split.

    Each input record needs ``epoch``, ``split`` and the metric field.
    Returns one row per (split, bin) with the bin's epoch range, mean and
    population standard deviation - the shape used for convergence curves.
    """
    records = [r for r in records if metric in r and "epoch" in r and "split" in r]
    if not records:
        return []
    max_epoch = max(r["epoch"] for r in records)
    width = max(1, math.ceil(max_epoch / n_bins))
    table: dict[tuple[str, int], list[float]] = {}
    for r in records:
        b = min((r["epoch"] - 1) // width, n_bins - 1)
        table.setdefault((r["split"], b), []).append(float(r[metric]))
    rows = []
    for (split, b), values in sorted(table.items()):
        mean = sum(values) / len(values)
        std = math.sqrt(sum((v - mean) ** 2 for v in values) / len(values))
        rows.append(
            {
                "split": split,
                "bin": b,
                "epoch_lo": b * width + 1,
                "epoch_hi": min((b + 1) * width, max_epoch),
                "mean": mean,
                "std": std,
                "count": len(values),
            }
        )
    return rows
