"""The four training losses and their unweighted total.

* tagging loss: token-averaged cross-entropy of the gold tag;
* pair loss: binary cross-entropy over all combination labels of the
  positive and negative pairs together, averaged over pairs x labels;
* category / sentiment losses: the same BCE pattern over the aspect and
  opinion unit projections of the pair set.

Probabilities are clamped at 1e-12 before the log, so a confidently wrong
model yields a large finite loss, never NaN.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import torch

from .corpus import Span
from .negatives import PairTarget

logger = logging.getLogger(__name__)

EPS = 1e-12


@dataclass
class LossReport:
    """Per-step loss summary; ``total`` is the optimized scalar."""

    l1: float
    l2: float
    l3: float
    l4: float
    total: float
    n_positive: int = 0
    n_negative: int = 0

    def as_dict(self) -> dict:
        return {
            "l1": self.l1,
            "l2": self.l2,
            "l3": self.l3,
            "l4": self.l4,
            "total": self.total,
            "n_positive": self.n_positive,
            "n_negative": self.n_negative,
        }


def _scalar(x) -> float:
    return float(x.detach()) if isinstance(x, torch.Tensor) else float(x)


def binary_cross_entropy(probs: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean BCE over every entry of ``probs`` against 0/1 ``targets``."""
    if probs.shape != targets.shape:
        raise ValueError(f"shape mismatch: probs {tuple(probs.shape)} vs targets {tuple(targets.shape)}")
    p = probs.clamp(EPS, 1.0 - EPS)
    return -(targets * p.log() + (1.0 - targets) * (1.0 - p).log()).mean()


def loss_tagging(probs: torch.Tensor, gold_tags: Sequence[int]) -> torch.Tensor:
    """Token-averaged negative log-probability of the gold tags."""
    if probs.ndim != 2 or probs.shape[0] != len(gold_tags):
        raise ValueError(
            f"distribution rows ({tuple(probs.shape)}) do not match {len(gold_tags)} gold tags"
        )
    idx = torch.as_tensor(list(gold_tags), dtype=torch.long, device=probs.device)
    gold_p = probs.gather(1, idx.unsqueeze(1)).squeeze(1).clamp_min(EPS)
    return -gold_p.log().mean()


def pair_target_matrix(
    pairs: Sequence[PairTarget], n_labels: int, like: torch.Tensor
) -> torch.Tensor:
    targets = torch.zeros(len(pairs), n_labels, dtype=like.dtype, device=like.device)
    for row, pair in enumerate(pairs):
        for k in pair.labels:
            targets[row, k] = 1.0
    return targets


def unit_target_matrix(
    units: Sequence[tuple[Span, frozenset[int]]], n_labels: int, like: torch.Tensor
) -> torch.Tensor:
    targets = torch.zeros(len(units), n_labels, dtype=like.dtype, device=like.device)
    for row, (_, labels) in enumerate(units):
        for k in labels:
            targets[row, k] = 1.0
    return targets


def loss_pairs(pairs: Sequence[PairTarget], probs: torch.Tensor) -> torch.Tensor:
    """BCE over the pair set, averaged over pairs x combination labels."""
    if len(pairs) == 0:
        logger.warning("loss_pairs called with an empty pair set")
        return torch.zeros(())
    if probs.shape[0] != len(pairs):
        raise ValueError(f"{len(pairs)} pairs but {probs.shape[0]} probability rows")
    return binary_cross_entropy(probs, pair_target_matrix(pairs, probs.shape[1], probs))


def loss_units(
    units: Sequence[tuple[Span, frozenset[int]]], probs: torch.Tensor
) -> torch.Tensor:
    if len(units) == 0:
        logger.warning("unit loss called with an empty unit set")
        return torch.zeros(())
    if probs.shape[0] != len(units):
        raise ValueError(f"{len(units)} units but {probs.shape[0]} probability rows")
    return binary_cross_entropy(probs, unit_target_matrix(units, probs.shape[1], probs))


def loss_category(
    units: Sequence[tuple[Span, frozenset[int]]], probs: torch.Tensor
) -> torch.Tensor:
    """BCE of aspect-unit category targets, averaged over units x categories."""
    return loss_units(units, probs)


def loss_sentiment(
    units: Sequence[tuple[Span, frozenset[int]]], probs: torch.Tensor
) -> torch.Tensor:
    """BCE of opinion-unit sentiment targets, averaged over units x sentiments."""
    return loss_units(units, probs)


def total_loss(
    l1,
    l2,
    l3=0.0,
    l4=0.0,
    n_positive: int = 0,
    n_negative: int = 0,
    weights: Sequence[float] = (1.0, 1.0, 1.0, 1.0),
) -> tuple[torch.Tensor, LossReport]:
    """Weighted sum of the four losses (all weights default to 1).

    Returns the differentiable total plus a float report for logging.
    """
    if len(weights) != 4:
        raise ValueError("need exactly four loss weights")
    terms = [
        t if isinstance(t, torch.Tensor) else torch.tensor(float(t)) for t in (l1, l2, l3, l4)
    ]
    total = sum(w * t for w, t in zip(weights, terms))
    report = LossReport(
        l1=_scalar(terms[0]),
        l2=_scalar(terms[1]),
        l3=_scalar(terms[2]),
        l4=_scalar(terms[3]),
        total=_scalar(total),
        n_positive=n_positive,
        n_negative=n_negative,
    )
    return total, report
