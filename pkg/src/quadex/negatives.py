"""Training pair construction: gold positives plus negative samples.

Positives come from reducing the gold quadruples to (aspect, opinion)
pairs, each carrying the set of gold combination labels. Negatives are
candidate pairs with an all-zero target, built in one of three modes:

* ``adaptive`` - the Cartesian product of the model's currently decoded
  aspect and opinion candidates, minus the gold pair keys. These track the
  live model state, so they change as the parameters move.
* ``random`` - candidate spans drawn uniformly instead of decoded.
* ``none`` - no negatives (positives-only training).
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import AbstractSet, Iterable, Sequence

from .corpus import IMPLICIT_ASPECT, IMPLICIT_OPINION, Example, LabelVocab, Quadruple, Span

NEGATIVES_MODES = ("adaptive", "random", "none")


class NegativesError(RuntimeError):
    """Candidate construction failed (e.g. candidate set exploded)."""


@dataclass(frozen=True)
class PairTarget:
    """An (aspect, opinion) pair with its combination-label targets.

    ``labels`` holds combination-label indices; it is empty exactly for
    negative pairs (their target vector is all zeros).
    """

    aspect: Span
    opinion: Span
    labels: frozenset[int] = frozenset()

    @property
    def key(self) -> tuple[Span, Span]:
        return (self.aspect, self.opinion)

    @property
    def polarity(self) -> str:
        return "positive" if self.labels else "negative"

    def sort_key(self):
        return (self.aspect.sort_key(), self.opinion.sort_key(), sorted(self.labels))


def reduce_gold(gold: AbstractSet[Quadruple], vocab: LabelVocab) -> set[PairTarget]:
    """Group gold quadruples by pair; a pair may carry several labels."""
    by_pair: dict[tuple[Span, Span], set[int]] = {}
    for q in gold:
        key = (q.aspect, q.opinion)
        by_pair.setdefault(key, set()).add(vocab.combination_index(q.category, q.sentiment))
    return {
        PairTarget(aspect, opinion, frozenset(labels))
        for (aspect, opinion), labels in by_pair.items()
    }


def construct_adaptive(
    aspects: AbstractSet[Span],
    opinions: AbstractSet[Span],
    positives: AbstractSet[PairTarget],
    max_candidates_per_role: int = 64,
) -> set[PairTarget]:
    """All decoded (aspect, opinion) pairs that are not gold pair keys."""
    if IMPLICIT_ASPECT not in aspects or IMPLICIT_OPINION not in opinions:
        raise NegativesError("candidate sets must include the implicit aspect and opinion")
    if len(aspects) > max_candidates_per_role or len(opinions) > max_candidates_per_role:
        raise NegativesError(
            f"candidate explosion: {len(aspects)} aspects x {len(opinions)} opinions "
            f"(limit {max_candidates_per_role} per role)"
        )
    positive_keys = {p.key for p in positives}
    return {
        PairTarget(a, o)
        for a in aspects
        for o in opinions
        if (a, o) not in positive_keys
    }


def construct_random(
    example: Example,
    positives: AbstractSet[PairTarget],
    rng: random.Random,
    k_aspects: int | None = None,
    k_opinions: int | None = None,
    max_span_len: int = 5,
) -> set[PairTarget]:
    """Negatives from randomly drawn candidate spans instead of decoding.

    Per role, ``k`` spans are drawn with uniform start and length in
    [1, max_span_len] clipped to the sentence (duplicates collapse, so the
    drawn set may be smaller than k). The default k is the number of
    distinct explicit gold spans of that role plus one. The implicit
    aspect/opinion candidates are always included.
    """
    n_words = len(example.tokens)
    if n_words < 1:
        raise NegativesError("sentence must have at least one word")

    gold_aspects = {p.aspect for p in positives if p.aspect.is_explicit}
    gold_opinions = {p.opinion for p in positives if p.opinion.is_explicit}

    def draw(k: int) -> set[Span]:
        spans = set()
        for _ in range(k):
            start = rng.randrange(n_words)
            length = rng.randint(1, max_span_len)
            spans.add(Span.explicit(start, min(start + length - 1, n_words - 1)))
        return spans

    aspects = draw(len(gold_aspects) + 1 if k_aspects is None else k_aspects)
    opinions = draw(len(gold_opinions) + 1 if k_opinions is None else k_opinions)
    aspects.add(IMPLICIT_ASPECT)
    opinions.add(IMPLICIT_OPINION)

    positive_keys = {p.key for p in positives}
    return {
        PairTarget(a, o)
        for a in aspects
        for o in opinions
        if (a, o) not in positive_keys
    }


def construct_none(positives: AbstractSet[PairTarget]) -> set[PairTarget]:
    """Positives-only ablation: no negative pairs at all."""
    return set()


def project_aspects(
    pairs: Iterable[PairTarget], n_sentiments: int
) -> list[tuple[Span, frozenset[int]]]:
    """Distinct aspect units with their gold category sets.

    Aspects occurring only in negative pairs get an empty (all-zero)
    target. Units are deduplicated by span and returned in a deterministic
    order.
    """
    units: dict[Span, set[int]] = {}
    for p in pairs:
        units.setdefault(p.aspect, set()).update(k // n_sentiments for k in p.labels)
    return [
        (span, frozenset(cats))
        for span, cats in sorted(units.items(), key=lambda kv: kv[0].sort_key())
    ]


def project_opinions(
    pairs: Iterable[PairTarget], n_sentiments: int
) -> list[tuple[Span, frozenset[int]]]:
    """Distinct opinion units with their gold sentiment sets."""
    units: dict[Span, set[int]] = {}
    for p in pairs:
        units.setdefault(p.opinion, set()).update(k % n_sentiments for k in p.labels)
    return [
        (span, frozenset(sents))
        for span, sents in sorted(units.items(), key=lambda kv: kv[0].sort_key())
    ]
