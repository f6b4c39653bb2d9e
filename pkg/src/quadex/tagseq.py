"""Extended BIOES tag sequences over sentences with appended implicit slots.

The tag set labels aspect and opinion spans in a single sequence:

    id  0    1    2    3    4    5    6    7    8
    tag B-A  I-A  E-A  S-A  B-O  I-O  E-O  S-O  O

A tag sequence covers the sentence words plus two trailing positions for
the implicit-aspect and implicit-opinion slots, which are always tagged O.
Decoding always adds the implicit-aspect and implicit-opinion spans to the
returned sets, regardless of the tags.
"""

from __future__ import annotations

from typing import Iterable, Sequence

from .corpus import IMPLICIT_ASPECT, IMPLICIT_OPINION, Span

TAGS = ("B-A", "I-A", "E-A", "S-A", "B-O", "I-O", "E-O", "S-O", "O")
TAG_IDS = {tag: i for i, tag in enumerate(TAGS)}
N_TAGS = len(TAGS)
O_TAG = TAG_IDS["O"]

ASPECT = "A"
OPINION = "O"


class TaggingError(ValueError):
    """Spans that cannot be encoded as a valid tag sequence."""


def _check_role_spans(n_words: int, spans: Iterable[Span], role: str) -> list[Span]:
    ordered = sorted(spans, key=lambda s: (s.start, s.end))
    prev_end = -1
    for span in ordered:
        if not span.is_explicit:
            raise TaggingError(f"{role} span {span} is not explicit")
        if span.end >= n_words:
            raise TaggingError(f"{role} span ({span.start}, {span.end}) exceeds {n_words} words")
        if span.start <= prev_end:
            raise TaggingError(f"overlapping {role} spans at word {span.start}")
        prev_end = span.end
    return ordered


def _place(tags: list[int], span: Span, role: str) -> None:
    if span.start == span.end:
        tags[span.start] = TAG_IDS[f"S-{role}"]
        return
    tags[span.start] = TAG_IDS[f"B-{role}"]
    for i in range(span.start + 1, span.end):
        tags[i] = TAG_IDS[f"I-{role}"]
    tags[span.end] = TAG_IDS[f"E-{role}"]


def encode_tags(n_words: int, aspects: Iterable[Span], opinions: Iterable[Span]) -> list[int]:
    """Encode explicit gold spans as a tag sequence of length ``n_words + 2``.

    Same-role overlaps are rejected. Where an aspect and an opinion share a
    word, the aspect tag wins (callers flag such examples via
    :func:`cross_role_overlap`).
    """
    if n_words < 1:
        raise TaggingError("sentence must have at least one word")
    aspect_spans = _check_role_spans(n_words, aspects, "aspect")
    opinion_spans = _check_role_spans(n_words, opinions, "opinion")
    tags = [O_TAG] * (n_words + 2)
    for span in opinion_spans:
        _place(tags, span, OPINION)
    for span in aspect_spans:
        _place(tags, span, ASPECT)
    return tags


def cross_role_overlap(aspects: Iterable[Span], opinions: Iterable[Span]) -> set[int]:
    """Word positions claimed by both an aspect and an opinion span."""
    aspect_words = {i for s in aspects for i in s.positions()}
    opinion_words = {i for s in opinions for i in s.positions()}
    return aspect_words & opinion_words


def decode_tags(tags: Sequence[int]) -> tuple[set[Span], set[Span]]:
    """Decode a predicted tag sequence into aspect and opinion span sets.

    Only maximal well-formed patterns (``S-*`` or ``B-* I-** E-*``) within
    the word positions are kept; ill-formed fragments are dropped. The
    implicit-aspect and implicit-opinion spans are always included.
    """
    if len(tags) < 2:
        raise TaggingError(f"tag sequence too short ({len(tags)})")
    for t in tags:
        if not 0 <= t < N_TAGS:
            raise TaggingError(f"invalid tag id {t}")

    n_words = len(tags) - 2
    aspects: set[Span] = set()
    opinions: set[Span] = set()
    open_role: str | None = None
    open_start = -1

    def emit(role: str, start: int, end: int) -> None:
        (aspects if role == ASPECT else opinions).add(Span.explicit(start, end))

    # Word positions only: tags on the two implicit slots never form spans.
    for i in range(n_words):
        name = TAGS[tags[i]]
        if name == "O":
            open_role = None
            continue
        prefix, role = name.split("-")
        if prefix == "S":
            emit(role, i, i)
            open_role = None
        elif prefix == "B":
            # A second B drops the fragment opened by the first.
            open_role, open_start = role, i
        elif prefix == "I":
            if open_role != role:
                open_role = None
        else:  # E
            if open_role == role:
                emit(role, open_start, i)
            open_role = None

    aspects.add(IMPLICIT_ASPECT)
    opinions.add(IMPLICIT_OPINION)
    return aspects, opinions
