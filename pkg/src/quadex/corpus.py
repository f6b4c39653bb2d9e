"""Data model and loaders for sentiment quadruple corpora.

A corpus is a list of examples; each example is a tokenized sentence plus a
set of gold quadruples (aspect span, opinion span, category, sentiment).
Aspects and opinions may be implicit, i.e. not realized as any word span.

Two on-disk formats are handled here:

* the public ACOS TSV layout: ``sentence TAB quad TAB quad ...`` where each
  quad is ``a_start,a_end CATEGORY sentiment_digit o_start,o_end`` with
  end-exclusive word indices and ``-1,-1`` marking an implicit term;
* the canonical format written by :func:`save_canonical`: one JSON record
  per line with a versioned header (schema below).

Internally all spans use inclusive word indices.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

logger = logging.getLogger(__name__)

SENTIMENTS = ("negative", "neutral", "positive")
DEFAULT_SENTIMENT_MAP = {0: "negative", 1: "neutral", 2: "positive"}

CANONICAL_FORMAT = "quadex.canonical"
CANONICAL_VERSION = 1

IMPLICIT_MARK = "-1,-1"


class CorpusError(ValueError):
    """Malformed dataset file or invalid data-model value."""


class SpanKind(Enum):
    EXPLICIT = "explicit"
    IMPLICIT_ASPECT = "implicit_aspect"
    IMPLICIT_OPINION = "implicit_opinion"


@dataclass(frozen=True)
class Span:
    """A word span with inclusive indices, or an implicit-term marker.

    Implicit spans carry the sentinel indices ``(-1, -1)``.
    """

    kind: SpanKind
    start: int = -1
    end: int = -1

    def __post_init__(self):
        if self.kind is SpanKind.EXPLICIT:
            if not (0 <= self.start <= self.end):
                raise CorpusError(
                    f"explicit span needs 0 <= start <= end, got ({self.start}, {self.end})"
                )
        elif (self.start, self.end) != (-1, -1):
            raise CorpusError("implicit spans must use the (-1, -1) sentinel")

    @classmethod
    def explicit(cls, start: int, end: int) -> "Span":
        return cls(SpanKind.EXPLICIT, start, end)

    @property
    def is_explicit(self) -> bool:
        return self.kind is SpanKind.EXPLICIT

    def positions(self) -> range:
        """Word positions covered by an explicit span (empty for implicit)."""
        if not self.is_explicit:
            return range(0)
        return range(self.start, self.end + 1)

    def sort_key(self) -> tuple[int, int, int]:
        order = {SpanKind.EXPLICIT: 0, SpanKind.IMPLICIT_ASPECT: 1, SpanKind.IMPLICIT_OPINION: 2}
        return (order[self.kind], self.start, self.end)


IMPLICIT_ASPECT = Span(SpanKind.IMPLICIT_ASPECT)
IMPLICIT_OPINION = Span(SpanKind.IMPLICIT_OPINION)


class QuadType(Enum):
    """The four explicit/implicit aspect-opinion combinations."""

    EA_EO = "EA&EO"
    IA_EO = "IA&EO"
    EA_IO = "EA&IO"
    IA_IO = "IA&IO"


@dataclass(frozen=True)
class Quadruple:
    """(aspect span, opinion span, category id, sentiment id)."""

    aspect: Span
    opinion: Span
    category: int
    sentiment: int

    def __post_init__(self):
        if self.aspect.kind is SpanKind.IMPLICIT_OPINION:
            raise CorpusError("aspect slot cannot hold an implicit-opinion span")
        if self.opinion.kind is SpanKind.IMPLICIT_ASPECT:
            raise CorpusError("opinion slot cannot hold an implicit-aspect span")
        if self.category < 0:
            raise CorpusError(f"category id must be >= 0, got {self.category}")
        if self.sentiment < 0:
            raise CorpusError(f"sentiment id must be >= 0, got {self.sentiment}")

    def sort_key(self):
        return (self.aspect.sort_key(), self.opinion.sort_key(), self.category, self.sentiment)


def quad_type(q: Quadruple) -> QuadType:
    """Classify a quadruple by whether its aspect/opinion are explicit."""
    if q.aspect.is_explicit:
        return QuadType.EA_EO if q.opinion.is_explicit else QuadType.EA_IO
    return QuadType.IA_EO if q.opinion.is_explicit else QuadType.IA_IO


@dataclass(frozen=True)
class Example:
    """One sentence (original words, before implicit tokens are appended)
    with its gold quadruple set."""

    tokens: tuple[str, ...]
    gold: frozenset[Quadruple] = frozenset()

    def __post_init__(self):
        if not self.tokens:
            raise CorpusError("example has no tokens")
        n = len(self.tokens)
        for q in self.gold:
            for span in (q.aspect, q.opinion):
                if span.is_explicit and span.end >= n:
                    raise CorpusError(
                        f"span ({span.start}, {span.end}) out of range for {n}-word sentence"
                    )


@dataclass(frozen=True)
class LabelVocab:
    """Ordered category and sentiment label spaces.

    The combination-label space is the Cartesian product of categories and
    sentiments, indexed ``category_id * n_sentiments + sentiment_id``.
    """

    categories: tuple[str, ...]
    sentiments: tuple[str, ...] = SENTIMENTS

    def __post_init__(self):
        if len(set(self.categories)) != len(self.categories):
            raise CorpusError("duplicate category names in vocab")
        if len(set(self.sentiments)) != len(self.sentiments):
            raise CorpusError("duplicate sentiment names in vocab")

    @property
    def n_categories(self) -> int:
        return len(self.categories)

    @property
    def n_sentiments(self) -> int:
        return len(self.sentiments)

    @property
    def n_combinations(self) -> int:
        return self.n_categories * self.n_sentiments

    def category_id(self, name: str) -> int:
        try:
            return self.categories.index(name)
        except ValueError:
            raise CorpusError(f"unknown category {name!r}") from None

    def sentiment_id(self, name: str) -> int:
        try:
            return self.sentiments.index(name)
        except ValueError:
            raise CorpusError(f"unknown sentiment {name!r}") from None

    def combination_index(self, category: int, sentiment: int) -> int:
        if not (0 <= category < self.n_categories and 0 <= sentiment < self.n_sentiments):
            raise CorpusError(f"combination ({category}, {sentiment}) out of range")
        return category * self.n_sentiments + sentiment

    def split_combination(self, index: int) -> tuple[int, int]:
        """Inverse of :meth:`combination_index`."""
        if not (0 <= index < self.n_combinations):
            raise CorpusError(f"combination index {index} out of range")
        return divmod(index, self.n_sentiments)


def parse_sentiment_map(text: str) -> dict[int, str]:
    """Parse a ``0:neg,1:neu,2:pos`` style digit-to-sentiment mapping."""
    aliases = {"neg": "negative", "neu": "neutral", "pos": "positive"}
    mapping: dict[int, str] = {}
    for part in text.split(","):
        digit, _, name = part.strip().partition(":")
        name = aliases.get(name.strip(), name.strip())
        if not digit.strip().isdigit() or name not in SENTIMENTS:
            raise CorpusError(f"bad sentiment-map entry {part!r}")
        mapping[int(digit)] = name
    if sorted(mapping) != [0, 1, 2] or len(set(mapping.values())) != 3:
        raise CorpusError(f"sentiment map must bijectively cover digits 0..2, got {text!r}")
    return mapping


def _parse_acos_span(text: str, n_words: int, line_no: int, role: str) -> Span:
    if text == IMPLICIT_MARK:
        return IMPLICIT_ASPECT if role == "aspect" else IMPLICIT_OPINION
    try:
        start_s, end_s = text.split(",")
        start, end = int(start_s), int(end_s)
    except ValueError:
        raise CorpusError(f"line {line_no}: bad span {text!r}") from None
    # File indices are end-exclusive; internal spans are inclusive.
    if not (0 <= start < end <= n_words):
        raise CorpusError(
            f"line {line_no}: {role} span {text!r} out of bounds for {n_words}-word sentence"
        )
    return Span.explicit(start, end - 1)


def _parse_acos_line(
    line: str, line_no: int, sentiment_map: dict[int, str]
) -> tuple[tuple[str, ...], list[tuple[Span, str, str, Span]]]:
    fields = line.rstrip("\n").split("\t")
    tokens = tuple(fields[0].split())
    if not tokens:
        raise CorpusError(f"line {line_no}: empty sentence")
    if len(fields) < 2:
        raise CorpusError(f"line {line_no}: no quadruples")
    quads = []
    for raw in fields[1:]:
        parts = raw.split(" ")
        if len(parts) != 4:
            raise CorpusError(f"line {line_no}: malformed quadruple {raw!r}")
        aspect = _parse_acos_span(parts[0], len(tokens), line_no, "aspect")
        opinion = _parse_acos_span(parts[3], len(tokens), line_no, "opinion")
        category = parts[1]
        if not category:
            raise CorpusError(f"line {line_no}: empty category")
        if not parts[2].isdigit() or int(parts[2]) not in sentiment_map:
            raise CorpusError(f"line {line_no}: bad sentiment digit {parts[2]!r}")
        quads.append((aspect, category, sentiment_map[int(parts[2])], opinion))
    return tokens, quads


def _read_lines(path) -> list[tuple[int, str]]:
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CorpusError(f"cannot read {path}: {exc}") from exc
    return [(i + 1, line) for i, line in enumerate(raw.splitlines()) if line.strip()]


def import_acos_tsv(
    path,
    vocab: LabelVocab | None = None,
    sentiment_map: dict[int, str] | None = None,
) -> tuple[list[Example], LabelVocab]:
    """Load one ACOS TSV file.

    With ``vocab=None`` the category vocabulary is built from the file
    (sorted, so it does not depend on line order); otherwise every category
    must already be present in the given vocab.
    """
    examples, vocab = import_acos_corpus([path], vocab=vocab, sentiment_map=sentiment_map)
    return examples[0], vocab


def import_acos_corpus(
    paths: Sequence,
    vocab: LabelVocab | None = None,
    sentiment_map: dict[int, str] | None = None,
) -> tuple[list[list[Example]], LabelVocab]:
    """Load several ACOS TSV files under one shared category vocabulary."""
    sentiment_map = dict(sentiment_map or DEFAULT_SENTIMENT_MAP)
    parsed = []
    for path in paths:
        file_rows = []
        for line_no, line in _read_lines(path):
            file_rows.append((line_no, _parse_acos_line(line, line_no, sentiment_map)))
        parsed.append((path, file_rows))

    if vocab is None:
        names = sorted({c for _, rows in parsed for _, (_, qs) in rows for _, c, _, _ in qs})
        vocab = LabelVocab(categories=tuple(names))

    per_file: list[list[Example]] = []
    for path, rows in parsed:
        examples = []
        for line_no, (tokens, raw_quads) in rows:
            gold = set()
            for aspect, category, sentiment, opinion in raw_quads:
                try:
                    cat_id = vocab.category_id(category)
                except CorpusError:
                    raise CorpusError(
                        f"{path}: line {line_no}: category {category!r} not in vocab"
                    ) from None
                quad = Quadruple(aspect, opinion, cat_id, vocab.sentiment_id(sentiment))
                if quad in gold:
                    raise CorpusError(f"{path}: line {line_no}: duplicate quadruple {raw_quads!r}")
                gold.add(quad)
            examples.append(Example(tokens=tokens, gold=frozenset(gold)))
        per_file.append(examples)
    return per_file, vocab


def _span_to_json(span: Span):
    return [span.start, span.end] if span.is_explicit else None


def _span_from_json(value, role: str) -> Span:
    if value is None:
        return IMPLICIT_ASPECT if role == "aspect" else IMPLICIT_OPINION
    if not (isinstance(value, list) and len(value) == 2):
        raise CorpusError(f"bad span field {value!r}")
    return Span.explicit(int(value[0]), int(value[1]))


def save_canonical(examples: Iterable[Example], vocab: LabelVocab, path) -> None:
    """Write examples to the canonical line-delimited format.

    Output is deterministic: quadruples are sorted per example, and JSON
    keys are sorted, so identical inputs produce byte-identical files.
    """
    header = {
        "format": CANONICAL_FORMAT,
        "version": CANONICAL_VERSION,
        "categories": list(vocab.categories),
        "sentiments": list(vocab.sentiments),
    }
    lines = [json.dumps(header, sort_keys=True, separators=(",", ":"), ensure_ascii=False)]
    for ex in examples:
        record = {
            "tokens": list(ex.tokens),
            "quads": [
                {
                    "aspect": _span_to_json(q.aspect),
                    "opinion": _span_to_json(q.opinion),
                    "category": vocab.categories[q.category],
                    "sentiment": vocab.sentiments[q.sentiment],
                }
                for q in sorted(ex.gold, key=Quadruple.sort_key)
            ],
        }
        lines.append(json.dumps(record, sort_keys=True, separators=(",", ":"), ensure_ascii=False))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_canonical(path) -> tuple[list[Example], LabelVocab]:
    """Read a canonical dataset file back into memory."""
    rows = _read_lines(path)
    if not rows:
        raise CorpusError(f"{path}: empty file, expected a canonical header")
    try:
        header = json.loads(rows[0][1])
    except json.JSONDecodeError as exc:
        raise CorpusError(f"{path}: bad header: {exc}") from exc
    if header.get("format") != CANONICAL_FORMAT:
        raise CorpusError(f"{path}: not a {CANONICAL_FORMAT} file")
    if header.get("version") != CANONICAL_VERSION:
        raise CorpusError(
            f"{path}: schema version {header.get('version')!r}, expected {CANONICAL_VERSION}"
        )
    vocab = LabelVocab(
        categories=tuple(header["categories"]), sentiments=tuple(header["sentiments"])
    )
    examples = []
    for line_no, line in rows[1:]:
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"{path}: line {line_no}: bad JSON: {exc}") from exc
        gold = set()
        for q in record["quads"]:
            quad = Quadruple(
                aspect=_span_from_json(q["aspect"], "aspect"),
                opinion=_span_from_json(q["opinion"], "opinion"),
                category=vocab.category_id(q["category"]),
                sentiment=vocab.sentiment_id(q["sentiment"]),
            )
            if quad in gold:
                raise CorpusError(f"{path}: line {line_no}: duplicate quadruple")
            gold.add(quad)
        examples.append(Example(tokens=tuple(record["tokens"]), gold=frozenset(gold)))
    return examples, vocab


def type_counts(examples: Iterable[Example]) -> dict[QuadType, int]:
    """Count gold quadruples per explicit/implicit type bucket."""
    counts = {t: 0 for t in QuadType}
    for ex in examples:
        for q in ex.gold:
            counts[quad_type(q)] += 1
    return counts
