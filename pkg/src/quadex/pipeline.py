"""End-to-end inference: tokens in, scored quadruples out.

The flow is: encode the sentence (words + implicit slots), predict the tag
sequence, decode aspect/opinion candidates (the implicit pair is always
among them), score every candidate pair against all combination labels,
and emit one quadruple per label whose probability is strictly above 0.5.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import torch

from .corpus import (
    CANONICAL_FORMAT,
    CorpusError,
    LabelVocab,
    Quadruple,
    Span,
    load_canonical,
)
from .heads import QuadModel, predict_tags
from .tagseq import decode_tags

logger = logging.getLogger(__name__)

THRESHOLD = 0.5

PREDICTIONS_FORMAT = "quadex.predictions"
PREDICTIONS_VERSION = 1


@dataclass(frozen=True)
class Prediction:
    """Extracted quadruples with the sigmoid confidence of each."""

    scored: tuple[tuple[Quadruple, float], ...]

    @property
    def quadruples(self) -> frozenset[Quadruple]:
        return frozenset(q for q, _ in self.scored)


def extract_quadruples(
    words: Sequence[str], model: QuadModel, vocab: LabelVocab | None = None
) -> Prediction:
    """Extract all quadruples whose combination-label probability > 0.5."""
    vocab = vocab or model.vocab
    if vocab.n_combinations != model.pair.n_out:
        raise CorpusError(
            f"vocab has {vocab.n_combinations} combination labels, "
            f"model predicts {model.pair.n_out}"
        )
    with torch.no_grad():
        h = model.encoder.encode(words)
        tags = predict_tags(model.label_distribution(h))
        aspects, opinions = decode_tags(tags)
        pairs = [
            (a, o)
            for a in sorted(aspects, key=Span.sort_key)
            for o in sorted(opinions, key=Span.sort_key)
        ]
        stacks = [model.pair_stack(h, a, o) for a, o in pairs]
        probs = model.pair(stacks)
    scored = []
    for (aspect, opinion), row in zip(pairs, probs):
        for k in (row > THRESHOLD).nonzero(as_tuple=True)[0].tolist():
            category, sentiment = vocab.split_combination(k)
            scored.append((Quadruple(aspect, opinion, category, sentiment), float(row[k])))
    return Prediction(scored=tuple(scored))


def _quad_to_json(quad: Quadruple, confidence: float, vocab: LabelVocab) -> dict:
    def span_json(span: Span):
        return [span.start, span.end] if span.is_explicit else None

    return {
        "aspect": span_json(quad.aspect),
        "opinion": span_json(quad.opinion),
        "category": vocab.categories[quad.category],
        "sentiment": vocab.sentiments[quad.sentiment],
        "confidence": confidence,
    }


def _read_sentences(path) -> list[list[str]]:
    """Accept a canonical dataset file or plain text (one sentence per line)."""
    text = Path(path).read_text(encoding="utf-8")
    first = text.splitlines()[0] if text.splitlines() else ""
    if CANONICAL_FORMAT in first:
        examples, _ = load_canonical(path)
        return [list(ex.tokens) for ex in examples]
    return [line.split() for line in text.splitlines() if line.strip()]


def predict_file(in_path, model: QuadModel, out_path, vocab: LabelVocab | None = None) -> int:
    """Score every sentence of a file; write one JSON record per sentence."""
    vocab = vocab or model.vocab
    sentences = _read_sentences(in_path)
    header = {
        "format": PREDICTIONS_FORMAT,
        "version": PREDICTIONS_VERSION,
        "categories": list(vocab.categories),
        "sentiments": list(vocab.sentiments),
    }
    lines = [json.dumps(header, sort_keys=True, separators=(",", ":"))]
    for tokens in sentences:
        prediction = extract_quadruples(tokens, model, vocab)
        record = {
            "tokens": tokens,
            "quadruples": [_quad_to_json(q, c, vocab) for q, c in prediction.scored],
        }
        lines.append(json.dumps(record, sort_keys=True, separators=(",", ":"), ensure_ascii=False))
    Path(out_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info("wrote %d prediction records to %s", len(sentences), out_path)
    return len(sentences)


def load_predictions(path) -> tuple[list[tuple[list[str], set[Quadruple]]], LabelVocab]:
    """Read a predictions file back into quadruple sets (for re-scoring)."""
    from .corpus import IMPLICIT_ASPECT, IMPLICIT_OPINION

    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise CorpusError(f"{path}: empty predictions file")
    header = json.loads(lines[0])
    if header.get("format") != PREDICTIONS_FORMAT:
        raise CorpusError(f"{path}: not a {PREDICTIONS_FORMAT} file")
    if header.get("version") != PREDICTIONS_VERSION:
        raise CorpusError(f"{path}: unsupported predictions version {header.get('version')!r}")
    vocab = LabelVocab(
        categories=tuple(header["categories"]), sentiments=tuple(header["sentiments"])
    )
    out = []
    for line in lines[1:]:
        record = json.loads(line)
        quads = set()
        for q in record["quadruples"]:
            aspect = Span.explicit(*q["aspect"]) if q["aspect"] is not None else IMPLICIT_ASPECT
            opinion = Span.explicit(*q["opinion"]) if q["opinion"] is not None else IMPLICIT_OPINION
            quads.add(
                Quadruple(
                    aspect,
                    opinion,
                    vocab.category_id(q["category"]),
                    vocab.sentiment_id(q["sentiment"]),
                )
            )
        out.append((record["tokens"], quads))
    return out, vocab
