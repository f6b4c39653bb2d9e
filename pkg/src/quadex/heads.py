"""Task heads over encoder representations, and the composed model.

Four heads share the token matrix ``H`` (words plus the two implicit rows):

* tagging head: per-token distribution over the 9 span tags (softmax);
* pair head: single-query multi-head attention pooling over the
  concatenated aspect+opinion token vectors, then a sigmoid layer over the
  category x sentiment combination-label space (multi-label);
* category head / sentiment head: same pooling pattern with their own
  queries and projections, over categories resp. sentiments.

Checkpoints are directories with a JSON manifest (shapes, vocab, config
hash) plus one ``.npy`` file per tensor; loading validates every shape.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .corpus import LabelVocab, Span, SpanKind
from .tagseq import N_TAGS

ATTENTION_MODES = ("multihead", "mean")

CHECKPOINT_FORMAT = "quadex.checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    """Checkpoint directory missing, malformed, or shape-incompatible."""


class AttentionPooler(nn.Module):
    """Pool a variable-length stack of vectors with one trainable query.

    The query attends over the stacked vectors as keys/values through
    learned key/value/output projections; there is no positional encoding,
    so pooling is invariant to the order of the stacked rows. In ``mean``
    mode the pooled vector is simply the average of the raw rows.
    """

    def __init__(self, d: int, n_heads: int, mode: str = "multihead"):
        super().__init__()
        if mode not in ATTENTION_MODES:
            raise ValueError(f"unknown attention mode {mode!r}")
        if mode == "multihead" and d % n_heads != 0:
            raise ValueError(f"hidden size {d} not divisible by head count {n_heads}")
        self.d = d
        self.n_heads = n_heads
        self.mode = mode
        if mode == "multihead":
            bound = 1.0 / math.sqrt(d)
            self.query = nn.Parameter(torch.empty(d).uniform_(-bound, bound))
            self.key_proj = nn.Linear(d, d, bias=False)
            self.value_proj = nn.Linear(d, d, bias=False)
            self.out_proj = nn.Linear(d, d, bias=False)

    def forward(self, stack: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """stack: [B, L, d]; mask: [B, L] bool with at least one True per row."""
        if self.mode == "mean":
            weights = mask.to(stack.dtype)
            return (stack * weights.unsqueeze(-1)).sum(dim=1) / weights.sum(dim=1, keepdim=True)
        b, l, d = stack.shape
        h, dh = self.n_heads, d // self.n_heads
        keys = self.key_proj(stack).view(b, l, h, dh)
        values = self.value_proj(stack).view(b, l, h, dh)
        query = self.query.view(h, dh)
        scores = torch.einsum("blhd,hd->bhl", keys, query) / math.sqrt(dh)
        scores = scores.masked_fill(~mask.unsqueeze(1), float("-inf"))
        weights = scores.softmax(dim=-1)
        pooled = torch.einsum("bhl,blhd->bhd", weights, values).reshape(b, d)
        return self.out_proj(pooled)

    def pool(self, stacks: Sequence[torch.Tensor]) -> torch.Tensor:
        """Pool a list of [L_i, d] stacks into [len(stacks), d]."""
        if not stacks:
            raise ValueError("no stacks to pool")
        longest = max(s.shape[0] for s in stacks)
        ref = stacks[0]
        padded = ref.new_zeros(len(stacks), longest, self.d)
        mask = torch.zeros(len(stacks), longest, dtype=torch.bool, device=ref.device)
        for i, s in enumerate(stacks):
            padded[i, : s.shape[0]] = s
            mask[i, : s.shape[0]] = True
        return self(padded, mask)


class LabelingHead(nn.Module):
    """Linear + softmax producing the per-token tag distribution."""

    def __init__(self, d: int):
        super().__init__()
        self.linear = nn.Linear(d, N_TAGS)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return self.linear(h).softmax(dim=-1)


class PooledSigmoidHead(nn.Module):
    """Attention pooling followed by a multi-label sigmoid layer."""

    def __init__(self, d: int, n_out: int, n_heads: int, mode: str = "multihead"):
        super().__init__()
        self.pooler = AttentionPooler(d, n_heads, mode)
        self.linear = nn.Linear(d, n_out)

    @property
    def n_out(self) -> int:
        return self.linear.out_features

    def probs_from_pooled(self, pooled: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.linear(pooled))

    def forward(self, stacks: Sequence[torch.Tensor]) -> torch.Tensor:
        """Probabilities [len(stacks), n_out] for a list of token stacks."""
        return self.probs_from_pooled(self.pooler.pool(stacks))


def predict_tags(probs) -> list[int]:
    """Per-row argmax over tag probabilities; ties go to the lowest tag id."""
    if isinstance(probs, torch.Tensor):
        arr = probs.detach().cpu().numpy()
    else:
        arr = np.asarray(probs)
    if arr.ndim != 2 or arr.shape[1] != N_TAGS:
        raise ValueError(f"expected a [length, {N_TAGS}] matrix, got shape {arr.shape}")
    # np.argmax returns the first maximum, which is the lowest tag id.
    return [int(i) for i in arr.argmax(axis=1)]


class QuadModel(nn.Module):
    """Encoder plus the four task heads."""

    def __init__(
        self,
        encoder,
        vocab: LabelVocab,
        head_count: int = 8,
        attention_mode: str = "multihead",
    ):
        super().__init__()
        d = encoder.d
        self.encoder = encoder
        self.vocab = vocab
        self.head_count = head_count
        self.attention_mode = attention_mode
        self.tagging = LabelingHead(d)
        self.pair = PooledSigmoidHead(d, vocab.n_combinations, head_count, attention_mode)
        self.category = PooledSigmoidHead(d, vocab.n_categories, head_count, attention_mode)
        self.sentiment = PooledSigmoidHead(d, vocab.n_sentiments, head_count, attention_mode)

    @property
    def d(self) -> int:
        return self.encoder.d

    def label_distribution(self, h: torch.Tensor) -> torch.Tensor:
        return self.tagging(h)

    def span_stack(self, h: torch.Tensor, span: Span) -> torch.Tensor:
        """Rows of H covered by a span; implicit spans map to the last two rows."""
        if span.kind is SpanKind.IMPLICIT_ASPECT:
            return h[-2:-1]
        if span.kind is SpanKind.IMPLICIT_OPINION:
            return h[-1:]
        if span.end >= h.shape[0] - 2:
            raise ValueError(f"span ({span.start}, {span.end}) outside the word rows")
        return h[span.start : span.end + 1]

    def pair_stack(self, h: torch.Tensor, aspect: Span, opinion: Span) -> torch.Tensor:
        return torch.cat([self.span_stack(h, aspect), self.span_stack(h, opinion)], dim=0)

    def pool_pair(self, h: torch.Tensor, aspect: Span, opinion: Span) -> torch.Tensor:
        return self.pair.pooler.pool([self.pair_stack(h, aspect, opinion)])[0]

    def pair_probs(self, pooled: torch.Tensor) -> torch.Tensor:
        return self.pair.probs_from_pooled(pooled)

    def aspect_category_probs(self, h: torch.Tensor, aspect: Span) -> torch.Tensor:
        return self.category([self.span_stack(h, aspect)])[0]

    def opinion_sentiment_probs(self, h: torch.Tensor, opinion: Span) -> torch.Tensor:
        return self.sentiment([self.span_stack(h, opinion)])[0]


def _model_config(model: QuadModel) -> dict:
    from dataclasses import asdict

    return {
        "hidden_size": model.d,
        "head_count": model.head_count,
        "attention_mode": model.attention_mode,
        "encoder": asdict(model.encoder.cfg),
        "categories": list(model.vocab.categories),
        "sentiments": list(model.vocab.sentiments),
    }


def _config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def save_checkpoint(model: QuadModel, path, extra: dict | None = None) -> str:
    """Write a checkpoint directory: manifest.json + one .npy per tensor."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    state = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    config = _model_config(model)
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": config,
        "config_hash": _config_hash(config),
        "tensors": {k: {"shape": list(v.shape), "dtype": str(v.dtype)} for k, v in state.items()},
    }
    if extra:
        manifest["extra"] = extra
    for name, value in state.items():
        np.save(path / f"{name}.npy", value)
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return str(path)


def load_checkpoint(path) -> tuple[QuadModel, LabelVocab, dict]:
    """Rebuild a model from a checkpoint directory, validating every shape."""
    from .encoder import EncoderConfig, build_encoder

    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.is_file():
        raise CheckpointError(f"no manifest.json under {path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != CHECKPOINT_FORMAT or manifest.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: not a {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION} checkpoint")
    config = manifest["config"]
    if _config_hash(config) != manifest["config_hash"]:
        raise CheckpointError(f"{path}: manifest config hash mismatch")
    vocab = LabelVocab(
        categories=tuple(config["categories"]), sentiments=tuple(config["sentiments"])
    )
    encoder = build_encoder(EncoderConfig(**config["encoder"]))
    model = QuadModel(encoder, vocab, config["head_count"], config["attention_mode"])
    expected = model.state_dict()
    if set(expected) != set(manifest["tensors"]):
        raise CheckpointError(f"{path}: tensor set does not match the model")
    state = {}
    for name, meta in manifest["tensors"].items():
        file = path / f"{name}.npy"
        if not file.is_file():
            raise CheckpointError(f"{path}: missing tensor file {name}.npy")
        value = np.load(file)
        if list(value.shape) != meta["shape"] or list(expected[name].shape) != meta["shape"]:
            raise CheckpointError(
                f"{path}: shape mismatch for {name}: file {list(value.shape)}, "
                f"manifest {meta['shape']}, model {list(expected[name].shape)}"
            )
        state[name] = torch.from_numpy(value).to(expected[name].dtype)
    model.load_state_dict(state)
    return model, vocab, manifest
