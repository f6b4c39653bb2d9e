"""Context encoders producing one vector per word plus two implicit-slot rows.

Both encoder kinds share the same contract: ``encode(words)`` returns a
matrix with ``len(words) + 2`` rows, where the last two rows represent the
implicit-aspect and implicit-opinion slots appended after the sentence.

* ``tiny`` - a seeded hash-bucket embedding table with an optional
  self-attention mixing layer. No pretraining, fully deterministic; exists
  so property and gradient tests run in seconds with no downloads.
* ``pretrained`` - a bidirectional transformer loaded via ``transformers``,
  with two new vocabulary entries for the implicit slots placed between the
  last word and the end-of-sentence wrapper token. Word vectors are taken
  from each word's first subword piece.

Under ``implicit_token_mode="cls"`` both implicit rows are the sentence
summary vector instead of dedicated token states (an ablation switch that
makes the two rows identical).
"""

from __future__ import annotations

import hashlib
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn

ENCODER_KINDS = ("tiny", "pretrained")
IMPLICIT_TOKEN_MODES = ("dedicated", "cls")

IA_TOKEN = "[IA]"
IO_TOKEN = "[IO]"

MODEL_DIR_ENV = "QUADEX_MODEL_DIR"


class EncoderError(RuntimeError):
    """Encoder construction or encoding failure (incl. over-length input)."""


@dataclass
class EncoderConfig:
    kind: str = "tiny"
    hidden_size: int = 16
    max_len: int = 128
    implicit_token_mode: str = "dedicated"
    pretrained_id: str = "bert-base-uncased"
    tiny_buckets: int = 512
    tiny_layers: int = 1
    tiny_heads: int = 2
    seed: int = 0
    fine_tune: bool = True

    def __post_init__(self):
        if self.kind not in ENCODER_KINDS:
            raise EncoderError(f"unknown encoder kind {self.kind!r}")
        if self.implicit_token_mode not in IMPLICIT_TOKEN_MODES:
            raise EncoderError(f"unknown implicit_token_mode {self.implicit_token_mode!r}")
        if self.hidden_size <= 0:
            raise EncoderError("hidden_size must be positive")
        if self.max_len < 4:
            raise EncoderError("max_len must leave room for a word plus special slots")


class _SelfAttention(nn.Module):
    """One residual self-attention mixing layer (no norm, no feed-forward)."""

    def __init__(self, d: int, n_heads: int, gen: torch.Generator):
        super().__init__()
        if d % n_heads != 0:
            raise EncoderError(f"hidden size {d} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.qkv = nn.Linear(d, 3 * d, bias=False)
        self.out = nn.Linear(d, d, bias=False)
        bound = 1.0 / math.sqrt(d)
        for p in (self.qkv.weight, self.out.weight):
            p.data.uniform_(-bound, bound, generator=gen)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        b, l, d = x.shape
        h, dh = self.n_heads, d // self.n_heads
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q = q.view(b, l, h, dh).transpose(1, 2)
        k = k.view(b, l, h, dh).transpose(1, 2)
        v = v.view(b, l, h, dh).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(dh)
        scores = scores.masked_fill(~mask[:, None, None, :], float("-inf"))
        mixed = (scores.softmax(dim=-1) @ v).transpose(1, 2).reshape(b, l, d)
        return x + self.out(mixed)


class TinyEncoder(nn.Module):
    """Deterministic test encoder: hashed word embeddings + mixing layers.

    Words map to embedding rows via a stable content hash, so unseen words
    still get a deterministic vector. Three extra rows serve as the
    sentence-summary token and the two implicit-slot tokens.
    """

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.hidden_size
        gen = torch.Generator().manual_seed(cfg.seed)
        self.embeddings = nn.Parameter(
            torch.empty(cfg.tiny_buckets + 3, d).normal_(0.0, 1.0, generator=gen)
        )
        self.layers = nn.ModuleList(
            _SelfAttention(d, cfg.tiny_heads, gen) for _ in range(cfg.tiny_layers)
        )
        if not cfg.fine_tune:
            self.requires_grad_(False)

    @property
    def d(self) -> int:
        return self.cfg.hidden_size

    def _bucket(self, word: str) -> int:
        digest = hashlib.sha1(word.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "little") % self.cfg.tiny_buckets

    def encode(self, words: Sequence[str]) -> torch.Tensor:
        return self.encode_batch([words])[0]

    def encode_batch(self, batch: Sequence[Sequence[str]]) -> list[torch.Tensor]:
        if any(not words for words in batch):
            raise EncoderError("cannot encode an empty sentence")
        start_row = self.cfg.tiny_buckets
        ia_row, io_row = start_row + 1, start_row + 2
        # Internal layout: [summary] w_1 .. w_n [IA] [IO]
        seqs = []
        for words in batch:
            if len(words) + 3 > self.cfg.max_len:
                raise EncoderError(
                    f"sentence of {len(words)} words exceeds max_len={self.cfg.max_len}"
                )
            seqs.append([start_row] + [self._bucket(w) for w in words] + [ia_row, io_row])
        longest = max(len(s) for s in seqs)
        ids = torch.zeros(len(seqs), longest, dtype=torch.long)
        mask = torch.zeros(len(seqs), longest, dtype=torch.bool)
        for i, s in enumerate(seqs):
            ids[i, : len(s)] = torch.tensor(s)
            mask[i, : len(s)] = True
        x = self.embeddings[ids]
        for layer in self.layers:
            x = layer(x, mask)
        out = []
        for i, words in enumerate(batch):
            n = len(words)
            word_rows = x[i, 1 : n + 1]
            if self.cfg.implicit_token_mode == "cls":
                implicit = x[i, 0].unsqueeze(0).expand(2, -1)
            else:
                implicit = x[i, n + 1 : n + 3]
            out.append(torch.cat([word_rows, implicit], dim=0))
        return out

    def trainable_parameters(self) -> list[nn.Parameter]:
        return [p for p in self.parameters() if p.requires_grad]


def _resolve_pretrained_path(pretrained_id: str) -> str:
    if Path(pretrained_id).is_dir():
        return pretrained_id
    local = os.environ.get(MODEL_DIR_ENV)
    if local and (Path(local) / pretrained_id).is_dir():
        return str(Path(local) / pretrained_id)
    return pretrained_id


class PretrainedEncoder(nn.Module):
    """Bidirectional transformer backbone with added implicit-slot tokens."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        try:
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:
            raise EncoderError(
                "the pretrained encoder needs the 'transformers' package "
                "(install the [pretrained] extra)"
            ) from exc
        self.cfg = cfg
        source = _resolve_pretrained_path(cfg.pretrained_id)
        try:
            self.tokenizer = AutoTokenizer.from_pretrained(source, use_fast=True)
            self.model = AutoModel.from_pretrained(source)
        except Exception as exc:
            raise EncoderError(f"cannot load pretrained model {cfg.pretrained_id!r}: {exc}") from exc
        added = self.tokenizer.add_special_tokens(
            {"additional_special_tokens": [IA_TOKEN, IO_TOKEN]}
        )
        if added:
            self.model.resize_token_embeddings(len(self.tokenizer))
            gen = torch.Generator().manual_seed(cfg.seed)
            with torch.no_grad():
                weight = self.model.get_input_embeddings().weight
                fresh = torch.empty(added, weight.shape[1]).normal_(0.0, 0.02, generator=gen)
                weight[-added:] = fresh
        if not cfg.fine_tune:
            self.requires_grad_(False)

    @property
    def d(self) -> int:
        return self.model.config.hidden_size

    def encode(self, words: Sequence[str]) -> torch.Tensor:
        return self.encode_batch([words])[0]

    def encode_batch(self, batch: Sequence[Sequence[str]]) -> list[torch.Tensor]:
        if any(not words for words in batch):
            raise EncoderError("cannot encode an empty sentence")
        seqs = [list(words) + [IA_TOKEN, IO_TOKEN] for words in batch]
        enc = self.tokenizer(
            seqs, is_split_into_words=True, padding=True, return_tensors="pt"
        )
        budget = min(self.cfg.max_len, self.tokenizer.model_max_length)
        lengths = enc["attention_mask"].sum(dim=1)
        for i, n in enumerate(lengths.tolist()):
            if n > budget:
                raise EncoderError(
                    f"sentence {i} needs {n} pieces, over the {budget}-piece budget "
                    "(refusing to truncate)"
                )
        hidden = self.model(**enc).last_hidden_state
        out = []
        for i, words in enumerate(batch):
            word_ids = enc.word_ids(i)
            first: dict[int, int] = {}
            for pos, wid in enumerate(word_ids):
                if wid is not None and wid not in first:
                    first[wid] = pos
            n_slots = len(words) + 2
            missing = [w for w in range(n_slots) if w not in first]
            if missing:
                raise EncoderError(f"tokenizer dropped word {missing[0]} of sentence {i}")
            rows = hidden[i, [first[w] for w in range(n_slots)]]
            if self.cfg.implicit_token_mode == "cls":
                rows = torch.cat([rows[:-2], hidden[i, 0].unsqueeze(0).expand(2, -1)], dim=0)
            out.append(rows)
        return out

    def trainable_parameters(self) -> list[nn.Parameter]:
        return [p for p in self.parameters() if p.requires_grad]


def build_encoder(cfg: EncoderConfig):
    if cfg.kind == "tiny":
        return TinyEncoder(cfg)
    return PretrainedEncoder(cfg)
