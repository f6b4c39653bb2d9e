"""Multi-task training loop, checkpoint selection, and ablation grids.

Each optimizer step runs the encoder over a sentence batch, computes the
tagging loss against gold tags, decodes the current aspect/opinion
candidates, builds the negative pair set for the configured mode, and adds
the pair, category and sentiment losses. Negatives are rebuilt from the
live forward pass on every step, never cached across steps.

Runs are reproducible: a seed fixes parameter init, batch order and random
negative draws, and the metrics log carries no wall-clock fields.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import torch

from . import metrics as metrics_mod
from .corpus import Example, LabelVocab, load_canonical
from .encoder import EncoderConfig, build_encoder
from .heads import CheckpointError, QuadModel, predict_tags, save_checkpoint
from .negatives import (
    NEGATIVES_MODES,
    PairTarget,
    construct_adaptive,
    construct_none,
    construct_random,
    project_aspects,
    project_opinions,
    reduce_gold,
)
from .objective import loss_pairs, loss_tagging, loss_units, total_loss
from .pipeline import extract_quadruples
from .tagseq import cross_role_overlap, decode_tags, encode_tags

logger = logging.getLogger(__name__)

SELECT_POLICIES = ("fixed_epoch", "best_validation")

ABLATION_SUITES = {
    "negatives": ("negatives_mode", ("adaptive", "random", "none")),
    "implicit": ("implicit_token_mode", ("dedicated", "cls")),
    "attention": ("attention_mode", ("multihead", "mean")),
    "multitask": ("multitask", (True, False)),
}


class ConfigError(ValueError):
    """Invalid or unknown training-configuration values."""


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; diagnostics were dumped before aborting."""


@dataclass
class TrainConfig:
    """All training hyperparameters (defaults follow the reference setup)."""

    # optimization
    batch_size: int = 32
    learning_rate: float = 1e-5
    epochs: int = 500
    weight_decay: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    loss_weights: tuple = (1.0, 1.0, 1.0, 1.0)
    # model
    head_count: int = 8
    attention_mode: str = "multihead"
    implicit_token_mode: str = "dedicated"
    multitask: bool = True
    # negatives
    negatives_mode: str = "adaptive"
    max_candidates_per_role: int = 64
    random_k_aspects: int = 0  # 0 = per-role gold count + 1
    random_k_opinions: int = 0
    random_span_max_len: int = 5
    # encoder
    encoder_kind: str = "tiny"
    hidden_size: int = 16
    max_len: int = 128
    pretrained_id: str = "bert-base-uncased"
    tiny_buckets: int = 512
    tiny_layers: int = 1
    tiny_heads: int = 2
    fine_tune_encoder: bool = True
    # schedule / selection
    seeds: tuple = (0,)
    eval_every: int = 10
    eval_splits: tuple = ("dev", "test")
    select_policy: str = "fixed_epoch"
    select_epoch: int = 400
    log_steps: bool = True
    # data / output
    train_data: str = ""
    dev_data: str = ""
    test_data: str = ""
    checkpoint_dir: str = "runs"

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.negatives_mode not in NEGATIVES_MODES:
            raise ConfigError(f"negatives_mode must be one of {NEGATIVES_MODES}")
        if self.select_policy not in SELECT_POLICIES:
            raise ConfigError(f"select_policy must be one of {SELECT_POLICIES}")
        if len(self.loss_weights) != 4:
            raise ConfigError("loss_weights needs exactly four entries")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        bad = [s for s in self.eval_splits if s not in ("train", "dev", "test")]
        if bad:
            raise ConfigError(f"unknown eval split(s) {bad}")

    def encoder_config(self, seed: int) -> EncoderConfig:
        return EncoderConfig(
            kind=self.encoder_kind,
            hidden_size=self.hidden_size,
            max_len=self.max_len,
            implicit_token_mode=self.implicit_token_mode,
            pretrained_id=self.pretrained_id,
            tiny_buckets=self.tiny_buckets,
            tiny_layers=self.tiny_layers,
            tiny_heads=self.tiny_heads,
            seed=seed,
            fine_tune=self.fine_tune_encoder,
        )

    def as_dict(self) -> dict:
        d = asdict(self)
        for key in ("loss_weights", "seeds", "eval_splits"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        coerced = {}
        for key, value in data.items():
            if key in ("loss_weights", "seeds", "eval_splits") and isinstance(value, list):
                value = tuple(value)
            coerced[key] = value
        cfg = cls(**coerced)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a flat JSON object")
        return cls.from_dict(data)

    def with_overrides(self, overrides: dict[str, str]) -> "TrainConfig":
        """Apply CLI ``key=value`` overrides, coercing to the field types."""
        known = {f.name: f for f in fields(self)}
        data = self.as_dict()
        for key, raw in overrides.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            current = getattr(self, key)
            if isinstance(current, bool):
                if raw.lower() not in ("true", "false", "on", "off", "1", "0"):
                    raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
                data[key] = raw.lower() in ("true", "on", "1")
            elif isinstance(current, int):
                data[key] = int(raw)
            elif isinstance(current, float):
                data[key] = float(raw)
            elif isinstance(current, tuple):
                parts = [p for p in raw.split(",") if p != ""]
                elem = type(current[0]) if current else str
                data[key] = [elem(p) for p in parts]
            else:
                data[key] = raw
        return TrainConfig.from_dict(data)


@dataclass
class DatasetSplits:
    """Train/dev/test example lists sharing one label vocabulary."""

    train: list
    dev: list
    test: list
    vocab: LabelVocab

    def split(self, name: str) -> list:
        return {"train": self.train, "dev": self.dev, "test": self.test}[name]


def load_splits(cfg: TrainConfig) -> DatasetSplits:
    if not cfg.train_data:
        raise ConfigError("train_data path is required")
    train, vocab = load_canonical(cfg.train_data)
    splits = {"dev": [], "test": []}
    for name in splits:
        path = getattr(cfg, f"{name}_data")
        if path:
            examples, other = load_canonical(path)
            if other.categories != vocab.categories or other.sentiments != vocab.sentiments:
                raise ConfigError(f"{name} split vocab differs from the train split")
            splits[name] = examples
    return DatasetSplits(train=train, dev=splits["dev"], test=splits["test"], vocab=vocab)


@dataclass
class TrialResult:
    """One training run: evaluation history and checkpoint locations."""

    seed: int
    history: list = field(default_factory=list)
    checkpoints: dict = field(default_factory=dict)
    out_dir: str = ""
    metrics_path: str = ""

    def eval_records(self, split: str) -> list[dict]:
        return [r for r in self.history if r.get("split") == split]

    def final_score(self, split: str) -> dict | None:
        records = self.eval_records(split)
        return records[-1] if records else None


@dataclass
class _Prepared:
    example: Example
    gold_tags: list
    positives: tuple


def _prepare(example: Example, vocab: LabelVocab) -> _Prepared:
    aspects = {q.aspect for q in example.gold if q.aspect.is_explicit}
    opinions = {q.opinion for q in example.gold if q.opinion.is_explicit}
    tags = encode_tags(len(example.tokens), aspects, opinions)
    positives = tuple(sorted(reduce_gold(example.gold, vocab), key=PairTarget.sort_key))
    return _Prepared(example=example, gold_tags=tags, positives=positives)


def _build_negatives(
    prepared: _Prepared,
    tag_probs: torch.Tensor,
    cfg: TrainConfig,
    rng: random.Random,
) -> set[PairTarget]:
    positives = set(prepared.positives)
    if cfg.negatives_mode == "adaptive":
        aspects, opinions = decode_tags(predict_tags(tag_probs.detach()))
        return construct_adaptive(
            aspects, opinions, positives, max_candidates_per_role=cfg.max_candidates_per_role
        )
    if cfg.negatives_mode == "random":
        return construct_random(
            prepared.example,
            positives,
            rng,
            k_aspects=cfg.random_k_aspects or None,
            k_opinions=cfg.random_k_opinions or None,
            max_span_len=cfg.random_span_max_len,
        )
    return construct_none(positives)


def train_step(
    model: QuadModel,
    batch: Sequence[_Prepared],
    cfg: TrainConfig,
    rng: random.Random,
):
    """Losses for one batch. Returns (total tensor, LossReport)."""
    h_list = model.encoder.encode_batch([p.example.tokens for p in batch])

    l1_terms = []
    per_sentence_pairs: list[list[PairTarget]] = []
    n_pos = n_neg = 0
    for h, prepared in zip(h_list, batch):
        probs = model.label_distribution(h)
        l1_terms.append(loss_tagging(probs, prepared.gold_tags))
        negatives = _build_negatives(prepared, probs, cfg, rng)
        pairs = list(prepared.positives) + sorted(negatives, key=PairTarget.sort_key)
        per_sentence_pairs.append(pairs)
        n_pos += len(prepared.positives)
        n_neg += len(negatives)
    l1 = torch.stack(l1_terms).mean()

    flat_pairs: list[PairTarget] = []
    stacks = []
    for h, pairs in zip(h_list, per_sentence_pairs):
        for pair in pairs:
            flat_pairs.append(pair)
            stacks.append(model.pair_stack(h, pair.aspect, pair.opinion))
    l2 = loss_pairs(flat_pairs, model.pair(stacks)) if flat_pairs else torch.zeros(())

    l3 = l4 = torch.zeros(())
    if cfg.multitask:
        aspect_units, aspect_stacks = [], []
        opinion_units, opinion_stacks = [], []
        for h, pairs in zip(h_list, per_sentence_pairs):
            for span, labels in project_aspects(pairs, model.vocab.n_sentiments):
                aspect_units.append((span, labels))
                aspect_stacks.append(model.span_stack(h, span))
            for span, labels in project_opinions(pairs, model.vocab.n_sentiments):
                opinion_units.append((span, labels))
                opinion_stacks.append(model.span_stack(h, span))
        if aspect_units:
            l3 = loss_units(aspect_units, model.category(aspect_stacks))
        if opinion_units:
            l4 = loss_units(opinion_units, model.sentiment(opinion_stacks))

    return total_loss(
        l1, l2, l3, l4, n_positive=n_pos, n_negative=n_neg, weights=cfg.loss_weights
    )


def evaluate(model: QuadModel, examples: Sequence[Example]):
    """Corpus-level exact-match score plus the per-type breakdown."""
    pairs = []
    for ex in examples:
        prediction = extract_quadruples(ex.tokens, model)
        pairs.append((prediction.quadruples, ex.gold))
    return metrics_mod.score_corpus(pairs), metrics_mod.score_by_type_corpus(pairs)


def _dump_diagnostics(out_dir: Path, model: QuadModel, report, epoch: int, step: int) -> None:
    info = {
        "epoch": epoch,
        "step": step,
        "losses": report.as_dict(),
        "param_norms": {
            name: float(p.detach().norm()) for name, p in model.named_parameters()
        },
    }
    (out_dir / "diagnostics.json").write_text(json.dumps(info, indent=2))


def train(
    splits: DatasetSplits,
    cfg: TrainConfig,
    seed: int | None = None,
    out_dir=None,
) -> TrialResult:
    """Run one seeded training trial; checkpoints and logs go to out_dir."""
    cfg.validate()
    seed = cfg.seeds[0] if seed is None else seed
    out_dir = Path(out_dir) if out_dir else Path(cfg.checkpoint_dir) / f"seed{seed}"
    out_dir.mkdir(parents=True, exist_ok=True)

    torch.manual_seed(seed)
    shuffle_rng = random.Random(seed)
    negative_rng = random.Random(seed + 1)

    encoder = build_encoder(cfg.encoder_config(seed))
    model = QuadModel(encoder, splits.vocab, cfg.head_count, cfg.attention_mode)
    params = [p for p in model.parameters() if p.requires_grad]
    if not params:
        raise ConfigError("nothing to train: encoder frozen and no head parameters")
    optimizer = torch.optim.AdamW(
        params,
        lr=cfg.learning_rate,
        betas=(cfg.adam_beta1, cfg.adam_beta2),
        weight_decay=cfg.weight_decay,
    )

    prepared = [_prepare(ex, splits.vocab) for ex in splits.train]
    flagged = sum(
        1
        for p in prepared
        if cross_role_overlap(
            {q.aspect for q in p.example.gold if q.aspect.is_explicit},
            {q.opinion for q in p.example.gold if q.opinion.is_explicit},
        )
    )
    if flagged:
        logger.warning("%d training sentence(s) have aspect/opinion token overlap", flagged)

    result = TrialResult(seed=seed, out_dir=str(out_dir), metrics_path=str(out_dir / "metrics.jsonl"))
    step = 0
    with open(result.metrics_path, "w", encoding="utf-8") as log:
        for epoch in range(1, cfg.epochs + 1):
            order = list(range(len(prepared)))
            shuffle_rng.shuffle(order)
            for lo in range(0, len(order), cfg.batch_size):
                batch = [prepared[i] for i in order[lo : lo + cfg.batch_size]]
                total, report = train_step(model, batch, cfg, negative_rng)
                if not torch.isfinite(total):
                    _dump_diagnostics(out_dir, model, report, epoch, step)
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch} step {step}; "
                        f"diagnostics in {out_dir / 'diagnostics.json'}"
                    )
                optimizer.zero_grad()
                total.backward()
                optimizer.step()
                if cfg.log_steps:
                    log.write(
                        json.dumps({"type": "loss", "epoch": epoch, "step": step, **report.as_dict()})
                        + "\n"
                    )
                step += 1

            if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
                with torch.no_grad():
                    for name in cfg.eval_splits:
                        examples = splits.split(name)
                        if not examples:
                            continue
                        overall, by_type = evaluate(model, examples)
                        record = {
                            "type": "eval",
                            "epoch": epoch,
                            "split": name,
                            **overall.as_dict(),
                            "by_type": {t.value: s.as_dict() for t, s in by_type.items()},
                        }
                        result.history.append(record)
                        log.write(json.dumps(record) + "\n")
                ckpt = save_checkpoint(
                    model,
                    out_dir / "checkpoints" / f"epoch{epoch:04d}",
                    extra={"epoch": epoch, "seed": seed},
                )
                result.checkpoints[epoch] = ckpt
    return result


def select_checkpoint(
    result: TrialResult, policy: str = "fixed_epoch", fixed_epoch: int = 400
) -> str:
    """Pick a checkpoint path: a fixed epoch, or the best validation F1.

    Validation ties resolve to the earlier epoch.
    """
    if policy not in SELECT_POLICIES:
        raise ConfigError(f"unknown selection policy {policy!r}")
    if policy == "fixed_epoch":
        path = result.checkpoints.get(fixed_epoch)
        if path is None:
            raise CheckpointError(f"no checkpoint at epoch {fixed_epoch}")
        return path
    dev_records = result.eval_records("dev")
    if not dev_records:
        raise CheckpointError("best_validation selection needs dev evaluations")
    best = max(dev_records, key=lambda r: (r["f1"], -r["epoch"]))
    path = result.checkpoints.get(best["epoch"])
    if path is None:
        raise CheckpointError(f"no checkpoint at best validation epoch {best['epoch']}")
    return path


def run_ablation(suite: str, cfg: TrainConfig, splits: DatasetSplits, out_dir=None) -> list[dict]:
    """Train the suite's config grid and build a comparison table.

    Each row aggregates the final test-split scores over cfg.seeds and
    carries epoch-binned convergence data for each run.
    """
    if suite not in ABLATION_SUITES:
        raise ConfigError(f"unknown ablation suite {suite!r}; have {sorted(ABLATION_SUITES)}")
    field_name, values = ABLATION_SUITES[suite]
    out_dir = Path(out_dir) if out_dir else Path(cfg.checkpoint_dir) / f"ablation_{suite}"
    report_split = "test" if splits.test else ("dev" if splits.dev else "train")

    rows = []
    for value in values:
        variant_cfg = replace(cfg, **{field_name: value})
        variant_name = str(value).lower() if isinstance(value, bool) else str(value)
        scores, bins = [], []
        for seed in cfg.seeds:
            run_dir = out_dir / f"{field_name}={variant_name}" / f"seed{seed}"
            result = train(splits, variant_cfg, seed=seed, out_dir=run_dir)
            final = result.final_score(report_split)
            if final is None:
                raise ConfigError(f"no {report_split} evaluations recorded; check eval_splits")
            scores.append(
                metrics_mod.Score.from_counts(final["tp"], final["fp"], final["fn"])
            )
            bins.append(metrics_mod.bin_epoch_records(result.eval_records(report_split)))
        mean, std = metrics_mod.aggregate_trials(scores)
        rows.append(
            {
                "suite": suite,
                "variant": variant_name,
                "split": report_split,
                "seeds": list(cfg.seeds),
                "precision_mean": mean.precision,
                "precision_std": std.precision,
                "recall_mean": mean.recall,
                "recall_std": std.recall,
                "f1_mean": mean.f1,
                "f1_std": std.f1,
                "f1_per_seed": [s.f1 for s in scores],
                "epoch_bins": bins,
            }
        )
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "ablation.json").write_text(json.dumps(rows, indent=2))
    return rows
