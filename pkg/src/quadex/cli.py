"""Command-line entry point: import, train, eval, predict, ablate, plot.

Every run writes a resolved-config snapshot next to its outputs so it can
be reproduced from that file alone. Failures print one machine-parsable
``error: <Type>: <message>`` line on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import corpus as corpus_mod
from . import metrics as metrics_mod
from . import pipeline as pipeline_mod
from . import trainer as trainer_mod
from .corpus import CorpusError
from .encoder import EncoderError
from .heads import CheckpointError, load_checkpoint
from .negatives import NegativesError
from .tagseq import TaggingError, cross_role_overlap
from .trainer import ConfigError, TrainConfig, TrainingDiverged

logger = logging.getLogger(__name__)

_ERRORS = (
    CorpusError,
    EncoderError,
    CheckpointError,
    NegativesError,
    TaggingError,
    ConfigError,
    TrainingDiverged,
    OSError,
)


def _write_snapshot(target: Path, payload: dict) -> None:
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(payload, indent=2, sort_keys=True))


def _parse_overrides(items) -> dict[str, str]:
    overrides = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        overrides[key] = value
    return overrides


def _load_train_config(args) -> TrainConfig:
    cfg = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    overrides = _parse_overrides(getattr(args, "set", None))
    if overrides:
        cfg = cfg.with_overrides(overrides)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_overrides({"seeds": str(args.seed)})
    cfg.validate()
    return cfg


def cmd_import(args) -> int:
    sentiment_map = (
        corpus_mod.parse_sentiment_map(args.sentiment_map) if args.sentiment_map else None
    )
    per_file, vocab = corpus_mod.import_acos_corpus(args.inputs, sentiment_map=sentiment_map)
    examples = [ex for file_examples in per_file for ex in file_examples]
    corpus_mod.save_canonical(examples, vocab, args.out)

    counts = corpus_mod.type_counts(examples)
    flagged = sum(
        1
        for ex in examples
        if cross_role_overlap(
            {q.aspect for q in ex.gold if q.aspect.is_explicit},
            {q.opinion for q in ex.gold if q.opinion.is_explicit},
        )
    )
    total = sum(counts.values())
    print(f"imported {len(examples)} sentences, {total} quadruples -> {args.out}")
    print("  " + "  ".join(f"{t.value}={counts[t]}" for t in corpus_mod.QuadType))
    print(f"  categories={vocab.n_categories}  aspect/opinion-overlap sentences={flagged}")
    _write_snapshot(
        Path(str(args.out) + ".config.json"),
        {
            "command": "import",
            "inputs": [str(p) for p in args.inputs],
            "out": str(args.out),
            "sentiment_map": args.sentiment_map,
        },
    )
    return 0


def cmd_train(args) -> int:
    cfg = _load_train_config(args)
    splits = trainer_mod.load_splits(cfg)
    out_dir = Path(args.out) if args.out else Path(cfg.checkpoint_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_snapshot(out_dir / "resolved_config.json", {"command": "train", **cfg.as_dict()})

    summaries = []
    for seed in cfg.seeds:
        result = trainer_mod.train(splits, cfg, seed=seed, out_dir=out_dir / f"seed{seed}")
        summary = {"seed": seed, "out_dir": result.out_dir}
        for split in ("dev", "test"):
            final = result.final_score(split)
            if final:
                summary[split] = {k: final[k] for k in ("precision", "recall", "f1")}
                print(
                    f"seed {seed} {split}: "
                    f"P={final['precision']:.4f} R={final['recall']:.4f} F1={final['f1']:.4f}"
                )
        summaries.append(summary)

    if len(cfg.seeds) > 1:
        for split in ("dev", "test"):
            finals = [s[split] for s in summaries if split in s]
            if finals:
                scores = [
                    metrics_mod.Score(
                        precision=f["precision"], recall=f["recall"], f1=f["f1"], tp=0, fp=0, fn=0
                    )
                    for f in finals
                ]
                mean, std = metrics_mod.aggregate_trials(scores)
                print(
                    f"{split} over {len(finals)} seeds: "
                    f"F1={mean.f1:.4f} +/- {std.f1:.4f}"
                )
    (out_dir / "trials.json").write_text(json.dumps(summaries, indent=2))
    return 0


def cmd_eval(args) -> int:
    model, vocab, _ = load_checkpoint(args.model)
    examples, data_vocab = corpus_mod.load_canonical(args.data)
    if data_vocab.categories != vocab.categories or data_vocab.sentiments != vocab.sentiments:
        raise ConfigError("checkpoint vocab does not match the dataset vocab")
    overall, by_type = trainer_mod.evaluate(model, examples)
    print(
        f"P={overall.precision:.4f} R={overall.recall:.4f} F1={overall.f1:.4f} "
        f"(tp={overall.tp} fp={overall.fp} fn={overall.fn})"
    )
    payload = {"overall": overall.as_dict()}
    if args.by_type:
        payload["by_type"] = {}
        for qt in corpus_mod.QuadType:
            s = by_type[qt]
            payload["by_type"][qt.value] = s.as_dict()
            print(f"  {qt.value}: P={s.precision:.4f} R={s.recall:.4f} F1={s.f1:.4f}")
    if args.out:
        _write_snapshot(
            Path(str(args.out) + ".config.json"),
            {"command": "eval", "model": str(args.model), "data": str(args.data)},
        )
        Path(args.out).write_text(json.dumps(payload, indent=2))
    return 0


def cmd_predict(args) -> int:
    model, vocab, _ = load_checkpoint(args.model)
    count = pipeline_mod.predict_file(args.infile, model, args.out, vocab)
    print(f"wrote {count} prediction records -> {args.out}")
    _write_snapshot(
        Path(str(args.out) + ".config.json"),
        {
            "command": "predict",
            "model": str(args.model),
            "in": str(args.infile),
            "out": str(args.out),
        },
    )
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_train_config(args)
    splits = trainer_mod.load_splits(cfg)
    out_dir = Path(args.out) if args.out else Path(cfg.checkpoint_dir) / f"ablation_{args.suite}"
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_snapshot(
        out_dir / "resolved_config.json",
        {"command": "ablate", "suite": args.suite, **cfg.as_dict()},
    )
    rows = trainer_mod.run_ablation(args.suite, cfg, splits, out_dir=out_dir)
    for row in rows:
        print(
            f"{row['suite']}/{row['variant']}: "
            f"P={row['precision_mean']:.4f} R={row['recall_mean']:.4f} "
            f"F1={row['f1_mean']:.4f} +/- {row['f1_std']:.4f} ({row['split']})"
        )
    return 0


def cmd_plot(args) -> int:
    records = []
    with open(args.log, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                record = json.loads(line)
                if record.get("type") == "eval":
                    records.append(record)
    rows = metrics_mod.bin_epoch_records(records, n_bins=args.bins)
    out_json = Path(args.out + ".json")
    out_json.write_text(json.dumps(rows, indent=2))
    print(f"wrote {len(rows)} binned rows -> {out_json}")
    _write_snapshot(
        Path(args.out + ".config.json"),
        {"command": "plot", "log": str(args.log), "bins": args.bins, "out": args.out},
    )
    if args.png:
        try:
            import matplotlib

            matplotlib.use("Agg")
            import matplotlib.pyplot as plt
        except ImportError:
            raise ConfigError("--png needs matplotlib (install the [plots] extra)") from None
        fig, ax = plt.subplots()
        for split in sorted({r["split"] for r in rows}):
            split_rows = [r for r in rows if r["split"] == split]
            xs = [(r["epoch_lo"] + r["epoch_hi"]) / 2 for r in split_rows]
            ys = [r["mean"] for r in split_rows]
            errs = [r["std"] for r in split_rows]
            ax.errorbar(xs, ys, yerr=errs, marker="o", capsize=3, label=split)
        ax.set_xlabel("epoch")
        ax.set_ylabel("F1")
        ax.legend()
        fig.savefig(args.out + ".png", dpi=120, bbox_inches="tight")
        print(f"wrote {args.out}.png")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quadex",
        description="Sentiment quadruple extraction with implicit aspects and opinions",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("import", help="convert ACOS TSV files to the canonical format")
    p.add_argument("--in", dest="inputs", action="append", required=True, metavar="TSV")
    p.add_argument("--out", required=True, metavar="CANONICAL")
    p.add_argument("--sentiment-map", default=None, metavar="0:neg,1:neu,2:pos")
    p.set_defaults(func=cmd_import)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True, metavar="JSON")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--out", default=None, metavar="DIR")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a canonical dataset")
    p.add_argument("--model", required=True, metavar="CKPT_DIR")
    p.add_argument("--data", required=True, metavar="CANONICAL")
    p.add_argument("--by-type", action="store_true")
    p.add_argument("--out", default=None, metavar="JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="extract quadruples from a file")
    p.add_argument("--model", required=True, metavar="CKPT_DIR")
    p.add_argument("--in", dest="infile", required=True, metavar="FILE")
    p.add_argument("--out", required=True, metavar="JSONL")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("ablate", help="run an ablation suite")
    p.add_argument("--suite", required=True, choices=sorted(trainer_mod.ABLATION_SUITES))
    p.add_argument("--config", required=True, metavar="JSON")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--out", default=None, metavar="DIR")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("plot", help="bin a metrics log into convergence-curve data")
    p.add_argument("--log", required=True, metavar="JSONL")
    p.add_argument("--bins", type=int, default=5)
    p.add_argument("--out", required=True, metavar="PREFIX")
    p.add_argument("--png", action="store_true")
    p.set_defaults(func=cmd_plot)

    return parser


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except _ERRORS as exc:
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return 1


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    return dispatch(argv)


if __name__ == "__main__":
    sys.exit(main())
