"""Command-line entry point wiring the modules into reproducible runs.

Subcommands: synth, train, embed, retrieve, eval, report. Every run
writes a resolved-config snapshot beside its outputs. Exit codes:
0 success, 2 missing input file, 3 validation failure, 4 divergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from .cca import cca_fit
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .encoder import MODEL1, MODEL2, EncoderSpec, StackSpec, init_params
from .errors import DivergenceError, FactspaceError
from .evaluation import EvalReport
from .facts import load_dataset, save_dataset
from .synth import SynthSpec, synth_generate
from .train import LossConfig, TrainConfig, train, write_loss_trace
from .words import fit_normalizer, load_word_table, save_word_table


def _widths(text: str) -> tuple[int, ...]:
    text = text.strip()
    if not text:
        return ()
    return tuple(int(part) for part in text.split(","))


def _write_config(out_dir: Path, name: str, args: argparse.Namespace) -> None:
    resolved = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()}
    resolved.pop("func", None)
    with open(out_dir / f"{name}_config.json", "w", encoding="utf-8") as fh:
        json.dump(resolved, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(args) -> int:
    out = _out_dir(args)
    spec = SynthSpec(
        s_vocab=args.s_vocab,
        p_vocab=args.p_vocab,
        o_vocab=args.o_vocab,
        facts1=args.facts1,
        facts2=args.facts2,
        facts3=args.facts3,
        images_per_fact=args.images_per_fact,
        latent_dim=args.latent_dim,
        sigma=args.sigma,
        seed=args.seed,
        holdout_share=args.holdout_share,
        test_fraction=args.test_fraction,
        longtail_alpha=args.longtail_alpha,
        nonlinear=args.nonlinear,
    )
    dataset, table, oracle = synth_generate(spec)
    save_dataset(dataset, out / "dataset.jsonl")
    save_word_table(table, out / "words.txt")
    with open(out / "oracle.json", "w", encoding="utf-8") as fh:
        fh.write(oracle.to_json() + "\n")
    _write_config(out, "synth", args)
    print(f"wrote {len(dataset)} instances over {len(oracle.facts)} facts to {out}")
    return 0


def cmd_train(args) -> int:
    out = _out_dir(args)
    dataset = load_dataset(args.dataset)
    table = load_word_table(args.words)
    train_facts = dataset.unique_facts("train")
    normalizer = fit_normalizer(train_facts, table)
    lang = pipeline.language_targets(train_facts, table, normalizer)

    if args.model == "cca":
        instances = dataset.train_instances()
        X = np.stack([inst.features for inst in instances])
        Y = np.stack([lang[inst.fact].concat() for inst in instances])
        model = cca_fit(X, Y, dim=args.cca_dim, reg=args.cca_reg)
        checkpoint = Checkpoint("cca", model, normalizer, args.seed)
    else:
        slot_dim = args.slot_dim or table.dim
        is_model2 = args.model == MODEL2
        spec = EncoderSpec(
            model_kind=args.model,
            input_dim=dataset.feature_dim,
            slot_dims=(slot_dim, slot_dim, slot_dim),
            shared=StackSpec(_widths(args.shared_hidden)),
            s_branch=StackSpec(_widths(args.s_hidden) if is_model2 else ()),
            po_branch=StackSpec(_widths(args.po_hidden) if is_model2 else ()),
        )
        params = init_params(spec, args.seed)
        train_cfg = TrainConfig(
            base_lr=args.base_lr,
            new_param_lr_multiplier=args.new_param_lr_multiplier,
            momentum=args.momentum,
            weight_decay=args.weight_decay,
            lr_gamma=args.lr_gamma,
            lr_step_iters=args.lr_step_iters,
            batch_size=args.batch_size,
            max_iters=args.max_iters,
            seed=args.seed,
        )
        loss_cfg = LossConfig(args.distance, args.epsilon)
        trained, trace = train(params, dataset, lang, train_cfg, loss_cfg)
        write_loss_trace(trace, out / "loss_trace.csv")
        checkpoint = Checkpoint(args.model, trained, normalizer, args.seed)

    save_checkpoint(checkpoint, out / "checkpoint.json")
    _write_config(out, "train", args)
    print(f"wrote checkpoint ({checkpoint.kind}) to {out}")
    return 0


def cmd_embed(args) -> int:
    out = _out_dir(args)
    checkpoint = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.dataset)
    table = load_word_table(args.words)
    embset = pipeline.embed_dataset(
        checkpoint, dataset, table,
        representation=args.representation, split=args.split,
    )
    pipeline.write_embeddings(embset, out / "embeddings.jsonl")
    _write_config(out, "embed", args)
    print(
        f"wrote {len(embset.language)} language and {len(embset.visual)} visual "
        f"embeddings to {out}"
    )
    return 0


def cmd_retrieve(args) -> int:
    out = _out_dir(args)
    embset = pipeline.read_embeddings(args.embeddings)
    meta = {
        "model": embset.meta.get("model"),
        "representation": embset.meta.get("representation"),
        "mode": args.mode,
        "k": args.k,
        "seed": args.seed,
    }
    if args.direction in ("language", "both"):
        records = pipeline.retrieve_language(
            embset, metric=args.metric, k=args.k, mode=args.mode, seed=args.seed
        )
        pipeline.write_ranked(
            records, out / "ranked_language.jsonl",
            {**meta, "direction": "language", "metric": args.metric},
        )
    if args.direction in ("visual", "both"):
        records = pipeline.retrieve_visual(
            embset, k=args.k, mode=args.mode, seed=args.seed
        )
        pipeline.write_ranked(
            records, out / "ranked_visual.jsonl", {**meta, "direction": "visual"}
        )
    _write_config(out, "retrieve", args)
    print(f"wrote ranked lists ({args.direction}) to {out}")
    return 0


def cmd_eval(args) -> int:
    out = _out_dir(args)
    dataset = load_dataset(args.dataset)
    lang_meta, language_records = pipeline.read_ranked(args.language_ranked)
    if lang_meta.get("metric") != args.metric:
        raise FactspaceError(
            f"--metric {args.metric} but ranked lists were built with metric "
            f"{lang_meta.get('metric')}"
        )
    _, visual_records = pipeline.read_ranked(args.visual_ranked)
    metadata = {
        "model": lang_meta.get("model"),
        "representation": lang_meta.get("representation"),
        "metric_family": args.metric,
        "mode": lang_meta.get("mode"),
        "k": lang_meta.get("k"),
        "seed": lang_meta.get("seed"),
    }
    report = pipeline.evaluate(
        dataset, language_records, visual_records, args.metric, metadata
    )
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        fh.write(report.to_json() + "\n")
    with open(out / "buckets.csv", "w", encoding="utf-8") as fh:
        fh.write(report.buckets_csv())
    _write_config(out, "eval", args)
    print(f"wrote report.json and buckets.csv to {out}")
    return 0


def cmd_report(args) -> int:
    with open(args.report, "r", encoding="utf-8") as fh:
        report = EvalReport.from_json(fh.read())
    lang = report.language
    vis = report.visual
    print("metadata:", json.dumps(report.metadata, sort_keys=True))
    print(
        f"language view: top1={lang['top1']:.2f}% top5={lang['top5']:.2f}% "
        f"top10={lang['top10']:.2f}% mrr={lang['mrr']:.2f}% "
        f"({lang['n_gt_facts']} gt facts over {lang['n_images']} images)"
    )
    for order, stats in sorted(lang.get("per_order", {}).items()):
        print(
            f"  order {order}: top1={stats['top1']:.2f}% top5={stats['top5']:.2f}% "
            f"top10={stats['top10']:.2f}% mrr={stats['mrr']:.2f}% "
            f"(n={stats['n_gt_facts']})"
        )
    print(
        f"visual view: mAP={vis['map']:.2f}% mAP10={vis['map10']:.2f}% "
        f"mAP100={vis['map100']:.2f}% ({vis['n_queries']} queries, "
        f"{vis['n_skipped']} skipped)"
    )
    if report.buckets:
        print("generalization buckets (K10):")
        for bucket in report.buckets:
            rate = "n/a" if bucket.k10 is None else f"{bucket.k10:.2f}%"
            print(f"  {bucket.name}: size={bucket.size} k10={rate}")
    if args.buckets_csv:
        with open(args.buckets_csv, "w", encoding="utf-8") as fh:
            fh.write(report.buckets_csv())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="factspace",
        description="Structured fact embedding: synth, train, embed, retrieve, eval.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset with an oracle")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--s-vocab", type=int, default=20)
    p.add_argument("--p-vocab", type=int, default=15)
    p.add_argument("--o-vocab", type=int, default=15)
    p.add_argument("--facts1", type=int, default=50)
    p.add_argument("--facts2", type=int, default=100)
    p.add_argument("--facts3", type=int, default=150)
    p.add_argument("--images-per-fact", type=int, default=20)
    p.add_argument("--latent-dim", type=int, default=16)
    p.add_argument("--sigma", type=float, default=0.05)
    p.add_argument("--holdout-share", type=float, default=0.0)
    p.add_argument("--test-fraction", type=float, default=0.25)
    p.add_argument("--longtail-alpha", type=float, default=None)
    p.add_argument("--nonlinear", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train an encoder or the CCA baseline")
    p.add_argument("--config", default=None,
                   help="JSON file of train options (explicit flags win)")
    p.add_argument("--dataset", required=True)
    p.add_argument("--words", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--model", choices=[MODEL1, MODEL2, "cca"], default=MODEL1)
    p.add_argument("--shared-hidden", default="64", help="comma-separated widths")
    p.add_argument("--s-hidden", default="32", help="model2 S-branch widths")
    p.add_argument("--po-hidden", default="32", help="model2 PO-branch widths")
    p.add_argument("--slot-dim", type=int, default=None)
    p.add_argument("--base-lr", type=float, default=0.5e-4)
    p.add_argument("--new-param-lr-multiplier", type=float, default=10.0)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--lr-gamma", type=float, default=0.1)
    p.add_argument("--lr-step-iters", type=int, default=5000)
    p.add_argument("--batch-size", type=int, default=100)
    p.add_argument("--max-iters", type=int, default=10000)
    p.add_argument("--distance", choices=["sqeuclidean", "euclidean"], default="sqeuclidean")
    p.add_argument("--epsilon", type=float, default=1e-8)
    p.add_argument("--cca-dim", type=int, default=None)
    p.add_argument("--cca-reg", type=float, default=1e-6)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", help="dump structured embeddings for one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--words", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.add_argument(
        "--representation", choices=["structured", "averaged"], default="structured"
    )
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("retrieve", help="rank facts for images and images for facts")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--direction", choices=["language", "visual", "both"], default="both")
    p.add_argument("--metric", type=int, choices=[1, 2], default=2)
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--mode", choices=["exact", "approximate"], default="exact")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("eval", help="score ranked lists into an EvalReport")
    p.add_argument("--dataset", required=True)
    p.add_argument("--language-ranked", required=True)
    p.add_argument("--visual-ranked", required=True)
    p.add_argument("--metric", type=int, choices=[1, 2], required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="pretty-print an EvalReport JSON")
    p.add_argument("--report", required=True)
    p.add_argument("--buckets-csv", default=None)
    p.set_defaults(func=cmd_report)

    return parser


def _expand_config(argv: list[str]) -> list[str]:
    """Inject `train --config FILE` values as flags ahead of explicit ones."""
    if not argv or argv[0] != "train" or "--config" not in argv:
        return argv
    i = argv.index("--config")
    with open(argv[i + 1], "r", encoding="utf-8") as fh:
        config = json.load(fh)
    injected = []
    for key, value in config.items():
        flag = "--" + key.replace("_", "-")
        if isinstance(value, bool):
            if value:
                injected.append(flag)
        elif value is not None:
            injected.extend([flag, str(value)])
    return ["train", "--config", argv[i + 1], *injected, *argv[1:i], *argv[i + 2:]]


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(_expand_config(argv))
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: missing-file: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"error: divergence: {exc}", file=sys.stderr)
        return 4
    except FactspaceError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
