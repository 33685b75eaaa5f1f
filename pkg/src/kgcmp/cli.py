"""Command-line entry points: train, evaluate, adapt, inspect.

Exit codes: 0 success, 1 usage error, 2 bad data or configuration,
3 numeric failure (including an internal error).  Failures print a
one-line JSON object to stderr so callers can parse the reason without
scraping tracebacks.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .autodiff import NumericError, backward
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .graph import (
    META_RELATIONS, DataError, augment_inverses, lift_relation_graph,
    load_kg, load_split, read_descriptions,
)
from .model import GraphContext, Model, score_queries
from .optim import check_gradients
from .qa import adapt, answer, evaluate_qa, load_qa_file
from .ranking import evaluate_split
from .report import eval_report, qa_report, training_report
from .synth import qa_curriculum
from .text import (
    EmbeddingError, EmbeddingTable, FileTextProvider, HashTextProvider,
    load_embeddings, save_embeddings,
)
from .training import TrainConfig, train

DATA_ERRORS = (DataError, EmbeddingError, CheckpointError, OSError)


def _provider(args) -> HashTextProvider | FileTextProvider:
    if getattr(args, "embeddings", None):
        return FileTextProvider(load_embeddings(args.embeddings))
    return HashTextProvider(dim=args.text_dim)


def _provider_for_model(args, model: Model):
    """Text features for a loaded checkpoint must match its text width."""
    if getattr(args, "embeddings", None):
        provider = FileTextProvider(load_embeddings(args.embeddings))
    else:
        provider = HashTextProvider(dim=model.text_dim)
    if provider.dim != model.text_dim:
        raise DataError(f"embedding dim {provider.dim} does not match "
                        f"model text dim {model.text_dim}")
    return provider


def _parse_schedule(text: str) -> tuple[tuple[int, float], ...]:
    """Parse `epochs:lr[,epochs:lr...]` into schedule stages."""
    stages = []
    for part in text.split(","):
        try:
            epochs, lr = part.split(":")
            stages.append((int(epochs), float(lr)))
        except ValueError:
            raise DataError(f"bad schedule fragment {part!r}; "
                            f"expected epochs:lr") from None
    return tuple(stages)


def cmd_pretrain(args) -> int:
    config = TrainConfig.from_json(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.data:
        config.mixture = [(d, 1.0) for d in args.data]
    provider = _provider(args)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
    outcome = train(config, provider, out_dir=args.out)
    if args.out:
        # train() already wrote train_stats.csv; render its figure beside it.
        csv_path, png_path = training_report(outcome.stats, args.out,
                                             stem="train_stats")
        final = f"{args.out}/model.ckpt"
        save_checkpoint(final, outcome.model,
                        extra={"seed": config.seed, "final": True})
        print(json.dumps({"checkpoint": final, "report": [csv_path, png_path],
                          "epochs": len(outcome.stats.rows),
                          "best_val_mrr": outcome.best_val_mrr}))
    else:
        print(json.dumps({"epochs": len(outcome.stats.rows),
                          "best_val_mrr": outcome.best_val_mrr}))
    return 0


def cmd_eval_kgc(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    provider = _provider_for_model(args, model)
    split = load_split(args.data)
    result = evaluate_split(model, split, provider, which=args.split,
                            batch_size=args.batch_size, keep_per_query=True)
    if args.out:
        eval_report(result, args.out)
    print(json.dumps(result.to_json_dict()))
    return 0


def cmd_adapt_kgqa(args) -> int:
    # Validate schedule syntax before any filesystem work.
    warmup = _parse_schedule(args.warmup)
    main_stages = _parse_schedule(args.main)
    rng = np.random.default_rng(args.seed)
    if args.qa:
        instances = load_qa_file(args.qa)
        holdout = []
    else:
        cur = qa_curriculum(seed=args.seed)
        instances, holdout = cur.train, cur.test
    if args.checkpoint:
        model, _ = load_checkpoint(args.checkpoint)
        provider = _provider_for_model(args, model)
    else:
        provider = _provider(args)
        model = Model(rng, dim=args.dim, text_dim=provider.dim,
                      qcmp_rel_layers=2, qcmp_ent_layers=3,
                      gcmp_rel_layers=2, gcmp_ent_layers=2,
                      n_query_tokens=2)
    stats = adapt(model, instances, provider, k=args.k, seed=args.seed,
                  warmup=warmup, main=main_stages)
    payload = {"train_instances": len(instances),
               "final_loss": stats.losses[-1]}
    if holdout:
        payload["holdout_accuracy"] = evaluate_qa(
            model, holdout, provider, pool=instances, k=args.k)
    if args.out:
        csv_path, png_path = qa_report(stats.losses, args.out)
        ckpt = f"{args.out}/adapted.ckpt"
        save_checkpoint(ckpt, model, extra={"seed": args.seed, "qa": True})
        payload["checkpoint"] = ckpt
        payload["report"] = [csv_path, png_path]
    print(json.dumps(payload))
    return 0


def cmd_score(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    provider = _provider_for_model(args, model)
    instances = load_qa_file(args.qa_instance)
    pool = load_qa_file(args.pool) if args.pool else []
    for inst in instances:
        label, probs = answer(model, inst, provider, pool=pool, k=args.shots)
        dist = {opt.label: round(float(p), 9)
                for opt, p in zip(inst.options, probs)}
        print(json.dumps({"id": inst.instance_id, "answer": label,
                          "distribution": dist}))
    return 0


def cmd_lift(args) -> int:
    kg = load_kg(args.kg)
    if not args.no_inverses:
        kg = augment_inverses(kg)
    rel_graph = lift_relation_graph(kg, include_self_loops=not args.no_self_loops)
    for a, m, b in rel_graph.edges:
        print(f"{kg.relation_names[a]}\t{META_RELATIONS[m]}\t"
              f"{kg.relation_names[b]}")
    return 0


def cmd_embed_hash(args) -> int:
    descriptions = read_descriptions(args.desc)
    if not descriptions:
        raise DataError(f"{args.desc}: no descriptions")
    provider = HashTextProvider(dim=args.dim)
    vectors = {ident: provider.vector(ident, text)
               for ident, text in descriptions.items()}
    table = EmbeddingTable(args.dim, vectors)
    save_embeddings(args.out, table)
    print(json.dumps({"entities": len(vectors), "dim": args.dim,
                      "out": args.out}))
    return 0


def cmd_check_grad(args) -> int:
    from .synth import toy_kg
    from .training import batch_bce
    kg = toy_kg(n_entities=8, n_relations=2, n_triples=12, seed=args.seed)
    provider = HashTextProvider(dim=12)
    ctx = GraphContext(kg, provider)
    if args.config:
        cfg = TrainConfig.from_json(args.config)
        model = Model(np.random.default_rng(args.seed), dim=cfg.dim,
                      text_dim=provider.dim,
                      qcmp_rel_layers=cfg.qcmp_rel_layers,
                      qcmp_ent_layers=cfg.qcmp_ent_layers,
                      gcmp_rel_layers=cfg.gcmp_rel_layers,
                      gcmp_ent_layers=cfg.gcmp_ent_layers,
                      n_query_tokens=cfg.n_query_tokens,
                      decoder_mode=cfg.decoder_mode,
                      use_dtaf=cfg.use_dtaf,
                      use_edge_scores=cfg.use_edge_scores)
    else:
        model = Model(np.random.default_rng(args.seed), dim=6, text_dim=12,
                      qcmp_rel_layers=1, qcmp_ent_layers=2,
                      gcmp_rel_layers=1, gcmp_ent_layers=2)
    queries = [(h, r) for h, r, _ in ctx.kg.triples[:2]]
    golds = np.array([t for _, _, t in ctx.kg.triples[:2]])
    negs = np.array([[(t + 1) % kg.num_entities] for _, _, t in ctx.kg.triples[:2]])
    question_vec = provider.tokens("probe", "which tail completes this").mean(axis=0)

    def loss_fn():
        logits = score_queries(model, ctx, queries, question_vec=question_vec)
        return batch_bce(logits, golds, negs)

    report = check_gradients(loss_fn, model.param_groups(),
                             max_coords=args.coords, rtol=args.rtol,
                             seed=args.seed)
    worst = max(report.values())
    print(json.dumps({"worst_rel_error": worst, "rtol": args.rtol,
                      "params_checked": len(report)}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kgcmp",
        description="Dual-channel message passing over knowledge graphs")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="train link prediction on split dirs")
    p.add_argument("--config", required=True, help="JSON training config")
    p.add_argument("--data", nargs="*", default=None,
                   help="split directories; overrides the config mixture")
    p.add_argument("--out", default=None, help="checkpoint/report directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--text-dim", type=int, default=64)
    p.add_argument("--embeddings", default=None,
                   help="word2vec text file instead of hash features")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("eval-kgc", help="filtered ranking on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="split directory")
    p.add_argument("--split", choices=("test", "valid", "train"),
                   default="test")
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--out", default=None, help="write rank report here")
    p.add_argument("--embeddings", default=None)
    p.set_defaults(func=cmd_eval_kgc)

    p = sub.add_parser("adapt-kgqa", help="fine-tune on multiple-choice QA")
    p.add_argument("--qa", default=None, help="JSONL instances; omit to use "
                   "the built-in curriculum with a holdout")
    p.add_argument("--checkpoint", default=None,
                   help="start from this model instead of a fresh one")
    p.add_argument("--shots", type=int, default=3, dest="k",
                   help="few-shot examples per question")
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--text-dim", type=int, default=64)
    p.add_argument("--warmup", default="20:3e-3,40:1e-3",
                   help="scorer-frozen stages as epochs:lr[,epochs:lr]")
    p.add_argument("--main", default="60:1e-3",
                   help="unfrozen stages as epochs:lr[,epochs:lr]")
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--embeddings", default=None)
    p.set_defaults(func=cmd_adapt_kgqa)

    p = sub.add_parser("score", help="answer QA instances, one JSON per line")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--qa-instance", required=True, help="JSONL instances")
    p.add_argument("--pool", default=None, help="solved instances for "
                   "few-shot retrieval")
    p.add_argument("--shots", type=int, default=0)
    p.add_argument("--embeddings", default=None)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("lift", help="print the relation graph as TSV")
    p.add_argument("--kg", required=True, help="TSV triple file")
    p.add_argument("--no-self-loops", action="store_true")
    p.add_argument("--no-inverses", action="store_true")
    p.set_defaults(func=cmd_lift)

    p = sub.add_parser("embed-hash",
                       help="export hash features in word2vec text format")
    p.add_argument("--desc", required=True, help="id<TAB>text file")
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed_hash)

    p = sub.add_parser("check-grad",
                       help="finite-difference check on a small model")
    p.add_argument("--config", default=None,
                   help="take model shape from this training config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--coords", type=int, default=5,
                   help="sampled coordinates per parameter")
    p.add_argument("--rtol", type=float, default=1e-4)
    p.set_defaults(func=cmd_check_grad)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage problems and 0 for --help/--version.
        return 1 if exc.code else 0
    try:
        return args.func(args)
    except DATA_ERRORS as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 2
    except (NumericError, AssertionError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 3
    except Exception as exc:  # pragma: no cover - last resort
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
