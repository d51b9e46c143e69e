"""Command-line driver: ``kgrec <subcommand> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import corpus, embed, evaluation, explain, kgraph, recsys

_logger = logging.getLogger("kgrec")

SUBCOMMANDS = ("synth", "stats", "build-graph", "train", "recommend", "explain", "evaluate")


def _seed_default():
    value = os.environ.get("KGREC_SEED")
    return int(value) if value is not None else 0


def _int_list(text):
    try:
        values = sorted({int(v) for v in text.split(",") if v.strip()})
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or values[0] < 1:
        raise argparse.ArgumentTypeError("values must be positive integers")
    return values


def _existing(path):
    if not Path(path).exists():
        raise argparse.ArgumentTypeError(f"no such file: {path}")
    return path


def _add_train_flags(p, dim=400, epochs=10):
    p.add_argument("--dim", type=int, default=dim)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--margin", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=epochs)
    p.add_argument("--negatives", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=1000)
    p.add_argument("--optimizer", choices=("adagrad", "sgd"), default="adagrad")
    p.add_argument("--scorer", choices=[s.value for s in embed.Scorer], default="complex")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--relation-init", choices=embed.RELATION_INITS, default="gaussian")


def _train_config(args):
    return embed.TrainConfig(
        dim=args.dim, learning_rate=args.lr, margin=args.margin, epochs=args.epochs,
        negatives=args.negatives, batch_size=args.batch_size, seed=args.seed,
        optimizer=args.optimizer, scorer=args.scorer, workers=args.workers,
        relation_init=args.relation_init,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kgrec", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, metavar="{" + ",".join(SUBCOMMANDS) + "}")

    p = sub.add_parser("synth", help="write a clustered synthetic corpus")
    p.add_argument("--clusters", type=int, default=2)
    p.add_argument("--users-per-cluster", type=int, default=25)
    p.add_argument("--items-per-cluster", type=int, default=15)
    p.add_argument("--aspects", type=int, default=10)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--cross-rate", type=float, default=1.0,
                   help="probability of rating an item of another cluster")
    p.add_argument("--out-ratings", required=True)
    p.add_argument("--out-opinions", required=True)

    p = sub.add_parser("stats", help="dataset statistics")
    p.add_argument("--ratings", type=_existing, required=True)
    p.add_argument("--opinions", type=_existing)
    p.add_argument("--min-ratings", type=int, help="keep users with more than this many ratings")
    p.add_argument("--format", choices=("tsv", "structured"), default="tsv")

    p = sub.add_parser("build-graph", help="build a GER/GEA/GERA graph file")
    p.add_argument("--ratings", type=_existing, required=True)
    p.add_argument("--opinions", type=_existing)
    p.add_argument("--variant", choices=[v.value for v in kgraph.Variant], default="gera")
    p.add_argument("--min-ratings", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train embeddings on a graph file")
    p.add_argument("--graph", type=_existing, required=True)
    _add_train_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("recommend", help="top-k items by cosine similarity")
    p.add_argument("--embeddings", type=_existing, required=True)
    p.add_argument("--graph", type=_existing, required=True)
    p.add_argument("--user", action="append", help="user key (repeatable; default all users)")
    p.add_argument("--k", type=int, default=30)
    p.add_argument("--include-rated", action="store_true", help="do not exclude items the user rated")
    p.add_argument("--out", required=True)

    p = sub.add_parser("explain", help="aspect-level explanations for a user's recommendations")
    p.add_argument("--embeddings", type=_existing, required=True)
    p.add_argument("--graph", type=_existing, required=True)
    p.add_argument("--user", action="append", help="user key (repeatable; default all users)")
    p.add_argument("--k", type=int, default=30)
    p.add_argument("--n", type=int, default=30, help="number of similar users")
    p.add_argument("--reviews", type=_existing, help="user<TAB>item<TAB>text snippets to display")
    p.add_argument("--format", choices=("tsv", "structured"), default="structured")
    p.add_argument("--out")

    p = sub.add_parser("evaluate", help="k-fold cross-validated top-N evaluation")
    p.add_argument("--ratings", type=_existing, required=True)
    p.add_argument("--opinions", type=_existing)
    p.add_argument("--models", default="gera,ger,gea,mf,pop,rdm")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--ks", type=_int_list, default=[10, 20, 30])
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--significance-over", choices=("folds", "users"), default="folds")
    p.add_argument("--mf-factors", type=int, default=200)
    p.add_argument("--mf-reg", type=float, default=0.1)
    p.add_argument("--mf-iterations", type=int, default=15)
    _add_train_flags(p)
    p.add_argument("--out", required=True)

    for name, action in sub.choices.items():
        action.add_argument("--seed", type=int, default=None,
                            help="random seed (default: $KGREC_SEED or 0)")
    return parser


def _load_corpus(args):
    ratings = corpus.load_ratings(args.ratings)
    opinions = corpus.load_opinions(args.opinions) if getattr(args, "opinions", None) else []
    if getattr(args, "min_ratings", None) is not None:
        ratings = corpus.filter_min_ratings(ratings, args.min_ratings)
    return ratings, opinions


def cmd_synth(args):
    cfg = corpus.SynthConfig(args.clusters, args.users_per_cluster, args.items_per_cluster,
                             args.aspects, args.noise, args.seed, args.cross_rate)
    ratings, opinions = corpus.generate_synthetic(cfg)
    corpus.write_ratings(ratings, args.out_ratings)
    corpus.write_opinions(opinions, args.out_opinions)
    _logger.info("wrote %d ratings, %d opinions", len(ratings), len(opinions))


def cmd_stats(args):
    ratings, opinions = _load_corpus(args)
    st = corpus.dataset_stats(ratings, opinions)
    if args.format == "structured":
        print(json.dumps(st.__dict__, indent=2))
    else:
        print("users\titems\tratings\topinions\trating_sparsity")
        print(f"{st.n_users}\t{st.n_items}\t{st.n_ratings}\t{st.n_opinions}\t{st.rating_sparsity:.3e}")


def cmd_build_graph(args):
    ratings, opinions = _load_corpus(args)
    g = kgraph.build_graph(ratings, opinions, args.variant)
    kgraph.save_graph(g, args.out)
    _logger.info("%r written to %s", g, args.out)


def cmd_train(args):
    g = kgraph.load_graph(args.graph)
    table = embed.train(g, _train_config(args))
    embed.save_embeddings(table, args.out)
    if table.loss_trace:
        _logger.info("final mean loss %.6f", table.loss_trace[-1])


def _users(args, table):
    if args.user:
        return [kgraph.EntityRef(kgraph.EntityKind.USER, u) for u in args.user]
    return table.of_kind(kgraph.EntityKind.USER)


def cmd_recommend(args):
    table = embed.load_embeddings(args.embeddings)
    g = kgraph.load_graph(args.graph)
    items = table.of_kind(kgraph.EntityKind.ITEM)
    lists = []
    for u in _users(args, table):
        rated = set() if args.include_rated else g.rated_items(u)
        lists.append(recsys.recommend_embedding(u, table, [i for i in items if i not in rated], args.k))
    recsys.write_recommendations(lists, args.out)


def cmd_explain(args):
    table = embed.load_embeddings(args.embeddings)
    g = kgraph.load_graph(args.graph)
    reviews = explain.load_reviews(args.reviews) if args.reviews else {}
    chunks, batch = [], []
    for u in _users(args, table):
        explained = explain.explain_recommendations(u, table, g, args.k, args.n)
        batch.append(explained)
        if args.format == "structured":
            chunks.append(json.loads(explain.explanations_json(u, explained)))
        else:
            chunks.append(f"# user {u.key}")
            for it, exp in explained:
                chunks.append(explain.render_explanation(exp, it, reviews.get((u.key, it.key))))
    st = explain.explanation_stats(batch) if batch else None
    if args.format == "structured":
        text = json.dumps({"config": _config_echo(args), "explanations": chunks,
                           "stats": st.__dict__ if st else None}, indent=2) + "\n"
    else:
        if st:
            chunks.append(
                f"# coverage={st.coverage:.4f} lk/other={_fmt(st.lk_other)} "
                f"#aspects={st.n_aspects:.2f} asp/item={_fmt(st.asp_per_item)}"
            )
        text = "\n".join(chunks) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _fmt(x):
    return "undefined" if x is None else f"{x:.3f}"


def cmd_evaluate(args):
    ratings, opinions = _load_corpus(args)
    models = [m.strip() for m in args.models.split(",") if m.strip()]
    report = evaluation.evaluate(
        models, ratings, opinions, K=args.folds, ks=args.ks, seed=args.seed,
        alpha=args.alpha, significance_over=args.significance_over,
        train_config=_train_config(args), mf_factors=args.mf_factors,
        mf_regularization=args.mf_reg, mf_iterations=args.mf_iterations,
    )
    doc = report.to_dict()
    doc["config"] = {**_config_echo(args), **doc["config"]}
    Path(args.out).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    sys.stdout.write(render_report(report, "text"))
    return 1 if report.errors and not report.records else 0


def render_report(report: evaluation.MetricsReport, format: str = "text", metrics=("f1",)) -> str:
    """Models as rows, ``metric@k`` as columns.

    The best mean per column is shown in brackets (every model tied at the
    best value is marked); a trailing ``*`` marks a significant best.
    """
    if format in ("json", "structured"):
        return json.dumps(report.to_dict(), indent=2) + "\n"
    models = report.models
    ks = sorted({r.k for r in report.records})
    columns = [(m, k) for m in metrics for k in ks]
    header = ["model"] + [f"{m.upper() if m == 'f1' else m}@{k}" for m, k in columns]
    rows = []
    for model in models:
        row = [model]
        for metric, k in columns:
            rec = report.get(model, metric, k)
            best = max(report.get(o, metric, k).mean for o in models)
            cell = f"{rec.mean:.3f}"
            if rec.mean == best:
                cell = f"[{cell}]"
            if rec.significant:
                cell += "*"
            row.append(cell)
        rows.append(row)
    widths = [max(len(r[c]) for r in [header, *rows]) for c in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in [header, *rows]]
    for name, msg in report.errors.items():
        lines.append(f"! {name}: {msg}")
    return "\n".join(lines) + "\n"


def _config_echo(args):
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("verbose",)}


COMMANDS = {
    "synth": cmd_synth,
    "stats": cmd_stats,
    "build-graph": cmd_build_graph,
    "train": cmd_train,
    "recommend": cmd_recommend,
    "explain": cmd_explain,
    "evaluate": cmd_evaluate,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.seed is None:
        args.seed = _seed_default()
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    _logger.info("command %s config %s", args.command, json.dumps(_config_echo(args), default=str))
    try:
        return COMMANDS[args.command](args) or 0
    except (ValueError, KeyError, OSError, RuntimeError) as exc:
        _logger.error("%s failed: %s", args.command, exc)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
