"""Command line pipeline and reports.

Stages hand off through the knowledge base directory:

    ingest -> train-primary -> embed -> cluster -> opposites -> serve

plus offline evaluation, an ad-hoc recommend command, and feedback
reporting. Exit codes: 0 success, 2 usage or input error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import knowledgebase as kbmod
from . import plotting
from .autonet import (AutonetError, TrainConfig, TrainingDiverged,
                      build_model, forward_batch, masked_mse, masked_rmse,
                      train)
from .dataset import (DatasetError, age_to_category, build_matrices, cleanse,
                      load_movielens_100k, parse_catalog, split_train_test)
from .embedding import EmbeddingError, embed_catalog
from .hybridfilter import FilterError, UserProfile, recommend
from .knowledgebase import KnowledgeBase, KnowledgeBaseError
from .spectral import (SpectralError, cluster_catalog, cluster_sizes,
                       knn_affinity, optimal_k_candidates,
                       opposite_clusters_all)

log = logging.getLogger(__name__)

VALID_ACTIVATIONS = ("selu", "elu", "tanh", "relu", "none")
GENDER_CODES = {"male": 0, "female": 1}


# --- small parsers -------------------------------------------------------------

def _int_list(text: str) -> list[int]:
    values = [int(x) for x in text.split(",") if x.strip()]
    if not values:
        raise ValueError(f"expected a comma separated int list, got {text!r}")
    return values


def _hidden_dims(text: str) -> tuple[int, ...]:
    return tuple(_int_list(text))


def _ratings_arg(text: str) -> list[tuple[int, int]]:
    pairs = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        if "=" not in chunk:
            raise ValueError(f"bad rating {chunk!r}, expected id=score")
        anime_id, score = chunk.split("=", 1)
        pairs.append((int(anime_id), int(score)))
    return pairs


def _heldout_metrics(model, train_matrix, truth_matrix, heldout):
    outputs, _ = forward_batch(model, train_matrix.values)
    rows, cols = zip(*sorted(heldout))
    actual = truth_matrix.values[rows, cols]
    predicted = np.clip(outputs[rows, cols], 0.0, 10.0)
    return masked_mse(actual, predicted), masked_rmse(actual, predicted)


def _config_from(args) -> TrainConfig:
    return TrainConfig(epochs=args.epochs, learning_rate=args.lr,
                       batch_size=args.batch_size, seed=args.seed,
                       hidden_activation=args.activation,
                       final_activation=args.final_activation,
                       hidden_dims=args.hidden,
                       bottleneck_dim=args.bottleneck)


def _build_and_train(matrix_values, cfg: TrainConfig, final_bias: float,
                     eval_hook=None):
    model = build_model(cfg.layer_dims(matrix_values.shape[1]),
                        hidden_activation=cfg.hidden_activation,
                        final_activation=cfg.final_activation,
                        seed=cfg.seed, final_bias=final_bias)
    return train(model, matrix_values, cfg, eval_hook=eval_hook)


# --- commands ------------------------------------------------------------------

def cmd_ingest(args) -> int:
    notes: list[str] = []
    titles, users, ratings = parse_catalog(
        args.anime, args.users, args.ratings,
        reference_year=args.reference_year, errors=notes)
    raw = (len(titles), len(users), len(ratings))
    titles, users, ratings = cleanse(titles, users, ratings,
                                     min_ratings_per_user=args.min_ratings)
    matrix, genre_matrix = build_matrices(titles, users, ratings,
                                          errors=notes)
    for msg in notes:
        print(f"note: {msg}")
    print(f"titles   {raw[0]} -> {len(titles)}")
    print(f"users    {raw[1]} -> {len(users)}")
    print(f"ratings  {raw[2]} -> {len(ratings)}")
    print(f"matrix   {len(matrix.user_ids)} users x {matrix.n_items} titles, "
          f"{len(genre_matrix.genres)} genres")
    kb = KnowledgeBase(
        catalog=titles, rating_matrix=matrix, genre_matrix=genre_matrix,
        build={"ingest": {"min_ratings": args.min_ratings,
                          "reference_year": args.reference_year}})
    kbmod.save(kb, args.out)
    print(f"saved knowledge base to {args.out}")
    return 0


def cmd_train_primary(args) -> int:
    kb = kbmod.load(args.kb)
    if kb.rating_matrix is None:
        raise KnowledgeBaseError("knowledge base has no rating matrix; "
                                 "run ingest first")
    cfg = _config_from(args)
    train_matrix, heldout = split_train_test(kb.rating_matrix, args.holdout,
                                             seed=args.seed)
    model, history = _build_and_train(train_matrix.values, cfg,
                                      args.final_bias)
    mse, rmse = _heldout_metrics(model, train_matrix, kb.rating_matrix,
                                 heldout)
    settings = {"epochs": args.epochs, "learning_rate": args.lr,
                "batch_size": args.batch_size, "seed": args.seed,
                "activation": args.activation,
                "final_activation": args.final_activation,
                "hidden_dims": list(args.hidden),
                "bottleneck_dim": args.bottleneck,
                "holdout": args.holdout, "final_bias": args.final_bias}
    kb.model = model
    kb.model_meta = dict(settings, final_train_mse=history[-1],
                         heldout_mse=float(mse), heldout_rmse=float(rmse))
    kb.build["train"] = settings
    kbmod.save(kb, args.kb)
    print(f"trained {args.epochs} epochs "
          f"({args.activation}/{args.final_activation}, seed {args.seed})")
    print(f"final train MSE {history[-1]:.4f}")
    print(f"heldout masked MSE {mse:.4f}  RMSE {rmse:.4f}")
    print(f"saved knowledge base to {args.kb}")
    return 0


def cmd_embed(args) -> int:
    kb = kbmod.load(args.kb)
    if kb.rating_matrix is None or kb.genre_matrix is None:
        raise KnowledgeBaseError("knowledge base has no matrices; "
                                 "run ingest first")
    stage1 = TrainConfig(epochs=args.epochs, learning_rate=args.lr,
                         batch_size=args.batch_size, seed=args.seed,
                         hidden_dims=args.hidden, bottleneck_dim=args.d)
    stage2 = replace(stage1, seed=args.seed + 1)
    kb.embeddings = embed_catalog(kb.rating_matrix, kb.genre_matrix,
                                  t=args.t, stage1_config=stage1,
                                  stage2_config=stage2)
    kb.build["embed"] = {"t": args.t, "d": args.d, "seed": args.seed,
                         "epochs": args.epochs, "learning_rate": args.lr,
                         "batch_size": args.batch_size,
                         "hidden_dims": list(args.hidden)}
    kbmod.save(kb, args.kb)
    prov = kb.embeddings.provenance
    print(f"embedded {len(kb.embeddings.vectors)} titles into "
          f"{kb.embeddings.dim} dims (t={args.t}, top raters m={prov['m']})")
    print(f"saved knowledge base to {args.kb}")
    return 0


def _print_candidate_table(table) -> None:
    """Columns are min-cluster-size values, rows the top-3 k candidates."""
    depth = 3
    header = ["min size"] + [str(ms) for ms, _ in table]
    body = []
    for rank in range(depth):
        cells = [f"k #{rank + 1}"]
        for _, cands in table:
            cells.append(str(cands[rank][0]) if rank < len(cands) else "-")
        body.append(cells)
    widths = [max(len(row[j]) for row in [header] + body)
              for j in range(len(header))]
    for row in [header] + body:
        print(" | ".join(cell.rjust(width)
                         for cell, width in zip(row, widths)))


def cmd_cluster(args) -> int:
    kb = kbmod.load(args.kb)
    if kb.embeddings is None:
        raise KnowledgeBaseError("knowledge base has no embeddings; "
                                 "run embed first")
    min_sizes = args.min_cluster_size
    graph = knn_affinity(kb.embeddings, args.k_neighbors)
    table = []
    for ms in min_sizes:
        try:
            cands = optimal_k_candidates(graph, ms, args.k_max, args.seed)
        except SpectralError:
            cands = []
        table.append((ms, cands))
    _print_candidate_table(table)

    model, _ = cluster_catalog(kb.embeddings, k_neighbors=args.k_neighbors,
                               min_cluster_size=min_sizes[0],
                               k_max=args.k_max, seed=args.seed,
                               forced_k=args.k)
    kb.clusters = model
    kb.build["cluster"] = {"k_neighbors": args.k_neighbors,
                           "min_cluster_size": min_sizes[0],
                           "k_max": args.k_max, "seed": args.seed,
                           "forced_k": args.k, "chosen_k": model.k}
    kbmod.save(kb, args.kb)
    chosen = "forced" if args.k is not None else "chose"
    print(f"{chosen} k = {model.k} (min cluster size {min_sizes[0]})")
    sizes = sorted(cluster_sizes(model.assignment).items())
    print("cluster sizes: "
          + ", ".join(f"{c}:{n}" for c, n in sizes))
    print(f"saved knowledge base to {args.kb}")
    return 0


def cmd_opposites(args) -> int:
    kb = kbmod.load(args.kb)
    if kb.embeddings is None or kb.clusters is None:
        raise KnowledgeBaseError("knowledge base has no clustering; "
                                 "run cluster first")
    kb.clusters.opposite = opposite_clusters_all(kb.embeddings, kb.clusters)
    kb.build["opposites"] = {"n": len(kb.clusters.opposite)}
    kbmod.save(kb, args.kb)
    print(f"opposite cluster map covers {len(kb.clusters.opposite)} titles")
    for anime_id in sorted(kb.clusters.opposite)[:5]:
        own = kb.clusters.assignment[anime_id]
        print(f"  anime {anime_id}: cluster {own} -> "
              f"{kb.clusters.opposite[anime_id]}")
    print(f"saved knowledge base to {args.kb}")
    return 0


def cmd_evaluate(args) -> int:
    if args.dataset != "movielens100k":
        raise DatasetError(f"unknown dataset {args.dataset!r}")
    matrix = load_movielens_100k(args.path)
    train_matrix, heldout = split_train_test(matrix, args.holdout,
                                             seed=args.seed)
    rows, cols = zip(*sorted(heldout))
    actual = matrix.values[rows, cols]

    item = train_matrix.item_block()
    rated = item > 0
    global_mean = float(item[rated].mean()) if rated.any() else 0.0
    counts = rated.sum(axis=1)
    user_means = np.where(counts > 0,
                          item.sum(axis=1) / np.maximum(counts, 1),
                          global_mean)
    results = []
    global_pred = np.full(len(actual), global_mean)
    results.append(("Global Average",
                    masked_mse(actual, global_pred),
                    masked_rmse(actual, global_pred)))
    user_pred = user_means[np.array(rows)]
    results.append(("User Average",
                    masked_mse(actual, user_pred),
                    masked_rmse(actual, user_pred)))
    if not args.skip_model:
        cfg = _config_from(args)
        model, _ = _build_and_train(train_matrix.values, cfg,
                                    args.final_bias)
        mse, rmse = _heldout_metrics(model, train_matrix, matrix, heldout)
        results.append(("Autoencoder", mse, rmse))

    print("method\tMSE\tRMSE")
    for name, mse, rmse in results:
        print(f"{name}\t{mse:.4f}\t{rmse:.4f}")
    if args.out_png:
        path = plotting.evaluation_bars_png(results, args.out_png)
        print(f"wrote {path}")
    return 0


def cmd_evaluate_activations(args) -> int:
    names = [a.strip() for a in args.activations.split(",") if a.strip()]
    for name in names:
        if name not in VALID_ACTIVATIONS:
            raise ValueError(f"unknown activation {name!r}; valid: "
                             + ", ".join(VALID_ACTIVATIONS))
    kb = kbmod.load(args.kb)
    if kb.rating_matrix is None:
        raise KnowledgeBaseError("knowledge base has no rating matrix; "
                                 "run ingest first")
    seeds = args.seeds
    records = []
    curves: dict[str, list[list[float]]] = {name: [] for name in names}
    finals: dict[str, list[float]] = {name: [] for name in names}
    for name in names:
        for seed in seeds:
            train_matrix, heldout = split_train_test(kb.rating_matrix,
                                                     args.holdout, seed=seed)
            cfg = TrainConfig(epochs=args.epochs, learning_rate=args.lr,
                              batch_size=args.batch_size, seed=seed,
                              hidden_activation=name,
                              final_activation=args.final_activation,
                              hidden_dims=args.hidden,
                              bottleneck_dim=args.bottleneck)
            val_curve: list[float] = []

            def track(epoch, model):
                mse, _ = _heldout_metrics(model, train_matrix,
                                          kb.rating_matrix, heldout)
                val_curve.append(float(mse))

            _, history = _build_and_train(train_matrix.values, cfg,
                                          args.final_bias, eval_hook=track)
            for epoch, (t_mse, v_mse) in enumerate(zip(history, val_curve)):
                records.append((name, seed, epoch + 1, t_mse, v_mse))
            curves[name].append(val_curve)
            finals[name].append(val_curve[-1])
            log.info("%s seed %d: final val MSE %.4f", name, seed,
                     val_curve[-1])

    csv_path = Path(args.out_csv)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["activation", "seed", "epoch", "train_mse",
                         "val_mse"])
        for rec in records:
            writer.writerow([rec[0], rec[1], rec[2],
                             f"{rec[3]:.6f}", f"{rec[4]:.6f}"])
    print(f"wrote {csv_path}")
    if args.out_png:
        path = plotting.activation_curves_png(curves, args.out_png)
        print(f"wrote {path}")
    for name in names:
        median = float(np.median(finals[name]))
        print(f"{name}\tmedian final validation MSE {median:.4f}")
    return 0


def cmd_recommend(args) -> int:
    kb = kbmod.load(args.kb)
    ratings = args.ratings or []
    profile = UserProfile("cli", GENDER_CODES[args.gender],
                          age_to_category(args.age))
    titles = kb.titles_by_id()
    for i, (anime_id, score) in enumerate(ratings):
        if anime_id not in titles:
            raise DatasetError(f"unknown anime id {anime_id}")
        profile.rate(anime_id, score, i)

    if profile.ratings:
        if kb.model is None or kb.clusters is None:
            raise KnowledgeBaseError("knowledge base has no trained model "
                                     "and clustering; run the pipeline first")
        from .service import predictions_for
        predictions = predictions_for(kb, profile)
    else:
        predictions = {}
    recs = recommend(profile, predictions, kb.clusters, kb.catalog,
                     kb.genre_matrix)

    assignment = kb.clusters.assignment if kb.clusters else {}
    for heading, entries in (("Similar Anime", recs.similar),
                             ("Anime You May Like", recs.may_like)):
        print(heading)
        if not entries:
            print("  (none)")
        for rank, (anime_id, predicted) in enumerate(entries, 1):
            cluster = assignment.get(anime_id, "-")
            print(f"  {rank}. {titles[anime_id].name}  "
                  f"predicted {predicted:.2f}  cluster {cluster}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import load_app
    app = load_app(args.kb)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def cmd_report_feedback(args) -> int:
    kb_path = Path(args.kb)
    if not (kb_path / kbmod.MANIFEST_FILE).is_file():
        raise KnowledgeBaseError(f"{args.kb} is not a knowledge base")
    histories = []
    for session_id in kbmod.list_sessions(kb_path):
        _, feedback = kbmod.load_profile_with_feedback(kb_path, session_id)
        if feedback:
            histories.append(feedback)
    if not histories:
        print("no feedback recorded")
        return 0
    points = []
    print("iteration\tsessions\taverage")
    for i in range(max(len(h) for h in histories)):
        scores = [h[i] for h in histories if len(h) > i]
        average = sum(scores) / len(scores)
        points.append((i + 1, average, len(scores)))
        print(f"{i + 1}\t{len(scores)}\t{average:.4f}")
    if args.out_png:
        path = plotting.feedback_curve_png(points, args.out_png)
        print(f"wrote {path}")
    return 0


# --- parser --------------------------------------------------------------------

def _add_train_flags(p, epochs, lr, batch_size, hidden, bottleneck,
                     with_activation=True):
    p.add_argument("--epochs", type=int, default=epochs)
    p.add_argument("--lr", type=float, default=lr)
    p.add_argument("--batch-size", type=int, default=batch_size)
    p.add_argument("--hidden", type=_hidden_dims, default=hidden,
                   help="comma separated hidden layer widths")
    p.add_argument("--bottleneck", type=int, default=bottleneck)
    if with_activation:
        p.add_argument("--activation", choices=VALID_ACTIVATIONS,
                       default="selu")
    p.add_argument("--final-activation", choices=("relu", "none"),
                   default="relu")
    p.add_argument("--final-bias", type=float, default=0.0,
                   help="initial bias on the output layer; a positive "
                        "value keeps relu outputs alive on tiny models")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="animerec",
        description="Hybrid anime recommender pipeline and reports")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse, cleanse, and persist a corpus")
    p.add_argument("--anime", required=True)
    p.add_argument("--users", required=True)
    p.add_argument("--ratings", required=True)
    p.add_argument("--min-ratings", type=int, default=20)
    p.add_argument("--reference-year", type=int, default=2020)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train-primary", help="train the rating autoencoder")
    p.add_argument("--kb", required=True)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--holdout", type=float, default=0.05)
    _add_train_flags(p, epochs=150, lr=0.01, batch_size=16,
                     hidden=(24,), bottleneck=8)
    p.set_defaults(func=cmd_train_primary)

    p = sub.add_parser("embed", help="build anime embeddings")
    p.add_argument("--kb", required=True)
    p.add_argument("--t", type=int, default=10,
                   help="top-rater threshold (strictly more than t ratings)")
    p.add_argument("--d", type=int, default=4,
                   help="embedding dimensionality")
    p.add_argument("--seed", type=int, default=2)
    p.add_argument("--epochs", type=int, default=120)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--hidden", type=_hidden_dims, default=(16,))
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("cluster", help="spectral clustering with eigengap "
                                       "k selection")
    p.add_argument("--kb", required=True)
    p.add_argument("--k-neighbors", type=int, default=6)
    p.add_argument("--min-cluster-size", type=_int_list, default=[3],
                   help="comma separated values; the first is used for "
                        "the persisted model, all appear in the table")
    p.add_argument("--k-max", type=int, default=10)
    p.add_argument("--k", type=int, default=None,
                   help="force the cluster count instead of the top "
                        "candidate")
    p.add_argument("--seed", type=int, default=1)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("opposites", help="recompute the opposite cluster map")
    p.add_argument("--kb", required=True)
    p.set_defaults(func=cmd_opposites)

    p = sub.add_parser("evaluate", help="baselines vs model on a benchmark "
                                        "dataset")
    p.add_argument("--dataset", default="movielens100k")
    p.add_argument("--path", required=True)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--holdout", type=float, default=0.05)
    p.add_argument("--skip-model", action="store_true",
                   help="baselines only")
    p.add_argument("--out-png", default="reports/evaluate.png")
    _add_train_flags(p, epochs=60, lr=0.002, batch_size=32,
                     hidden=(256,), bottleneck=64)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("evaluate-activations",
                       help="train/validation curves per activation")
    p.add_argument("--kb", required=True)
    p.add_argument("--activations", default="selu,elu,tanh,relu")
    p.add_argument("--seeds", type=_int_list, default=[1, 2, 3, 4, 5])
    p.add_argument("--holdout", type=float, default=0.05)
    p.add_argument("--out-csv", default="reports/activations.csv")
    p.add_argument("--out-png", default="reports/activations.png")
    _add_train_flags(p, epochs=60, lr=0.01, batch_size=16,
                     hidden=(24,), bottleneck=8, with_activation=False)
    p.set_defaults(func=cmd_evaluate_activations)

    p = sub.add_parser("recommend", help="print the two lists for an "
                                         "ad-hoc profile")
    p.add_argument("--kb", required=True)
    p.add_argument("--ratings", type=_ratings_arg, default=[],
                   help='e.g. "1=9,2=8"; empty means cold start')
    p.add_argument("--age", type=int, default=20)
    p.add_argument("--gender", choices=sorted(GENDER_CODES), default="male")
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--kb", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("report-feedback", help="average list score per "
                                               "feedback iteration")
    p.add_argument("--kb", required=True)
    p.add_argument("--out-png", default="reports/feedback.png")
    p.set_defaults(func=cmd_report_feedback)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except SpectralError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (DatasetError, KnowledgeBaseError, EmbeddingError, FilterError,
            AutonetError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
