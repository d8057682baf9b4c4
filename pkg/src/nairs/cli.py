"""Operator entry points: ingest, train, eval, cache, serve, report.

Every stage is reproducible from its inputs and flags alone; `--seed` is
accepted wherever randomness exists. Exit codes: 0 success, 1 runtime
failure (one machine-readable `error: ...` line on stderr), 2 usage.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

from . import retrieval
from .dataset import (
    attach_item_names,
    build_user_histories,
    leave_one_out_split,
    load_dataset,
    load_interactions,
    load_item_names,
    save_dataset,
)
from .errors import NairsError
from .evaluation import EvalConfig, evaluate, model_scorer, popularity_scorer, write_metrics_report
from .model import Hyperparams, load_model, save_model
from .training import fit, write_report

CONFIG_ALIASES = {"lambda": "lam"}


def parse_config_file(path: str) -> dict:
    """key=value lines (# starts a comment); keys are Hyperparams fields."""
    field_types = {f.name: f.type for f in dataclasses.fields(Hyperparams)}
    out: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise NairsError(f"{path}:{line_no}: expected key=value, got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            key = CONFIG_ALIASES.get(key, key)
            if key not in field_types:
                raise NairsError(f"{path}:{line_no}: unknown hyperparameter {key!r}")
            ftype = field_types[key]
            if ftype in (int, "int"):
                out[key] = int(value)
            elif ftype in (float, "float"):
                out[key] = float(value)
            else:
                out[key] = value
    return out


def hyperparams_from_args(args) -> Hyperparams:
    values: dict = {}
    if getattr(args, "config", None):
        values.update(parse_config_file(args.config))
    overrides = {
        "seed": args.seed,
        "epochs": args.epochs,
        "beta": args.beta,
        "d": args.dim,
        "a": args.attention_width,
        "neg_ratio": args.neg_ratio,
        "lr": args.lr,
        "lam": args.lam,
        "batch_size": args.batch_size,
        "fism_alpha": args.fism_alpha,
        "activation": args.activation,
        "optimizer": args.optimizer,
        "variant": args.variant,
    }
    for key, value in overrides.items():
        if value is not None:
            values[key] = value
    hp = Hyperparams(**values)
    hp.validate()
    return hp


def add_train_flags(sub):
    sub.add_argument("--config", help="key=value hyperparameter file")
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--epochs", type=int, default=None)
    sub.add_argument("--beta", type=float, default=None)
    sub.add_argument("--dim", type=int, default=None, help="embedding dimension d")
    sub.add_argument("--attention-width", type=int, default=None)
    sub.add_argument("--neg-ratio", type=int, default=None)
    sub.add_argument("--lr", type=float, default=None)
    sub.add_argument("--lam", "--lambda", dest="lam", type=float, default=None,
                     help="L2 coefficient")
    sub.add_argument("--batch-size", type=int, default=None)
    sub.add_argument("--fism-alpha", type=float, default=None)
    sub.add_argument("--activation", choices=["relu", "tanh"], default=None)
    sub.add_argument("--optimizer", choices=["adam", "sgd"], default=None)
    sub.add_argument("--variant", choices=["nairs", "fism"], default=None,
                     help="which weighting rule to train")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nairs")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("ingest", help="normalize a raw interaction file")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=["movielens_dat", "tsv", "csv"],
                   default="movielens_dat")
    p.add_argument("--names", help="optional item-name metadata file")
    p.add_argument("--names-format", choices=["movielens_dat", "pipe", "tsv", "csv"],
                   default="movielens_dat")
    p.add_argument("--out", required=True, help="normalized dataset directory")

    p = subs.add_parser("train", help="fit a model on the train half of the split")
    p.add_argument("--data", required=True, help="normalized dataset directory")
    p.add_argument("--model", required=True, help="snapshot output path")
    p.add_argument("--report", help="metrics log output (default <model>.report.tsv)")
    p.add_argument("--no-holdout", action="store_true",
                   help="train on every interaction (no leave-one-out split)")
    p.add_argument("--eval-every", type=int, default=0,
                   help="evaluate HR@10/NDCG@10 on the holdout every N epochs")
    add_train_flags(p)

    p = subs.add_parser("eval", help="leave-one-out HR@n / NDCG@n")
    p.add_argument("--data", required=True)
    p.add_argument("--model", help="snapshot (required for nairs/fism scorers)")
    p.add_argument("--scorer", choices=["nairs", "fism", "popularity"], default="nairs")
    p.add_argument("--out", help="metrics report path (default <scorer>.metrics.tsv)")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--negatives", type=int, default=99)
    p.add_argument("--seed", type=int, default=0)

    p = subs.add_parser("cache", help="precompute similarity neighbor lists")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--depth", type=int, default=retrieval.DEFAULT_CACHE_DEPTH)

    p = subs.add_parser("serve", help="run the HTTP API")
    p.add_argument("--data", default=None,
                   help="normalized dataset dir (or NAIRS_DATA)")
    p.add_argument("--model", default=None, help="snapshot path (or NAIRS_MODEL)")
    p.add_argument("--log", default=None,
                   help="append-only behavior log path (or NAIRS_LOG)")
    p.add_argument("--cache", default=None,
                   help="similarity cache path, rebuilt if stale (or NAIRS_CACHE)")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--ui", help="static frontend directory to serve at /")

    p = subs.add_parser("report", help="convert a training report to plot-ready CSV")
    p.add_argument("--train-report", required=True)
    p.add_argument("--out", required=True)
    return parser


def cmd_ingest(args) -> int:
    ds = load_interactions(args.input, args.format)
    if args.names:
        attach_item_names(ds, load_item_names(args.names, args.names_format))
    save_dataset(ds, args.out)
    print(f"ingested {len(ds.interactions)} interactions "
          f"({ds.num_users} users x {ds.num_items} items, "
          f"{ds.duplicates_dropped} duplicates dropped) -> {args.out}")
    return 0


def cmd_train(args) -> int:
    hp = hyperparams_from_args(args)
    ds = load_dataset(args.data)
    if args.no_holdout:
        train, split = ds, None
    else:
        split = leave_one_out_split(ds)
        train = split.train

    eval_hook = None
    if args.eval_every > 0 and split is not None and split.test:
        cfg = EvalConfig(n=10, num_sampled_negatives=99, seed=hp.seed)
        histories = build_user_histories(train)

        def eval_hook(epoch, params):
            if (epoch + 1) % args.eval_every != 0:
                return None
            scorer = model_scorer(params, histories, hp, hp.variant)
            metrics = evaluate(scorer, split, cfg)
            return metrics.hr, metrics.ndcg

    params, report = fit(train, hp, eval_hook=eval_hook)
    metadata = {
        "trained_on": args.data,
        "holdout": not args.no_holdout,
        "num_interactions": len(train.interactions),
        "final_loss": report.rows[-1].loss if report.rows else None,
    }
    save_model(params, hp, args.model, metadata=metadata)
    report_path = args.report or args.model + ".report.tsv"
    write_report(report, report_path)
    print(f"trained {hp.variant} for {hp.epochs} epochs -> {args.model} "
          f"(report: {report_path})")
    return 0


def cmd_eval(args) -> int:
    ds = load_dataset(args.data)
    split = leave_one_out_split(ds)
    cfg = EvalConfig(n=args.n, num_sampled_negatives=args.negatives, seed=args.seed)
    cfg.validate()
    if args.scorer == "popularity":
        scorer = popularity_scorer(split.train)
    else:
        if not args.model:
            raise NairsError(f"--model is required for scorer {args.scorer}")
        params, hp = load_model(args.model)
        histories = build_user_histories(split.train)
        scorer = model_scorer(params, histories, hp, args.scorer)
    metrics = evaluate(scorer, split, cfg)
    out = args.out or f"{args.scorer}.metrics.tsv"
    write_metrics_report(metrics, cfg, out, scorer_name=args.scorer)
    print(f"{args.scorer}: HR@{cfg.n}={metrics.hr:.6f} NDCG@{cfg.n}={metrics.ndcg:.6f} "
          f"({len(metrics.per_user)} users) -> {out}")
    return 0


def cmd_cache(args) -> int:
    params, hp = load_model(args.model)
    ds = load_dataset(args.data)
    histories = build_user_histories(ds)
    cache = retrieval.build_cache(params, histories, hp, depth=args.depth)
    retrieval.save_cache(cache, args.out)
    print(f"cached top-{args.depth} neighbors for {params.num_users} users and "
          f"{params.num_items} items -> {args.out}")
    return 0


def resolve_serve_paths(args) -> tuple[str, str, str, str | None]:
    """Flag values win; NAIRS_DATA / NAIRS_MODEL / NAIRS_LOG / NAIRS_CACHE
    environment variables fill in whatever the flags leave unset."""
    data = args.data or os.environ.get("NAIRS_DATA")
    model = args.model or os.environ.get("NAIRS_MODEL")
    log = args.log or os.environ.get("NAIRS_LOG")
    cache = args.cache or os.environ.get("NAIRS_CACHE")
    missing = [name for name, val in
               (("--data", data), ("--model", model), ("--log", log)) if not val]
    if missing:
        raise NairsError(f"serve needs {', '.join(missing)} (flag or env var)")
    return data, model, log, cache


def cmd_serve(args) -> int:
    import uvicorn

    from .service import ServiceState, create_app

    data, model, log, cache = resolve_serve_paths(args)
    state = ServiceState.from_files(model, data, log, cache)
    app = create_app(state)
    if args.ui:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=args.ui, html=True), name="ui")
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def cmd_report(args) -> int:
    rows = []
    with open(args.train_report, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("epoch\t"):
                continue
            parts = line.split("\t")
            rows.append(parts)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("epoch,loss,hr10,ndcg10\n")
        for parts in rows:
            epoch, loss = parts[0], parts[1]
            hr = parts[2] if len(parts) > 2 else ""
            ndcg = parts[3] if len(parts) > 3 else ""
            fh.write(f"{epoch},{loss},{hr},{ndcg}\n")
    print(f"wrote {len(rows)} epochs -> {args.out}")
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "train": cmd_train,
    "eval": cmd_eval,
    "cache": cmd_cache,
    "serve": cmd_serve,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except NairsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
