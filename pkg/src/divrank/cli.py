"""Command-line interface.

Subcommands: gen, train, retrieve, eval, ablate, export.  Every run is
reproducible from (config file + seed); the effective configuration is
echoed into output artifacts.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

import numpy as np

from . import corpus as corpus_mod
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ExperimentConfig, load_config
from .corpus import GeneratorConfig, generate_synthetic, load_corpus, \
    save_corpus, split_corpus
from .errors import DivrankError
from .metrics import RunMetrics, evaluate_run, write_metrics_csv
from .pipeline import run_retrieval, train_pipeline
from .retrieval import RankedList, RankedItem


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--seed", type=int)
    for name, typ in (("tau", float), ("alpha", float), ("beta", float),
                      ("epsilon", float),
                      ("lr-reencoder", float), ("lr-classifier", float),
                      ("scl-epochs", int), ("ttc-epochs", int),
                      ("n-tokens", int), ("layers", int), ("heads", int),
                      ("ffn-mult", int), ("batch-size", int),
                      ("max-irrelevant", int),
                      ("p-query", float), ("p-image", float),
                      ("p-delete", float), ("p-copy", float)):
        p.add_argument(f"--{name}", type=typ, dest=name.replace("-", "_"))


def _config_from_args(args) -> ExperimentConfig:
    overrides = {}
    for f in dataclasses.fields(ExperimentConfig):
        if hasattr(args, f.name) and getattr(args, f.name) is not None:
            overrides[f.name] = getattr(args, f.name)
    if getattr(args, "no_da", False):
        overrides["augment"] = False
    if getattr(args, "drop_pair2", False):
        overrides["drop_prototype_positives"] = True
    if getattr(args, "drop_pair4", False):
        overrides["drop_prototype_negatives"] = True
    return load_config(getattr(args, "config", None), overrides)


def cmd_gen(args) -> int:
    gcfg = GeneratorConfig(
        n_queries=args.queries + args.test_queries,
        dim=args.dim,
        mean_categories=args.mean_categories,
        zipf_s=args.zipf,
        sigma=args.sigma,
        relevant_per_query=args.relevant_per_query,
        irrelevant_per_query=args.pool,
        n_categories=args.global_categories,
    )
    corpus = generate_synthetic(gcfg, args.seed)
    echo = {"generator": dataclasses.asdict(gcfg), "seed": args.seed}
    base = args.output
    if base.endswith(".manifest.jsonl"):
        base = base[: -len(".manifest.jsonl")]
    if args.test_queries > 0:
        train, test = split_corpus(corpus, args.test_queries)
        save_corpus(train, base, extra_header=echo)
        save_corpus(test, base + ".test", extra_header=echo)
        print(f"wrote {base}.manifest.jsonl ({len(train.queries)} queries) and "
              f"{base}.test.manifest.jsonl ({len(test.queries)} queries)")
    else:
        save_corpus(corpus, base, extra_header=echo)
        print(f"wrote {base}.manifest.jsonl ({len(corpus.queries)} queries)")
    return 0


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    corpus = load_corpus(args.corpus)
    ckpt = train_pipeline(corpus, cfg, skip_scl=args.skip_scl,
                          skip_ttc=args.skip_ttc)
    save_checkpoint(ckpt, args.output)
    print(f"wrote {args.output} (contrastive steps: {ckpt.scl_steps}, "
          f"classifier steps: {ckpt.ttc_steps})")
    return 0


def _write_runs(path: str, runs: list[RankedList], config_echo: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps({"_config": config_echo}) + "\n")
        for run in runs:
            f.write(json.dumps({
                "query_id": run.query_id,
                "strategy": run.strategy,
                "k": run.k,
                "flagged": run.flagged,
                "items": [{"image_id": it.image_id, "rank": it.rank,
                           "sim": it.sim, "pred_category": it.pred_category}
                          for it in run.items],
            }) + "\n")


def read_runs(path: str) -> list[RankedList]:
    runs = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            obj = json.loads(line)
            if "_config" in obj:
                continue
            run = RankedList(obj["query_id"], obj["strategy"], obj["k"],
                             flagged=obj.get("flagged", False))
            run.items = [RankedItem(it["image_id"], it["rank"], it["sim"],
                                    it.get("pred_category"))
                         for it in obj["items"]]
            runs.append(run)
    return runs


def cmd_retrieve(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    corpus = load_corpus(args.corpus)
    runs = run_retrieval(args.strategy, corpus, ckpt, k=args.k,
                         per_category=args.per_category,
                         lam=args.lambda_mmr, eps=args.eps,
                         min_pts=args.min_pts,
                         sim_threshold=args.sim_threshold,
                         use_reencoder=not args.raw_features,
                         workers=args.workers)
    echo = {"strategy": args.strategy, "k": args.k,
            "per_category": args.per_category, "lambda_mmr": args.lambda_mmr,
            "eps": args.eps, "min_pts": args.min_pts,
            "sim_threshold": args.sim_threshold,
            "raw_features": args.raw_features,
            "checkpoint_config": ckpt.config}
    _write_runs(args.output, runs, echo)
    print(f"wrote {args.output} ({len(runs)} queries)")
    return 0


def cmd_eval(args) -> int:
    corpus = load_corpus(args.corpus)
    rows: list[tuple[str, RunMetrics]] = []
    echo: dict = {}
    for path in args.runs:
        runs = read_runs(path)
        if not runs:
            continue
        rm = evaluate_run(runs, corpus, ks=tuple(args.k))
        rows.append((runs[0].strategy, rm))
        echo[f"runs:{runs[0].strategy}"] = path
    write_metrics_csv(args.output, rows, config_echo=echo)
    for strategy, rm in rows:
        for k in rm.ks:
            print(f"{strategy} @ {k}: P={rm.p_macro[k]:.4f} "
                  f"CR={rm.cr_macro[k]:.4f} F1={rm.f1_harmonic[k]:.4f}")
    print(f"wrote {args.output}")
    return 0


def cmd_ablate(args) -> int:
    import csv

    cfg = _config_from_args(args)
    train = load_corpus(args.corpus)
    test = load_corpus(args.test_corpus) if args.test_corpus else train
    values = args.values.split(",") if args.values else None

    rows = []

    def evaluate_ckpt(ckpt: Checkpoint, per_category: int) -> RunMetrics:
        runs = run_retrieval("colt", test, ckpt, k=cfg.k,
                             per_category=per_category, workers=args.workers)
        return evaluate_run(runs, test, ks=(10, cfg.k))

    if args.axis == "X":
        ckpt = train_pipeline(train, cfg)
        for v in (values or ["1", "2", "3"]):
            rows.append((f"X={v}", evaluate_ckpt(ckpt, int(v))))
    elif args.axis == "L":
        for v in (values or ["6", "8", "10"]):
            c = dataclasses.replace(cfg, layers=int(v))
            rows.append((f"L={v}", evaluate_ckpt(train_pipeline(train, c),
                                                 cfg.per_category)))
    elif args.axis == "N":
        for v in (values or ["100", "150", "200"]):
            c = dataclasses.replace(cfg, n_tokens=int(v))
            rows.append((f"N={v}", evaluate_ckpt(train_pipeline(train, c),
                                                 cfg.per_category)))
    elif args.axis == "scl-pairs":
        variants = [("all-pairs", {}),
                    ("no-prototype-positives",
                     {"drop_prototype_positives": True}),
                    ("no-prototype-negatives",
                     {"drop_prototype_negatives": True})]
        for name, kw in variants:
            c = dataclasses.replace(cfg, **kw)
            rows.append((name, evaluate_ckpt(train_pipeline(train, c),
                                             cfg.per_category)))
    elif args.axis == "da":
        for name, on in (("with-da", True), ("without-da", False)):
            c = dataclasses.replace(cfg, augment=on)
            rows.append((name, evaluate_ckpt(train_pipeline(train, c),
                                             cfg.per_category)))
    else:
        print(f"unknown ablation axis {args.axis!r}", file=sys.stderr)
        return 2

    with open(args.output, "w", encoding="utf-8", newline="") as f:
        for key, value in sorted(cfg.to_dict().items()):
            f.write(f"# {key}={value}\n")
        w = csv.writer(f)
        w.writerow(["variant", "k", "P", "CR", "F1_harmonic",
                    "F1_perquery_mean"])
        for name, rm in rows:
            for k in rm.ks:
                w.writerow([name, k, f"{rm.p_macro[k]:.6f}",
                            f"{rm.cr_macro[k]:.6f}",
                            f"{rm.f1_harmonic[k]:.6f}",
                            f"{rm.f1_perquery_mean[k]:.6f}"])
            print(f"{name}: P@{cfg.k}={rm.p_macro[cfg.k]:.4f} "
                  f"CR@{cfg.k}={rm.cr_macro[cfg.k]:.4f} "
                  f"F1@{cfg.k}={rm.f1_harmonic[cfg.k]:.4f}")
    print(f"wrote {args.output}")
    return 0


def _pca_2d(x: np.ndarray) -> np.ndarray:
    centered = x - x.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    return centered @ vt[:2].T


def cmd_export(args) -> int:
    import csv

    ckpt = load_checkpoint(args.checkpoint)
    corpus = load_corpus(args.corpus)
    raw = np.stack([im.feature for im in corpus.images])
    reencoded = ckpt.reencoder.reencode(raw)
    raw2 = _pca_2d(raw)
    re2 = _pca_2d(reencoded)
    with open(args.output, "w", encoding="utf-8", newline="") as f:
        f.write(f"# checkpoint={args.checkpoint}\n# corpus={args.corpus}\n")
        w = csv.writer(f)
        w.writerow(["kind", "image_id", "query_id", "category", "relevant",
                    "x", "y"])
        for coords, kind in ((raw2, "raw"), (re2, "reencoded")):
            for im, (x, y) in zip(corpus.images, coords):
                w.writerow([kind, im.image_id, im.query_id, im.category,
                            int(im.relevant), f"{x:.6f}", f"{y:.6f}"])
    print(f"wrote {args.output} ({2 * len(corpus.images)} rows)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="divrank",
        description="diversity-aware embedding retrieval pipeline")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic corpus")
    g.add_argument("--queries", type=int, required=True)
    g.add_argument("--test-queries", type=int, default=0)
    g.add_argument("--dim", type=int, default=64)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--mean-categories", type=float, default=11.8)
    g.add_argument("--zipf", type=float, default=1.2)
    g.add_argument("--sigma", type=float, default=0.15)
    g.add_argument("--relevant-per-query", type=int, default=60)
    g.add_argument("--pool", type=int, default=20,
                   help="irrelevant images per query")
    g.add_argument("--global-categories", type=int)
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="two-stage training")
    t.add_argument("--corpus", required=True)
    t.add_argument("--skip-scl", action="store_true",
                   help="identity re-encoder (stage 1 skipped)")
    t.add_argument("--skip-ttc", action="store_true",
                   help="leave the token classifier untrained")
    t.add_argument("--no-da", action="store_true",
                   help="disable token augmentation")
    t.add_argument("--drop-pair2", action="store_true",
                   help="drop the prototype/relevant positive pair family")
    t.add_argument("--drop-pair4", action="store_true",
                   help="drop the prototype/irrelevant negative pair family")
    _add_config_flags(t)
    t.add_argument("-o", "--output", required=True)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("retrieve", help="rank candidates for every query")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--corpus", required=True)
    r.add_argument("--strategy", required=True,
                   choices=["colt", "topk", "mmr", "dbscan"])
    r.add_argument("--k", type=int, default=20)
    r.add_argument("-X", "--per-category", type=int, default=1)
    r.add_argument("--lambda-mmr", type=float, default=0.7)
    r.add_argument("--eps", type=float, default=0.4)
    r.add_argument("--min-pts", type=int, default=3)
    r.add_argument("--sim-threshold", type=float, default=0.5)
    r.add_argument("--raw-features", action="store_true",
                   help="skip the re-encoder for the baselines")
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("-o", "--output", required=True)
    r.set_defaults(func=cmd_retrieve)

    e = sub.add_parser("eval", help="metrics CSV from run files")
    e.add_argument("--corpus", required=True)
    e.add_argument("--runs", nargs="+", required=True)
    e.add_argument("--k", type=int, nargs="+", default=[10, 20])
    e.add_argument("-o", "--output", required=True)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="parameter sweeps")
    a.add_argument("--corpus", required=True)
    a.add_argument("--test-corpus")
    a.add_argument("--axis", required=True,
                   choices=["X", "L", "N", "scl-pairs", "da"])
    a.add_argument("--values")
    a.add_argument("--workers", type=int, default=1)
    _add_config_flags(a)
    a.add_argument("-o", "--output", required=True)
    a.set_defaults(func=cmd_ablate)

    x = sub.add_parser("export", help="2-D PCA of raw vs re-encoded features")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--corpus", required=True)
    x.add_argument("-o", "--output", required=True)
    x.set_defaults(func=cmd_export)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except DivrankError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
