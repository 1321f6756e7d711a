"""Relevance / diversity metrics: P@k, CR@k and their F1.

Cluster recall counts the distinct ground-truth categories represented by
relevant items in the top k, over the query's total ground-truth category
count.  The headline run-level F1 is the harmonic mean of the macro
averaged P and CR; the mean of per-query F1 values is reported alongside.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .corpus import EmbeddingCorpus
from .errors import ContractViolation
from .retrieval import RankedList


def precision_at_k(ranked_ids: list[int], relevant: set[int], k: int) -> float:
    if k < 1:
        raise ContractViolation("k must be >= 1")
    hits = sum(1 for i in ranked_ids[:k] if i in relevant)
    return hits / k


def cluster_recall_at_k(ranked_ids: list[int], category_of: dict[int, int],
                        gt_categories: set[int], k: int) -> float:
    if not gt_categories:
        raise ContractViolation("query has no ground-truth categories")
    seen = {category_of[i] for i in ranked_ids[:k] if i in category_of}
    return len(seen & set(gt_categories)) / len(gt_categories)


def f1_score(p: float, cr: float) -> float:
    if p + cr == 0.0:
        return 0.0
    return 2.0 * p * cr / (p + cr)


@dataclass
class QueryMetrics:
    query_id: int
    p_at: dict[int, float]
    cr_at: dict[int, float]
    f1_at: dict[int, float]


@dataclass
class RunMetrics:
    ks: tuple[int, ...]
    p_macro: dict[int, float]
    cr_macro: dict[int, float]
    f1_harmonic: dict[int, float]      # harmonic mean of the macro averages
    f1_perquery_mean: dict[int, float]
    n_queries: int
    per_query: list[QueryMetrics] = field(default_factory=list)


def evaluate_run(runs: list[RankedList], corpus: EmbeddingCorpus,
                 ks: tuple[int, ...] = (10, 20)) -> RunMetrics:
    seen_queries = set()
    queries = {q.query_id: q for q in corpus.queries}
    category_of = corpus.category_map()
    relevant = set(category_of)

    per_query: list[QueryMetrics] = []
    for run in runs:
        if run.query_id not in queries:
            raise ContractViolation(f"unknown query id {run.query_id}")
        if run.query_id in seen_queries:
            raise ContractViolation(f"query {run.query_id} appears twice")
        seen_queries.add(run.query_id)
        q = queries[run.query_id]
        ids = run.ids()
        p = {k: precision_at_k(ids, relevant, k) for k in ks}
        cr = {k: cluster_recall_at_k(ids, category_of,
                                     set(q.gt_categories), k) for k in ks}
        f1 = {k: f1_score(p[k], cr[k]) for k in ks}
        per_query.append(QueryMetrics(run.query_id, p, cr, f1))

    n = len(per_query)
    if n == 0:
        raise ContractViolation("no runs to evaluate")
    p_macro = {k: float(np.mean([m.p_at[k] for m in per_query])) for k in ks}
    cr_macro = {k: float(np.mean([m.cr_at[k] for m in per_query])) for k in ks}
    return RunMetrics(
        ks=tuple(ks),
        p_macro=p_macro,
        cr_macro=cr_macro,
        f1_harmonic={k: f1_score(p_macro[k], cr_macro[k]) for k in ks},
        f1_perquery_mean={k: float(np.mean([m.f1_at[k] for m in per_query]))
                          for k in ks},
        n_queries=n,
        per_query=per_query,
    )


def write_metrics_csv(path: str, rows: list[tuple[str, RunMetrics]],
                      config_echo: dict | None = None) -> None:
    """One CSV row per (strategy, k)."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        if config_echo:
            for key in sorted(config_echo):
                f.write(f"# {key}={config_echo[key]}\n")
        w = csv.writer(f)
        w.writerow(["strategy", "k", "P", "CR", "F1_harmonic",
                    "F1_perquery_mean", "n_queries"])
        for strategy, rm in rows:
            for k in rm.ks:
                w.writerow([strategy, k,
                            f"{rm.p_macro[k]:.6f}",
                            f"{rm.cr_macro[k]:.6f}",
                            f"{rm.f1_harmonic[k]:.6f}",
                            f"{rm.f1_perquery_mean[k]:.6f}",
                            rm.n_queries])
