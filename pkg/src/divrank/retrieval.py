"""Final list generation: category-aware selection plus three baselines.

Strategies:
  * classified selection - token classifier predictions grouped by category,
    taking the X most query-similar images per category in rounds;
  * plain top-k by cosine similarity;
  * MMR greedy re-ranking;
  * relevance filter + DBSCAN clustering with round-robin selection.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import EmbeddingCorpus, QueryRecord, cosine_similarity
from .errors import ContractViolation, ConfigurationError
from .reencoder import ReEncoder
from .tokens import TokenClassifier, TokenSequence, build_sequence, classify_tokens


@dataclass
class RankedItem:
    image_id: int
    rank: int
    sim: float
    pred_category: int | None = None


@dataclass
class RankedList:
    query_id: int
    strategy: str
    k: int
    items: list[RankedItem] = field(default_factory=list)
    flagged: bool = False

    def ids(self) -> list[int]:
        return [it.image_id for it in self.items]


@dataclass
class PostProcessConfig:
    per_category: int = 1  # images taken from each category per round
    k: int = 20

    def __post_init__(self):
        if self.per_category < 1:
            raise ConfigurationError("per_category must be >= 1")
        if self.k < self.per_category:
            raise ConfigurationError("k must be >= per_category")


def post_process(probs: np.ndarray, seq: TokenSequence,
                 cfg: PostProcessConfig, query_id: int = -1,
                 strategy: str = "colt") -> RankedList:
    """Assemble the final list from per-token class predictions.

    Image tokens predicted irrelevant are discarded; categories are ordered
    by the query similarity of their best member; each round takes the next
    ``per_category`` most similar images per category until k items are
    collected, then any shortfall is filled from the discarded tokens by
    similarity.  Ties break toward higher similarity, then lower image id.
    """
    n_classes = probs.shape[1]
    irrelevant_class = n_classes - 2  # layout: categories, irrelevant, query
    entries = []
    for i, iid in enumerate(seq.image_ids):
        if iid is None:
            continue
        pred = int(np.argmax(probs[i + 1]))
        entries.append((iid, float(seq.sims[i]), pred))

    kept = [e for e in entries if e[2] < irrelevant_class]
    discarded = [e for e in entries if e[2] >= irrelevant_class]

    out = RankedList(query_id, strategy, cfg.k)
    if not kept:
        out.flagged = True
        ordered = sorted(entries, key=lambda e: (-e[1], e[0]))
        for iid, sim, _ in ordered[:cfg.k]:
            out.items.append(RankedItem(iid, len(out.items) + 1, sim, None))
        return out

    groups: dict[int, list[tuple[int, float, int]]] = {}
    for e in kept:
        groups.setdefault(e[2], []).append(e)
    for g in groups.values():
        g.sort(key=lambda e: (-e[1], e[0]))
    cat_order = sorted(groups, key=lambda c: (-groups[c][0][1], groups[c][0][0]))

    selected: list[tuple[int, float, int]] = []
    round_i = 0
    x = cfg.per_category
    while len(selected) < cfg.k:
        took = False
        for c in cat_order:
            chunk = groups[c][round_i * x:(round_i + 1) * x]
            for e in chunk:
                if len(selected) < cfg.k:
                    selected.append(e)
                    took = True
        if not took:
            break
        round_i += 1
    if len(selected) < cfg.k:
        for e in sorted(discarded, key=lambda e: (-e[1], e[0])):
            if len(selected) >= cfg.k:
                break
            selected.append((e[0], e[1], -1))

    for iid, sim, pred in selected:
        out.items.append(RankedItem(iid, len(out.items) + 1, sim,
                                    None if pred < 0 else pred))
    return out


def _candidate_features(query: QueryRecord, corpus: EmbeddingCorpus,
                        reencoder: ReEncoder | None):
    ids = list(query.candidate_ids)
    feats = np.stack([corpus.image(i).feature for i in ids])
    if reencoder is not None:
        feats = reencoder.reencode(feats)
    sims = feats @ query.feature / (
        np.linalg.norm(feats, axis=1) * np.linalg.norm(query.feature))
    return ids, feats, sims


def retrieve_classified(query: QueryRecord, corpus: EmbeddingCorpus,
                        reencoder: ReEncoder, classifier: TokenClassifier,
                        cfg: PostProcessConfig) -> RankedList:
    """Re-encode, build the token sequence, classify, select per category."""
    ids, feats, _ = _candidate_features(query, corpus, reencoder)
    seq = build_sequence(query.feature, feats, ids, classifier.n_tokens)
    probs = classify_tokens(seq, classifier)
    run = post_process(probs, seq, cfg, query_id=query.query_id)
    # report predictions as global category ids
    ls = classifier.label_space
    for it in run.items:
        if it.pred_category is not None:
            it.pred_category = ls.category_of(it.pred_category)
    return run


def retrieve_topk(query: QueryRecord, corpus: EmbeddingCorpus, k: int,
                  reencoder: ReEncoder | None = None) -> RankedList:
    ids, _, sims = _candidate_features(query, corpus, reencoder)
    order = sorted(range(len(ids)), key=lambda i: (-sims[i], ids[i]))[:k]
    out = RankedList(query.query_id, "topk", k,
                     flagged=len(ids) < k)
    for rank, i in enumerate(order, 1):
        out.items.append(RankedItem(ids[i], rank, float(sims[i])))
    return out


def retrieve_mmr(query: QueryRecord, corpus: EmbeddingCorpus, k: int,
                 lam: float = 0.7, pool_size: int = 200,
                 reencoder: ReEncoder | None = None) -> RankedList:
    """Greedy max of lam * sim(q, d) - (1 - lam) * max sim(d, selected)."""
    if not (0.0 <= lam <= 1.0):
        raise ContractViolation("MMR lambda must be in [0, 1]")
    ids, feats, sims = _candidate_features(query, corpus, reencoder)
    pool = sorted(range(len(ids)), key=lambda i: (-sims[i], ids[i]))[:pool_size]
    unit = feats / np.linalg.norm(feats, axis=1, keepdims=True)

    selected: list[int] = []
    remaining = list(pool)
    out = RankedList(query.query_id, "mmr", k)
    while remaining and len(selected) < k:
        best, best_score = None, None
        for i in remaining:
            if selected:
                redundancy = max(float(unit[i] @ unit[j]) for j in selected)
                score = lam * sims[i] - (1.0 - lam) * redundancy
            else:
                score = lam * sims[i]
            key = (score, sims[i], -ids[i])
            if best is None or key > best_score:
                best, best_score = i, key
        selected.append(best)
        remaining.remove(best)
        out.items.append(RankedItem(ids[best], len(selected), float(sims[best])))
    return out


def dbscan(points: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """Classic density clustering; returns labels, -1 marks noise.

    Points are processed in index order; border points join the first
    cluster whose expansion reaches them.
    """
    if eps <= 0:
        raise ConfigurationError("eps must be > 0")
    if min_pts < 1:
        raise ConfigurationError("min_pts must be >= 1")
    n = points.shape[0]
    d2 = np.sum((points[:, None, :] - points[None, :, :]) ** 2, axis=-1)
    neighbors = [np.nonzero(d2[i] <= eps * eps)[0] for i in range(n)]
    labels = np.full(n, -2)  # -2 unvisited, -1 noise
    cluster = -1
    for i in range(n):
        if labels[i] != -2:
            continue
        if len(neighbors[i]) < min_pts:
            labels[i] = -1
            continue
        cluster += 1
        labels[i] = cluster
        frontier = list(neighbors[i])
        j = 0
        while j < len(frontier):
            p = frontier[j]
            j += 1
            if labels[p] == -1:
                labels[p] = cluster
            if labels[p] != -2:
                continue
            labels[p] = cluster
            if len(neighbors[p]) >= min_pts:
                frontier.extend(neighbors[p])
    labels[labels == -2] = -1
    return labels


def retrieve_cluster(query: QueryRecord, corpus: EmbeddingCorpus, k: int,
                     eps: float = 0.4, min_pts: int = 3,
                     sim_threshold: float = 0.5,
                     reencoder: ReEncoder | None = None) -> RankedList:
    """Filter by query similarity, cluster the rest, round-robin per cluster.

    Clusters are ordered by their most query-similar member; noise points
    form a final pseudo-cluster.
    """
    ids, feats, sims = _candidate_features(query, corpus, reencoder)
    keep = [i for i in range(len(ids)) if sims[i] >= sim_threshold]
    out = RankedList(query.query_id, "dbscan", k)
    if not keep:
        out.flagged = True
        return out
    labels = dbscan(feats[keep], eps, min_pts)

    clusters: dict[int, list[int]] = {}
    for pos, i in enumerate(keep):
        clusters.setdefault(int(labels[pos]), []).append(i)
    for members in clusters.values():
        members.sort(key=lambda i: (-sims[i], ids[i]))
    real = sorted((c for c in clusters if c != -1),
                  key=lambda c: (-sims[clusters[c][0]], ids[clusters[c][0]]))
    order = real + ([-1] if -1 in clusters else [])

    round_i = 0
    while len(out.items) < k:
        took = False
        for c in order:
            members = clusters[c]
            if round_i < len(members) and len(out.items) < k:
                i = members[round_i]
                out.items.append(
                    RankedItem(ids[i], len(out.items) + 1, float(sims[i]),
                               int(c) if c != -1 else None))
                took = True
        if not took:
            break
        round_i += 1
    return out
