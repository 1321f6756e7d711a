"""End-to-end orchestration: two-stage training and batch retrieval."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

from .augment import AugmentationConfig
from .checkpoint import Checkpoint
from .config import ExperimentConfig
from .contrastive import ContrastiveHyper, init_bank, train_reencoder
from .corpus import EmbeddingCorpus
from .errors import ConfigurationError
from .nn import RngStream
from .reencoder import ReEncoder
from .retrieval import (PostProcessConfig, RankedList, retrieve_classified,
                        retrieve_cluster, retrieve_mmr, retrieve_topk)
from .tokens import ClassifierHyper, LabelSpace, TokenClassifier, train_classifier


def train_pipeline(corpus: EmbeddingCorpus, cfg: ExperimentConfig,
                   skip_scl: bool = False, skip_ttc: bool = False) -> Checkpoint:
    """Stage 1 fits the re-encoder under the contrastive loss, stage 2 the
    token classifier on the frozen re-encoded features.

    ``skip_scl`` keeps the re-encoder as the identity (beta = 0);
    ``skip_ttc`` leaves the classifier untrained at its seeded init.
    """
    cfg.validate()
    rng = RngStream(cfg.seed, "pipeline")
    bank = init_bank(corpus.descriptors)
    beta = 0.0 if skip_scl else cfg.beta
    reenc = ReEncoder(corpus.dim, beta=beta, rng=rng.child("reencoder"))

    scl_steps = 0
    if not skip_scl:
        hyper = ContrastiveHyper(
            tau=cfg.tau, alpha=cfg.alpha, lr=cfg.lr_reencoder,
            batch_size=cfg.batch_size, epochs=cfg.scl_epochs,
            max_irrelevant=cfg.max_irrelevant,
            drop_prototype_positives=cfg.drop_prototype_positives,
            drop_prototype_negatives=cfg.drop_prototype_negatives,
            epsilon=cfg.epsilon,
            ema_swap_convention=cfg.ema_swap_convention,
        )
        result = train_reencoder(corpus, reenc, bank, hyper, seed=cfg.seed)
        reenc, bank = result.model, result.bank
        scl_steps = len(result.loss_history)

    label_space = LabelSpace(tuple(sorted(d.category_id
                                          for d in corpus.descriptors)))
    clf = TokenClassifier(corpus.dim, label_space, n_tokens=cfg.n_tokens,
                          layers=cfg.layers, heads=cfg.heads,
                          ffn_mult=cfg.ffn_mult, rng=rng.child("classifier"))
    ttc_steps = 0
    if not skip_ttc:
        aug = AugmentationConfig(cfg.p_query, cfg.p_image, cfg.p_delete,
                                 cfg.p_copy, enabled=cfg.augment)
        history: list[float] = []
        train_classifier(corpus, reenc, clf, aug,
                         ClassifierHyper(lr=cfg.lr_classifier,
                                         batch_size=cfg.batch_size,
                                         epochs=cfg.ttc_epochs),
                         seed=cfg.seed, loss_history=history)
        ttc_steps = len(history)

    return Checkpoint(cfg.to_dict(), reenc, bank, clf,
                      scl_steps=scl_steps, ttc_steps=ttc_steps,
                      rng_labels=["pipeline/reencoder", "pipeline/classifier",
                                  "scl-train", "ttc-train"])


def worker_count(requested: int | None) -> int:
    cap = os.environ.get("DIVRANK_THREADS")
    n = requested if requested and requested > 0 else 1
    if cap is not None:
        n = min(n, max(1, int(cap)))
    return n


def run_retrieval(strategy: str, corpus: EmbeddingCorpus, ckpt: Checkpoint,
                  k: int, per_category: int = 1, lam: float = 0.7,
                  eps: float = 0.4, min_pts: int = 3,
                  sim_threshold: float = 0.5, use_reencoder: bool = True,
                  workers: int | None = None) -> list[RankedList]:
    """Retrieve for every query of the corpus with one strategy."""
    reenc = ckpt.reencoder if use_reencoder else None

    def one(q) -> RankedList:
        if strategy == "colt":
            return retrieve_classified(q, corpus, ckpt.reencoder,
                                       ckpt.classifier,
                                       PostProcessConfig(per_category, k))
        if strategy == "topk":
            return retrieve_topk(q, corpus, k, reencoder=reenc)
        if strategy == "mmr":
            return retrieve_mmr(q, corpus, k, lam=lam,
                                pool_size=ckpt.classifier.n_tokens,
                                reencoder=reenc)
        if strategy == "dbscan":
            return retrieve_cluster(q, corpus, k, eps=eps, min_pts=min_pts,
                                    sim_threshold=sim_threshold,
                                    reencoder=reenc)
        raise ConfigurationError(f"unknown strategy {strategy!r}")

    n = worker_count(workers)
    if n <= 1:
        return [one(q) for q in corpus.queries]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(one, corpus.queries))
