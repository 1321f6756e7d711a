"""Prototype-bank contrastive learning for the re-encoder.

The loss pulls each relevant feature toward the query and toward its own
category prototype, and pushes irrelevant features away from the query and
from every prototype.  With positive dot sums S1 (query/relevant) and S2
(prototype/relevant), and negative sums S3 (query/irrelevant) and S4
(all-prototypes/irrelevant):

    loss = -log[(S1 + S2) / (S1 + S2 + S3 + S4)]

Gradients flow into the re-encoded features only; the query feature and the
bank are treated as constants (the bank has its own EMA dynamics).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import EmbeddingCorpus, CategoryDescriptor
from .errors import ContractViolation, DivergenceError
from .nn import Adam, RngStream
from .reencoder import ReEncoder


@dataclass
class PrototypeBank:
    prototypes: np.ndarray          # (M, d), row order stable across updates
    category_ids: list[int]
    row_of: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.category_ids) != self.prototypes.shape[0]:
            raise ContractViolation("bank row count != category id count")
        if not self.row_of:
            self.row_of = {c: i for i, c in enumerate(self.category_ids)}

    @property
    def size(self) -> int:
        return self.prototypes.shape[0]

    def row(self, category_id: int) -> int:
        if category_id not in self.row_of:
            raise ContractViolation(f"unknown category {category_id}")
        return self.row_of[category_id]

    def copy(self) -> "PrototypeBank":
        return PrototypeBank(self.prototypes.copy(), list(self.category_ids))


def init_bank(descriptors: list[CategoryDescriptor]) -> PrototypeBank:
    """One prototype per category, copied from its description feature."""
    if not descriptors:
        raise ContractViolation("cannot initialize a bank from zero descriptors")
    ids = [d.category_id for d in descriptors]
    if len(set(ids)) != len(ids):
        raise ContractViolation("duplicate category ids in descriptors")
    protos = np.stack([np.asarray(d.description_feature, dtype=np.float64)
                       for d in descriptors])
    return PrototypeBank(protos.copy(), ids)


@dataclass
class ContrastiveBatch:
    """One query's worth of features for the loss."""
    query: np.ndarray               # (d,)
    relevant: np.ndarray            # (R, d), re-encoded
    relevant_categories: list[int]  # global category per relevant row
    irrelevant: np.ndarray          # (I, d), re-encoded; may be empty
    tau: float = 0.2


def contrastive_loss(batch: ContrastiveBatch, bank: PrototypeBank,
                     drop_prototype_positives: bool = False,
                     drop_prototype_negatives: bool = False,
                     ) -> tuple[float, np.ndarray, np.ndarray]:
    """Returns (loss, d_relevant, d_irrelevant).

    The drop flags remove the prototype/relevant positive family or the
    prototype/irrelevant negative family for ablation runs.
    """
    if batch.tau <= 0:
        raise ContractViolation("temperature must be positive")
    rel = np.atleast_2d(np.asarray(batch.relevant, dtype=np.float64))
    irr = np.asarray(batch.irrelevant, dtype=np.float64)
    if irr.size == 0:
        irr = np.zeros((0, rel.shape[1]))
    irr = np.atleast_2d(irr)
    if rel.shape[0] == 0:
        raise ContractViolation("need at least one relevant feature")
    if len(batch.relevant_categories) != rel.shape[0]:
        raise ContractViolation("one category per relevant feature required")
    q = np.asarray(batch.query, dtype=np.float64)
    tau = batch.tau
    rows = [bank.row(c) for c in batch.relevant_categories]
    own_protos = bank.prototypes[rows]                     # (R, d)

    s1 = rel @ q / tau                                     # (R,)
    s2 = np.sum(rel * own_protos, axis=1) / tau            # (R,)
    s3 = irr @ q / tau                                     # (I,)
    s4 = irr @ bank.prototypes.T / tau                     # (I, M)

    pos_parts = [s1] if drop_prototype_positives else [s1, s2]
    neg_parts = [s3] if drop_prototype_negatives else [s3, s4.reshape(-1)]
    pos = np.concatenate(pos_parts)
    neg = np.concatenate(neg_parts) if irr.shape[0] else np.zeros(0)

    m = np.max(np.concatenate([pos, neg])) if neg.size else np.max(pos)
    tp = np.exp(pos - m)
    tn = np.exp(neg - m)
    sum_pos = tp.sum()
    sum_all = sum_pos + tn.sum()
    loss = float(np.log(sum_all) - np.log(sum_pos))
    if not np.isfinite(loss):
        raise DivergenceError("non-finite contrastive loss")

    # d loss / d score: positives 1/sum_all - 1/sum_pos, negatives 1/sum_all
    gp = tp / sum_all - tp / sum_pos
    gn = tn / sum_all

    n_rel = rel.shape[0]
    g1 = gp[:n_rel]
    d_rel = np.outer(g1, q) / tau
    if not drop_prototype_positives:
        g2 = gp[n_rel:]
        d_rel += (g2[:, None] * own_protos) / tau

    d_irr = np.zeros_like(irr)
    if irr.shape[0]:
        n_irr = irr.shape[0]
        g3 = gn[:n_irr]
        d_irr += np.outer(g3, q) / tau
        if not drop_prototype_negatives:
            g4 = gn[n_irr:].reshape(n_irr, bank.size)
            d_irr += (g4 @ bank.prototypes) / tau
    return loss, d_rel, d_irr


def ema_update(bank: PrototypeBank, features: np.ndarray,
               categories: list[int], alpha: float) -> PrototypeBank:
    """B(c) <- alpha * B(c) + (1 - alpha) * feature, sequentially in order."""
    if not (0.0 <= alpha <= 1.0):
        raise ContractViolation("alpha must be in [0, 1]")
    feats = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if feats.shape[0] != len(categories):
        raise ContractViolation("one category per feature required")
    for feat, cat in zip(feats, categories):
        r = bank.row(cat)
        bank.prototypes[r] = alpha * bank.prototypes[r] + (1.0 - alpha) * feat
    return bank


@dataclass
class ContrastiveHyper:
    tau: float = 0.2
    alpha: float = 0.01
    lr: float = 1e-5
    batch_size: int = 32
    epochs: int = 20
    max_irrelevant: int = 64
    drop_prototype_positives: bool = False
    drop_prototype_negatives: bool = False
    # reserved: reported alongside the other constants upstream but unused
    # by any update rule here
    epsilon: float = 0.01
    # flips the EMA roles so the *new* feature gets weight alpha
    ema_swap_convention: bool = False


@dataclass
class ContrastiveResult:
    model: ReEncoder
    bank: PrototypeBank
    loss_history: list[float]


def train_reencoder(corpus: EmbeddingCorpus, model: ReEncoder,
                    bank: PrototypeBank, hyper: ContrastiveHyper,
                    seed: int = 0) -> ContrastiveResult:
    """First training stage: fit the re-encoder under the contrastive loss.

    Each optimizer step averages the loss over a batch of queries; for every
    query all relevant candidates and a uniform sample of at most
    ``max_irrelevant`` irrelevant ones participate.  After the Adam step the
    bank is EMA-updated with the re-encoded relevant features computed
    before the step, in batch order.
    """
    rng = RngStream(seed, "scl-train")
    cat_map = corpus.category_map()
    per_query = []
    for q in corpus.queries:
        rel_ids = corpus.relevant_ids(q)
        irr_ids = corpus.irrelevant_ids(q)
        if not rel_ids:
            continue
        rel_feats = np.stack([corpus.image(i).feature for i in rel_ids])
        irr_feats = (np.stack([corpus.image(i).feature for i in irr_ids])
                     if irr_ids else np.zeros((0, corpus.dim)))
        cats = [cat_map[i] for i in rel_ids]
        per_query.append((q.feature, rel_feats, cats, irr_feats))
    if not per_query:
        raise ContractViolation("corpus has no queries with relevant images")

    opt = Adam(model.store, lr=hyper.lr)
    alpha = hyper.alpha
    if hyper.ema_swap_convention:
        alpha = 1.0 - alpha
    history: list[float] = []
    nq = len(per_query)
    for _ in range(hyper.epochs):
        order = rng.permutation(nq)
        for start in range(0, nq, hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            model.store.zero_grads()
            batch_loss = 0.0
            ema_feats: list[np.ndarray] = []
            ema_cats: list[int] = []
            for qi in idx:
                qfeat, rel_feats, cats, irr_feats = per_query[qi]
                if irr_feats.shape[0] > hyper.max_irrelevant:
                    pick = rng.choice(irr_feats.shape[0],
                                      size=hyper.max_irrelevant)
                    irr_use = irr_feats[np.sort(pick)]
                else:
                    irr_use = irr_feats
                cache: list = []
                rel_hat = model.reencode(rel_feats, cache)
                irr_hat = (model.reencode(irr_use, cache)
                           if irr_use.shape[0] else irr_use)
                loss, d_rel, d_irr = contrastive_loss(
                    ContrastiveBatch(qfeat, rel_hat, cats, irr_hat, hyper.tau),
                    bank,
                    drop_prototype_positives=hyper.drop_prototype_positives,
                    drop_prototype_negatives=hyper.drop_prototype_negatives,
                )
                scale = 1.0 / len(idx)
                model.backward(scale * d_rel, cache[0])
                if irr_use.shape[0]:
                    model.backward(scale * d_irr, cache[1])
                batch_loss += scale * loss
                ema_feats.extend(rel_hat)
                ema_cats.extend(cats)
            if not np.isfinite(batch_loss):
                raise DivergenceError("contrastive training diverged")
            history.append(batch_loss)
            opt.step()
            if ema_feats:
                ema_update(bank, np.stack(ema_feats), ema_cats, alpha)
    return ContrastiveResult(model, bank, history)
