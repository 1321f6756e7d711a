"""Token sequence construction and transformer token classification.

The query feature plus the N candidate features most similar to it form a
token sequence; a transformer encoder stack with a linear head classifies
every token into a global category or one of two special classes
(irrelevant, query).  Sequences shorter than N are padded with zero tokens
labelled irrelevant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import EmbeddingCorpus
from .errors import ContractViolation, DivergenceError
from .nn import (Adam, ParamStore, RngStream, _xavier, log_softmax, softmax,
                 init_transformer_params, transformer_encoder_forward,
                 transformer_encoder_backward)
from .reencoder import ReEncoder
from .augment import AugmentationConfig, augment_sequence


@dataclass(frozen=True)
class LabelSpace:
    """Global category classes 0..M-1 plus IRRELEVANT (M) and QUERY (M+1)."""
    category_ids: tuple[int, ...]
    class_of: dict[int, int] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(set(self.category_ids)) != len(self.category_ids):
            raise ContractViolation("duplicate category ids in label space")
        object.__setattr__(self, "class_of",
                           {c: i for i, c in enumerate(self.category_ids)})

    @property
    def n_categories(self) -> int:
        return len(self.category_ids)

    @property
    def irrelevant(self) -> int:
        return self.n_categories

    @property
    def query(self) -> int:
        return self.n_categories + 1

    @property
    def n_classes(self) -> int:
        return self.n_categories + 2

    def category_of(self, cls: int) -> int | None:
        if 0 <= cls < self.n_categories:
            return self.category_ids[cls]
        return None


@dataclass
class TokenSequence:
    tokens: np.ndarray            # (N+1, d); row 0 is the query
    image_ids: list[int | None]   # length N; None marks padding
    sims: np.ndarray              # (N,); -inf on padding rows
    labels: np.ndarray | None = None  # (N+1,) class indices, training only

    @property
    def n_image_rows(self) -> int:
        return len(self.image_ids)


def build_sequence(h_q: np.ndarray, features: np.ndarray, image_ids: list[int],
                   n_tokens: int, label_space: LabelSpace | None = None,
                   category_map: dict[int, int] | None = None) -> TokenSequence:
    """Keep the ``n_tokens`` candidates most similar to the query, sorted by
    descending cosine similarity, and prepend the query row.

    With a label space, relevant candidates (present in ``category_map``)
    get their category class, everything else the irrelevant class, and the
    query row its own class.
    """
    feats = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if feats.shape[0] != len(image_ids) or feats.shape[0] == 0:
        raise ContractViolation("need one feature per candidate id")
    q = np.asarray(h_q, dtype=np.float64)
    qn = np.linalg.norm(q)
    norms = np.linalg.norm(feats, axis=1)
    sims = feats @ q / (norms * qn)
    # stable order: similarity descending, then lower image id
    order = sorted(range(len(image_ids)), key=lambda i: (-sims[i], image_ids[i]))
    order = order[:n_tokens]

    d = feats.shape[1]
    tokens = np.zeros((n_tokens + 1, d))
    tokens[0] = q
    out_ids: list[int | None] = [None] * n_tokens
    out_sims = np.full(n_tokens, -np.inf)
    for slot, i in enumerate(order):
        tokens[slot + 1] = feats[i]
        out_ids[slot] = image_ids[i]
        out_sims[slot] = sims[i]

    labels = None
    if label_space is not None:
        if category_map is None:
            category_map = {}
        labels = np.full(n_tokens + 1, label_space.irrelevant, dtype=np.int64)
        labels[0] = label_space.query
        for slot, i in enumerate(order):
            cat = category_map.get(image_ids[i])
            if cat is not None:
                labels[slot + 1] = label_space.class_of[cat]
    return TokenSequence(tokens, out_ids, out_sims, labels)


class TokenClassifier:
    """Transformer encoder stack plus a per-token linear classifier."""

    def __init__(self, dim: int, label_space: LabelSpace, n_tokens: int = 200,
                 layers: int = 8, heads: int = 4, ffn_mult: int = 4,
                 rng: RngStream | None = None):
        if rng is None:
            rng = RngStream(0, "ttc-init")
        self.dim = dim
        self.label_space = label_space
        self.n_tokens = n_tokens
        self.layers = layers
        self.heads = heads
        self.ffn_dim = ffn_mult * dim
        self.store = ParamStore()
        init_transformer_params(self.store, dim, layers, heads, self.ffn_dim, rng)
        self.store.add("head_w", _xavier(rng, dim, label_space.n_classes))
        self.store.add("head_b", np.zeros(label_space.n_classes))

    def logits(self, tokens: np.ndarray, cache: list | None = None) -> np.ndarray:
        x = np.asarray(tokens, dtype=np.float64)
        if x.shape[1] != self.dim:
            raise ContractViolation(
                f"token dim {x.shape[1]} != model dim {self.dim}"
            )
        enc = transformer_encoder_forward(x, self.store, self.layers,
                                          self.heads, cache=cache)
        if cache is not None:
            cache.append(enc)
        return enc @ self.store["head_w"] + self.store["head_b"]

    def backward(self, dlogits: np.ndarray, cache: list) -> None:
        enc = cache[-1]
        self.store.accumulate("head_w", enc.T @ dlogits)
        self.store.accumulate("head_b", dlogits.sum(axis=0))
        denc = dlogits @ self.store["head_w"].T
        transformer_encoder_backward(denc, self.store, self.layers,
                                     self.heads, cache[:-1])


def classify_tokens(seq: TokenSequence, model: TokenClassifier) -> np.ndarray:
    """Per-token class probabilities; each row sums to 1."""
    return softmax(model.logits(seq.tokens), axis=-1)


def ttc_loss(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Summed (not averaged) cross entropy over all tokens, on logits."""
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ContractViolation("one label per token required")
    if np.any(labels < 0) or np.any(labels >= c):
        raise ContractViolation("label out of range")
    ls = log_softmax(logits, axis=-1)
    loss = float(-ls[np.arange(n), labels].sum())
    if not np.isfinite(loss):
        raise DivergenceError("non-finite classification loss")
    dlogits = np.exp(ls)
    dlogits[np.arange(n), labels] -= 1.0
    return loss, dlogits


@dataclass
class ClassifierHyper:
    lr: float = 1e-4
    batch_size: int = 32
    epochs: int = 20


def train_classifier(corpus: EmbeddingCorpus, reencoder: ReEncoder,
                     model: TokenClassifier, aug: AugmentationConfig,
                     hyper: ClassifierHyper, seed: int = 0,
                     loss_history: list[float] | None = None) -> TokenClassifier:
    """Second training stage: fit the token classifier on frozen features."""
    rng = RngStream(seed, "ttc-train")
    aug_rng = rng.child("augment")
    cat_map = corpus.category_map()
    ls = model.label_space

    base_sequences: list[TokenSequence] = []
    for q in corpus.queries:
        ids = q.candidate_ids
        if not ids:
            continue
        feats = np.stack([corpus.image(i).feature for i in ids])
        feats_hat = reencoder.reencode(feats)
        base_sequences.append(
            build_sequence(q.feature, feats_hat, ids, model.n_tokens,
                           label_space=ls, category_map=cat_map))
    if not base_sequences:
        raise ContractViolation("corpus has no queries with candidates")

    opt = Adam(model.store, lr=hyper.lr)
    nq = len(base_sequences)
    for _ in range(hyper.epochs):
        order = rng.permutation(nq)
        for start in range(0, nq, hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            model.store.zero_grads()
            batch_loss = 0.0
            for qi in idx:
                seq = augment_sequence(base_sequences[qi], aug, aug_rng,
                                       irrelevant_class=ls.irrelevant)
                cache: list = []
                logits = model.logits(seq.tokens, cache)
                loss, dlogits = ttc_loss(logits, seq.labels)
                scale = 1.0 / len(idx)
                model.backward(scale * dlogits, cache)
                batch_loss += scale * loss
            if not np.isfinite(batch_loss):
                raise DivergenceError("classifier training diverged")
            if loss_history is not None:
                loss_history.append(batch_loss)
            opt.step()
    return model
