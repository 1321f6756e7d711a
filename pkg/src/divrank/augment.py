"""Token-wise augmentation for classifier training.

Four kernel operations applied in a fixed order to a labelled token
sequence: query mixup, per-token deletion, per-token copy, and per-token
image mixup.  Mixup draws come from Beta(1, 1), i.e. Uniform(0, 1); the
first operand always keeps the larger coefficient.  Deletion replaces a
token with a zero pad row so the sequence shape stays static.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ContractViolation
from .nn import RngStream


@dataclass
class AugmentationConfig:
    p_query: float = 0.5   # query mixup probability (per sequence)
    p_image: float = 0.2   # image mixup probability (per relevant token)
    p_delete: float = 0.2  # deletion probability (per token)
    p_copy: float = 0.2    # copy probability (per surviving token)
    enabled: bool = True

    def __post_init__(self):
        for name in ("p_query", "p_image", "p_delete", "p_copy"):
            p = getattr(self, name)
            if not (0.0 <= p <= 1.0):
                raise ConfigurationError(f"{name}={p} outside [0, 1]")


def mix_dominant(primary: np.ndarray, secondary: np.ndarray,
                 lam: float) -> np.ndarray:
    """max(lam, 1-lam) * primary + min(lam, 1-lam) * secondary."""
    if not (0.0 <= lam <= 1.0):
        raise ContractViolation("mixup coefficient must be in [0, 1]")
    hi = max(lam, 1.0 - lam)
    return hi * primary + (1.0 - hi) * secondary


def new_stats() -> dict[str, int]:
    return {"sequences": 0, "query_mixed": 0,
            "tokens": 0, "deleted": 0,
            "copy_candidates": 0, "copied": 0,
            "image_candidates": 0, "image_mixed": 0}


def augment_sequence(seq, cfg: AugmentationConfig, rng: RngStream,
                     irrelevant_class: int, stats: dict | None = None):
    """Returns an augmented copy of ``seq``; ``seq`` itself is untouched.

    Requires training labels.  After copy insertion the sequence is
    truncated back to its budget keeping the most query-similar rows, then
    padded with zero rows labelled irrelevant.
    """
    from .tokens import TokenSequence  # local import to avoid a cycle

    if seq.labels is None:
        raise ContractViolation("augmentation requires a labelled sequence")
    if not cfg.enabled:
        return seq

    n = seq.n_image_rows
    query = seq.tokens[0].copy()
    # (token, label, sim, image_id) entries in similarity order
    entries = [(seq.tokens[i + 1].copy(), int(seq.labels[i + 1]),
                float(seq.sims[i]), seq.image_ids[i])
               for i in range(n)]
    real = [e for e in entries if e[3] is not None]
    relevant_idx = [i for i, e in enumerate(entries)
                    if e[3] is not None and e[1] < irrelevant_class]

    if stats is not None:
        stats["sequences"] += 1
        stats["tokens"] += len(real)

    # 1. query mixup with one uniformly chosen relevant token
    if relevant_idx and rng.random() < cfg.p_query:
        pick = relevant_idx[int(rng.integers(len(relevant_idx)))]
        query = mix_dominant(query, entries[pick][0], float(rng.random()))
        if stats is not None:
            stats["query_mixed"] += 1

    # 2. deletion: token becomes a pad row
    survivors = []
    for tok, label, sim, iid in entries:
        if iid is not None and rng.random() < cfg.p_delete:
            if stats is not None:
                stats["deleted"] += 1
            continue
        survivors.append([tok, label, sim, iid])

    # 3. copy: duplicate appended adjacent to its source
    copied = []
    for entry in survivors:
        copied.append(entry)
        if entry[3] is not None:
            if stats is not None:
                stats["copy_candidates"] += 1
            if rng.random() < cfg.p_copy:
                copied.append([entry[0].copy(), entry[1], entry[2], entry[3]])
                if stats is not None:
                    stats["copied"] += 1

    # 4. image mixup of relevant tokens with the (possibly mixed) query
    for entry in copied:
        if entry[3] is not None and entry[1] < irrelevant_class:
            if stats is not None:
                stats["image_candidates"] += 1
            if rng.random() < cfg.p_image:
                entry[0] = mix_dominant(entry[0], query, float(rng.random()))
                if stats is not None:
                    stats["image_mixed"] += 1

    # truncate to the budget keeping the most query-similar rows (stable),
    # then pad back to n
    if len(copied) > n:
        order = sorted(range(len(copied)), key=lambda i: -copied[i][2])
        keep = sorted(order[:n])
        copied = [copied[i] for i in keep]

    d = seq.tokens.shape[1]
    tokens = np.zeros((n + 1, d))
    tokens[0] = query
    labels = np.full(n + 1, irrelevant_class, dtype=np.int64)
    labels[0] = seq.labels[0]
    image_ids: list[int | None] = [None] * n
    sims = np.full(n, -np.inf)
    for slot, (tok, label, sim, iid) in enumerate(copied):
        tokens[slot + 1] = tok
        labels[slot + 1] = label
        sims[slot] = sim
        image_ids[slot] = iid
    return TokenSequence(tokens, image_ids, sims, labels)
