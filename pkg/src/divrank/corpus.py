"""Embedding corpus data model, synthetic generator and DRC1 file format.

A corpus stands in for a real retrieval dataset: queries, candidate images
with unit-norm feature vectors, ground-truth category / relevance labels and
one textual-description feature per global category.  Real feature dumps of
the same shape can be ingested through the DRC1 format; the generator
produces long-tailed synthetic corpora for desk-scale experiments.
"""

from __future__ import annotations

import json
import os
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, ConfigurationError, CorpusFormatError
from .nn import RngStream

IRRELEVANT = -1

_MAGIC = "DRC1"
_BLOB_MAGIC = b"DRC1BLOB"


@dataclass
class ImageRecord:
    image_id: int
    query_id: int
    feature: np.ndarray
    category: int  # global category id, IRRELEVANT for off-topic images
    relevant: bool


@dataclass
class QueryRecord:
    query_id: int
    feature: np.ndarray
    gt_categories: frozenset[int]
    candidate_ids: list[int]


@dataclass
class CategoryDescriptor:
    category_id: int
    description_feature: np.ndarray


@dataclass
class EmbeddingCorpus:
    dim: int
    queries: list[QueryRecord]
    images: list[ImageRecord]
    descriptors: list[CategoryDescriptor]
    split: str = "train"
    _image_index: dict[int, ImageRecord] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self._image_index:
            self._image_index = {im.image_id: im for im in self.images}

    def image(self, image_id: int) -> ImageRecord:
        return self._image_index[image_id]

    def category_map(self) -> dict[int, int]:
        """image_id -> global category, for relevant images only."""
        return {im.image_id: im.category for im in self.images if im.relevant}

    def relevant_ids(self, q: QueryRecord) -> list[int]:
        return [i for i in q.candidate_ids if self.image(i).relevant]

    def irrelevant_ids(self, q: QueryRecord) -> list[int]:
        return [i for i in q.candidate_ids if not self.image(i).relevant]

    def validate(self, norm_tol: float = 1e-6) -> None:
        """Check referential integrity and feature invariants.

        Features are stored as float32 on disk, so unit norms are only exact
        to float32 resolution; the tolerance reflects that.
        """
        ids = set(self._image_index)
        cats = {d.category_id for d in self.descriptors}
        for im in self.images:
            if im.feature.shape != (self.dim,):
                raise ContractViolation(f"image {im.image_id}: bad feature dim")
            if im.relevant != (im.category != IRRELEVANT):
                raise ContractViolation(
                    f"image {im.image_id}: relevance/category mismatch"
                )
            if im.relevant and im.category not in cats:
                raise ContractViolation(
                    f"image {im.image_id}: unknown category {im.category}"
                )
            n = float(np.linalg.norm(im.feature))
            if abs(n - 1.0) > norm_tol:
                raise ContractViolation(f"image {im.image_id}: norm {n} not unit")
        for q in self.queries:
            if not q.gt_categories:
                raise ContractViolation(f"query {q.query_id}: empty gt categories")
            if q.feature.shape != (self.dim,):
                raise ContractViolation(f"query {q.query_id}: bad feature dim")
            for i in q.candidate_ids:
                if i not in ids:
                    raise ContractViolation(
                        f"query {q.query_id}: unknown candidate {i}"
                    )
                im = self.image(i)
                if im.relevant and im.category not in q.gt_categories:
                    raise ContractViolation(
                        f"query {q.query_id}: candidate {i} category outside gt"
                    )


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ContractViolation("cosine similarity of a zero vector")
    return float(np.dot(a, b) / (na * nb))


# ---------------------------------------------------------------------------
# synthetic generation


@dataclass
class GeneratorConfig:
    n_queries: int = 50
    dim: int = 64
    mean_categories: float = 11.8  # ground-truth categories per query
    zipf_s: float = 1.2            # category-size skew; larger -> longer tail
    sigma: float = 0.15            # intra-category feature noise
    relevant_per_query: int = 60
    irrelevant_per_query: int = 20
    n_categories: int | None = None  # global pool; None -> auto
    n_background: int = 12           # off-topic distractor modes
    background_sigma: float = 0.3    # spread around each distractor mode
    forced_category_sizes: list[int] | None = None
    split: str = "train"


def _quantize(v: np.ndarray) -> np.ndarray:
    # features live on disk as float32; quantize up front so that the
    # save/load round trip is bit-exact
    return v.astype(np.float32).astype(np.float64)


def _unit(v: np.ndarray) -> np.ndarray:
    return _quantize(v / np.linalg.norm(v))


def _zipf_sizes(total: int, count: int, s: float) -> list[int]:
    w = np.arange(1, count + 1, dtype=np.float64) ** (-s)
    w /= w.sum()
    sizes = np.maximum(1, np.floor(w * total).astype(int))
    # largest-remainder style top-up, biggest categories first
    i = 0
    while sizes.sum() < total:
        sizes[i % count] += 1
        i += 1
    while sizes.sum() > total:
        j = int(np.argmax(sizes))
        if sizes[j] > 1:
            sizes[j] -= 1
    return sizes.tolist()


def generate_synthetic(cfg: GeneratorConfig, seed: int) -> EmbeddingCorpus:
    """Long-tailed synthetic corpus, deterministic under the seed.

    Each query samples its categories from a shared global pool; category
    sizes follow a Zipf law so one or two categories dominate each query,
    and the query feature sits at the size-weighted mean of its category
    prototypes.  Irrelevant images come from a clustered background: a pool
    of off-topic distractor modes with a wider spread than the categories,
    standing in for the coherent-but-off-topic images of a real corpus.
    """
    if cfg.mean_categories < 2:
        raise ConfigurationError("mean_categories must be >= 2")
    if cfg.sigma <= 0:
        raise ConfigurationError("sigma must be > 0")
    if cfg.n_background < 1:
        raise ConfigurationError("n_background must be >= 1")
    if cfg.background_sigma <= 0:
        raise ConfigurationError("background_sigma must be > 0")
    if cfg.n_queries < 1:
        raise ConfigurationError("need at least one query")

    rng = RngStream(seed, "corpus-gen")
    if cfg.forced_category_sizes is not None:
        max_c = len(cfg.forced_category_sizes)
    else:
        max_c = max(2, int(round(cfg.mean_categories * 2)))
    n_cats = cfg.n_categories
    if n_cats is None:
        n_cats = max(max_c, int(round(cfg.mean_categories * 2)))
    if n_cats < 2:
        raise ConfigurationError("need at least two global categories")

    prototypes = np.stack([_unit(rng.normal(size=cfg.dim)) for _ in range(n_cats)])
    background = np.stack([_unit(rng.normal(size=cfg.dim))
                           for _ in range(cfg.n_background)])
    descriptors = [
        CategoryDescriptor(
            c, _unit(prototypes[c] + (cfg.sigma / 4.0) * rng.normal(size=cfg.dim))
        )
        for c in range(n_cats)
    ]

    images: list[ImageRecord] = []
    queries: list[QueryRecord] = []
    next_image = 0
    for qid in range(cfg.n_queries):
        if cfg.forced_category_sizes is not None:
            sizes = list(cfg.forced_category_sizes)
            n_c = len(sizes)
        else:
            n_c = int(min(n_cats, max(2, rng.poisson(cfg.mean_categories))))
            sizes = _zipf_sizes(cfg.relevant_per_query, n_c, cfg.zipf_s)
        cats = [int(c) for c in rng.choice(n_cats, size=n_c, replace=False)]
        candidate_ids: list[int] = []
        for cat, size in zip(cats, sizes):
            for _ in range(size):
                feat = _unit(prototypes[cat] + cfg.sigma * rng.normal(size=cfg.dim))
                images.append(ImageRecord(next_image, qid, feat, cat, True))
                candidate_ids.append(next_image)
                next_image += 1
        for _ in range(cfg.irrelevant_per_query):
            mode = background[int(rng.integers(cfg.n_background))]
            feat = _unit(mode + cfg.background_sigma * rng.normal(size=cfg.dim))
            images.append(ImageRecord(next_image, qid, feat, IRRELEVANT, False))
            candidate_ids.append(next_image)
            next_image += 1
        weights = np.array(sizes, dtype=np.float64)
        qfeat = _unit((weights[:, None] * prototypes[cats]).sum(axis=0))
        queries.append(QueryRecord(qid, qfeat, frozenset(cats), candidate_ids))

    corpus = EmbeddingCorpus(cfg.dim, queries, images, descriptors, cfg.split)
    corpus.validate()
    return corpus


def split_corpus(corpus: EmbeddingCorpus, n_test: int) -> tuple[EmbeddingCorpus, EmbeddingCorpus]:
    """Partition the last ``n_test`` queries (and their images) into a test
    corpus; descriptors are shared so both halves use one category space."""
    if not (0 < n_test < len(corpus.queries)):
        raise ConfigurationError("n_test must split the query list")
    train_q = corpus.queries[:-n_test]
    test_q = corpus.queries[-n_test:]

    def subset(qs: list[QueryRecord], split: str) -> EmbeddingCorpus:
        keep = {i for q in qs for i in q.candidate_ids}
        imgs = [im for im in corpus.images if im.image_id in keep]
        return EmbeddingCorpus(corpus.dim, qs, imgs, corpus.descriptors, split)

    return subset(train_q, "train"), subset(test_q, "test")


# ---------------------------------------------------------------------------
# DRC1 persistence: <name>.manifest.jsonl + <name>.f32


def _paths(base: str) -> tuple[str, str]:
    if base.endswith(".manifest.jsonl"):
        base = base[: -len(".manifest.jsonl")]
    return base + ".manifest.jsonl", base + ".f32"


def save_corpus(corpus: EmbeddingCorpus, base_path: str,
                extra_header: dict | None = None) -> None:
    manifest_path, blob_path = _paths(base_path)
    blob_name = blob_path.rsplit("/", 1)[-1]

    rows: list[np.ndarray] = []
    lines: list[dict] = []

    def add(vec: np.ndarray) -> int:
        rows.append(vec.astype("<f4"))
        return len(rows) - 1

    for q in corpus.queries:
        lines.append({
            "type": "query", "query_id": q.query_id,
            "gt_categories": sorted(q.gt_categories),
            "candidate_ids": q.candidate_ids, "row": add(q.feature),
        })
    for im in corpus.images:
        lines.append({
            "type": "image", "image_id": im.image_id, "query_id": im.query_id,
            "category": im.category, "relevant": im.relevant,
            "row": add(im.feature),
        })
    for d in corpus.descriptors:
        lines.append({
            "type": "descriptor", "category_id": d.category_id,
            "row": add(d.description_feature),
        })

    payload = np.concatenate(rows).tobytes() if rows else b""
    with open(blob_path, "wb") as f:
        f.write(_BLOB_MAGIC)
        f.write(payload)

    header = {"magic": _MAGIC, "dim": corpus.dim, "count": len(rows),
              "blob": blob_name, "split": corpus.split}
    if extra_header:
        header.update(extra_header)
    with open(manifest_path, "w", encoding="utf-8") as f:
        f.write(json.dumps(header) + "\n")
        for line in lines:
            f.write(json.dumps(line) + "\n")
        f.write(json.dumps({"crc32": zlib.crc32(payload)}) + "\n")


def load_corpus(base_path: str) -> EmbeddingCorpus:
    manifest_path, blob_path = _paths(base_path)
    with open(manifest_path, "r", encoding="utf-8") as f:
        raw_lines = [json.loads(line) for line in f if line.strip()]
    if not raw_lines:
        raise CorpusFormatError("empty manifest")
    header = raw_lines[0]
    if header.get("magic") != _MAGIC:
        raise CorpusFormatError("bad magic")
    if "crc32" not in raw_lines[-1]:
        raise CorpusFormatError("missing crc32 trailer")
    trailer = raw_lines[-1]
    entries = raw_lines[1:-1]

    dim = int(header["dim"])
    count = int(header["count"])
    blob_file = os.path.join(os.path.dirname(manifest_path), header["blob"])
    with open(blob_file, "rb") as f:
        data = f.read()
    if data[:8] != _BLOB_MAGIC:
        raise CorpusFormatError("bad magic in blob")
    payload = data[8:]
    if len(payload) != count * dim * 4:
        raise CorpusFormatError("truncated blob")
    if zlib.crc32(payload) != trailer["crc32"]:
        raise CorpusFormatError("blob checksum mismatch")
    mat = np.frombuffer(payload, dtype="<f4").reshape(count, dim).astype(np.float64)

    queries: list[QueryRecord] = []
    images: list[ImageRecord] = []
    descriptors: list[CategoryDescriptor] = []
    for e in entries:
        row = e["row"]
        if not (0 <= row < count):
            raise CorpusFormatError(f"blob bounds: row {row} of {count}")
        vec = mat[row].copy()
        if e["type"] == "query":
            queries.append(QueryRecord(e["query_id"], vec,
                                       frozenset(e["gt_categories"]),
                                       list(e["candidate_ids"])))
        elif e["type"] == "image":
            images.append(ImageRecord(e["image_id"], e["query_id"], vec,
                                      e["category"], bool(e["relevant"])))
        elif e["type"] == "descriptor":
            descriptors.append(CategoryDescriptor(e["category_id"], vec))
        else:
            raise CorpusFormatError(f"unknown entry type {e['type']!r}")
    return EmbeddingCorpus(dim, queries, images, descriptors,
                           header.get("split", "train"))
