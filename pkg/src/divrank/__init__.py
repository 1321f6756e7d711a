"""Diversity-aware embedding retrieval pipeline.

Contrastive re-encoding of candidate features around category prototypes,
transformer token classification, category-aware list assembly, baseline
re-rankers (top-k, MMR, DBSCAN) and P/CR/F1 evaluation, all over
precomputed or synthetic embedding corpora.
"""

from .augment import AugmentationConfig, augment_sequence, mix_dominant
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ExperimentConfig, load_config
from .contrastive import (ContrastiveBatch, ContrastiveHyper, PrototypeBank,
                          contrastive_loss, ema_update, init_bank,
                          train_reencoder)
from .corpus import (IRRELEVANT, CategoryDescriptor, EmbeddingCorpus,
                     GeneratorConfig, ImageRecord, QueryRecord,
                     cosine_similarity, generate_synthetic, load_corpus,
                     save_corpus, split_corpus)
from .errors import (CheckpointFormatError, ConfigurationError,
                     ContractViolation, CorpusFormatError, DivergenceError,
                     DivrankError)
from .metrics import (RunMetrics, cluster_recall_at_k, evaluate_run, f1_score,
                      precision_at_k)
from .nn import (Adam, ParamStore, RngStream, grad_check, linear_forward,
                 softmax_cross_entropy, transformer_encoder_forward)
from .pipeline import run_retrieval, train_pipeline
from .reencoder import ReEncoder
from .retrieval import (PostProcessConfig, RankedItem, RankedList, dbscan,
                        post_process, retrieve_classified, retrieve_cluster,
                        retrieve_mmr, retrieve_topk)
from .tokens import (ClassifierHyper, LabelSpace, TokenClassifier,
                     TokenSequence, build_sequence, classify_tokens, ttc_loss,
                     train_classifier)

__version__ = "0.1.0"
