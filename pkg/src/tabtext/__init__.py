"""Fused table-text retrieval toolkit.

Pipeline: corpus files -> table-text blocks -> flattened strings -> dual
encoder training with hard negatives -> dense (or BM25) search -> recall
evaluation. Each stage is importable on its own; the ``tabtext`` console
script wires them together.
"""

__version__ = "0.1.0"

from .blocks import (FlattenedBlock, TableTextBlock, block_id_for, build_blocks,
                     flatten, rank_passages_tfidf, truncate)
from .corpus import (CorpusError, LinkMap, Passage, Question, Table,
                     load_corpus, load_questions)
from .encoder import (EncoderParams, MerEmbedding, build_vocab, encode_tokens,
                      init_params, load_params, pool_block, question_embedding,
                      save_params, score)
from .evaluator import EvalReport, RetrievalRun, evaluate, sweep
from .index import DenseIndex, build_dense, load_index, save_index, search_dense
from .negatives import TrainInstance, locate_answer, make_instances, mmhn
from .trainer import Dual, TrainConfig, batch_loss, grad_check, make_dual, train

__all__ = [name for name in dir() if not name.startswith("_")]
