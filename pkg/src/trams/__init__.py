"""Toy memory-augmented language model with training-free memory selection.

A segment-recurrent transformer keeps a FIFO pool of past hidden states and,
at inference time, picks which m of the M pooled memories each attention head
may see. The headline selector ("trams") ranks memories by a query-free score
computed from reformulated keys; oracle, recency, and random selectors bound
it from above and below. Kernels run under numba when available, with a pure
numpy fallback selected by the TRAMS_PURE_NUMPY environment flag.
"""

from .backend import BACKEND, available_backends
from .checkpoint_io import load_checkpoint, save_checkpoint
from .corpus import (UNK_TOKEN, Vocabulary, detokenize, encode, read_text,
                     synthetic_text, tokenize_corpus)
from .diagnostics import (AblationCurve, CorrelationTable, CostProfile,
                          NormReport, UtilizationReport, ablation_sweep,
                          cost_profile, memory_utilization, norm_distribution,
                          ranking_correlation_experiment,
                          utilization_experiment)
from .errors import (CorruptCheckpointError, DegenerateVectorWarning,
                     DivergenceError, TramsError, UnsupportedVersionError,
                     UsageError)
from .memory import (DIRECTIONS, STRATEGIES, MemoryPool, SelectionResult,
                     baseline_select, empty_pool, oracle_select,
                     oracle_select_from_probs, pool_update, selection_trace,
                     top_m_select, trace_to_jsonl, trams_scores)
from .model import (AttnStats, Checkpoint, EvalReport, ModelConfig,
                    TrainParams, TrainResult, eval_corpus, forward_segment,
                    head_params, init_checkpoint, nll_to_metrics, train_toy)
from .numerics import Rng, cosine, l2_norm, matmul, softmax_rows, \
    spearman_rank_correlation
from .runconfig import RunConfig, parse_config

__version__ = "0.1.0"

__all__ = [
    "AblationCurve", "AttnStats", "BACKEND", "Checkpoint", "CorrelationTable",
    "CorruptCheckpointError", "CostProfile", "DIRECTIONS",
    "DegenerateVectorWarning", "DivergenceError", "EvalReport", "MemoryPool",
    "ModelConfig", "NormReport", "Rng", "RunConfig", "STRATEGIES",
    "SelectionResult", "TrainParams", "TrainResult", "TramsError", "UNK_TOKEN",
    "UnsupportedVersionError", "UsageError", "UtilizationReport", "Vocabulary",
    "ablation_sweep", "available_backends", "baseline_select", "cosine",
    "cost_profile", "detokenize", "empty_pool", "encode", "eval_corpus",
    "forward_segment", "head_params", "init_checkpoint", "l2_norm",
    "load_checkpoint", "matmul", "memory_utilization", "nll_to_metrics",
    "norm_distribution", "oracle_select", "oracle_select_from_probs",
    "parse_config", "pool_update", "ranking_correlation_experiment",
    "read_text", "save_checkpoint", "selection_trace", "softmax_rows",
    "spearman_rank_correlation", "synthetic_text", "tokenize_corpus",
    "top_m_select", "trace_to_jsonl", "train_toy", "trams_scores",
    "utilization_experiment", "__version__",
]
