"""Memory pool and selection strategies.

The pool is a FIFO cache of per-layer hidden states with aligned absolute
positions and token ids. Selection never mutates the pool; every strategy
returns a SelectionResult whose indices are re-sorted into temporal order so
downstream attention sees memories in their original arrangement.
"""

import json
import warnings
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from . import attention
from .errors import DegenerateVectorWarning, UsageError
from .numerics import Rng

STRATEGIES = ("trams", "oracle", "random", "recency", "none")
DIRECTIONS = ("descending", "ascending", "abs_ascending")


@dataclass
class MemoryPool:
    capacity: int
    layer_states: List[np.ndarray]  # per layer, (rows, d)
    positions: np.ndarray  # (rows,) absolute token indices, strictly increasing
    token_ids: np.ndarray  # (rows,) vocabulary ids for tracing

    @property
    def rows(self):
        return int(self.positions.shape[0])

    @property
    def num_layers(self):
        return len(self.layer_states)


def empty_pool(num_layers, d, capacity, dtype=np.float32):
    return MemoryPool(
        capacity=int(capacity),
        layer_states=[np.zeros((0, d), dtype=dtype) for _ in range(num_layers)],
        positions=np.zeros(0, dtype=np.int64),
        token_ids=np.zeros(0, dtype=np.int64),
    )


def pool_update(pool, new_hidden, positions, token_ids):
    """Append a segment's states and evict the oldest rows beyond capacity.

    Functional: returns a fresh pool; inputs are copied so later in-place
    writes by the caller cannot reach cached values.
    """
    if len(new_hidden) != pool.num_layers:
        raise UsageError(
            "pool_update: %d layers given, pool has %d"
            % (len(new_hidden), pool.num_layers)
        )
    positions = np.asarray(positions, dtype=np.int64)
    token_ids = np.asarray(token_ids, dtype=np.int64)
    n = positions.shape[0]
    d = pool.layer_states[0].shape[1]
    for li, h in enumerate(new_hidden):
        if h.shape != (n, d):
            raise UsageError(
                "pool_update: layer %d states must be (%d, %d), got %s"
                % (li, n, d, (h.shape,))
            )
    if n > 1 and np.any(np.diff(positions) <= 0):
        raise UsageError("pool_update: positions must be strictly increasing")
    if pool.rows and n and positions[0] <= pool.positions[-1]:
        raise UsageError(
            "pool_update: position %d not after pool tail %d"
            % (positions[0], pool.positions[-1])
        )
    cap = pool.capacity
    states = [
        np.concatenate([old, h.astype(old.dtype)], axis=0)[-cap:].copy()
        for old, h in zip(pool.layer_states, new_hidden)
    ]
    return MemoryPool(
        capacity=cap,
        layer_states=states,
        positions=np.concatenate([pool.positions, positions])[-cap:].copy(),
        token_ids=np.concatenate([pool.token_ids, token_ids])[-cap:].copy(),
    )


@dataclass
class SelectionResult:
    layer: int
    head: int
    chosen_indices: np.ndarray  # strictly increasing pool-row indices
    scores: np.ndarray  # aligned with chosen_indices
    strategy: str
    all_scores: Optional[np.ndarray] = field(default=None, repr=False)


def trams_scores(k_reformulated):
    """Score each reformulated key row by cos to the ones vector times norm.

    Algebraically this collapses to row_sum / sqrt(d); the cos * norm form is
    kept literal so the identity stays a testable fact rather than a comment.
    Zero rows score 0 with a warning.
    """
    k = np.asarray(k_reformulated, dtype=np.float64)
    if k.ndim != 2:
        raise UsageError("trams_scores: expected (M', d), got %s" % (k.shape,))
    d = k.shape[1]
    norms = np.sqrt((k * k).sum(axis=1))
    sums = k.sum(axis=1)
    ones_norm = np.sqrt(d)
    zero = norms == 0.0
    if np.any(zero):
        warnings.warn(
            "trams_scores: %d zero-norm memory rows scored 0" % int(zero.sum()),
            DegenerateVectorWarning,
            stacklevel=2,
        )
    cos = np.where(zero, 0.0, sums / np.where(zero, 1.0, norms * ones_norm))
    return cos * norms


def top_m_select(scores, m, direction="descending", layer=-1, head=-1, strategy="trams"):
    """Indices of the m extremal scores, returned in temporal order.

    Ties break toward the larger (more recent) index. m >= len(scores)
    degenerates to selecting everything.
    """
    if m < 1:
        raise UsageError("top_m_select: m must be >= 1, got %d" % m)
    if direction not in DIRECTIONS:
        raise UsageError(
            "top_m_select: direction %r not in %s" % (direction, DIRECTIONS)
        )
    if strategy not in STRATEGIES:
        raise UsageError(
            "top_m_select: strategy %r not in %s" % (strategy, STRATEGIES)
        )
    scores = np.asarray(scores, dtype=np.float64).ravel()
    mp = scores.shape[0]
    idx = np.arange(mp)
    if direction == "descending":
        key = -scores
    elif direction == "ascending":
        key = scores
    else:
        key = np.abs(scores)
    # lexsort: last key is primary; -idx makes equal scores prefer recency
    order = np.lexsort((-idx, key))
    chosen = np.sort(order[: min(m, mp)]).astype(np.int64)
    return SelectionResult(
        layer=layer,
        head=head,
        chosen_indices=chosen,
        scores=scores[chosen],
        strategy=strategy,
        all_scores=scores,
    )


def oracle_select_from_probs(probs, mem_cols, m, layer=-1, head=-1):
    """Top-m memory columns by total attention mass under full-pool probs.

    Mass per column is additive across queries, so the top-m columns are
    exactly the subset with maximum summed mass.
    """
    mass = np.asarray(probs, dtype=np.float64)[:, :mem_cols].sum(axis=0)
    return top_m_select(
        mass, m, direction="descending", layer=layer, head=head, strategy="oracle"
    )


def oracle_select(h, pool_layer, params, m, layer=-1, head=-1):
    """Selection with query knowledge: attend over the whole pool, keep the
    m memories that actually drew the most probability mass."""
    out = attention.attend_standard(h, pool_layer, params)
    return oracle_select_from_probs(
        out.probs, pool_layer.shape[0], m, layer=layer, head=head
    )


def baseline_select(kind, m_prime, m, rng=None, layer=-1, head=-1):
    """random: seeded uniform sample without replacement; recency: last m."""
    if kind not in ("random", "recency"):
        raise UsageError("baseline_select: unknown kind %r" % (kind,))
    take = min(m, m_prime)
    if kind == "recency":
        chosen = np.arange(m_prime - take, m_prime, dtype=np.int64)
    else:
        if rng is None:
            raise UsageError("baseline_select: random kind needs an rng")
        chosen = np.sort(rng.choice_no_replace(m_prime, take)).astype(np.int64)
    return SelectionResult(
        layer=layer,
        head=head,
        chosen_indices=chosen,
        scores=np.zeros(take, dtype=np.float64),
        strategy=kind,
    )


def selection_trace(result, pool, detok: Callable[[list], str]):
    """Per pool row: (position, token, score, selected, layer, head)."""
    chosen = set(int(i) for i in result.chosen_indices)
    records = []
    for i in range(pool.rows):
        if result.all_scores is not None and i < len(result.all_scores):
            score = float(result.all_scores[i])
        elif i in chosen:
            pos_in_chosen = int(np.searchsorted(result.chosen_indices, i))
            score = float(result.scores[pos_in_chosen])
        else:
            score = 0.0
        records.append(
            {
                "position": int(pool.positions[i]),
                "token": detok([int(pool.token_ids[i])]),
                "score": score,
                "selected": i in chosen,
                "layer": int(result.layer),
                "head": int(result.head),
            }
        )
    return records


def trace_to_jsonl(records):
    return "\n".join(json.dumps(r) for r in records)
