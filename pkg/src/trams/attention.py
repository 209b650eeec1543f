"""Attention primitives: standard content attention, the reordered key
product used for training-free memory scoring, relative-position logits, and
the norm/angle decomposition of a single logit.

Shapes follow one convention throughout: h is (N, d) current hidden states,
mem is (M', d) cached states, per-head projections map d -> d_h. Keys and
values always cover the concatenation [mem; h]. Probabilities are float64
(see numerics); masked entries are exactly 0 after softmax.
"""

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import backend
from .errors import UsageError
from .numerics import cosine, l2_norm, matmul

# additive mask applied before softmax; exp(-1e9) underflows to exactly 0
MASK_VALUE = -1e9


@dataclass
class AttentionParams:
    """One attention head: content/position key maps plus the two biases."""

    w_q: np.ndarray  # (d, d_h)
    w_k_content: np.ndarray  # (d, d_h)
    w_k_pos: np.ndarray  # (d, d_h)
    w_v: np.ndarray  # (d, d_h)
    u_bias: np.ndarray  # (d_h,)
    v_bias: np.ndarray  # (d_h,)

    @property
    def d(self):
        return self.w_q.shape[0]

    @property
    def d_h(self):
        return self.w_q.shape[1]


@dataclass
class RelPosTable:
    """Relative-distance encodings, row i = encoding of distance i."""

    embeddings: np.ndarray  # (num_dist, d)

    @property
    def num_dist(self):
        return self.embeddings.shape[0]


class AttentionOutput(NamedTuple):
    output: np.ndarray  # (N, d_h)
    probs: np.ndarray  # (N, cols) float64, masked entries exactly 0


def sinusoid_table(num_dist, d):
    """Fixed sin/cos encodings of distances 0..num_dist-1, shape (num_dist, d)."""
    if d < 2:
        raise UsageError("sinusoid_table: d must be >= 2, got %d" % d)
    half = (d + 1) // 2
    inv_freq = 1.0 / (10000.0 ** (np.arange(half, dtype=np.float64) * 2.0 / d))
    ang = np.arange(num_dist, dtype=np.float64)[:, None] * inv_freq[None, :]
    table = np.concatenate([np.sin(ang), np.cos(ang)], axis=1)[:, :d]
    return table.astype(np.float32)


def build_relpos_table(num_dist, d, w_r):
    """Sinusoids pushed through the learned distance map w_r (d, d)."""
    if w_r.shape != (d, d):
        raise UsageError(
            "build_relpos_table: w_r must be (%d, %d), got %s" % (d, d, w_r.shape)
        )
    return RelPosTable(embeddings=matmul(sinusoid_table(num_dist, d), w_r))


def _check_inputs(h, mem, params):
    d = params.d
    if h.ndim != 2 or h.shape[1] != d:
        raise UsageError(
            "attention: h must be (N, %d), got %s" % (d, (h.shape,))
        )
    if mem.ndim != 2 or (mem.shape[0] > 0 and mem.shape[1] != d):
        raise UsageError(
            "attention: mem must be (M', %d), got %s" % (d, (mem.shape,))
        )


def project_qkv(h, mem, params):
    """Q from the current segment, K and V from [mem; h]."""
    _check_inputs(h, mem, params)
    hm = np.concatenate([mem, h], axis=0) if mem.shape[0] else h
    q = matmul(h, params.w_q)
    k = matmul(hm, params.w_k_content)
    v = matmul(hm, params.w_v)
    return q, k, v


def attend_standard(h, mem, params, scale=None, include_segment=True):
    """Content-only attention over [mem; h] with the in-segment causal mask.

    Memory columns are visible to every query. include_segment=False drops
    the current segment from keys/values entirely, leaving queries to look
    at memory alone.
    """
    q, k, v = project_qkv(h, mem, params)
    mem_rows = mem.shape[0]
    if not include_segment:
        if mem_rows == 0:
            raise UsageError("attend_standard: no memory and segment excluded")
        k = k[:mem_rows]
        v = v[:mem_rows]
    if scale is None:
        scale = float(np.sqrt(params.d_h))
    logits = matmul(q, k.T)
    cols = k.shape[0]
    col_pos = np.arange(cols, dtype=np.int64)
    mem_cols = mem_rows if include_segment else cols
    probs = backend.causal_softmax(
        np.ascontiguousarray(logits, dtype=np.float64),
        col_pos,
        mem_cols,
        float(scale),
    )
    out = matmul(probs, v.astype(np.float64)).astype(h.dtype)
    return AttentionOutput(output=out, probs=probs)


def reformulate_keys(mem, params):
    """Fold both projections into the memory side: K' = mem (W_K W_Q^T).

    h K'^T then equals (h W_Q)(mem W_K)^T, so memory can be scored before
    any query exists.
    """
    if mem.ndim != 2 or mem.shape[1] != params.d:
        raise UsageError(
            "reformulate_keys: mem must be (M', %d), got %s"
            % (params.d, (mem.shape,))
        )
    folded = matmul(params.w_k_content, params.w_q.T)  # (d, d)
    return matmul(mem, folded)


def relpos_logits(h, mem, params, relpos, col_pos=None, mem_cols=None):
    """Pre-scale attention logits with relative-position terms.

    A[t, j] = (q_t + u)·k_j + (q_t + v)·r_{delta(t,j)} where k_j is the
    content key, r the position key for distance delta = (query position) -
    (key position). Masked (future) entries are set to MASK_VALUE.
    """
    _check_inputs(h, mem, params)
    n = h.shape[0]
    mem_rows = mem.shape[0]
    cols = mem_rows + n
    if col_pos is None:
        col_pos = np.arange(cols, dtype=np.int64)
    else:
        col_pos = np.asarray(col_pos, dtype=np.int64)
        if col_pos.shape[0] != cols:
            raise UsageError(
                "relpos_logits: col_pos must have %d entries, got %d"
                % (cols, col_pos.shape[0])
            )
    if mem_cols is None:
        mem_cols = mem_rows
    hm = np.concatenate([mem, h], axis=0) if mem_rows else h
    q = matmul(h, params.w_q).astype(np.float64)
    k_content = matmul(hm, params.w_k_content).astype(np.float64)
    k_pos = matmul(relpos.embeddings, params.w_k_pos).astype(np.float64)

    max_delta = int(mem_cols + (n - 1) - int(col_pos.min())) if cols else 0
    if max_delta >= relpos.num_dist:
        raise UsageError(
            "relpos_logits: distance %d outside table of %d rows"
            % (max_delta, relpos.num_dist)
        )

    ac = (q + params.u_bias.astype(np.float64)) @ k_content.T
    pos_scores = (q + params.v_bias.astype(np.float64)) @ k_pos.T
    bd = backend.relative_gather(pos_scores, col_pos, int(mem_cols))
    logits = ac + bd
    visible = col_pos[None, :] <= int(mem_cols) + np.arange(n)[:, None]
    logits[~visible] = MASK_VALUE
    return logits


class DecomposedLogit(NamedTuple):
    norm_q: float
    norm_k: float
    cos_qk: float
    dot: float
    root_d_approx: float  # sqrt(d) * norm_k * cos_qk


def decompose_logit(q_row, k_row):
    """Split q·k into norm and angle factors.

    norm_q*norm_k*cos reconstructs the dot product; root_d_approx replaces
    norm_q with sqrt(d), the right magnitude when q is a layernormed row.
    """
    q = np.asarray(q_row, dtype=np.float64).ravel()
    k = np.asarray(k_row, dtype=np.float64).ravel()
    if q.shape != k.shape:
        raise UsageError(
            "decompose_logit: shape mismatch %s vs %s" % (q.shape, k.shape)
        )
    nq = l2_norm(q)
    nk = l2_norm(k)
    c = cosine(q, k)
    d = q.shape[0]
    return DecomposedLogit(
        norm_q=nq,
        norm_k=nk,
        cos_qk=c,
        dot=float(q @ k),
        root_d_approx=float(np.sqrt(d) * nk * c),
    )
