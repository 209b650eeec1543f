"""Segment-recurrent decoder with training-free memory selection.

Architecture: embedding -> L pre-norm blocks (relative-position attention +
ReLU feed-forward) -> final layernorm -> vocab projection. Each block's
INPUT rows are cached in a FIFO pool; at inference a strategy picks which
cached rows each head may attend to. Keys/values/queries are computed from
the jointly layernormed [memory; segment] rows, so selection always scores
layernormed states. Selected rows keep their original relative distances.

Training runs full-pool (no selection), with memory detached from gradient
flow; backward passes are explicit. Heads concatenate straight into the
residual stream (no extra output projection), keeping the per-head attention
parameter set exactly {w_q, w_k_content, w_k_pos, w_v, u, v}.
"""

import math
import time
from dataclasses import dataclass, field, asdict
from typing import Dict, List, NamedTuple, Optional

import numpy as np

from . import backend
from . import memory as memsel
from .attention import AttentionParams, sinusoid_table
from .corpus import Vocabulary
from .errors import DivergenceError, UsageError
from .memory import MemoryPool, DIRECTIONS, STRATEGIES
from .numerics import Rng, matmul


@dataclass
class ModelConfig:
    vocab_size: int
    num_layers: int = 4
    num_heads: int = 4
    d_model: int = 64
    d_ffn: int = 256
    segment_len: int = 32
    pool_capacity: int = 128
    selected_m: int = 32
    strategy: str = "trams"
    metric_direction: str = "descending"
    dropout: float = 0.0
    select_u_bias: bool = True

    def validate(self):
        bad = []
        if self.vocab_size < 2:
            bad.append("vocab_size must be >= 2 (got %d)" % self.vocab_size)
        if self.num_layers < 1:
            bad.append("num_layers must be >= 1 (got %d)" % self.num_layers)
        if self.num_heads < 1:
            bad.append("num_heads must be >= 1 (got %d)" % self.num_heads)
        if self.d_model < 2 or self.d_model % 2:
            bad.append("d_model must be even and >= 2 (got %d)" % self.d_model)
        if self.num_heads >= 1 and self.d_model % max(self.num_heads, 1):
            bad.append(
                "d_model %d not divisible by num_heads %d"
                % (self.d_model, self.num_heads)
            )
        if self.d_ffn < 1:
            bad.append("d_ffn must be >= 1 (got %d)" % self.d_ffn)
        if self.segment_len < 1:
            bad.append("segment_len must be >= 1 (got %d)" % self.segment_len)
        if self.pool_capacity < 0:
            bad.append("pool_capacity must be >= 0 (got %d)" % self.pool_capacity)
        if self.selected_m < 1:
            bad.append("selected_m must be >= 1 (got %d)" % self.selected_m)
        elif self.pool_capacity > 0 and self.selected_m > self.pool_capacity:
            bad.append(
                "selected_m %d exceeds pool_capacity %d"
                % (self.selected_m, self.pool_capacity)
            )
        if self.strategy not in STRATEGIES:
            bad.append("strategy %r not in %s" % (self.strategy, STRATEGIES))
        if self.metric_direction not in DIRECTIONS:
            bad.append(
                "metric_direction %r not in %s"
                % (self.metric_direction, DIRECTIONS)
            )
        if not (0.0 <= self.dropout < 1.0):
            bad.append("dropout must be in [0, 1) (got %r)" % self.dropout)
        if bad:
            raise UsageError("invalid config: " + "; ".join(bad))
        return self

    @property
    def d_head(self):
        return self.d_model // self.num_heads


@dataclass
class Checkpoint:
    config: ModelConfig
    params: Dict[str, np.ndarray]  # insertion order is the manifest order
    vocab: Optional[Vocabulary] = None

    def dtype(self):
        return self.params["embed"].dtype

    def astype(self, dtype):
        return Checkpoint(
            config=self.config,
            params={k: v.astype(dtype) for k, v in self.params.items()},
            vocab=self.vocab,
        )


def param_shapes(config):
    """Manifest-ordered mapping name -> shape, fully derived from config."""
    c = config
    dh = c.d_head
    shapes = {"embed": (c.vocab_size, c.d_model), "relpos_proj": (c.d_model, c.d_model)}
    for i in range(c.num_layers):
        p = "layers.%d." % i
        shapes[p + "ln1.gain"] = (c.d_model,)
        shapes[p + "ln1.bias"] = (c.d_model,)
        shapes[p + "attn.wq"] = (c.num_heads, c.d_model, dh)
        shapes[p + "attn.wk"] = (c.num_heads, c.d_model, dh)
        shapes[p + "attn.wkp"] = (c.num_heads, c.d_model, dh)
        shapes[p + "attn.wv"] = (c.num_heads, c.d_model, dh)
        shapes[p + "attn.u"] = (c.num_heads, dh)
        shapes[p + "attn.v"] = (c.num_heads, dh)
        shapes[p + "ln2.gain"] = (c.d_model,)
        shapes[p + "ln2.bias"] = (c.d_model,)
        shapes[p + "ffn.w1"] = (c.d_model, c.d_ffn)
        shapes[p + "ffn.b1"] = (c.d_ffn,)
        shapes[p + "ffn.w2"] = (c.d_ffn, c.d_model)
        shapes[p + "ffn.b2"] = (c.d_model,)
    shapes["final_ln.gain"] = (c.d_model,)
    shapes["final_ln.bias"] = (c.d_model,)
    shapes["out_proj.w"] = (c.d_model, c.vocab_size)
    shapes["out_proj.b"] = (c.vocab_size,)
    return shapes


def init_checkpoint(config, rng, vocab=None):
    config.validate()
    d = config.d_model
    params = {}
    for name, shape in param_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf in ("gain",):
            params[name] = np.ones(shape, dtype=np.float32)
        elif leaf in ("bias", "b", "b1", "b2", "u", "v"):
            params[name] = np.zeros(shape, dtype=np.float32)
        elif name == "embed":
            params[name] = rng.normal(shape, std=0.1)
        elif leaf == "w2":
            params[name] = rng.normal(shape, std=1.0 / math.sqrt(config.d_ffn))
        else:
            params[name] = rng.normal(shape, std=1.0 / math.sqrt(d))
    return Checkpoint(config=config, params=params, vocab=vocab)


def head_params(params, layer, head):
    p = "layers.%d.attn." % layer
    return AttentionParams(
        w_q=params[p + "wq"][head],
        w_k_content=params[p + "wk"][head],
        w_k_pos=params[p + "wkp"][head],
        w_v=params[p + "wv"][head],
        u_bias=params[p + "u"][head],
        v_bias=params[p + "v"][head],
    )


class AttnStats(NamedTuple):
    memory_mass: np.ndarray  # (L, H) mean attention mass on memory columns
    mem_rows: int  # pool rows visible this segment
    selection_seconds: float
    selections: Optional[list]  # SelectionResults when collected
    probs: Optional[list]  # per layer list of (H, n, cols) when collected
    normed: Optional[list]  # per layer layernormed [mem; x] rows when collected


def _select_for_head(config, strategy, mem_normed, params_h, m, direction, rng,
                     layer, head, probs_full=None):
    """Choose pool rows for one head; returns a SelectionResult."""
    mp = mem_normed.shape[0]
    if strategy == "recency":
        return memsel.baseline_select("recency", mp, m, layer=layer, head=head)
    if strategy == "random":
        return memsel.baseline_select("random", mp, m, rng=rng, layer=layer, head=head)
    if strategy == "oracle":
        return memsel.oracle_select_from_probs(probs_full, mp, m, layer=layer, head=head)
    scores = memsel.trams_scores(
        matmul(mem_normed, matmul(params_h.w_k_content, params_h.w_q.T))
    )
    if config.select_u_bias:
        scores = scores + matmul(
            mem_normed, params_h.w_k_content
        ).astype(np.float64) @ params_h.u_bias.astype(np.float64)
    return memsel.top_m_select(
        scores, m, direction=direction, layer=layer, head=head, strategy="trams"
    )


def forward_segment(ckpt, tokens, pool, strategy=None, seg_start=None, rng=None,
                    m=None, direction=None, selection_layers=None,
                    collect_selections=False, collect_probs=False,
                    collect_normed=False):
    """Run one segment; returns (logits, new_pool, AttnStats).

    The pool is updated with this segment's per-layer inputs regardless of
    what the strategy selected (selection affects attention only). `rng` is
    required for the random strategy. `seg_start` defaults to continuing
    right after the pool tail.
    """
    config = ckpt.config
    params = ckpt.params
    tokens = np.asarray(tokens, dtype=np.int64)
    n = tokens.shape[0]
    if n < 1 or n > config.segment_len:
        raise UsageError(
            "forward_segment: segment length %d outside [1, %d]"
            % (n, config.segment_len)
        )
    if tokens.max() >= config.vocab_size or tokens.min() < 0:
        raise UsageError("forward_segment: token id outside vocabulary")
    if strategy is None:
        strategy = config.strategy
    if strategy not in STRATEGIES:
        raise UsageError("forward_segment: unknown strategy %r" % (strategy,))
    if m is None:
        m = config.selected_m
    if direction is None:
        direction = config.metric_direction
    if seg_start is None:
        seg_start = int(pool.positions[-1]) + 1 if pool.rows else 0

    L, H = config.num_layers, config.num_heads
    dh = config.d_head
    scale = math.sqrt(dh)
    dtype = ckpt.dtype()
    mem_rows = pool.rows
    oldest = int(pool.positions[0]) if mem_rows else seg_start
    num_dist = n + max(seg_start - oldest, 0)
    table = matmul(sinusoid_table(num_dist, config.d_model), params["relpos_proj"])

    x = params["embed"][tokens].copy()
    layer_inputs = []
    mass = np.zeros((L, H))
    select_seconds = 0.0
    selections = [] if collect_selections else None
    probs_out = [] if collect_probs else None
    normed_out = [] if collect_normed else None

    for li in range(L):
        layer_inputs.append(x.copy())
        prefix = "layers.%d." % li
        mem_raw = pool.layer_states[li] if mem_rows else np.zeros((0, config.d_model), dtype)
        rows = np.concatenate([mem_raw.astype(dtype), x], axis=0)
        normed, _, _ = backend.layer_norm_rows(
            np.ascontiguousarray(rows),
            params[prefix + "ln1.gain"],
            params[prefix + "ln1.bias"],
            1e-5,
        )
        mem_n, x_n = normed[:mem_rows], normed[mem_rows:]
        if collect_normed:
            normed_out.append(normed.copy())

        select_here = (
            strategy not in ("none",)
            and mem_rows > 0
            and (selection_layers is None or li in selection_layers)
        )
        attn_out = np.empty((n, config.d_model), dtype)
        layer_probs = [] if collect_probs else None
        for h in range(H):
            ph = head_params(params, li, h)
            probs_full = None
            if select_here and strategy == "oracle" and mem_rows > m:
                full_logits, full_cp, _ = _head_logits(
                    x_n, normed, ph, table, pool.positions, seg_start, mem_rows, n
                )
                probs_full = backend.causal_softmax(
                    full_logits, full_cp, mem_rows, scale
                )
            if select_here and mem_rows > m:
                t0 = time.perf_counter()
                sel = _select_for_head(
                    config, strategy, mem_n, ph, m, direction, rng, li, h,
                    probs_full=probs_full,
                )
                select_seconds += time.perf_counter() - t0
                chosen = sel.chosen_indices
            else:
                sel = None
                chosen = np.arange(mem_rows)
            if selections is not None and sel is not None:
                selections.append(sel)

            keep_normed = normed if chosen.shape[0] == mem_rows else np.concatenate(
                [mem_n[chosen], x_n], axis=0
            )
            keep_pos = (
                pool.positions if chosen.shape[0] == mem_rows else pool.positions[chosen]
            )
            logits, col_pos, s_cols = _head_logits(
                x_n, keep_normed, ph, table, keep_pos, seg_start,
                chosen.shape[0], n
            )
            probs = backend.causal_softmax(logits, col_pos, s_cols, scale)
            v = matmul(keep_normed, ph.w_v)
            attn_out[:, h * dh : (h + 1) * dh] = matmul(probs, v.astype(np.float64)).astype(dtype)
            mass[li, h] = probs[:, : chosen.shape[0]].sum() / n
            if layer_probs is not None:
                layer_probs.append(probs)
        if probs_out is not None:
            probs_out.append(layer_probs)

        x = x + attn_out
        normed2, _, _ = backend.layer_norm_rows(
            np.ascontiguousarray(x),
            params[prefix + "ln2.gain"],
            params[prefix + "ln2.bias"],
            1e-5,
        )
        pre = matmul(normed2, params[prefix + "ffn.w1"]) + params[prefix + "ffn.b1"]
        act = np.maximum(pre, 0)
        x = x + matmul(act, params[prefix + "ffn.w2"]) + params[prefix + "ffn.b2"]

    final, _, _ = backend.layer_norm_rows(
        np.ascontiguousarray(x), params["final_ln.gain"], params["final_ln.bias"], 1e-5
    )
    logits = matmul(final, params["out_proj.w"]) + params["out_proj.b"]

    new_pool = pool
    if config.pool_capacity > 0:
        new_pool = memsel.pool_update(
            pool, layer_inputs, seg_start + np.arange(n), tokens
        )
    stats = AttnStats(
        memory_mass=mass,
        mem_rows=mem_rows,
        selection_seconds=select_seconds,
        selections=selections,
        probs=probs_out,
        normed=normed_out,
    )
    return logits, new_pool, stats


def _head_logits(x_n, keep_normed, ph, table, keep_pos, seg_start, s_cols, n):
    """Pre-scale logits for one head over [kept memory; segment] columns."""
    q = matmul(x_n, ph.w_q)
    k = matmul(keep_normed, ph.w_k_content)
    kp = matmul(table, ph.w_k_pos)
    col_pos = np.concatenate(
        [
            np.asarray(keep_pos[:s_cols], dtype=np.int64) - seg_start + s_cols,
            s_cols + np.arange(n, dtype=np.int64),
        ]
    )
    qf = q.astype(np.float64)
    ac = (qf + ph.u_bias.astype(np.float64)) @ k.astype(np.float64).T
    ps = (qf + ph.v_bias.astype(np.float64)) @ kp.astype(np.float64).T
    bd = backend.relative_gather(ps, col_pos, s_cols)
    return np.ascontiguousarray(ac + bd), col_pos, s_cols


@dataclass
class EvalReport:
    total_nll_nats: float
    token_count: int
    perplexity: float
    bpc: float
    strategy: str
    utilization: float
    wall_time_s: float
    peak_resident_bytes: int

    def to_dict(self):
        return asdict(self)


def nll_to_metrics(total_nll_nats, token_count):
    if token_count < 1:
        raise UsageError("nll_to_metrics: token_count must be >= 1")
    mean = total_nll_nats / token_count
    return math.exp(mean), mean / math.log(2.0)


def _peak_rss_bytes():
    try:
        import resource

        rss_kib = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
        return int(rss_kib) * 1024
    except Exception:
        return 0


def eval_corpus(ckpt, stream, strategy=None, segment_len=None, pool_capacity=None,
                selected_m=None, direction=None, seed=0, selection_layers=None,
                timestamps=True):
    """Non-overlapping next-token NLL over the stream.

    Segment k predicts stream[k*n+1 : k*n+n+1] from stream[k*n : k*n+n]; the
    final partial segment is kept. Each call owns a fresh pool.
    """
    t_start = time.perf_counter()
    stream = np.asarray(stream, dtype=np.int64)
    if stream.shape[0] < 2:
        raise UsageError("eval_corpus: need at least 2 tokens, got %d" % stream.shape[0])
    config = ckpt.config
    n = segment_len or config.segment_len
    cap = config.pool_capacity if pool_capacity is None else pool_capacity
    m = selected_m or config.selected_m
    strategy = strategy or config.strategy
    if strategy not in STRATEGIES:
        raise UsageError("eval_corpus: unknown strategy %r" % (strategy,))
    run_cfg = ModelConfig(**{**asdict(config), "segment_len": n,
                             "pool_capacity": cap,
                             "selected_m": min(m, cap) if cap else m,
                             "strategy": strategy})
    run_ckpt = Checkpoint(config=run_cfg, params=ckpt.params, vocab=ckpt.vocab)
    rng = Rng(seed)
    pool = memsel.empty_pool(config.num_layers, config.d_model, cap)
    total_nll = 0.0
    total_mass = 0.0
    mass_terms = 0
    t = stream.shape[0]
    pos = 0
    while pos + 1 < t:
        seg = stream[pos : pos + n]
        targets = stream[pos + 1 : pos + 1 + seg.shape[0]]
        if targets.shape[0] < seg.shape[0]:
            seg = seg[: targets.shape[0]]
        logits, pool, stats = forward_segment(
            run_ckpt, seg, pool, strategy=strategy, seg_start=pos, rng=rng,
            m=run_cfg.selected_m, direction=direction,
            selection_layers=selection_layers,
        )
        total_nll += backend.nll_total(
            np.ascontiguousarray(logits, dtype=np.float64), targets
        )
        if stats.mem_rows > 0:
            total_mass += float(stats.memory_mass.mean())
            mass_terms += 1
        pos += seg.shape[0]
    count = t - 1
    ppl, bpc = nll_to_metrics(total_nll, count)
    wall = time.perf_counter() - t_start
    return EvalReport(
        total_nll_nats=float(total_nll),
        token_count=int(count),
        perplexity=float(ppl),
        bpc=float(bpc),
        strategy=strategy,
        utilization=float(total_mass / mass_terms) if mass_terms else 0.0,
        wall_time_s=wall if timestamps else 0.0,
        peak_resident_bytes=_peak_rss_bytes() if timestamps else 0,
    )


# ---------------------------------------------------------------------------
# training: explicit forward/backward with full-pool recurrence


def _train_forward_backward(ckpt, tokens, targets, pool, seg_start, grads,
                            drop_rng=None):
    """Accumulate parameter gradients for one segment; returns (nll, new_pool).

    Memory rows are constants (detached): their dx is discarded, but LN1
    gain/bias and the key/value projections still receive gradient through
    them. Gradients are for SUMMED nll; the caller normalizes.
    """
    config = ckpt.config
    params = ckpt.params
    L, H, dh = config.num_layers, config.num_heads, config.d_head
    d = config.d_model
    scale = math.sqrt(dh)
    dtype = ckpt.dtype()
    n = tokens.shape[0]
    mem_rows = pool.rows
    oldest = int(pool.positions[0]) if mem_rows else seg_start
    num_dist = n + max(seg_start - oldest, 0)
    sin_tab = sinusoid_table(num_dist, d)
    table = matmul(sin_tab, params["relpos_proj"])
    drop_p = config.dropout

    x = params["embed"][tokens].copy()
    caches = []
    layer_inputs = []
    col_pos = None
    for li in range(L):
        layer_inputs.append(x.copy())
        prefix = "layers.%d." % li
        mem_raw = pool.layer_states[li] if mem_rows else np.zeros((0, d), dtype)
        rows = np.concatenate([mem_raw.astype(dtype), x], axis=0)
        normed, xhat, inv_std = backend.layer_norm_rows(
            np.ascontiguousarray(rows),
            params[prefix + "ln1.gain"], params[prefix + "ln1.bias"], 1e-5,
        )
        x_n = normed[mem_rows:]
        col_pos = np.arange(mem_rows + n, dtype=np.int64)
        heads = []
        attn_out = np.empty((n, d), dtype)
        for h in range(H):
            ph = head_params(params, li, h)
            q = matmul(x_n, ph.w_q)
            k = matmul(normed, ph.w_k_content)
            v = matmul(normed, ph.w_v)
            kp = matmul(table, ph.w_k_pos)
            qf = q.astype(np.float64)
            ac = (qf + ph.u_bias.astype(np.float64)) @ k.astype(np.float64).T
            ps = (qf + ph.v_bias.astype(np.float64)) @ kp.astype(np.float64).T
            bd = backend.relative_gather(ps, col_pos, mem_rows)
            probs = backend.causal_softmax(
                np.ascontiguousarray(ac + bd), col_pos, mem_rows, scale
            )
            out_h = matmul(probs, v.astype(np.float64)).astype(dtype)
            attn_out[:, h * dh : (h + 1) * dh] = out_h
            heads.append((q, k, v, kp, probs))
        drop_attn = None
        if drop_p > 0.0:
            drop_attn = (drop_rng.uniform((n, d), dtype=np.float64) >= drop_p) / (
                1.0 - drop_p
            )
            attn_out = (attn_out * drop_attn).astype(dtype)
        x1 = x + attn_out
        normed2, xhat2, inv2 = backend.layer_norm_rows(
            np.ascontiguousarray(x1),
            params[prefix + "ln2.gain"], params[prefix + "ln2.bias"], 1e-5,
        )
        pre = matmul(normed2, params[prefix + "ffn.w1"]) + params[prefix + "ffn.b1"]
        act = np.maximum(pre, 0)
        ffn_out = matmul(act, params[prefix + "ffn.w2"]) + params[prefix + "ffn.b2"]
        drop_ffn = None
        if drop_p > 0.0:
            drop_ffn = (drop_rng.uniform((n, d), dtype=np.float64) >= drop_p) / (
                1.0 - drop_p
            )
            ffn_out = (ffn_out * drop_ffn).astype(dtype)
        x = x1 + ffn_out
        caches.append(
            dict(normed=normed, xhat=xhat, inv_std=inv_std, x_n=x_n, heads=heads,
                 drop_attn=drop_attn, x1=x1, xhat2=xhat2, inv2=inv2,
                 normed2=normed2, act=act, relu_mask=(pre > 0), drop_ffn=drop_ffn)
        )

    final, xhatF, invF = backend.layer_norm_rows(
        np.ascontiguousarray(x), params["final_ln.gain"], params["final_ln.bias"], 1e-5
    )
    logits = matmul(final, params["out_proj.w"]) + params["out_proj.b"]
    nll, dlogits = backend.softmax_xent_grad(
        np.ascontiguousarray(logits, dtype=np.float64), targets
    )

    # ---- backward ----
    g = grads
    g["out_proj.w"] += final.astype(np.float64).T @ dlogits
    g["out_proj.b"] += dlogits.sum(axis=0)
    dfinal = dlogits @ params["out_proj.w"].astype(np.float64).T
    dx, dgF, dbF = backend.layer_norm_rows_grad(
        dfinal, xhatF, invF, params["final_ln.gain"]
    )
    g["final_ln.gain"] += dgF
    g["final_ln.bias"] += dbF

    dtab = np.zeros_like(table, dtype=np.float64)
    for li in reversed(range(L)):
        prefix = "layers.%d." % li
        c = caches[li]
        # ffn branch
        dffn_out = dx if c["drop_ffn"] is None else dx * c["drop_ffn"]
        g[prefix + "ffn.w2"] += c["act"].astype(np.float64).T @ dffn_out
        g[prefix + "ffn.b2"] += dffn_out.sum(axis=0)
        dact = dffn_out @ params[prefix + "ffn.w2"].astype(np.float64).T
        dpre = dact * c["relu_mask"]
        g[prefix + "ffn.w1"] += c["normed2"].astype(np.float64).T @ dpre
        g[prefix + "ffn.b1"] += dpre.sum(axis=0)
        dnormed2 = dpre @ params[prefix + "ffn.w1"].astype(np.float64).T
        dx1, dg2, db2 = backend.layer_norm_rows_grad(
            dnormed2, c["xhat2"], c["inv2"], params[prefix + "ln2.gain"]
        )
        dx1 = dx1 + dx
        g[prefix + "ln2.gain"] += dg2
        g[prefix + "ln2.bias"] += db2
        # attention branch
        dattn = dx1 if c["drop_attn"] is None else dx1 * c["drop_attn"]
        dnormed = np.zeros((mem_rows + n, d), dtype=np.float64)
        dx_n = np.zeros((n, d), dtype=np.float64)
        x_n64 = c["x_n"].astype(np.float64)
        normed64 = c["normed"].astype(np.float64)
        for h in range(H):
            q, k, v, kp, probs = c["heads"][h]
            ph = head_params(params, li, h)
            dout = dattn[:, h * dh : (h + 1) * dh]
            dprobs = dout @ v.astype(np.float64).T
            dv = probs.T @ dout
            dlog = backend.softmax_grad(
                np.ascontiguousarray(dprobs), probs, scale
            )
            k64 = k.astype(np.float64)
            kp64 = kp.astype(np.float64)
            qf = q.astype(np.float64) + ph.u_bias.astype(np.float64)
            qv = q.astype(np.float64) + ph.v_bias.astype(np.float64)
            # ac = (q+u) k^T
            dqu = dlog @ k64
            dk = dlog.T @ qf
            # bd = gather((q+v) kp^T)
            dps = backend.relative_scatter(dlog, col_pos, mem_rows, num_dist)
            dqv = dps @ kp64
            dkp = dps.T @ qv
            dq = dqu + dqv
            g[prefix + "attn.u"][h] += dqu.sum(axis=0)
            g[prefix + "attn.v"][h] += dqv.sum(axis=0)
            g[prefix + "attn.wq"][h] += x_n64.T @ dq
            g[prefix + "attn.wk"][h] += normed64.T @ dk
            g[prefix + "attn.wv"][h] += normed64.T @ dv
            g[prefix + "attn.wkp"][h] += table.astype(np.float64).T @ dkp
            dtab += dkp @ ph.w_k_pos.astype(np.float64).T
            dx_n += dq @ ph.w_q.astype(np.float64).T
            dnormed += dk @ ph.w_k_content.astype(np.float64).T
            dnormed += dv @ ph.w_v.astype(np.float64).T
        dnormed[mem_rows:] += dx_n
        drows, dg1, db1 = backend.layer_norm_rows_grad(
            dnormed, c["xhat"], c["inv_std"], params[prefix + "ln1.gain"]
        )
        g[prefix + "ln1.gain"] += dg1
        g[prefix + "ln1.bias"] += db1
        dx = dx1 + drows[mem_rows:]  # memory rows are detached

    g["relpos_proj"] += sin_tab.astype(np.float64).T @ dtab
    demb = g["embed"]
    np.add.at(demb, tokens, dx)

    new_pool = pool
    if config.pool_capacity > 0:
        new_pool = memsel.pool_update(
            pool, layer_inputs, seg_start + np.arange(n), tokens
        )
    return nll, new_pool


class TrainResult(NamedTuple):
    checkpoint: Checkpoint
    loss_curve: List[float]  # mean nll (nats/token) per step


@dataclass
class TrainParams:
    lr: float = 2.5e-4
    steps: int = 600
    batch: int = 8
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    cosine: bool = True


def train_toy(config, stream, hparams=None, init=None):
    """Train on a token stream with segment recurrence (full-pool memory).

    Each batch lane owns a contiguous slice of the stream and walks it
    cyclically segment by segment, carrying its own memory pool. Returns the
    trained checkpoint and the per-step loss curve.
    """
    hp = hparams or TrainParams()
    config.validate()
    stream = np.asarray(stream, dtype=np.int64)
    if stream.shape[0] < hp.batch * (config.segment_len + 1):
        raise UsageError(
            "train_toy: stream of %d tokens too short for batch %d x segment %d"
            % (stream.shape[0], hp.batch, config.segment_len)
        )
    if hp.steps < 0:
        raise UsageError("train_toy: steps must be >= 0")
    rng = Rng(hp.seed)
    init_rng, drop_rng = rng.split(2)
    ckpt = init if init is not None else init_checkpoint(config, init_rng)
    n = config.segment_len
    lane_len = stream.shape[0] // hp.batch
    lanes = [stream[i * lane_len : (i + 1) * lane_len] for i in range(hp.batch)]
    pool_dtype = ckpt.dtype()
    pools = [
        memsel.empty_pool(
            config.num_layers, config.d_model, config.pool_capacity, dtype=pool_dtype
        )
        for _ in range(hp.batch)
    ]
    cursors = [0] * hp.batch
    adam_m = {k: np.zeros(v.size, dtype=np.float64) for k, v in ckpt.params.items()}
    adam_v = {k: np.zeros(v.size, dtype=np.float64) for k, v in ckpt.params.items()}
    curve = []
    for step in range(hp.steps):
        grads = {k: np.zeros(v.shape, dtype=np.float64) for k, v in ckpt.params.items()}
        total_nll = 0.0
        total_tok = 0
        for b in range(hp.batch):
            if cursors[b] + n + 1 > lanes[b].shape[0]:
                cursors[b] = 0
                pools[b] = memsel.empty_pool(
                    config.num_layers, config.d_model, config.pool_capacity,
                    dtype=pool_dtype,
                )
            seg = lanes[b][cursors[b] : cursors[b] + n]
            targets = lanes[b][cursors[b] + 1 : cursors[b] + 1 + n]
            nll, pools[b] = _train_forward_backward(
                ckpt, seg, targets, pools[b], cursors[b], grads, drop_rng=drop_rng
            )
            total_nll += nll
            total_tok += n
            cursors[b] += n
        mean_nll = total_nll / total_tok
        if not math.isfinite(mean_nll):
            raise DivergenceError(
                "training diverged at step %d (loss=%r)" % (step, mean_nll)
            )
        curve.append(mean_nll)
        lr_t = hp.lr
        if hp.cosine and hp.steps > 0:
            lr_t = hp.lr * 0.5 * (1.0 + math.cos(math.pi * step / hp.steps))
        for name, p in ckpt.params.items():
            gflat = (grads[name] / total_tok).reshape(-1)
            backend.adam_update(
                p.reshape(-1), gflat, adam_m[name], adam_v[name],
                lr_t, hp.beta1, hp.beta2, hp.eps, step + 1,
            )
    return TrainResult(checkpoint=ckpt, loss_curve=curve)
