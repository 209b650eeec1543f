"""Desk-scale analyses of the selection mechanism.

Every experiment here drives the model through a corpus with the full pool
visible (no selection), then asks counterfactual questions about that one
trajectory: how well do cheap rankings agree with the true attention
ranking, how concentrated are the reformulated norms, and how much
attention mass does each selection strategy recover. Measuring all
strategies against the same full-pool softmax keeps them on one scale and
makes the oracle's dominance exact rather than approximate.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import memory as memsel
from . import model as mdl
from .attention import build_relpos_table, reformulate_keys, relpos_logits
from .errors import UsageError
from .model import eval_corpus, forward_segment, head_params
from .numerics import Rng, spearman_rank_correlation

BUCKETS = (1, 10, 30, 50, 100)
METRICS = ("key_norm", "angle", "dot_product")


def _walk(ckpt, stream, segment_len=None, pool_capacity=None, max_segments=None,
          collect_probs=False):
    """Full-pool trajectory; yields per-segment views for counterfactuals."""
    config = ckpt.config
    n = segment_len or config.segment_len
    cap = config.pool_capacity if pool_capacity is None else pool_capacity
    stream = np.asarray(stream, dtype=np.int64)
    if stream.shape[0] < 2:
        raise UsageError("diagnostics: corpus sample must hold at least 2 tokens")
    run_cfg = mdl.ModelConfig(**{
        **{f: getattr(config, f) for f in config.__dataclass_fields__},
        "segment_len": n, "pool_capacity": cap,
        "selected_m": min(config.selected_m, cap) if cap else config.selected_m,
        "strategy": "none",
    })
    run = mdl.Checkpoint(config=run_cfg, params=ckpt.params, vocab=ckpt.vocab)
    pool = memsel.empty_pool(config.num_layers, config.d_model, cap,
                             dtype=ckpt.dtype())
    served = 0
    for pos in range(0, stream.shape[0] - 1, n):
        toks = stream[pos : pos + n]
        mem_pos = pool.positions.copy()
        _, pool, stats = forward_segment(
            run, toks, pool, strategy="none", seg_start=pos,
            collect_probs=collect_probs, collect_normed=True,
        )
        yield {
            "seg_start": pos,
            "tokens": toks,
            "mem_positions": mem_pos,
            "mem_rows": stats.mem_rows,
            "stats": stats,
            "config": run_cfg,
        }
        served += 1
        if max_segments is not None and served >= max_segments:
            return


@dataclass
class CorrelationTable:
    """Mean Spearman agreement with the true ranking, per top-percent bucket."""

    buckets: list
    metrics: tuple
    scores: dict  # metric -> per-bucket mean (None when every sample skipped)
    zero_variance: dict  # metric -> per-bucket flag
    counts: list  # samples contributing per bucket
    samples: int
    metadata: dict = field(default_factory=dict)

    def to_rows(self):
        rows = []
        for bi, b in enumerate(self.buckets):
            row = {"bucket_percent": b, "samples": self.counts[bi]}
            for m in self.metrics:
                row[m] = self.scores[m][bi]
                row[m + "_zero_variance"] = self.zero_variance[m][bi]
            rows.append(row)
        return rows

    def to_dict(self):
        return {"experiment": "correlation", "rows": self.to_rows(),
                "samples": self.samples, "metadata": self.metadata}


def ranking_correlation_experiment(ckpt, stream, buckets=BUCKETS,
                                   segment_len=None, pool_capacity=None,
                                   max_segments=8):
    """Spearman of cheap rankings against the position-inclusive logit ranking.

    For every (segment, layer, head) with memory present, all (query, memory)
    pairs are ranked by the true attention logit. Within each top-percent
    bucket of that ranking, candidate scores (key norm alone, query/key angle
    alone, the logit itself) are rank-correlated with the truth and the
    correlations averaged over samples.
    """
    buckets = sorted(int(b) for b in buckets)
    if not buckets or buckets[0] < 1 or buckets[-1] > 100:
        raise UsageError("ranking_correlation_experiment: buckets must lie in [1, 100]")
    sums = {m: [0.0] * len(buckets) for m in METRICS}
    flags = {m: [False] * len(buckets) for m in METRICS}
    counts = [0] * len(buckets)
    samples = 0
    config = ckpt.config
    for seg in _walk(ckpt, stream, segment_len, pool_capacity, max_segments):
        mp = seg["mem_rows"]
        if mp < 2:
            continue
        n = seg["tokens"].shape[0]
        num_dist = n + seg["seg_start"] - int(seg["mem_positions"][0])
        table = build_relpos_table(num_dist, config.d_model, ckpt.params["relpos_proj"])
        col_pos = np.concatenate([
            seg["mem_positions"] - seg["seg_start"] + mp,
            mp + np.arange(n),
        ])
        for li in range(config.num_layers):
            normed = seg["stats"].normed[li]
            mem_n, x_n = normed[:mp], normed[mp:]
            for h in range(config.num_heads):
                ph = head_params(ckpt.params, li, h)
                logits = relpos_logits(x_n, mem_n, ph, table,
                                       col_pos=col_pos, mem_cols=mp)
                g = logits[:, :mp].astype(np.float64)
                keys = reformulate_keys(mem_n, ph).astype(np.float64)
                knorm = np.sqrt((keys * keys).sum(axis=1))
                q = x_n.astype(np.float64)
                qnorm = np.sqrt((q * q).sum(axis=1))
                dots = q @ keys.T
                denom = np.outer(qnorm, knorm)
                ang = np.divide(dots, denom, out=np.zeros_like(dots),
                                where=denom > 0)
                cand = {
                    "key_norm": np.broadcast_to(knorm, g.shape).reshape(-1),
                    "angle": ang.reshape(-1),
                    "dot_product": g.reshape(-1),
                }
                flat_g = g.reshape(-1)
                order = np.argsort(-flat_g, kind="stable")
                total = flat_g.shape[0]
                samples += 1
                for bi, pct in enumerate(buckets):
                    k = (total * pct) // 100
                    if k < 2:
                        continue
                    top = order[:k]
                    counts[bi] += 1
                    for mname in METRICS:
                        r = spearman_rank_correlation(flat_g[top], cand[mname][top])
                        sums[mname][bi] += r.correlation
                        flags[mname][bi] = flags[mname][bi] or r.zero_variance
    scores = {m: [sums[m][bi] / counts[bi] if counts[bi] else None
                  for bi in range(len(buckets))] for m in METRICS}
    meta = {
        "population": "all (query, memory) pairs per segment/layer/head",
        "bucket_rule": "top-percent by true logit, per sample, then averaged",
        "layers": "all", "heads": "all",
        "segments_with_memory": samples // max(config.num_layers * config.num_heads, 1),
    }
    return CorrelationTable(buckets=list(buckets), metrics=METRICS, scores=scores,
                            zero_variance=flags, counts=counts, samples=samples,
                            metadata=meta)


@dataclass
class NormReport:
    """Distribution of reformulated query/key norms at selection points."""

    per_layer: list
    q_dispersion: float  # IQR / median, averaged over layers
    k_dispersion: float
    mean_abs_row_mean: float  # layernorm sanity: row means of Q' rows
    frac_norm_in_band: float  # share of Q' rows with ||h||/sqrt(d) in [0.8, 1.2]
    samples: int

    def to_rows(self):
        return self.per_layer

    def to_dict(self):
        return {"experiment": "norms", "rows": self.per_layer,
                "q_dispersion": self.q_dispersion,
                "k_dispersion": self.k_dispersion,
                "mean_abs_row_mean": self.mean_abs_row_mean,
                "frac_norm_in_band": self.frac_norm_in_band,
                "samples": self.samples}


def _iqr(a):
    lo, hi = np.percentile(a, [25.0, 75.0])
    return float(hi - lo)


def norm_distribution(ckpt, stream, segment_len=None, pool_capacity=None,
                      max_segments=8, bins=20):
    """Per-layer histograms and dispersion of the reformulated norms."""
    config = ckpt.config
    d = config.d_model
    q_by_layer = [[] for _ in range(config.num_layers)]
    k_by_layer = [[] for _ in range(config.num_layers)]
    row_means = []
    samples = 0
    for seg in _walk(ckpt, stream, segment_len, pool_capacity, max_segments):
        mp = seg["mem_rows"]
        samples += 1
        for li in range(config.num_layers):
            normed = seg["stats"].normed[li]
            mem_n, x_n = normed[:mp], normed[mp:]
            q_by_layer[li].append(
                np.sqrt((x_n.astype(np.float64) ** 2).sum(axis=1)))
            row_means.append(np.abs(x_n.astype(np.float64).mean(axis=1)))
            if mp:
                for h in range(config.num_heads):
                    keys = reformulate_keys(mem_n, head_params(ckpt.params, li, h))
                    k_by_layer[li].append(
                        np.sqrt((keys.astype(np.float64) ** 2).sum(axis=1)))
    per_layer = []
    q_disp, k_disp = [], []
    all_q = []
    for li in range(config.num_layers):
        q = np.concatenate(q_by_layer[li])
        all_q.append(q)
        row = {"layer": li,
               "q_median": float(np.median(q)), "q_iqr": _iqr(q)}
        qh, qe = np.histogram(q, bins=bins)
        row["q_hist"] = qh.tolist()
        row["q_edges"] = [float(e) for e in qe]
        if k_by_layer[li]:
            k = np.concatenate(k_by_layer[li])
            row["k_median"] = float(np.median(k))
            row["k_iqr"] = _iqr(k)
            kh, ke = np.histogram(k, bins=bins)
            row["k_hist"] = kh.tolist()
            row["k_edges"] = [float(e) for e in ke]
            k_disp.append(row["k_iqr"] / max(row["k_median"], 1e-12))
        q_disp.append(row["q_iqr"] / max(row["q_median"], 1e-12))
        per_layer.append(row)
    qcat = np.concatenate(all_q)
    return NormReport(
        per_layer=per_layer,
        q_dispersion=float(np.mean(q_disp)),
        k_dispersion=float(np.mean(k_disp)) if k_disp else float("nan"),
        mean_abs_row_mean=float(np.mean(np.concatenate(row_means))),
        frac_norm_in_band=float(
            np.mean((qcat / math.sqrt(d) >= 0.8) & (qcat / math.sqrt(d) <= 1.2))),
        samples=samples,
    )


@dataclass
class UtilizationReport:
    """Recovered attention mass per strategy under one shared full-pool run."""

    m: int
    capacity: int
    segments: int
    means: dict  # strategy -> mean mass over (segment, layer, head, query)
    series: dict  # strategy -> per-segment mean mass
    improvement_trams_vs_recency: Optional[float]
    gaps: dict  # pair tag -> (lo, mean, hi) bootstrap CI of per-segment gap
    dominance: dict  # "oracle_ge_<s>" -> bool, checked per instance
    directions: Optional[dict] = None

    def to_rows(self):
        rows = []
        for name, series in self.series.items():
            for i, v in enumerate(series):
                rows.append({"strategy": name, "segment": i, "mass": v})
        return rows

    def to_dict(self):
        return {"experiment": "utilization", "m": self.m,
                "capacity": self.capacity, "segments": self.segments,
                "means": self.means,
                "improvement_trams_vs_recency": self.improvement_trams_vs_recency,
                "gaps": self.gaps, "dominance": self.dominance,
                "directions": self.directions}


def _bootstrap_ci(series, rng, draws=1000, alpha=0.05):
    a = np.asarray(series, dtype=np.float64)
    if a.shape[0] < 2:
        mean = float(a.mean()) if a.size else float("nan")
        return (mean, mean, mean)
    idx = rng.integers(0, a.shape[0], size=(draws, a.shape[0]))
    means = a[idx].mean(axis=1)
    lo, hi = np.percentile(means, [100 * alpha / 2, 100 * (1 - alpha / 2)])
    return (float(lo), float(a.mean()), float(hi))


def utilization_experiment(ckpt, stream, strategies=("trams", "oracle", "random",
                                                     "recency"),
                           m=None, segment_len=None, pool_capacity=None,
                           direction=None, seed=0, max_segments=None,
                           bootstrap_draws=1000, compare_directions=False):
    """Counterfactual mass comparison on a single no-selection trajectory.

    The pool and the full-pool attention probabilities come from one run with
    selection disabled; each strategy only proposes which m rows to keep, and
    its score is the probability mass those rows carry in the shared softmax.
    The oracle picks the mass-maximizing set, so it dominates per instance by
    construction, and gaps between strategies are paired per segment.
    """
    config = ckpt.config
    cap = config.pool_capacity if pool_capacity is None else pool_capacity
    if cap < 1:
        raise UsageError("utilization_experiment: needs a memory pool")
    if m is None:
        m = min(config.selected_m, cap)
    if direction is None:
        direction = config.metric_direction
    rng = Rng(seed)
    dirs = memsel.DIRECTIONS if compare_directions else ()
    series = {s: [] for s in strategies}
    dir_sums = {d: [] for d in dirs}
    worst_gap = {s: np.inf for s in strategies if s != "oracle"}
    segments = 0
    for seg in _walk(ckpt, stream, segment_len, cap, max_segments,
                     collect_probs=True):
        mp = seg["mem_rows"]
        if mp < 1:
            continue
        m_eff = min(m, mp)
        seg_vals = {s: [] for s in strategies}
        dir_vals = {d: [] for d in dirs}
        for li in range(config.num_layers):
            normed = seg["stats"].normed[li]
            mem_n = normed[:mp]
            for h in range(config.num_heads):
                P = seg["stats"].probs[li][h]
                col_mass = P[:, :mp].sum(axis=0)
                n_rows = P.shape[0]
                picks = {}
                for s in strategies:
                    sel = mdl._select_for_head(
                        config, s, mem_n, head_params(ckpt.params, li, h),
                        m_eff, direction, rng, li, h, probs_full=P,
                    ) if s != "none" else None
                    chosen = np.arange(mp) if sel is None else sel.chosen_indices
                    mass = float(col_mass[chosen].sum() / n_rows)
                    picks[s] = mass
                    seg_vals[s].append(mass)
                if "oracle" in picks:
                    for s, v in picks.items():
                        if s != "oracle":
                            worst_gap[s] = min(worst_gap[s], picks["oracle"] - v)
                for dname in dirs:
                    sel = mdl._select_for_head(
                        config, "trams", mem_n, head_params(ckpt.params, li, h),
                        m_eff, dname, rng, li, h,
                    )
                    dir_vals[dname].append(
                        float(col_mass[sel.chosen_indices].sum() / n_rows))
        for s in strategies:
            series[s].append(float(np.mean(seg_vals[s])))
        for dname in dirs:
            dir_sums[dname].append(float(np.mean(dir_vals[dname])))
        segments += 1
    if not segments:
        raise UsageError("utilization_experiment: no segment had memory rows")
    means = {s: float(np.mean(series[s])) for s in strategies}
    improvement = None
    if "trams" in means and "recency" in means and means["recency"] > 0:
        improvement = (means["trams"] - means["recency"]) / means["recency"]
    boot = Rng(seed + 1)
    gaps = {}
    for a, b in (("trams", "random"), ("trams", "recency"), ("oracle", "trams")):
        if a in series and b in series:
            diff = np.asarray(series[a]) - np.asarray(series[b])
            gaps["%s_minus_%s" % (a, b)] = _bootstrap_ci(diff, boot, bootstrap_draws)
    dominance = {"oracle_ge_%s" % s: bool(worst_gap[s] >= -1e-12)
                 for s in worst_gap if "oracle" in strategies}
    directions = ({d: float(np.mean(v)) for d, v in dir_sums.items()}
                  if compare_directions else None)
    return UtilizationReport(m=m, capacity=cap, segments=segments, means=means,
                             series=series,
                             improvement_trams_vs_recency=improvement,
                             gaps=gaps, dominance=dominance,
                             directions=directions)


def memory_utilization(ckpt, stream, strategy, **kw):
    """Mean full-pool attention mass recovered by one strategy's picks."""
    wanted = {strategy, "trams", "recency"}
    rep = utilization_experiment(ckpt, stream, strategies=tuple(sorted(wanted)),
                                 **kw)
    return rep.means[strategy]


@dataclass
class AblationCurve:
    parameter: str  # one of M, m, n, layer
    metric: str
    points: list  # (value, metric) for the selecting strategy
    baseline: list  # aligned (value, metric) for the recency baseline
    flags: list  # skipped values with reasons

    def to_rows(self):
        rows = []
        for (v, y), (_, yb) in zip(self.points, self.baseline):
            rows.append({"parameter": self.parameter, "value": v,
                         self.metric: y, self.metric + "_baseline": yb})
        return rows

    def to_dict(self):
        return {"experiment": "ablation", "parameter": self.parameter,
                "metric": self.metric, "rows": self.to_rows(),
                "flags": self.flags}


def ablation_sweep(ckpt, stream, parameter, values, strategy="trams",
                   m=None, segment_len=None, pool_capacity=None, seed=0):
    """One paired eval per value: the selecting strategy vs plain recency."""
    config = ckpt.config
    if parameter not in ("M", "m", "n", "layer"):
        raise UsageError("ablation_sweep: unknown parameter %r" % (parameter,))
    cap = config.pool_capacity if pool_capacity is None else pool_capacity
    base_m = m if m is not None else config.selected_m
    points, baseline, flags = [], [], []
    for value in sorted(values):
        kw = {"segment_len": segment_len, "pool_capacity": cap,
              "selected_m": base_m, "seed": seed, "timestamps": False}
        if parameter == "M":
            kw["pool_capacity"] = value
        elif parameter == "m":
            if value > cap:
                flags.append("m=%d exceeds pool capacity %d, skipped" % (value, cap))
                continue
            kw["selected_m"] = value
        elif parameter == "n":
            kw["segment_len"] = value
        else:
            if not (0 <= value < config.num_layers):
                flags.append("layer %d outside [0, %d), skipped"
                             % (value, config.num_layers))
                continue
            kw["selection_layers"] = [value]
        try:
            sel = eval_corpus(ckpt, stream, strategy=strategy, **kw)
            base = eval_corpus(ckpt, stream, strategy="recency", **kw)
        except UsageError as exc:
            flags.append("%s=%r rejected: %s" % (parameter, value, exc))
            continue
        points.append((value, sel.bpc))
        baseline.append((value, base.bpc))
    return AblationCurve(parameter=parameter, metric="bpc", points=points,
                         baseline=baseline, flags=flags)


@dataclass
class CostProfile:
    rows: list  # per-strategy dicts: strategy, median_wall_s, peak_rss_bytes
    scaling: Optional[dict]  # selection time vs pool size fit

    def to_rows(self):
        return self.rows

    def to_dict(self):
        return {"experiment": "cost", "rows": self.rows, "scaling": self.scaling}


def _selection_seconds(ckpt, stream, cap, m, segment_len):
    config = ckpt.config
    n = segment_len or config.segment_len
    run_cfg = mdl.ModelConfig(**{
        **{f: getattr(config, f) for f in config.__dataclass_fields__},
        "segment_len": n, "pool_capacity": cap, "selected_m": min(m, cap),
        "strategy": "trams",
    })
    run = mdl.Checkpoint(config=run_cfg, params=ckpt.params, vocab=ckpt.vocab)
    pool = memsel.empty_pool(config.num_layers, config.d_model, cap, ckpt.dtype())
    stream = np.asarray(stream, dtype=np.int64)
    total = 0.0
    for pos in range(0, stream.shape[0] - 1, n):
        _, pool, stats = forward_segment(run, stream[pos : pos + n], pool,
                                         strategy="trams", seg_start=pos)
        total += stats.selection_seconds
    return total


def cost_profile(ckpt, stream, strategies=("none", "recency", "trams"),
                 repeats=5, m=None, segment_len=None, pool_capacity=None,
                 scaling_capacities=None, seed=0):
    """Median wall time and peak RSS per strategy, plus selection-time scaling.

    The first run per strategy is a warmup and never timed. When
    `scaling_capacities` is given, the selection stage alone is timed at each
    pool size and a log-log slope reported.
    """
    if repeats < 1:
        raise UsageError("cost_profile: repeats must be positive")
    rows = []
    for s in strategies:
        eval_corpus(ckpt, stream, strategy=s, segment_len=segment_len,
                    pool_capacity=pool_capacity, selected_m=m, seed=seed,
                    timestamps=False)
        walls, rss, nll = [], [], None
        for _ in range(repeats):
            rep = eval_corpus(ckpt, stream, strategy=s, segment_len=segment_len,
                              pool_capacity=pool_capacity, selected_m=m,
                              seed=seed)
            walls.append(rep.wall_time_s)
            rss.append(rep.peak_resident_bytes)
            nll = rep.total_nll_nats
        rows.append({"strategy": s, "median_wall_s": float(np.median(walls)),
                     "peak_rss_bytes": int(max(rss)),
                     "total_nll_nats": nll})
    scaling = None
    if scaling_capacities:
        caps = sorted(int(c) for c in scaling_capacities)
        sel_m = m if m is not None else ckpt.config.selected_m
        times = []
        for cap in caps:
            _selection_seconds(ckpt, stream, cap, sel_m, segment_len)
            runs = [_selection_seconds(ckpt, stream, cap, sel_m, segment_len)
                    for _ in range(max(3, repeats))]
            times.append(max(float(np.median(runs)), 1e-9))
        exponent = None
        if len(caps) >= 2:
            slope = np.polyfit(np.log(caps), np.log(times), 1)[0]
            exponent = float(slope)
        scaling = {"capacities": caps, "selection_seconds": times,
                   "exponent": exponent}
    return CostProfile(rows=rows, scaling=scaling)
