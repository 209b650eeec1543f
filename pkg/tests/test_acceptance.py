"""Acceptance gate: eleven checks, one line each in the terminal summary.

Each test measures its own wall time and appends a PASS/FAIL line with the
stated runtime budget; budgets are reported, not asserted, since they depend
on the host.
"""

import itertools
import math
import time

import numpy as np
import pytest

from trams import diagnostics as D
from trams import memory as memsel
from trams import model as M
from trams.attention import AttentionParams, attend_standard, reformulate_keys
from trams.checkpoint_io import load_checkpoint, save_checkpoint
from trams.numerics import Rng, matmul
from trams.reports import output_path, write_report


def record(log, num, desc, budget, ok, detail, elapsed):
    log.append("[%s] %2d %-14s %s (%.1fs, budget %s)"
               % ("PASS" if ok else "FAIL", num, desc, detail, elapsed, budget))
    assert ok, "criterion %d: %s" % (num, detail)


def test_c01_reformulation_exactness(acceptance_log):
    t0 = time.perf_counter()
    rng = Rng(101)
    worst = 0.0
    configs = 0
    while configs < 200:
        for heads in (1, 2, 4):
            d = int(rng.integers(0, 4, size=1)[0])
            d = (8, 16, 32, 64)[d]
            mp = int(rng.integers(1, 65, size=1)[0])
            n = int(rng.integers(1, 33, size=1)[0])
            h = rng.normal((n, d), dtype=np.float64)
            mem = rng.normal((mp, d), dtype=np.float64)
            for _ in range(heads):
                wq = rng.normal((d, d), std=1.0 / math.sqrt(d), dtype=np.float64)
                wk = rng.normal((d, d), std=1.0 / math.sqrt(d), dtype=np.float64)
                standard = matmul(matmul(h, wq), matmul(mem, wk).T)
                reformed = matmul(h, matmul(mem, matmul(wk, wq.T)).T)
                worst = max(worst, float(np.abs(standard - reformed).max()))
            configs += 1
            if configs >= 200:
                break
    record(acceptance_log, 1, "reformulation", "10s", worst < 1e-5,
           "max |standard - reformulated| logit diff %.3g over %d configs"
           % (worst, configs), time.perf_counter() - t0)


def test_c02_metric_identity(acceptance_log, trained_setup):
    t0 = time.perf_counter()
    rng = Rng(202)
    keys = rng.normal((10_000, 37), dtype=np.float64)
    direct = memsel.trams_scores(keys)
    rowsum = keys.sum(axis=1) / math.sqrt(37)
    worst = float(np.abs(direct - rowsum).max())
    ck = trained_setup.checkpoint
    cfg = ck.config
    heads_checked = 0
    for seg in itertools.islice(
            D._walk(ck, trained_setup.eval_stream, max_segments=3), 3):
        mp = seg["mem_rows"]
        if mp < 1:
            continue
        for li in range(cfg.num_layers):
            mem_n = seg["stats"].normed[li][:mp]
            for h in range(cfg.num_heads):
                kp = reformulate_keys(mem_n, M.head_params(ck.params, li, h))
                kp = kp.astype(np.float64)
                diff = np.abs(memsel.trams_scores(kp)
                              - kp.sum(axis=1) / math.sqrt(cfg.d_model))
                worst = max(worst, float(diff.max()))
                heads_checked += 1
    ok = worst < 1e-6 and heads_checked >= cfg.num_layers * cfg.num_heads
    record(acceptance_log, 2, "metric identity", "5s", ok,
           "max |cos-norm - rowsum/sqrt(d)| %.3g on 10^4 rows + %d trained heads"
           % (worst, heads_checked), time.perf_counter() - t0)


def test_c03_degenerate_equivalence(acceptance_log, trained_setup):
    t0 = time.perf_counter()
    ck = trained_setup.checkpoint
    ev = trained_setup.eval_stream
    cap = ck.config.pool_capacity
    base = M.eval_corpus(ck, ev, strategy="recency", selected_m=cap,
                         timestamps=False)
    worst = 0.0
    for strat in ("trams", "oracle", "random"):
        rep = M.eval_corpus(ck, ev, strategy=strat, selected_m=cap, seed=0,
                            timestamps=False)
        worst = max(worst, abs(rep.total_nll_nats - base.total_nll_nats))
    record(acceptance_log, 3, "m=M identity", "60s", worst <= 1e-9,
           "max |NLL - recency NLL| %.3g nats over %d tokens"
           % (worst, base.token_count), time.perf_counter() - t0)


def test_c04_oracle_optimality(acceptance_log):
    t0 = time.perf_counter()
    rng = Rng(404)
    d = 6
    worst = -np.inf
    for _ in range(500):
        mp = int(rng.integers(2, 13, size=1)[0])
        m = int(rng.integers(1, min(4, mp) + 1, size=1)[0])
        n = int(rng.integers(1, 6, size=1)[0])
        params = AttentionParams(
            w_q=rng.normal((d, d), std=1.0 / math.sqrt(d), dtype=np.float64),
            w_k_content=rng.normal((d, d), std=1.0 / math.sqrt(d),
                                   dtype=np.float64),
            w_k_pos=np.zeros((d, d)),
            w_v=np.zeros((d, d)),
            u_bias=np.zeros(d),
            v_bias=np.zeros(d),
        )
        h = rng.normal((n, d), dtype=np.float64)
        mem = rng.normal((mp, d), dtype=np.float64)
        sel = memsel.oracle_select(h, mem, params, m)
        mass = attend_standard(h, mem, params).probs[:, :mp].sum(axis=0)
        got = mass[sel.chosen_indices].sum()
        best = max(mass[list(sub)].sum()
                   for sub in itertools.combinations(range(mp), m))
        worst = max(worst, best - got)
    record(acceptance_log, 4, "oracle optimal", "30s", worst <= 1e-9,
           "max (best subset - oracle) mass %.3g over 500 enumerated instances"
           % worst, time.perf_counter() - t0)


def test_c05_gradient_check(acceptance_log):
    from tests import gradtools

    t0 = time.perf_counter()
    ck, warm, toks, targets = gradtools.build_case(num_layers=2, d_model=8)
    coords = gradtools.sample_coords(ck.params, per_tensor=6, rng=Rng(505))
    worst = gradtools.max_rel_error(ck, warm, toks, targets, coords)
    ok = worst < 1e-3 and len(coords) >= 200
    record(acceptance_log, 5, "gradient check", "60s", ok,
           "max relative error %.3g on %d sampled parameters"
           % (worst, len(coords)), time.perf_counter() - t0)


def test_c06_trainability(acceptance_log, trained_setup):
    t0 = time.perf_counter()
    rep = M.eval_corpus(trained_setup.checkpoint, trained_setup.eval_stream,
                        strategy="none", timestamps=False)
    target = math.log2(trained_setup.vocab.size) - 1.0
    record(acceptance_log, 6, "trainability", "600s", rep.bpc < target,
           "held-out bpc %.3f < %.3f (uniform %.3f); train took %.0fs"
           % (rep.bpc, target, math.log2(trained_setup.vocab.size),
              trained_setup.train_seconds),
           time.perf_counter() - t0 + trained_setup.train_seconds)


def test_c07_strategy_ordering(acceptance_log, trained_setup):
    t0 = time.perf_counter()
    ck = trained_setup.checkpoint
    m = ck.config.pool_capacity // 4
    rep = D.utilization_experiment(ck, trained_setup.eval_stream, m=m, seed=0,
                                   max_segments=110)
    ok = (rep.segments >= 100 and rep.dominance["oracle_ge_trams"]
          and rep.dominance["oracle_ge_random"])
    tr = rep.gaps["trams_minus_random"]
    tc = rep.gaps["trams_minus_recency"]
    record(acceptance_log, 7, "ordering m=M/4", "none", ok,
           "%d segs; oracle>=trams,random; trams-random CI [%.4f,%.4f], "
           "trams-recency CI [%.4f,%.4f]"
           % (rep.segments, tr[0], tr[2], tc[0], tc[2]),
           time.perf_counter() - t0)


def test_c08_correlation_harness(acceptance_log, trained_setup):
    t0 = time.perf_counter()
    ck = trained_setup.checkpoint
    tab = D.ranking_correlation_experiment(ck, trained_setup.eval_stream,
                                           max_segments=4)
    ok = all(tab.counts) and all(
        abs(s - 1.0) < 1e-12 for s in tab.scores["dot_product"])
    flat = M.Checkpoint(config=ck.config,
                        params={k: v.copy() for k, v in ck.params.items()},
                        vocab=ck.vocab)
    for li in range(ck.config.num_layers):
        flat.params["layers.%d.attn.wk" % li][:] = 0.0
    tab2 = D.ranking_correlation_experiment(flat, trained_setup.eval_stream,
                                            max_segments=2)
    flagged = any(any(row) for row in tab2.zero_variance.values())
    record(acceptance_log, 8, "fig3 harness", "10s", ok and flagged,
           "dot-product Spearman 1.0 at buckets %s; constant metric flagged=%s"
           % (tab.buckets, flagged), time.perf_counter() - t0)


def test_c09_layernorm_stats(acceptance_log, trained_setup):
    t0 = time.perf_counter()
    rep = D.norm_distribution(trained_setup.checkpoint,
                              trained_setup.eval_stream, max_segments=6)
    ok = rep.mean_abs_row_mean < 0.05 and rep.frac_norm_in_band >= 0.95
    sharper = rep.q_dispersion < rep.k_dispersion
    record(acceptance_log, 9, "layernorm stats", "10s", ok and sharper,
           "|row mean| %.4f < 0.05; norm in [0.8,1.2]sqrt(d) for %.1f%%; "
           "query dispersion %.4f < key dispersion %.4f"
           % (rep.mean_abs_row_mean, 100 * rep.frac_norm_in_band,
              rep.q_dispersion, rep.k_dispersion), time.perf_counter() - t0)


def test_c10_oracle_half_memory(acceptance_log, trained_setup):
    t0 = time.perf_counter()
    ck = trained_setup.checkpoint
    ev = trained_setup.eval_stream
    cap = ck.config.pool_capacity
    full = M.eval_corpus(ck, ev, strategy="recency", selected_m=cap,
                         timestamps=False)
    half = M.eval_corpus(ck, ev, strategy="oracle", selected_m=cap // 2,
                         timestamps=False)
    rel = abs(half.total_nll_nats - full.total_nll_nats) / full.total_nll_nats
    record(acceptance_log, 10, "oracle at M/2", "60s", rel <= 0.01,
           "NLL %.1f vs full %.1f, relative gap %.4f (threshold 0.01)"
           % (half.total_nll_nats, full.total_nll_nats, rel),
           time.perf_counter() - t0)


def test_c11_determinism(acceptance_log, trained_setup, tmp_path):
    t0 = time.perf_counter()
    ck = trained_setup.checkpoint
    ev = trained_setup.eval_stream[:5000]
    a = M.eval_corpus(ck, ev, strategy="random", selected_m=16, seed=5,
                      timestamps=False)
    b = M.eval_corpus(ck, ev, strategy="random", selected_m=16, seed=5,
                      timestamps=False)
    reports_equal = a == b
    pa = output_path(str(tmp_path / "a"), "utilization", "csv", timestamp=False)
    pb = output_path(str(tmp_path / "b"), "utilization", "csv", timestamp=False)
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    for p in (pa, pb):
        rep = D.utilization_experiment(ck, ev, m=16, seed=3, max_segments=12)
        write_report(rep, p, "csv")
    bytes_equal = open(pa, "rb").read() == open(pb, "rb").read()
    c1 = tmp_path / "c1.ckpt"
    c2 = tmp_path / "c2.ckpt"
    save_checkpoint(ck, str(c1))
    save_checkpoint(load_checkpoint(str(c1)), str(c2))
    ckpt_exact = c1.read_bytes() == c2.read_bytes()
    ok = reports_equal and bytes_equal and ckpt_exact
    record(acceptance_log, 11, "determinism", "none", ok,
           "seeded reports equal=%s; csv byte-identical=%s; "
           "checkpoint round trip bit-exact=%s"
           % (reports_equal, bytes_equal, ckpt_exact),
           time.perf_counter() - t0)
