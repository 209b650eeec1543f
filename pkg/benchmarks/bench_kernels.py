"""Benchmark the numba kernels against the pure-numpy fallback.

Per-kernel microbenchmarks plus an end-to-end segment forward. Matmuls are
BLAS on both paths, so the interesting deltas are the fused softmax, the
layernorm pair, the gather/scatter, and the Adam update.

Usage: python3 benchmarks/bench_kernels.py [--repeats 9] [--rows 256]
"""

import argparse
import math
import time

import numpy as np

from trams import backend as backend_mod
from trams import memory as memsel
from trams import model as M
from trams.backend import KERNEL_NAMES, available_backends
from trams.numerics import Rng


def median_time(fn, repeats):
    fn()
    fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def kernel_cases(rows, rng):
    d = 64
    mem = 2 * rows
    cols = mem + rows
    logits = rng.normal((rows, cols), dtype=np.float64)
    col_pos = np.arange(cols, dtype=np.int64)
    scale = math.sqrt(d)
    probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    dprobs = rng.normal((rows, cols), dtype=np.float64)
    x = rng.normal((cols, d))
    gain = np.ones(d, np.float32)
    bias = np.zeros(d, np.float32)
    dout = rng.normal((cols, d))
    num_dist = cols + rows
    pos_scores = rng.normal((rows, num_dist), dtype=np.float64)
    vlogits = rng.normal((rows, 512), dtype=np.float64)
    targets = rng.integers(0, 512, size=rows)
    nparam = 1 << 20
    param = rng.normal((nparam,))
    grad = rng.normal((nparam,), dtype=np.float64)
    mom = np.zeros(nparam, np.float64)
    vel = np.zeros(nparam, np.float64)

    def ln_pack(k):
        return lambda: k.layer_norm_rows(x, gain, bias, 1e-5)

    cases = {
        "causal_softmax": lambda k: lambda: k.causal_softmax(
            logits, col_pos, mem, scale),
        "softmax_grad": lambda k: lambda: k.softmax_grad(dprobs, probs, scale),
        "layer_norm_rows": lambda k: ln_pack(k),
        "layer_norm_rows_grad": lambda k: (
            lambda: k.layer_norm_rows_grad(
                dout, *k.layer_norm_rows(x, gain, bias, 1e-5)[1:], gain)),
        "relative_gather": lambda k: lambda: k.relative_gather(
            pos_scores, col_pos, mem),
        "relative_scatter": lambda k: lambda: k.relative_scatter(
            dprobs, col_pos, mem, num_dist),
        "nll_total": lambda k: lambda: k.nll_total(vlogits, targets),
        "softmax_xent_grad": lambda k: lambda: k.softmax_xent_grad(
            vlogits, targets),
        "adam_update": lambda k: lambda: k.adam_update(
            param, grad, mom, vel, 1e-3, 0.9, 0.999, 1e-8, 3),
    }
    assert set(cases) == set(KERNEL_NAMES)
    return cases


def forward_case(backends, repeats, rng):
    cfg = M.ModelConfig(vocab_size=64, num_layers=4, num_heads=4, d_model=64,
                        d_ffn=256, segment_len=32, pool_capacity=128,
                        selected_m=32)
    ck = M.init_checkpoint(cfg, rng)
    toks = rng.integers(0, 64, size=32).astype(np.int64)
    pool = memsel.empty_pool(4, 64, 128)
    for k in range(5):
        _, pool, _ = M.forward_segment(ck, toks, pool, strategy="none",
                                       seg_start=32 * k)
    results = {}
    saved = {name: getattr(backend_mod, name) for name in KERNEL_NAMES}
    try:
        for label, mod in backends.items():
            for name in KERNEL_NAMES:
                setattr(backend_mod, name, getattr(mod, name))
            results[label] = median_time(
                lambda: M.forward_segment(ck, toks, pool, strategy="trams",
                                          seg_start=160), repeats)
    finally:
        for name, fn in saved.items():
            setattr(backend_mod, name, fn)
    return results


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=9)
    ap.add_argument("--rows", type=int, default=256)
    args = ap.parse_args()

    backends = available_backends()
    labels = list(backends)
    print("backends:", ", ".join(labels))
    rng = Rng(0)
    cases = kernel_cases(args.rows, rng)

    width = max(len(n) for n in KERNEL_NAMES)
    header = "%-*s" % (width, "kernel")
    for label in labels:
        header += "  %12s" % (label + " ms")
    if len(labels) == 2:
        header += "  %8s" % "speedup"
    print(header)
    print("-" * len(header))
    for name in KERNEL_NAMES:
        row = "%-*s" % (width, name)
        times = []
        for label in labels:
            t = median_time(cases[name](backends[label]), args.repeats)
            times.append(t)
            row += "  %12.4f" % (t * 1e3)
        if len(times) == 2:
            row += "  %7.2fx" % (times[0] / max(times[1], 1e-12))
        print(row)

    fwd = forward_case(backends, args.repeats, rng)
    row = "%-*s" % (width, "segment_forward")
    for label in labels:
        row += "  %12.4f" % (fwd[label] * 1e3)
    if len(labels) == 2:
        row += "  %7.2fx" % (fwd[labels[0]] / max(fwd[labels[1]], 1e-12))
    print(row)


if __name__ == "__main__":
    main()
