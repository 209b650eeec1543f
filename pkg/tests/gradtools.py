"""Finite-difference gradient checking helpers shared by the test modules.

The model is cast to float64 and a memory pool is frozen from a warmup
segment at the unperturbed weights, so the finite differences probe exactly
the quantity the analytic backward computes: d NLL(segment B) / d theta with
the pool held fixed.
"""

import numpy as np

from trams import memory as memsel
from trams import model as M
from trams.numerics import Rng


def build_case(num_layers=2, d_model=8, seed=0):
    cfg = M.ModelConfig(vocab_size=13, num_layers=num_layers, num_heads=2,
                        d_model=d_model, d_ffn=2 * d_model, segment_len=6,
                        pool_capacity=12, selected_m=12)
    ck = M.init_checkpoint(cfg, Rng(seed)).astype(np.float64)
    rng = Rng(seed + 1)
    warm = rng.integers(0, 13, size=6).astype(np.int64)
    toks = rng.integers(0, 13, size=6).astype(np.int64)
    targets = rng.integers(0, 13, size=6).astype(np.int64)
    return ck, warm, toks, targets


def frozen_pool(ck, warm):
    pool = memsel.empty_pool(ck.config.num_layers, ck.config.d_model,
                             ck.config.pool_capacity, dtype=np.float64)
    _, pool, _ = M.forward_segment(ck, warm, pool, strategy="none", seg_start=0)
    return pool


def loss_and_grads(ck, pool, toks, targets):
    grads = {k: np.zeros_like(v, dtype=np.float64) for k, v in ck.params.items()}
    nll, _ = M._train_forward_backward(ck, toks, targets, pool,
                                       seg_start=pool.rows, grads=grads)
    return nll, grads


def sample_coords(params, per_tensor, rng):
    coords = []
    for name, t in params.items():
        flat = t.reshape(-1)
        take = min(per_tensor, flat.size)
        for idx in rng.choice_no_replace(flat.size, take):
            coords.append((name, int(idx)))
    return coords


def max_rel_error(ck, warm, toks, targets, coords, h=1e-5):
    # pool content is a constant of the loss: build it once, reuse everywhere
    pool = frozen_pool(ck, warm)
    _, grads = loss_and_grads(ck, pool, toks, targets)

    def loss_at(name, idx, delta):
        flat = ck.params[name].reshape(-1)
        old = flat[idx]
        flat[idx] = old + delta
        try:
            nll, _ = loss_and_grads(ck, pool, toks, targets)
        finally:
            flat[idx] = old
        return nll

    worst = 0.0
    for name, idx in coords:
        fd = (loss_at(name, idx, h) - loss_at(name, idx, -h)) / (2 * h)
        an = grads[name].reshape(-1)[idx]
        rel = abs(an - fd) / max(abs(an), abs(fd), 1e-6)
        worst = max(worst, rel)
    return worst
