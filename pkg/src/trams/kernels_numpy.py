"""Pure-numpy reference kernels.

Every function here has an @njit twin in kernels_numba.py with the same
signature; trams.backend picks one set at import time. Dense matrix products
are deliberately NOT kernels: both backends delegate those to BLAS via
numpy, where it already wins.

Conventions shared by both backends:
  - probabilities and gradients are float64 (row sums must hold to 1e-9);
  - reductions over float32 storage accumulate in float64;
  - visibility of key column k to query row t is `col_pos[k] <= mem_cols + t`
    (memory columns sit at positions < mem_cols and are visible to every
    query; in-segment columns obey the causal order). Masked entries come
    out exactly 0.
"""

import numpy as np


def causal_softmax(logits, col_pos, mem_cols, scale):
    """Row softmax of logits/scale with structural causal masking.

    logits: (N, K) scores; col_pos: (K,) original column positions;
    returns (N, K) float64 probabilities, exact zeros at masked entries.
    Every row must keep at least one visible column.
    """
    n = logits.shape[0]
    visible = col_pos[None, :] <= mem_cols + np.arange(n)[:, None]
    x = logits.astype(np.float64) / scale
    x[~visible] = -np.inf
    x -= x.max(axis=1, keepdims=True)
    probs = np.exp(x)
    probs /= probs.sum(axis=1, keepdims=True)
    return probs


def softmax_grad(dprobs, probs, scale):
    """Backprop through causal_softmax; returns float64 dlogits."""
    inner = (dprobs * probs).sum(axis=1, keepdims=True)
    return probs * (dprobs - inner) / scale


def layer_norm_rows(x, gain, bias, eps):
    """Row-wise layer norm. Returns (out, xhat, inv_std) with float64 stats."""
    x64 = x.astype(np.float64)
    mu = x64.mean(axis=1, keepdims=True)
    var = x64.var(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x64 - mu) * inv_std
    out = (xhat * gain.astype(np.float64) + bias.astype(np.float64)).astype(x.dtype)
    return out, xhat, inv_std[:, 0]


def layer_norm_rows_grad(dout, xhat, inv_std, gain):
    """Backprop through layer_norm_rows."""
    d64 = dout.astype(np.float64)
    dgain = (d64 * xhat).sum(axis=0)
    dbias = d64.sum(axis=0)
    g = d64 * gain.astype(np.float64)
    mg = g.mean(axis=1, keepdims=True)
    mgx = (g * xhat).mean(axis=1, keepdims=True)
    dx = (g - mg - xhat * mgx) * inv_std[:, None]
    return dx, dgain, dbias


def relative_gather(pos_scores, col_pos, mem_cols):
    """Pick per-pair distance scores: out[t, k] = pos_scores[t, mem_cols + t - col_pos[k]].

    pos_scores: (N, D) scores indexed by distance; entries whose distance
    falls outside [0, D) (i.e. masked pairs) come out 0.
    """
    n, num_dist = pos_scores.shape
    delta = mem_cols + np.arange(n)[:, None] - col_pos[None, :]
    ok = (delta >= 0) & (delta < num_dist)
    out = np.take_along_axis(pos_scores, np.clip(delta, 0, num_dist - 1), axis=1)
    out[~ok] = 0.0
    return out


def relative_scatter(dout, col_pos, mem_cols, num_dist):
    """Adjoint of relative_gather; returns (N, num_dist) float64."""
    n = dout.shape[0]
    delta = mem_cols + np.arange(n)[:, None] - col_pos[None, :]
    ok = (delta >= 0) & (delta < num_dist)
    rows = np.broadcast_to(np.arange(n)[:, None], delta.shape)
    acc = np.zeros((n, num_dist), dtype=np.float64)
    np.add.at(acc, (rows[ok], delta[ok]), dout.astype(np.float64)[ok])
    return acc


def nll_total(logits, targets):
    """Summed negative log softmax probability of targets, in nats (float64)."""
    x = logits.astype(np.float64)
    m = x.max(axis=1)
    lse = m + np.log(np.exp(x - m[:, None]).sum(axis=1))
    picked = x[np.arange(x.shape[0]), targets]
    return float((lse - picked).sum())


def softmax_xent_grad(logits, targets):
    """Fused cross-entropy: returns (summed nll, dlogits = softmax - onehot)."""
    x = logits.astype(np.float64)
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    z = e.sum(axis=1, keepdims=True)
    probs = e / z
    rows = np.arange(x.shape[0])
    nll = float((np.log(z[:, 0]) + m[:, 0] - x[rows, targets]).sum())
    dlogits = probs
    dlogits[rows, targets] -= 1.0
    return nll, dlogits


def adam_update(param, grad, m, v, lr, beta1, beta2, eps, step):
    """One Adam step, in place on flat views. m, v are float64 state."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1**step)
    vhat = v / (1.0 - beta2**step)
    param[:] = (param.astype(np.float64) - lr * mhat / (np.sqrt(vhat) + eps)).astype(
        param.dtype
    )
