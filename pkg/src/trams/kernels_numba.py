"""@njit twins of kernels_numpy, loop-fused for the hot paths.

Importing this module requires numba; trams.backend falls back to the numpy
set when numba is missing or TRAMS_PURE_NUMPY is set. All math runs in
float64 regardless of storage dtype, matching the numpy reference.
No fastmath: reassociation would break cross-backend agreement.
"""

import math

import numpy as np
from numba import njit

_OPTS = dict(cache=True, nogil=True)


@njit(**_OPTS)
def causal_softmax(logits, col_pos, mem_cols, scale):
    n, k = logits.shape
    out = np.zeros((n, k), dtype=np.float64)
    for t in range(n):
        limit = mem_cols + t
        mx = -np.inf
        for j in range(k):
            if col_pos[j] <= limit:
                v = logits[t, j] / scale
                if v > mx:
                    mx = v
        total = 0.0
        for j in range(k):
            if col_pos[j] <= limit:
                e = math.exp(logits[t, j] / scale - mx)
                out[t, j] = e
                total += e
        inv = 1.0 / total
        for j in range(k):
            out[t, j] *= inv
    return out


@njit(**_OPTS)
def softmax_grad(dprobs, probs, scale):
    n, k = probs.shape
    out = np.empty((n, k), dtype=np.float64)
    for t in range(n):
        inner = 0.0
        for j in range(k):
            inner += dprobs[t, j] * probs[t, j]
        for j in range(k):
            out[t, j] = probs[t, j] * (dprobs[t, j] - inner) / scale
    return out


@njit(**_OPTS)
def layer_norm_rows(x, gain, bias, eps):
    rows, d = x.shape
    out = np.empty_like(x)
    xhat = np.empty((rows, d), dtype=np.float64)
    inv_std = np.empty(rows, dtype=np.float64)
    for r in range(rows):
        mu = 0.0
        for i in range(d):
            mu += x[r, i]
        mu /= d
        var = 0.0
        for i in range(d):
            diff = x[r, i] - mu
            var += diff * diff
        var /= d
        inv = 1.0 / math.sqrt(var + eps)
        inv_std[r] = inv
        for i in range(d):
            h = (x[r, i] - mu) * inv
            xhat[r, i] = h
            out[r, i] = h * gain[i] + bias[i]
    return out, xhat, inv_std


@njit(**_OPTS)
def layer_norm_rows_grad(dout, xhat, inv_std, gain):
    rows, d = dout.shape
    dx = np.empty((rows, d), dtype=np.float64)
    dgain = np.zeros(d, dtype=np.float64)
    dbias = np.zeros(d, dtype=np.float64)
    for r in range(rows):
        mg = 0.0
        mgx = 0.0
        for i in range(d):
            dv = float(dout[r, i])
            dgain[i] += dv * xhat[r, i]
            dbias[i] += dv
            g = dv * gain[i]
            mg += g
            mgx += g * xhat[r, i]
        mg /= d
        mgx /= d
        for i in range(d):
            g = dout[r, i] * gain[i]
            dx[r, i] = (g - mg - xhat[r, i] * mgx) * inv_std[r]
    return dx, dgain, dbias


@njit(**_OPTS)
def relative_gather(pos_scores, col_pos, mem_cols):
    n, num_dist = pos_scores.shape
    k = col_pos.shape[0]
    out = np.zeros((n, k), dtype=pos_scores.dtype)
    for t in range(n):
        for j in range(k):
            delta = mem_cols + t - col_pos[j]
            if 0 <= delta < num_dist:
                out[t, j] = pos_scores[t, delta]
    return out


@njit(**_OPTS)
def relative_scatter(dout, col_pos, mem_cols, num_dist):
    n, k = dout.shape
    acc = np.zeros((n, num_dist), dtype=np.float64)
    for t in range(n):
        for j in range(k):
            delta = mem_cols + t - col_pos[j]
            if 0 <= delta < num_dist:
                acc[t, delta] += dout[t, j]
    return acc


@njit(**_OPTS)
def nll_total(logits, targets):
    n, vocab = logits.shape
    total = 0.0
    for r in range(n):
        mx = -np.inf
        for j in range(vocab):
            v = float(logits[r, j])
            if v > mx:
                mx = v
        z = 0.0
        for j in range(vocab):
            z += math.exp(logits[r, j] - mx)
        total += math.log(z) + mx - logits[r, targets[r]]
    return total


@njit(**_OPTS)
def softmax_xent_grad(logits, targets):
    n, vocab = logits.shape
    dlogits = np.empty((n, vocab), dtype=np.float64)
    total = 0.0
    for r in range(n):
        mx = -np.inf
        for j in range(vocab):
            v = float(logits[r, j])
            if v > mx:
                mx = v
        z = 0.0
        for j in range(vocab):
            e = math.exp(logits[r, j] - mx)
            dlogits[r, j] = e
            z += e
        total += math.log(z) + mx - logits[r, targets[r]]
        inv = 1.0 / z
        for j in range(vocab):
            dlogits[r, j] *= inv
        dlogits[r, targets[r]] -= 1.0
    return total, dlogits


@njit(**_OPTS)
def adam_update(param, grad, m, v, lr, beta1, beta2, eps, step):
    bc1 = 1.0 - beta1**step
    bc2 = 1.0 - beta2**step
    for i in range(param.shape[0]):
        g = grad[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * g
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g
        param[i] -= lr * (m[i] / bc1) / (math.sqrt(v[i] / bc2) + eps)
