"""Dense linear algebra and statistics shared by every other module.

Matrices are plain numpy arrays (row-major, float32 storage). Reductions
accumulate in float64; probability vectors stay float64 so row sums hold to
1e-9. Randomness goes through `Rng`, a counter-based Philox stream that is
bit-identical across platforms for a given seed and can be split into
independent child streams.
"""

import warnings
from typing import NamedTuple

import numpy as np

from . import backend
from .errors import DegenerateVectorWarning, UsageError


class Rng:
    """Splittable deterministic random stream."""

    def __init__(self, seed, _seq=None):
        self.seed = int(seed)
        self._seq = np.random.SeedSequence(self.seed) if _seq is None else _seq
        self._gen = np.random.Generator(np.random.Philox(self._seq))

    def split(self, n):
        """n independent child streams, reproducible from the parent seed."""
        return [Rng(self.seed, _seq=child) for child in self._seq.spawn(n)]

    def normal(self, shape, std=1.0, dtype=np.float32):
        return (self._gen.standard_normal(shape, dtype=np.float64) * std).astype(dtype)

    def uniform(self, shape, low=0.0, high=1.0, dtype=np.float32):
        return self._gen.uniform(low, high, size=shape).astype(dtype)

    def integers(self, low, high, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def choice_no_replace(self, n, k):
        """k distinct draws from range(n)."""
        return self._gen.choice(n, size=k, replace=False)


def matmul(a, b):
    """a @ b with float64 accumulation, cast back to the common input dtype."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise UsageError(
            "matmul: incompatible shapes %s and %s" % (a.shape, b.shape)
        )
    out = a.astype(np.float64, copy=False) @ b.astype(np.float64, copy=False)
    dt = np.result_type(a.dtype, b.dtype)
    return out if dt == np.float64 else out.astype(dt)


def softmax_rows(logits, scale=1.0):
    """Row softmax of logits/scale with max-subtraction. Returns float64."""
    if scale <= 0:
        raise UsageError("softmax_rows: scale must be > 0, got %r" % (scale,))
    logits = np.atleast_2d(np.asarray(logits))
    cols = logits.shape[1]
    col_pos = np.arange(cols, dtype=np.int64)
    # mem_cols = cols makes every column visible to every row
    return backend.causal_softmax(
        np.ascontiguousarray(logits, dtype=np.float64), col_pos, cols, float(scale)
    )


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize one vector to zero mean / unit variance, then gain and bias."""
    x = np.asarray(x)
    xr = x.reshape(1, -1)
    out, _, _ = backend.layer_norm_rows(
        np.ascontiguousarray(xr),
        np.ascontiguousarray(gain, dtype=xr.dtype),
        np.ascontiguousarray(bias, dtype=xr.dtype),
        float(eps),
    )
    return out[0]


class SpearmanResult(NamedTuple):
    correlation: float
    zero_variance: bool


def _average_ranks(x):
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.shape[0], dtype=np.float64)
    xs = x[order]
    i = 0
    while i < x.shape[0]:
        j = i
        while j + 1 < x.shape[0] and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman_rank_correlation(a, b):
    """Spearman rho with average ranks for ties.

    Returns SpearmanResult; a constant input has no ranking to speak of, so
    the correlation is defined as 0.0 with zero_variance set.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape[0] != b.shape[0]:
        raise UsageError(
            "spearman: length mismatch %d vs %d" % (a.shape[0], b.shape[0])
        )
    if a.shape[0] < 2:
        raise UsageError("spearman: need at least 2 samples, got %d" % a.shape[0])
    ra = _average_ranks(a)
    rb = _average_ranks(b)
    da = ra - ra.mean()
    db = rb - rb.mean()
    va = float(da @ da)
    vb = float(db @ db)
    if va == 0.0 or vb == 0.0:
        return SpearmanResult(0.0, True)
    rho = float(da @ db) / np.sqrt(va * vb)
    return SpearmanResult(float(np.clip(rho, -1.0, 1.0)), False)


def l2_norm(x):
    x = np.asarray(x, dtype=np.float64).ravel()
    return float(np.sqrt(x @ x))


def cosine(u, v):
    """cos angle between u and v, clamped to [-1, 1]; 0.0 for a zero vector."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    nu = np.sqrt(u @ u)
    nv = np.sqrt(v @ v)
    if nu == 0.0 or nv == 0.0:
        warnings.warn(
            "cosine of a zero vector is undefined, returning 0.0",
            DegenerateVectorWarning,
            stacklevel=2,
        )
        return 0.0
    return float(np.clip((u @ v) / (nu * nv), -1.0, 1.0))
