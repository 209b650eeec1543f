"""Kernel backend selection.

The numba kernel set is the default hot path. Set TRAMS_PURE_NUMPY=1 to force
the pure-numpy fallback (also used automatically when numba is absent or
fails to import). `benchmarks/bench_kernels.py` compares the two.
"""

import os

from . import kernels_numpy

_FORCE_NUMPY = os.environ.get("TRAMS_PURE_NUMPY", "").strip().lower() in {
    "1",
    "true",
    "yes",
}

if _FORCE_NUMPY:
    _impl = kernels_numpy
    BACKEND = "numpy"
else:
    try:
        from . import kernels_numba as _impl

        BACKEND = "numba"
    except ImportError:
        _impl = kernels_numpy
        BACKEND = "numpy"

KERNEL_NAMES = (
    "causal_softmax",
    "softmax_grad",
    "layer_norm_rows",
    "layer_norm_rows_grad",
    "relative_gather",
    "relative_scatter",
    "nll_total",
    "softmax_xent_grad",
    "adam_update",
)

causal_softmax = _impl.causal_softmax
softmax_grad = _impl.softmax_grad
layer_norm_rows = _impl.layer_norm_rows
layer_norm_rows_grad = _impl.layer_norm_rows_grad
relative_gather = _impl.relative_gather
relative_scatter = _impl.relative_scatter
nll_total = _impl.nll_total
softmax_xent_grad = _impl.softmax_xent_grad
adam_update = _impl.adam_update


def available_backends():
    """Name -> kernel module, for tests and benchmarks. Numba entry may be absent."""
    out = {"numpy": kernels_numpy}
    try:
        from . import kernels_numba

        out["numba"] = kernels_numba
    except ImportError:
        pass
    return out
