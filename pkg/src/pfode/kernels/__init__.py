"""Hot loops: mixture evaluation, noise posteriors, batched flow steps and
per-step posterior sums.

The numba kernels are used when numba imports and ``PFODE_DISABLE_NUMBA``
is unset (or ``0``); otherwise the pure-numpy kernels run.  Both compute
each row independently, so ``set_threads`` changes speed only.
"""
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import _numpy

EXACT, CONSTANT_SHIFT, SMOOTH_ADDITIVE, FLOOR_LATTICE = 0, 1, 2, 3

_impl = _numpy
BACKEND = "numpy"
if os.environ.get("PFODE_DISABLE_NUMBA", "0") in ("", "0"):
    try:
        from . import _numba
    except ImportError:  # pragma: no cover - numba missing
        pass
    else:
        _impl = _numba
        BACKEND = "numba"

_threads = 1
_CHUNK = 4096


def set_threads(n):
    """Set worker count for kernel calls (results never depend on it)."""
    global _threads
    _threads = max(1, int(n))
    if BACKEND == "numba":
        import numba
        numba.set_num_threads(min(_threads, numba.config.NUMBA_NUM_THREADS))


def get_threads():
    return _threads


def _rowwise(fn, x, *args):
    n = x.shape[0]
    if BACKEND == "numba" or _threads == 1 or n <= _CHUNK:
        return fn(x, *args)
    parts = [x[i:i + _CHUNK] for i in range(0, n, _CHUNK)]
    with ThreadPoolExecutor(max_workers=_threads) as pool:
        outs = list(pool.map(lambda p: fn(p, *args), parts))
    return tuple(None if o[0] is None else np.concatenate(o) for o in zip(*outs))


def mixture_eval(x, logw, means, var, want_score=True, want_hess=False):
    x = np.ascontiguousarray(x, dtype=np.float64)
    return _rowwise(_impl.mixture_eval, x, logw, means, var, want_score, want_hess)


def noise_posterior(x, logw, means, var, a_bar, one_minus):
    x = np.ascontiguousarray(x, dtype=np.float64)
    return _rowwise(_impl.noise_posterior, x, logw, means, var, a_bar, one_minus)


def flow_batch(y, t_hi, t_lo, sched, logw, means, var, field, with_density):
    y = np.ascontiguousarray(y, dtype=np.float64)
    return _rowwise(_impl.flow_batch, y, t_hi, t_lo, sched, logw, means, var, field, with_density)


def posterior_step_sums(x0, zn, sab, ab, om, weights, logw, means, var, mode):
    x0 = np.ascontiguousarray(x0, dtype=np.float64)
    zn = np.ascontiguousarray(zn, dtype=np.float64)
    arrs = [np.ascontiguousarray(a, dtype=np.float64) for a in (sab, ab, om, weights)]
    if BACKEND == "numba" or _threads == 1 or len(x0) <= _CHUNK:
        return _impl.posterior_step_sums(x0, zn, *arrs, logw, means, var, mode)
    parts = [slice(i, i + _CHUNK) for i in range(0, len(x0), _CHUNK)]
    with ThreadPoolExecutor(max_workers=_threads) as pool:
        outs = list(pool.map(lambda sl: _impl.posterior_step_sums(x0[sl], zn[sl], *arrs, logw, means, var, mode), parts))
    return np.concatenate(outs)
