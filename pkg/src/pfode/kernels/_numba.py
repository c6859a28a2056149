"""Numba kernels, loop-for-loop equivalents of ``_numpy``.

Parallelism is over rows only (``prange``); each row is computed by the
same scalar code whatever the thread count.  Per-step constants (scaled
means, variances, log normalisers) are tabulated once outside the row
loop.
"""
import numpy as np
from numba import config, njit, prange

# the bundled TBB is too old; the portable layer avoids a warning per process
config.THREADING_LAYER = "workqueue"

LOG_2PI = np.log(2.0 * np.pi)
LOG_RESP_FLOOR = -700.0

EXACT, CONSTANT_SHIFT, SMOOTH_ADDITIVE, FLOOR_LATTICE = 0, 1, 2, 3


@njit(cache=True, inline="always")
def _row_resp(xi, ln, mm, mv, r, z, resp):
    # tables hold step r: ln[r, k] = log w_k - d/2 log(2 pi mv[r, k]), means mm[r, k]
    K = mm.shape[1]
    d = mm.shape[2]
    zmax = -np.inf
    for k in range(K):
        sq = 0.0
        for j in range(d):
            diff = xi[j] - mm[r, k, j]
            sq += diff * diff
        z[k] = ln[r, k] - 0.5 * sq / mv[r, k]
        if z[k] > zmax:
            zmax = z[k]
    if not np.isfinite(zmax):
        zmax = 0.0
    acc = 0.0
    for k in range(K):
        e = z[k] - zmax
        resp[k] = 0.0 if e < LOG_RESP_FLOOR else np.exp(e)
        acc += resp[k]
    for k in range(K):
        resp[k] /= acc
    return zmax + np.log(acc)


@njit(cache=True, inline="always")
def _row_score_hess(xi, ln, mm, mv, r, z, resp, s, h, want_hess):
    K = mm.shape[1]
    d = mm.shape[2]
    logq = _row_resp(xi, ln, mm, mv, r, z, resp)
    for j in range(d):
        s[j] = 0.0
    for k in range(K):
        for j in range(d):
            s[j] -= resp[k] * (xi[j] - mm[r, k, j]) / mv[r, k]
    if want_hess:
        for i in range(d):
            for j in range(d):
                h[i, j] = 0.0
        prec = 0.0
        for k in range(K):
            for i in range(d):
                di = -(xi[i] - mm[r, k, i]) / mv[r, k] - s[i]
                for j in range(d):
                    dj = -(xi[j] - mm[r, k, j]) / mv[r, k] - s[j]
                    h[i, j] += resp[k] * di * dj
            prec += resp[k] / mv[r, k]
        for i in range(d):
            h[i, i] -= prec
    return logq


@njit(cache=True, inline="always")
def _row_noise_cov(xi, ln, mm, mv, r, a_bar, som, var, z, resp, zk, zmean, cov):
    # posterior of the noise at step r; som = sqrt(1 - a_bar)
    K = mm.shape[1]
    d = mm.shape[2]
    _row_resp(xi, ln, mm, mv, r, z, resp)
    within = 0.0
    for j in range(d):
        zmean[j] = 0.0
    for k in range(K):
        for j in range(d):
            zk[k, j] = som * (xi[j] - mm[r, k, j]) / mv[r, k]
            zmean[j] += resp[k] * zk[k, j]
        within += resp[k] * (a_bar * var[k] / mv[r, k])
    for a in range(d):
        for b in range(d):
            cov[a, b] = 0.0
    for k in range(K):
        for a in range(d):
            da = zk[k, a] - zmean[a]
            for b in range(d):
                cov[a, b] += resp[k] * da * (zk[k, b] - zmean[b])
    for a in range(d):
        cov[a, a] += within


@njit(cache=True)
def _step_tables(sab, ab, om, logw, means, var):
    # per-step marginal parameters, indexed like the schedule arrays
    S = len(sab)
    K, d = means.shape
    mm = np.empty((S, K, d))
    mv = np.empty((S, K))
    ln = np.empty((S, K))
    for r in range(S):
        for k in range(K):
            mv[r, k] = ab[r] * var[k] + om[r]
            ln[r, k] = logw[k] - 0.5 * d * (LOG_2PI + np.log(mv[r, k]))
            for j in range(d):
                mm[r, k, j] = sab[r] * means[k, j]
    return mm, mv, ln


@njit(parallel=True, cache=True)
def _mixture_eval(x, logw, means, var, want_hess):
    n, d = x.shape
    K = len(logw)
    one = np.ones(1)
    mm, mv, ln = _step_tables(one, one, np.zeros(1), logw, means, var)
    logq = np.empty(n)
    score = np.empty((n, d))
    hess = np.empty((n, d, d)) if want_hess else np.empty((0, d, d))
    for i in prange(n):
        z = np.empty(K)
        resp = np.empty(K)
        s = np.empty(d)
        h = np.empty((d, d))
        logq[i] = _row_score_hess(x[i], ln, mm, mv, 0, z, resp, s, h, want_hess)
        score[i] = s
        if want_hess:
            hess[i] = h
    return logq, score, hess


def mixture_eval(x, logw, means, var, want_score=True, want_hess=False):
    logq, score, hess = _mixture_eval(x, logw, means, var, want_hess)
    return logq, (score if (want_score or want_hess) else None), (hess if want_hess else None)


@njit(parallel=True, cache=True)
def _noise_posterior(x, logw, means, var, a_bar, one_minus):
    n, d = x.shape
    K = len(logw)
    mm, mv, ln = _step_tables(np.full(1, np.sqrt(a_bar)), np.full(1, a_bar),
                              np.full(1, one_minus), logw, means, var)
    som = np.sqrt(one_minus)
    g = np.empty((n, d))
    cov = np.empty((n, d, d))
    for i in prange(n):
        z = np.empty(K)
        resp = np.empty(K)
        zk = np.empty((K, d))
        zmean = np.empty(d)
        c = np.empty((d, d))
        _row_noise_cov(x[i], ln, mm, mv, 0, a_bar, som, var, z, resp, zk, zmean, c)
        cov[i] = c
        for a in range(d):
            g[i, a] = som * zmean[a]
    return g, cov


def noise_posterior(x, logw, means, var, a_bar, one_minus):
    return _noise_posterior(x, logw, means, var, float(a_bar), float(one_minus))


@njit(parallel=True, cache=True)
def _posterior_step_sums(x0, zn, sab, ab, om, weights, logw, means, var, mode):
    n, d = x0.shape
    K = len(logw)
    S = len(weights)
    mm, mv, ln = _step_tables(sab, ab, om, logw, means, var)
    som = np.sqrt(om)
    acc = np.zeros(n)
    for i in prange(n):
        z = np.empty(K)
        resp = np.empty(K)
        zk = np.empty((K, d))
        zmean = np.empty(d)
        cov = np.empty((d, d))
        xi = np.empty(d)
        total = 0.0
        if d == 1:
            # scalar specialisation of the loop below
            for r in range(S):
                x = sab[r] * x0[i, 0] + som[r] * zn[i, 0]
                zmax = -np.inf
                for k in range(K):
                    diff = x - mm[r, k, 0]
                    z[k] = ln[r, k] - 0.5 * diff * diff / mv[r, k]
                    zmax = max(zmax, z[k])
                a = 0.0
                for k in range(K):
                    e = z[k] - zmax
                    resp[k] = 0.0 if e < LOG_RESP_FLOOR else np.exp(e)
                    a += resp[k]
                zm = 0.0
                within = 0.0
                for k in range(K):
                    resp[k] /= a
                    zk[k, 0] = som[r] * (x - mm[r, k, 0]) / mv[r, k]
                    zm += resp[k] * zk[k, 0]
                    within += resp[k] * (ab[r] * var[k] / mv[r, k])
                c = within
                for k in range(K):
                    c += resp[k] * (zk[k, 0] - zm) ** 2
                if mode == 1:
                    c -= 1.0
                total += weights[r] * c * c
            acc[i] = total
            continue
        for r in range(S):
            for j in range(d):
                xi[j] = sab[r] * x0[i, j] + som[r] * zn[i, j]
            _row_noise_cov(xi, ln, mm, mv, r, ab[r], som[r], var, z, resp, zk, zmean, cov)
            val = 0.0
            for a in range(d):
                for b in range(d):
                    c = cov[a, b]
                    if mode == 1 and a == b:
                        c -= 1.0
                    val += c * c
            total += weights[r] * val
        acc[i] = total
    return acc


def posterior_step_sums(x0, zn, sab, ab, om, weights, logw, means, var, mode):
    return _posterior_step_sums(x0, zn, sab, ab, om, weights, logw, means, var, int(mode))


@njit(cache=True)
def _slogdet(m):
    # partial-pivot LU on a scratch copy
    d = m.shape[0]
    sign = 1.0
    logabs = 0.0
    for k in range(d):
        p = k
        amax = abs(m[k, k])
        for i in range(k + 1, d):
            if abs(m[i, k]) > amax:
                amax = abs(m[i, k])
                p = i
        if amax == 0.0 or not np.isfinite(amax):
            return 0.0, -np.inf
        if p != k:
            for j in range(d):
                tmp = m[k, j]
                m[k, j] = m[p, j]
                m[p, j] = tmp
            sign = -sign
        piv = m[k, k]
        if piv < 0.0:
            sign = -sign
        logabs += np.log(abs(piv))
        for i in range(k + 1, d):
            f = m[i, k] / piv
            for j in range(k + 1, d):
                m[i, j] -= f * m[k, j]
    return sign, logabs


@njit(parallel=True, cache=True)
def _flow_batch(y0, t_hi, t_lo, sqrt_ab, ab, omab, alpha, beta, logw, means, var,
                kind, vec, eps, omega, L, t0, with_density):
    n, d = y0.shape
    K = len(logw)
    mm, mv, ln = _step_tables(sqrt_ab, ab, omab, logw, means, var)
    sqa = np.sqrt(alpha)
    half_log_a = 0.5 * d * np.log(alpha)
    yout = np.empty((n, d))
    logdet = np.zeros(n)
    fail = np.zeros(n, dtype=np.int64)
    for i in prange(n):
        y = y0[i].copy()
        z = np.empty(K)
        resp = np.empty(K)
        s = np.empty(d)
        h = np.empty((d, d))
        m = np.empty((d, d))
        acc = 0.0
        first = 0
        for t in range(t_hi, t_lo - 1, -1):
            b = beta[t]
            _row_score_hess(y, ln, mm, mv, t, z, resp, s, h, with_density)
            if kind == CONSTANT_SHIFT:
                for j in range(d):
                    s[j] = s[j] + vec[j]
            elif kind == SMOOTH_ADDITIVE:
                for j in range(d):
                    arg = omega * y[j] + vec[j]
                    s[j] = s[j] + eps * np.sin(arg)
                    if with_density:
                        h[j, j] += eps * omega * np.cos(arg)
            elif kind == FLOOR_LATTICE and t == t0:
                for j in range(d):
                    ystar = (y[j] + 0.5 * b * s[j]) / sqa[t]
                    q = L * np.floor(ystar / L)
                    s[j] = 2.0 * (q * sqa[t] - y[j]) / b
                if with_density:
                    for p in range(d):
                        for r in range(d):
                            h[p, r] = -(2.0 / b) if p == r else 0.0
            if with_density:
                if d == 1:
                    det = 1.0 + 0.5 * b * h[0, 0]
                    sign = 1.0 if det > 0.0 else (-1.0 if det < 0.0 else 0.0)
                    la = np.log(abs(det)) if det != 0.0 else -np.inf
                else:
                    for p in range(d):
                        for r in range(d):
                            m[p, r] = 0.5 * b * h[p, r]
                        m[p, p] += 1.0
                    sign, la = _slogdet(m)
                if first == 0 and not (sign > 0.0 and np.isfinite(la)):
                    first = t
                acc += la - half_log_a[t]
            for j in range(d):
                y[j] = (y[j] + 0.5 * b * s[j]) / sqa[t]
        yout[i] = y
        logdet[i] = acc
        fail[i] = first
    return yout, logdet, fail


def flow_batch(y, t_hi, t_lo, sched, logw, means, var, field, with_density):
    sqrt_ab, ab, omab, alpha, beta = sched
    kind, vec, eps, omega, L, t0 = field
    return _flow_batch(np.ascontiguousarray(y, dtype=np.float64), int(t_hi), int(t_lo),
                       sqrt_ab, ab, omab, alpha, beta, logw, means, var,
                       int(kind), np.ascontiguousarray(vec, dtype=np.float64), float(eps),
                       float(omega), float(L), int(t0), bool(with_density))
