"""Pure-numpy kernels.

Rows are independent: every reduction runs over components or
coordinates of a single row, never across rows, so splitting a batch
into chunks cannot change any row's result.
"""
import numpy as np

LOG_2PI = np.log(2.0 * np.pi)
# log-responsibilities below this are treated as exactly zero
LOG_RESP_FLOOR = -700.0

EXACT, CONSTANT_SHIFT, SMOOTH_ADDITIVE, FLOOR_LATTICE = 0, 1, 2, 3


def _log_terms(x, logw, means, var):
    n, d = x.shape
    z = np.empty((n, len(logw)))
    for k in range(len(logw)):
        diff = x - means[k]
        z[:, k] = logw[k] - 0.5 * d * (LOG_2PI + np.log(var[k])) - 0.5 * np.sum(diff * diff, axis=1) / var[k]
    return z


def _normalize(z):
    zmax = z.max(axis=1)
    zmax = np.where(np.isfinite(zmax), zmax, 0.0)
    acc = np.zeros(z.shape[0])
    for k in range(z.shape[1]):
        acc += np.exp(z[:, k] - zmax)
    logq = zmax + np.log(acc)
    lr = z - logq[:, None]
    resp = np.where(lr < LOG_RESP_FLOOR, 0.0, np.exp(lr))
    return logq, resp


def mixture_eval(x, logw, means, var, want_score=True, want_hess=False):
    """Log-density, score and Hessian of an isotropic Gaussian mixture.

    Returns ``(logq, score, hess)``; ``score``/``hess`` are ``None`` when
    not requested.
    """
    n, d = x.shape
    logq, resp = _normalize(_log_terms(x, logw, means, var))
    if not (want_score or want_hess):
        return logq, None, None
    score = np.zeros((n, d))
    for k in range(len(logw)):
        score -= resp[:, k:k + 1] * (x - means[k]) / var[k]
    hess = None
    if want_hess:
        hess = np.zeros((n, d, d))
        prec = np.zeros(n)
        for k in range(len(logw)):
            dev = -(x - means[k]) / var[k] - score
            hess += resp[:, k, None, None] * dev[:, :, None] * dev[:, None, :]
            prec += resp[:, k] / var[k]
        idx = np.arange(d)
        hess[:, idx, idx] -= prec[:, None]
    return logq, score, hess


def noise_posterior(x, logw, means, var, a_bar, one_minus):
    """Posterior of the injected noise given ``x = sqrt(a_bar) x0 + sqrt(1-a_bar) z``.

    Returns ``(g, cov)`` with ``g = x - sqrt(a_bar) E[x0 | x]`` and
    ``cov = Cov(z | x)``.
    """
    n, d = x.shape
    sab = np.sqrt(a_bar)
    mvar = a_bar * var + one_minus
    mmeans = sab * means
    _, resp = _normalize(_log_terms(x, logw, mmeans, mvar))
    zmean = np.zeros((n, d))
    within = np.zeros(n)
    zk = []
    for k in range(len(logw)):
        mk = np.sqrt(one_minus) * (x - mmeans[k]) / mvar[k]
        zk.append(mk)
        zmean += resp[:, k:k + 1] * mk
        within += resp[:, k] * (a_bar * var[k] / mvar[k])
    cov = np.zeros((n, d, d))
    for k in range(len(logw)):
        dev = zk[k] - zmean
        cov += resp[:, k, None, None] * dev[:, :, None] * dev[:, None, :]
    idx = np.arange(d)
    cov[:, idx, idx] += within[:, None]
    return np.sqrt(one_minus) * zmean, cov


def flow_batch(y, t_hi, t_lo, sched, logw, means, var, field, with_density):
    """Apply the probability-flow updates for ``t = t_hi, ..., t_lo``.

    ``sched`` is ``(sqrt_ab, ab, one_minus_ab, alpha, beta)`` indexed by
    step; ``field`` is ``(kind, vec, eps, omega, L, t0)``.  Returns
    ``(y_out, logdet_sum, fail_t)`` where ``fail_t[i]`` is the first step
    whose Jacobian determinant was not finite and positive (0 if none).
    """
    sqrt_ab, ab, omab, alpha, beta = sched
    kind, vec, eps, omega, L, t0 = field
    y = np.array(y, dtype=float, copy=True)
    n, d = y.shape
    logdet = np.zeros(n)
    fail = np.zeros(n, dtype=np.int64)
    eye = np.eye(d)
    for t in range(t_hi, t_lo - 1, -1):
        a, b = alpha[t], beta[t]
        mmeans = sqrt_ab[t] * means
        mvar = ab[t] * var + omab[t]
        _, s, h = mixture_eval(y, logw, mmeans, mvar, True, with_density)
        if kind == CONSTANT_SHIFT:
            s = s + vec
        elif kind == SMOOTH_ADDITIVE:
            arg = omega * y + vec
            s = s + eps * np.sin(arg)
            if with_density:
                idx = np.arange(d)
                h[:, idx, idx] += eps * omega * np.cos(arg)
        elif kind == FLOOR_LATTICE and t == t0:
            ystar = (y + 0.5 * b * s) / np.sqrt(a)
            q = L * np.floor(ystar / L)
            s = 2.0 * (q * np.sqrt(a) - y) / b
            if with_density:
                h = np.broadcast_to(-(2.0 / b) * eye, (n, d, d)).copy()
        if with_density:
            sign, la = np.linalg.slogdet(eye + 0.5 * b * h)
            bad = ~((sign > 0) & np.isfinite(la))
            fail = np.where(bad & (fail == 0), t, fail)
            logdet += la - 0.5 * d * np.log(a)
        y = (y + 0.5 * b * s) / np.sqrt(a)
    return y, logdet, fail


def posterior_step_sums(x0, zn, sab, ab, om, weights, logw, means, var, mode):
    """Per-row ``sum_r weights[r] * ||C_r||_F^2`` over steps ``r``.

    ``C_r`` is the noise posterior covariance at ``x = sab[r] x0 + sqrt(om[r]) zn``
    (``mode`` 0) or that covariance minus the identity (``mode`` 1).
    """
    n, d = x0.shape
    acc = np.zeros(n)
    idx = np.arange(d)
    for r in range(len(weights)):
        x = sab[r] * x0 + np.sqrt(om[r]) * zn
        _, cov = noise_posterior(x, logw, means, var, ab[r], om[r])
        if mode == 1:
            cov[:, idx, idx] -= 1.0
        acc += weights[r] * np.einsum("nij,nij->n", cov, cov)
    return acc
