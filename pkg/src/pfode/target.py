"""Gaussian-mixture targets with closed-form marginals, scores and posteriors.

Components are isotropic: component ``k`` is ``N(means[k], variances[k] * I)``.
Under the forward process ``X_t = sqrt(ab) X_0 + sqrt(1 - ab) W`` a mixture
stays a mixture, with means scaled by ``sqrt(ab)`` and variances mapped to
``ab * v + (1 - ab)``.

Gaussian components have unbounded support.  Where a radius is needed, the
effective radius ``max ||mu_k|| + 6 sqrt(max v_k)`` stands in for the
support bound; no truncation is applied.
"""
import threading

import numpy as np

from . import kernels, rng


def _batch(x, d):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x2 = x.reshape(1, -1) if single else x
    if x2.ndim != 2 or x2.shape[1] != d:
        raise ValueError(f"expected points of dimension {d}, got shape {x.shape}")
    return x2, single


def _check_a_bar(a_bar, allow_one=True):
    if not (0.0 < a_bar < 1.0 or (allow_one and a_bar == 1.0)):
        raise ValueError(f"a_bar must lie in (0, 1{']' if allow_one else ')'}, got {a_bar!r}")


class GaussianMixture:
    """Mixture of isotropic Gaussians in ``R^d``."""

    def __init__(self, weights, means, variances):
        w = np.asarray(weights, dtype=float).ravel()
        mu = np.asarray(means, dtype=float)
        if mu.ndim == 1:
            mu = mu.reshape(-1, 1)
        v = np.asarray(variances, dtype=float).ravel()
        if not (len(w) == len(v) == mu.shape[0]) or len(w) == 0:
            raise ValueError("weights, means and variances must describe the same components")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must be non-negative and sum to 1 (sum={w.sum()!r})")
        if not np.all(v > 0):
            raise ValueError("variances must be positive")
        self.weights = w / w.sum()
        self.means = np.ascontiguousarray(mu)
        self.variances = v
        with np.errstate(divide="ignore"):
            self.log_weights = np.log(self.weights)
        for a in (self.weights, self.means, self.variances, self.log_weights):
            a.flags.writeable = False

    @classmethod
    def gaussian(cls, mean, variance=1.0):
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        return cls([1.0], mean.reshape(1, -1), [variance])

    @property
    def d(self):
        return self.means.shape[1]

    @property
    def K(self):
        return len(self.weights)

    def __repr__(self):
        return f"GaussianMixture(d={self.d}, K={self.K})"

    def effective_radius(self):
        return float(np.max(np.linalg.norm(self.means, axis=1)) + 6.0 * np.sqrt(self.variances.max()))

    def mean(self):
        return self.weights @ self.means

    def covariance(self):
        dev = self.means - self.mean()
        cov = np.einsum("k,ki,kj->ij", self.weights, dev, dev)
        return cov + (self.weights @ self.variances) * np.eye(self.d)

    def marginal(self, a_bar, one_minus=None):
        _check_a_bar(a_bar)
        if a_bar == 1.0:
            return self
        om = 1.0 - a_bar if one_minus is None else one_minus
        return GaussianMixture(self.weights, np.sqrt(a_bar) * self.means, a_bar * self.variances + om)

    def _eval(self, x, want_score, want_hess):
        x2, single = _batch(x, self.d)
        out = kernels.mixture_eval(x2, self.log_weights, self.means, self.variances, want_score, want_hess)
        return out, single

    def log_density(self, x):
        (logq, _, _), single = self._eval(x, False, False)
        return logq[0] if single else logq

    def score(self, x):
        (_, s, _), single = self._eval(x, True, False)
        return s[0] if single else s

    def hessian(self, x):
        (_, _, h), single = self._eval(x, True, True)
        return h[0] if single else h

    def _draw(self, n, seed, key=()):
        comp = np.empty(n, dtype=np.int64)
        xi = np.empty((n, self.d))
        cdf = np.cumsum(self.weights)
        # labels and noise come from separate streams so a short final block keeps prefixes intact
        for b, lo, hi in rng.blocks(n):
            u = rng.stream(seed, rng.DATA, *key, b, 0).random(hi - lo)
            comp[lo:hi] = np.minimum(np.searchsorted(cdf, u, side="right"), self.K - 1)
            xi[lo:hi] = rng.stream(seed, rng.DATA, *key, b, 1).standard_normal((hi - lo, self.d))
        return comp, xi

    def sample(self, n, seed, key=()):
        if n < 1:
            raise ValueError("n must be >= 1")
        comp, xi = self._draw(n, seed, key)
        return self.means[comp] + np.sqrt(self.variances[comp])[:, None] * xi

    def noise_posterior(self, a_bar, x, one_minus=None):
        _check_a_bar(a_bar, allow_one=False)
        om = 1.0 - a_bar if one_minus is None else one_minus
        x2, single = _batch(x, self.d)
        g, cov = kernels.noise_posterior(x2, self.log_weights, self.means, self.variances, a_bar, om)
        return (g[0], cov[0]) if single else (g, cov)

    def posterior_mean_g(self, a_bar, x, one_minus=None):
        return self.noise_posterior(a_bar, x, one_minus)[0]

    def posterior_covariance(self, a_bar, x, one_minus=None):
        return self.noise_posterior(a_bar, x, one_minus)[1]

    def posterior(self, a_bar, x, one_minus=None):
        """Law of ``X_0`` given ``X_t = x`` (a single point) as a mixture."""
        _check_a_bar(a_bar, allow_one=False)
        om = 1.0 - a_bar if one_minus is None else one_minus
        x = np.asarray(x, dtype=float).reshape(-1)
        mvar = a_bar * self.variances + om
        diff = x - np.sqrt(a_bar) * self.means
        z = self.log_weights - 0.5 * self.d * np.log(mvar) - 0.5 * np.sum(diff * diff, axis=1) / mvar
        z = z - z.max()
        r = np.exp(z)
        r = np.where(z < -700.0, 0.0, r)
        r = r / r.sum()
        means = (om * self.means + np.sqrt(a_bar) * self.variances[:, None] * x) / mvar[:, None]
        return GaussianMixture(r, means, self.variances * om / mvar)


class ProductMixture:
    """Independent blocks, each a ``GaussianMixture``; coordinates are concatenated."""

    def __init__(self, factors):
        self.factors = tuple(factors)
        if not self.factors:
            raise ValueError("need at least one factor")
        self.dims = tuple(f.d for f in self.factors)
        self.offsets = tuple(np.cumsum((0,) + self.dims))

    @classmethod
    def replicate(cls, factor, d):
        return cls([factor] * int(d))

    @property
    def d(self):
        return int(self.offsets[-1])

    def __repr__(self):
        return f"ProductMixture(d={self.d}, factors={len(self.factors)})"

    def slices(self):
        return [slice(self.offsets[i], self.offsets[i + 1]) for i in range(len(self.factors))]

    def effective_radius(self):
        return float(np.sqrt(sum(f.effective_radius() ** 2 for f in self.factors)))

    def mean(self):
        return np.concatenate([f.mean() for f in self.factors])

    def covariance(self):
        cov = np.zeros((self.d, self.d))
        for f, sl in zip(self.factors, self.slices()):
            cov[sl, sl] = f.covariance()
        return cov

    def marginal(self, a_bar, one_minus=None):
        return ProductMixture([f.marginal(a_bar, one_minus) for f in self.factors])

    def log_density(self, x):
        x2, single = _batch(x, self.d)
        out = sum(f.log_density(x2[:, sl]) for f, sl in zip(self.factors, self.slices()))
        return out[0] if single else out

    def score(self, x):
        x2, single = _batch(x, self.d)
        out = np.concatenate([f.score(x2[:, sl]) for f, sl in zip(self.factors, self.slices())], axis=1)
        return out[0] if single else out

    def hessian(self, x):
        x2, single = _batch(x, self.d)
        out = np.zeros((x2.shape[0], self.d, self.d))
        for f, sl in zip(self.factors, self.slices()):
            out[:, sl, sl] = f.hessian(x2[:, sl])
        return out[0] if single else out

    def sample(self, n, seed, key=()):
        return np.concatenate([f.sample(n, seed, key + (i,)) for i, f in enumerate(self.factors)], axis=1)

    def noise_posterior(self, a_bar, x, one_minus=None):
        x2, single = _batch(x, self.d)
        g = np.empty_like(x2)
        cov = np.zeros((x2.shape[0], self.d, self.d))
        for f, sl in zip(self.factors, self.slices()):
            g[:, sl], cov[:, sl, sl] = f.noise_posterior(a_bar, x2[:, sl], one_minus)
        return (g[0], cov[0]) if single else (g, cov)

    def posterior_mean_g(self, a_bar, x, one_minus=None):
        return self.noise_posterior(a_bar, x, one_minus)[0]

    def posterior_covariance(self, a_bar, x, one_minus=None):
        return self.noise_posterior(a_bar, x, one_minus)[1]

    def posterior(self, a_bar, x, one_minus=None):
        x = np.asarray(x, dtype=float).reshape(-1)
        return ProductMixture([f.posterior(a_bar, x[sl], one_minus) for f, sl in zip(self.factors, self.slices())])


class MarginalFamily:
    """The forward marginals ``q_t`` of a target under a schedule, memoized per step."""

    def __init__(self, base, schedule):
        self.base = base
        self.schedule = schedule
        self._cache = {}
        self._lock = threading.Lock()

    @property
    def d(self):
        return self.base.d

    @property
    def T(self):
        return self.schedule.T

    def a_bar(self, t):
        return float(self.schedule.alpha_bar[t])

    def one_minus(self, t):
        return float(self.schedule.one_minus_alpha_bar[t])

    def at(self, t):
        if not 1 <= t <= self.schedule.T:
            raise ValueError(f"step {t} outside [1, {self.schedule.T}]")
        with self._lock:
            m = self._cache.get(t)
            if m is None:
                m = self.base.marginal(self.a_bar(t), self.one_minus(t))
                self._cache[t] = m
        return m


def marginal(g, a_bar):
    return g.marginal(a_bar)


def log_density(g, x):
    return g.log_density(x)


def score_exact(g_t, x):
    return g_t.score(x)


def score_hessian(g_t, x):
    return g_t.hessian(x)


def sample_data(g, n, seed):
    return g.sample(n, seed)


def posterior_mean_g(g, a_bar, x):
    return g.posterior_mean_g(a_bar, x)


def posterior_covariance(g, a_bar, x):
    return g.posterior_covariance(a_bar, x)
