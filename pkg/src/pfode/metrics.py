"""Distances between the sampler law and the target marginal."""
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from . import rng
from .sampler import Batch, transport_grid
from .target import GaussianMixture, ProductMixture

METHODS = ("monte_carlo", "grid_1d", "histogram")


class NonMonotoneMap(ArithmeticError):
    """The sampler did not map the 1-D grid to a strictly increasing grid."""


@dataclass(frozen=True)
class TvEstimate:
    value: float
    std_error: float
    n: int
    method: str
    tolerance: float = 0.0  # deterministic error allowance (quadrature, tails, binning noise)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not (0.0 <= self.value <= 1.0):
            raise ValueError(f"TV value {self.value!r} outside [0, 1]")


def _unpack(batch):
    if isinstance(batch, Batch):
        return batch.y1, batch.log_p1
    y1, logp = batch
    return np.asarray(y1, dtype=float), (None if logp is None else np.asarray(logp, dtype=float))


def tv_monte_carlo(m, batch):
    """``E_p[(1 - q_1/p)_+]`` over a batch carrying transported log-densities."""
    y1, logp = _unpack(batch)
    if logp is None:
        raise ValueError("batch lacks transported densities (log_p1)")
    logq = np.asarray(m.at(1).log_density(y1))
    vals = np.maximum(-np.expm1(np.minimum(logq - logp, 0.0)), 0.0)
    n = len(vals)
    se = float(np.std(vals, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return TvEstimate(float(np.clip(vals.mean(), 0.0, 1.0)), se, n, "monte_carlo")


def _mixture_cdf(g, x):
    sd = np.sqrt(g.variances)
    mu = g.means[:, 0]
    out = np.zeros(np.shape(x))
    for w, a, b in zip(g.weights, mu, sd):
        out += w * ndtr((x - a) / b)
    return out


def _trapezoid_abs(y, f):
    return float(np.sum(0.5 * (np.abs(f[1:]) + np.abs(f[:-1])) * np.diff(y)))


def tv_grid_1d(m, f, s, grid=(-8.0, 8.0, 20001)):
    """Deterministic TV for ``d = 1`` by pushing a ``y_T`` grid through the sampler.

    ``tolerance`` adds the mass of both laws outside the mapped range and a
    half-grid quadrature difference.
    """
    if m.d != 1:
        raise ValueError("tv_grid_1d needs d = 1")
    lo, hi, n_points = grid
    if not (lo <= -4.0 and hi >= 4.0 and n_points >= 101):
        raise ValueError("grid must cover [-4, 4] in y_T with at least 101 points")
    u, y1, logp = transport_grid(f, s, lo, hi, n_points)
    if not np.all(np.diff(y1) > 0):
        raise NonMonotoneMap("mapped grid is not strictly increasing")
    q1 = m.at(1)
    diff = np.exp(np.asarray(q1.log_density(y1.reshape(-1, 1)))) - np.exp(logp)
    tv = 0.5 * _trapezoid_abs(y1, diff)
    coarse = 0.5 * _trapezoid_abs(y1[::2], diff[::2])
    p_out = ndtr(lo) + ndtr(-hi)
    cq = _mixture_cdf(q1, np.array([y1[0], y1[-1]]))
    q_out = cq[0] + (1.0 - cq[1])
    tol = 0.5 * (p_out + q_out) + abs(tv - coarse)
    return TvEstimate(float(min(max(tv, 0.0), 1.0)), 0.0, int(n_points), "grid_1d", float(tol))


def _histogram_edges(x, bins):
    if isinstance(bins, (int, np.integer)):
        if bins < 1:
            raise ValueError("bins must be >= 1")
        lo, hi = float(x.min()), float(x.max())
        if hi == lo:
            lo, hi = lo - 0.5, hi + 0.5
        return np.linspace(lo, hi, int(bins) + 1)
    edges = np.asarray(bins, dtype=float)
    if edges.ndim != 1 or len(edges) < 2 or not np.all(np.diff(edges) > 0):
        raise ValueError("bin edges must be a strictly increasing sequence")
    return edges


def tv_histogram(samples_p, m, bins=50, width=None):
    """Binned TV ``1/2 sum |p_hat(bin) - q_1(bin)|`` for ``d = 1``.

    ``bins`` is a bin count over the sample range or explicit edges;
    ``width`` instead lays a grid aligned to multiples of ``width``.  The
    two open tails count as cells.  Only occupied cells are enumerated, so
    very fine grids are cheap.
    """
    if m.d != 1:
        raise ValueError("tv_histogram needs d = 1")
    x = np.asarray(samples_p, dtype=float).reshape(-1)
    n = len(x)
    if n < 1:
        raise ValueError("need at least one sample")
    q1 = m.at(1)
    if width is not None:
        if not width > 0:
            raise ValueError("width must be positive")
        idx = np.floor(x / width)
        cells, counts = np.unique(idx, return_counts=True)
        lo_e, hi_e = cells * width, (cells + 1) * width
        n_cells = int(cells[-1] - cells[0]) + 1
    else:
        edges = _histogram_edges(x, bins)
        k = np.searchsorted(edges, x, side="right") - 1
        k = np.where(x == edges[-1], len(edges) - 2, k)
        k = np.where((x < edges[0]), -1, np.where(x > edges[-1], len(edges) - 1, k))
        cells, counts = np.unique(k, return_counts=True)
        ext = np.concatenate([[-np.inf], edges, [np.inf]])
        lo_e, hi_e = ext[cells + 1], ext[cells + 2]
        n_cells = len(edges) + 1
    p_hat = counts / n
    q_cell = np.clip(_mixture_cdf(q1, hi_e) - _mixture_cdf(q1, lo_e), 0.0, 1.0)
    tv = 0.5 * (np.sum(np.abs(p_hat - q_cell)) + max(1.0 - q_cell.sum(), 0.0))
    # delta method with gradient 1/2 sign(p - q) on occupied cells
    g = 0.5 * np.sign(p_hat - q_cell)
    var = (np.sum(g * g * p_hat) - np.sum(g * p_hat) ** 2) / n
    se = math.sqrt(max(var, 0.0))
    tol = 0.5 * min(1.0, math.sqrt(n_cells / n))
    return TvEstimate(float(min(max(tv, 0.0), 1.0)), se, n, "histogram", tol)


@dataclass(frozen=True)
class KlEstimate:
    value: float
    std_error: float
    n: int

    def __float__(self):
        return self.value


def _kl_factor(g, a_bar, one_minus, n_pairs, seed, key):
    comp, xi = g._draw(n_pairs, seed, (rng.THEORY,) + key)
    d = g.d
    m = math.sqrt(a_bar) * g.means
    dv = a_bar * (g.variances - 1.0)  # v' - 1
    vp = 1.0 + dv
    logdet = -0.5 * d * np.log1p(dv)

    def log_ratio(x):
        # log q_T(x) - log N(x; 0, I), each component term formed without cancellation
        terms = np.empty((len(x), g.K))
        for k in range(g.K):
            sq = np.sum(x * x, axis=1)
            cross = x @ m[k]
            terms[:, k] = (dv[k] * sq + 2.0 * cross - m[k] @ m[k]) / (2.0 * vp[k]) + logdet[k]
        if g.K == 1:
            return terms[:, 0]
        return np.log1p(np.sum(g.weights * np.expm1(terms), axis=1))

    centre = m[comp]
    spread = np.sqrt(vp[comp])[:, None] * xi
    return 0.5 * (log_ratio(centre + spread) + log_ratio(centre - spread))


def kl_terminal(g, s, n_mc, seed):
    """Monte Carlo ``KL(q_T || N(0, I))`` using antithetic pairs (``n_mc`` pairs)."""
    if isinstance(n_mc, bool) or int(n_mc) != n_mc or n_mc < 1:
        raise ValueError("n_mc must be an integer >= 1")
    a_bar, om = float(s.alpha_bar[s.T]), float(s.one_minus_alpha_bar[s.T])
    factors = g.factors if isinstance(g, ProductMixture) else (g,)
    pair = np.zeros(int(n_mc))
    for i, fac in enumerate(factors):
        pair += _kl_factor(fac, a_bar, om, int(n_mc), seed, (i,))
    se = float(np.std(pair, ddof=1) / math.sqrt(n_mc)) if n_mc > 1 else 0.0
    return KlEstimate(float(pair.mean()), se, int(n_mc))


def kl_terminal_gaussian(g, s):
    """Closed form of ``KL(q_T || N(0, I))`` for a single isotropic Gaussian."""
    if not (isinstance(g, GaussianMixture) and g.K == 1):
        raise ValueError("closed form needs a single Gaussian")
    a_bar = float(s.alpha_bar[s.T])
    dv = a_bar * (g.variances[0] - 1.0)
    mm = a_bar * float(g.means[0] @ g.means[0])
    return 0.5 * g.d * (dv - math.log1p(dv)) + 0.5 * mm
