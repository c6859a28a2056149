"""Numerical checks of the analytic facts behind the convergence analysis.

Notation: ``Sigma(x) = Cov(Z | sqrt(ab) X_0 + sqrt(1 - ab) Z = x)`` is the
noise posterior covariance; the score Jacobian satisfies
``-(1 - ab) J(x) = I - Sigma(x)``.
"""
import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels, rng
from .metrics import kl_terminal, kl_terminal_gaussian
from .schedule import build_schedule
from .score_models import marginal_draws
from .target import GaussianMixture, MarginalFamily, ProductMixture

JACOBIAN_TOL = 1e-8
GAUSSIAN_EXACT_TOL = 1e-10
MOMENT_CONSTANTS = (12.0, 120.0, 1040.0, 10080.0)


@dataclass(frozen=True)
class TheoryEntry:
    check_id: str
    T: int
    d: int
    measured: float
    bound: float
    passed: bool
    tolerance: float = 0.0
    std_error: float = 0.0
    detail: str = ""
    extras: dict = field(default_factory=dict, compare=False)

    @property
    def ratio(self):
        if self.bound == 0 or not math.isfinite(self.bound):
            return math.nan
        return self.measured / self.bound


@dataclass
class TheoryReport:
    entries: list = field(default_factory=list)

    def add(self, entry):
        self.entries.append(entry)
        return entry

    @property
    def all_pass(self):
        return all(e.passed for e in self.entries)

    def failures(self):
        return [e for e in self.entries if not e.passed]

    def write_csv(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["check_id", "T", "d", "measured", "bound", "ratio", "pass"])
        for e in self.entries:
            w.writerow([e.check_id, e.T, e.d, f"{e.measured:.17g}", f"{e.bound:.17g}",
                        f"{e.ratio:.17g}", int(e.passed)])


def _is_single_gaussian(g):
    return isinstance(g, GaussianMixture) and g.K == 1


def _mean_se(a):
    n = len(a)
    return float(np.mean(a)), (float(np.std(a, ddof=1) / math.sqrt(n)) if n > 1 else 0.0)


def check_jacobian_identity(g, s, t, probes):
    """Max entrywise gap between ``-(1 - ab) J(x)`` and ``I - Sigma(x)``."""
    if not 1 <= t <= s.T:
        raise ValueError(f"step {t} outside [1, {s.T}]")
    a_bar, om = float(s.alpha_bar[t]), float(s.one_minus_alpha_bar[t])
    x = np.asarray(probes, dtype=float).reshape(-1, g.d)
    lhs = -om * g.marginal(a_bar, om).hessian(x)
    rhs = np.eye(g.d) - g.posterior_covariance(a_bar, x, om)
    res = float(np.max(np.abs(lhs - rhs)))
    return TheoryEntry(f"jacobian_identity[t={t}]", s.T, g.d, res, JACOBIAN_TOL, res <= JACOBIAN_TOL)


def covariance_sum_exact(g, s):
    """``S`` for a single Gaussian, where ``Sigma = c_t I`` does not depend on ``x``."""
    if not _is_single_gaussian(g):
        raise ValueError("closed form needs a single Gaussian")
    v = g.variances[0]
    t = np.arange(2, s.T + 1)
    ab, om = s.alpha_bar[t], s.one_minus_alpha_bar[t]
    c = ab * v / (ab * v + om)
    return g.d * math.fsum(s.beta[t] / om * c * c)


def _mc_step_sum(g, s, n_mc, seed, weights, mode):
    """MC of ``sum_{t>=2} weights_t E||C_t||_F^2`` with ``C`` = Sigma (mode 0) or Sigma - I (mode 1)."""
    fam = MarginalFamily(g, s)
    x0, z = marginal_draws(fam, n_mc, seed, tag=rng.THEORY)
    t = np.arange(2, s.T + 1)
    sched = (np.sqrt(s.alpha_bar[t]), s.alpha_bar[t], s.one_minus_alpha_bar[t], weights)
    if isinstance(g, ProductMixture):
        parts = zip(g.factors, g.slices())
    else:
        parts = [(g, slice(None))]
    acc = np.zeros(n_mc)
    for fac, sl in parts:
        acc += kernels.posterior_step_sums(x0[:, sl], z[:, sl], *sched, fac.log_weights,
                                           fac.means, fac.variances, mode)
    return _mean_se(acc)


def check_covariance_sum(g, s, n_mc, seed, method="auto"):
    """``S = sum_t beta_t / (1 - ab_t) Tr E[Sigma(X_t)^2]`` against ``34 c1 d ln T``.

    ``method`` is ``exact`` (single Gaussian), ``mc`` or ``auto``.
    """
    if method == "auto":
        method = "exact" if _is_single_gaussian(g) else "mc"
    d, T = g.d, s.T
    scale = d * math.log(T)
    if method == "exact":
        S, se = covariance_sum_exact(g, s), 0.0
    else:
        t = np.arange(2, T + 1)
        S, se = _mc_step_sum(g, s, n_mc, seed, s.beta[t] / s.one_minus_alpha_bar[t], 0)
    bound = 34.0 * s.c1
    ratio = S / scale
    return TheoryEntry("covariance_sum", T, d, ratio, bound, ratio <= bound + 3.0 * se / scale,
                       tolerance=3.0 * se / scale, std_error=se / scale, detail=method,
                       extras={"S": S, "S_se": se})


def frobenius_sum_exact(g, s):
    if not _is_single_gaussian(g):
        raise ValueError("closed form needs a single Gaussian")
    t = np.arange(2, s.T + 1)
    D = s.alpha_bar[t] * g.variances[0] + s.one_minus_alpha_bar[t]
    return 0.25 * g.d * math.fsum((s.beta[t] / D) ** 2)


def frobenius_sum(g, s, n_mc, seed, method="auto"):
    """``sum_t E ||(1 - alpha_t)/2 J(X_t)||_F^2`` with its standard error."""
    if method == "auto":
        method = "exact" if _is_single_gaussian(g) else "mc"
    if method == "exact":
        return frobenius_sum_exact(g, s), 0.0
    # (1 - alpha_t)/2 J = -(beta_t / (2 (1 - ab_t))) (I - Sigma)
    t = np.arange(2, s.T + 1)
    return _mc_step_sum(g, s, n_mc, seed, (0.5 * s.beta[t] / s.one_minus_alpha_bar[t]) ** 2, 1)


def check_frobenius_sum(g, s, n_mc, seed, bound=math.inf, method="auto"):
    """Frobenius sum normalised by ``d (ln T)^2 / T``; passes iff below ``bound``."""
    F, se = frobenius_sum(g, s, n_mc, seed, method)
    scale = g.d * math.log(s.T) ** 2 / s.T
    ratio = F / scale
    ok = math.isfinite(ratio) and ratio <= bound
    return TheoryEntry("frobenius_sum", s.T, g.d, ratio, bound, ok, std_error=se / scale,
                       extras={"F": F, "F_se": se})


def check_frobenius_scan(g, T_values, c0, c1, n_mc, seed, spread=4.0):
    """Normalised Frobenius sums over a ladder of ``T``; passes iff max/min < ``spread``."""
    entries = [check_frobenius_sum(g, build_schedule(T, c0, c1), n_mc, seed) for T in T_values]
    r = [e.measured for e in entries]
    measured = max(r) / min(r)
    scan = TheoryEntry("frobenius_scan", max(T_values), g.d, measured, spread, measured < spread,
                       detail="max/min normalised sum", extras={"ratios": r})
    return entries, scan


def theta(g, a_bar, y, T, c6=10.0, one_minus=None):
    y = np.asarray(y, dtype=float).reshape(-1, g.d)
    logq = np.asarray(g.marginal(a_bar, one_minus).log_density(y))
    return np.maximum(-logq / (g.d * math.log(T)), c6)


def posterior_moments(g, a_bar, y, n_mc, seed, key=(), one_minus=None):
    """MC ``E[||sqrt(ab) X_0 - y||^k | X_t = y]`` for ``k = 1..4`` with standard errors."""
    post = g.posterior(a_bar, y, one_minus)
    x0 = post.sample(n_mc, seed, key=(rng.POSTERIOR,) + tuple(key))
    r = np.linalg.norm(math.sqrt(a_bar) * x0 - np.asarray(y, dtype=float).reshape(1, -1), axis=1)
    out = [_mean_se(r ** k) for k in (1, 2, 3, 4)]
    return np.array([m for m, _ in out]), np.array([e for _, e in out])


def check_posterior_moments(g, s, t, probes, n_mc, seed, c6=10.0):
    """Four moment bounds at each probe; one entry per moment order (worst probe)."""
    if not 1 <= t <= s.T:
        raise ValueError(f"step {t} outside [1, {s.T}]")
    a_bar, om = float(s.alpha_bar[t]), float(s.one_minus_alpha_bar[t])
    y = np.asarray(probes, dtype=float).reshape(-1, g.d)
    th = theta(g, a_bar, y, s.T, c6, om)
    if not np.all(np.isfinite(th)):
        raise ValueError("probe with non-finite log-density")
    base = th * g.d * om * math.log(s.T)
    bounds = np.stack([12.0 * np.sqrt(base), 120.0 * base, 1040.0 * base ** 1.5, 10080.0 * base ** 2], axis=1)
    moments = np.empty_like(bounds)
    ses = np.empty_like(bounds)
    for i, yi in enumerate(y):
        moments[i], ses[i] = posterior_moments(g, a_bar, yi, n_mc, seed, key=(t, i), one_minus=om)
    entries = []
    for k in range(4):
        i = int(np.argmax(moments[:, k] / bounds[:, k]))
        ok = bool(np.all(moments[:, k] <= bounds[:, k]))
        entries.append(TheoryEntry(f"posterior_moment_{k + 1}[t={t}]", s.T, g.d, float(moments[i, k]),
                                   float(bounds[i, k]), ok, std_error=float(ses[i, k]),
                                   extras={"theta": th.tolist()}))
    return entries


def _localization_cov(g, s_val, x):
    # Cov(X_0 | s X_0 + sqrt(s) Z = x) = Sigma(x') / s with ab = s/(1+s), x' = x / sqrt(s(1+s))
    ab = s_val / (1.0 + s_val)
    om = 1.0 / (1.0 + s_val)
    return g.posterior_covariance(ab, x / math.sqrt(s_val * (1.0 + s_val)), om) / s_val


def check_localization_identity(g, s_val, h=None, n_mc=10000, seed=0, method="auto"):
    """``d/ds E[A_s] = -E[A_s^2]`` for ``A_s = Cov(X_0 | s X_0 + sqrt(s) Z)``.

    ``analytic`` (single Gaussian) compares the closed-form derivative with
    ``-A_s^2`` from the general posterior code.  ``mc`` uses a forward
    difference under common random numbers; the allowance is three standard
    errors plus an estimate of the truncation term.
    """
    if not s_val > 0:
        raise ValueError("s must be positive")
    h = 1e-4 * s_val if h is None else float(h)
    if method == "auto":
        method = "analytic" if _is_single_gaussian(g) else "mc"
    d = g.d
    if method == "analytic":
        v = g.variances[0]
        deriv = -(v / (1.0 + s_val * v)) ** 2 * np.eye(d)
        A = _localization_cov(g, s_val, np.zeros((1, d)))[0]
        res = float(np.max(np.abs(deriv + A @ A)))
        return TheoryEntry(f"localization_identity[s={s_val:g}]", 0, d, res, GAUSSIAN_EXACT_TOL,
                           res <= GAUSSIAN_EXACT_TOL, detail="analytic", extras={"s": s_val, "h": 0.0})
    x0 = g.sample(n_mc, seed, key=(rng.THEORY, 1))
    z = rng.standard_normal(seed, (rng.THEORY, 2), n_mc, d)
    A0 = _localization_cov(g, s_val, s_val * x0 + math.sqrt(s_val) * z)
    s1 = s_val + h
    A1 = _localization_cov(g, s1, s1 * x0 + math.sqrt(s1) * z)
    sq0 = np.einsum("nij,njk->nik", A0, A0)
    sq1 = np.einsum("nij,njk->nik", A1, A1)
    per = (A1 - A0) / h + sq0
    res = per.mean(axis=0)
    se = per.std(axis=0, ddof=1) / math.sqrt(n_mc)
    # first-order truncation is h/2 |d/ds E[A^2]|; doubled for headroom
    trunc = np.abs(sq1.mean(axis=0) - sq0.mean(axis=0))
    allow = 3.0 * se + trunc + 1e-12 * np.maximum(1.0, np.abs(sq0.mean(axis=0)))
    worst = int(np.argmax(np.abs(res) / allow))
    i, j = divmod(worst, d)
    return TheoryEntry(f"localization_identity[s={s_val:g}]", 0, d, float(abs(res[i, j])), float(allow[i, j]),
                       bool(np.all(np.abs(res) <= allow)), std_error=float(se[i, j]), detail="mc",
                       extras={"s": s_val, "h": h, "truncation": float(trunc[i, j])})


def check_kl_terminal(g, s, n_mc, seed):
    """Closed form vs MC for a single Gaussian; otherwise a finite non-negative estimate."""
    est = kl_terminal(g, s, n_mc, seed)
    if _is_single_gaussian(g):
        exact = kl_terminal_gaussian(g, s)
        allow = 3.0 * est.std_error + 1e-10 * abs(exact) + 1e-300
        return TheoryEntry("kl_terminal", s.T, g.d, est.value, exact, abs(est.value - exact) <= allow,
                           tolerance=allow, std_error=est.std_error, detail="closed form")
    ok = math.isfinite(est.value) and est.value >= -3.0 * est.std_error
    return TheoryEntry("kl_terminal", s.T, g.d, est.value, math.nan, ok, std_error=est.std_error)


def check_kl_monotone(g, T_values, c0, c1, n_mc, seed):
    """KL estimates over increasing ``T`` must not increase beyond 3 combined standard errors."""
    ests = [kl_terminal(g, build_schedule(T, c0, c1), n_mc, seed) for T in sorted(T_values)]
    # measured is the largest step-to-step change (negative when decreasing)
    worst, worst_allow = -math.inf, 0.0
    ok = True
    for a, b in zip(ests, ests[1:]):
        rise = b.value - a.value
        allow = 3.0 * math.hypot(a.std_error, b.std_error)
        ok &= rise <= allow
        if rise > worst:
            worst, worst_allow = rise, allow
    return TheoryEntry("kl_monotone", max(T_values), g.d, worst, worst_allow, bool(ok),
                       extras={"values": [e.value for e in ests]})


def default_probes(g, s, t, n, seed):
    """Component centres at step ``t`` followed by draws from ``q_t``."""
    a_bar = float(s.alpha_bar[t])
    if isinstance(g, ProductMixture):
        centres = np.zeros((0, g.d))
    else:
        centres = math.sqrt(a_bar) * g.means
    fam = MarginalFamily(g, s)
    extra = max(n - len(centres), 0)
    draws = fam.at(t).sample(extra, seed, key=(rng.PROBES, t)) if extra else np.zeros((0, g.d))
    return np.concatenate([centres, draws])[:n]
