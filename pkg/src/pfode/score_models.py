"""Score fields: the exact marginal score and controlled corruptions of it.

A ``ScoreField`` evaluates ``(t, x) -> s_t(x)`` and its Jacobian for a
``MarginalFamily``.  Corruptions are additive perturbations of the exact
score, so the score and Jacobian errors can be measured without
re-evaluating the exact oracle except where a perturbation depends on it
(the lattice kind).
"""
import csv
import math
from dataclasses import dataclass

import numpy as np

from . import kernels, rng
from .target import MarginalFamily, ProductMixture

KINDS = ("exact", "constant_shift", "smooth_additive", "floor_lattice")
_KIND_CODE = {
    "exact": kernels.EXACT,
    "constant_shift": kernels.CONSTANT_SHIFT,
    "smooth_additive": kernels.SMOOTH_ADDITIVE,
    "floor_lattice": kernels.FLOOR_LATTICE,
}
MAX_DENSE_DIM = 32


def _as_batch(x, d):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x2 = x.reshape(1, -1) if single else x
    if x2.ndim != 2 or x2.shape[1] != d:
        raise ValueError(f"expected points of dimension {d}, got shape {x.shape}")
    return x2, single


def lattice_width(schedule, t0, score_error):
    """Lattice width whose worst-case score error at ``t0`` equals ``score_error``.

    Quantizing the update moves the iterate by less than ``L``, which costs
    at most ``2 sqrt(alpha) L / beta`` in the score.
    """
    b = float(schedule.beta[t0])
    return float(score_error) * b / (2.0 * math.sqrt(schedule.alpha[t0]))


class ScoreField:
    """Exact score of ``family`` plus an optional structured perturbation.

    kind        parameters
    ----        ----------
    exact           none
    constant_shift  ``shift`` (length-d vector ``c``)
    smooth_additive ``epsilon``, ``omega``, ``phases`` (length-d)
    floor_lattice   ``L`` (lattice width), ``t0`` (injection step, default ceil(T/2))
    """

    def __init__(self, family, kind="exact", *, shift=None, epsilon=0.0, omega=1.0,
                 phases=None, L=None, t0=None):
        if not isinstance(family, MarginalFamily):
            raise TypeError("family must be a MarginalFamily")
        if kind not in KINDS:
            raise ValueError(f"unknown score kind {kind!r}; expected one of {KINDS}")
        self.family = family
        self.kind = kind
        d, T = family.d, family.T
        self.vec = np.zeros(d)
        self.epsilon, self.omega, self.L, self.t0 = 0.0, 0.0, 0.0, 0
        if kind == "constant_shift":
            c = np.zeros(d) if shift is None else np.atleast_1d(np.asarray(shift, dtype=float))
            if c.shape != (d,):
                raise ValueError(f"shift must have length {d}")
            self.vec = c
        elif kind == "smooth_additive":
            ph = np.zeros(d) if phases is None else np.atleast_1d(np.asarray(phases, dtype=float))
            if ph.shape != (d,):
                raise ValueError(f"phases must have length {d}")
            if epsilon < 0 or not np.isfinite(omega):
                raise ValueError("epsilon must be >= 0 and omega finite")
            self.vec, self.epsilon, self.omega = ph, float(epsilon), float(omega)
        elif kind == "floor_lattice":
            if d != 1:
                raise ValueError("floor_lattice is defined for d = 1 only")
            t0 = math.ceil(T / 2) if t0 is None else int(t0)
            if not 2 <= t0 <= T:
                raise ValueError(f"t0 must lie in [2, {T}], got {t0}")
            if L is None or not L > 0:
                raise ValueError("floor_lattice needs a lattice width L > 0")
            self.L, self.t0 = float(L), t0
        self.vec.flags.writeable = False

    @property
    def d(self):
        return self.family.d

    @property
    def T(self):
        return self.family.T

    @property
    def schedule(self):
        return self.family.schedule

    def __repr__(self):
        return f"ScoreField(kind={self.kind!r}, d={self.d}, T={self.T})"

    def _check_t(self, t):
        if not 1 <= t <= self.T:
            raise ValueError(f"step {t} outside [1, {self.T}]")

    def kernel_field(self, sl=slice(None)):
        """Parameter tuple consumed by ``kernels.flow_batch``; ``sl`` picks coordinates."""
        return (_KIND_CODE[self.kind], np.ascontiguousarray(self.vec[sl]), self.epsilon,
                self.omega, self.L, self.t0)

    def is_product_form(self):
        return self.kind != "floor_lattice"

    # perturbations -------------------------------------------------------

    def perturbation(self, t, x, base_score=None):
        """``s_t(x) - s*_t(x)`` for a batch, or ``None`` where it vanishes identically."""
        self._check_t(t)
        x2, _ = _as_batch(x, self.d)
        if self.kind == "constant_shift":
            return np.broadcast_to(self.vec, x2.shape)
        if self.kind == "smooth_additive":
            return self.epsilon * np.sin(self.omega * x2 + self.vec)
        if self.kind == "floor_lattice" and t == self.t0:
            s_star = self.family.at(t).score(x2) if base_score is None else base_score
            return self._lattice_score(t, x2, s_star) - s_star
        return None

    def perturbation_jacobian(self, t, x, base_hessian=None):
        """``J_s - J_s*`` for a batch, or ``None`` where it vanishes identically."""
        self._check_t(t)
        x2, _ = _as_batch(x, self.d)
        n, d = x2.shape
        if self.kind == "smooth_additive":
            out = np.zeros((n, d, d))
            idx = np.arange(d)
            out[:, idx, idx] = self.epsilon * self.omega * np.cos(self.omega * x2 + self.vec)
            return out
        if self.kind == "floor_lattice" and t == self.t0:
            h = self.family.at(t).hessian(x2) if base_hessian is None else base_hessian
            return -(2.0 / self.schedule.beta[t]) * np.eye(d) - h
        return None

    def _lattice_score(self, t, x2, s_star):
        a, b = self.schedule.alpha[t], self.schedule.beta[t]
        ystar = (x2 + 0.5 * b * s_star) / np.sqrt(a)
        q = self.L * np.floor(ystar / self.L)
        return 2.0 * (q * np.sqrt(a) - x2) / b

    # evaluation ----------------------------------------------------------

    def eval_score(self, t, x):
        self._check_t(t)
        x2, single = _as_batch(x, self.d)
        s = self.family.at(t).score(x2)
        if self.kind == "floor_lattice" and t == self.t0:
            out = self._lattice_score(t, x2, s)
        else:
            p = self.perturbation(t, x2, base_score=s)
            out = s if p is None else s + p
        return out[0] if single else out

    def eval_score_jacobian(self, t, x):
        self._check_t(t)
        x2, single = _as_batch(x, self.d)
        if self.kind == "floor_lattice" and t == self.t0:
            # right-limit (cell interior): the lattice point is locally constant
            out = np.broadcast_to(-(2.0 / self.schedule.beta[t]) * np.eye(self.d),
                                  (x2.shape[0], self.d, self.d)).copy()
        else:
            h = self.family.at(t).hessian(x2)
            p = self.perturbation_jacobian(t, x2, base_hessian=h)
            out = h if p is None else h + p
        return out[0] if single else out


def eval_score(f, t, x):
    return f.eval_score(t, x)


def eval_score_jacobian(f, t, x):
    return f.eval_score_jacobian(t, x)


def floor_perturbation(f, t0, x):
    """Perturbed score at ``t0``: the update it drives lands on ``L * floor(Y*/L)``."""
    if f.kind != "floor_lattice":
        raise ValueError("floor_perturbation needs a floor_lattice field")
    if f.d != 1:
        raise ValueError("floor_perturbation is defined for d = 1 only")
    if not 2 <= t0 <= f.T:
        raise ValueError(f"t0 must lie in [2, {f.T}], got {t0}")
    x2, single = _as_batch(x, 1)
    out = f._lattice_score(t0, x2, f.family.at(t0).score(x2))
    return out[0] if single else out


@dataclass(frozen=True)
class ErrorReport:
    """Monte Carlo score-error functionals; a part not measured is ``None``."""

    eps_score: float = None
    eps_jacobi: float = None
    per_t_score: np.ndarray = None
    per_t_jacobi: np.ndarray = None
    eps_score_se: float = None
    eps_jacobi_se: float = None
    n_mc: int = 0
    seed: int = 0

    def write_csv(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "mean_sq_score_err", "mean_op_jacobi_err"])
        T = len(self.per_t_score if self.per_t_score is not None else self.per_t_jacobi)

        def cell(a, i):
            return "" if a is None else f"{a[i]:.17g}"

        for i in range(T):
            w.writerow([i + 1, cell(self.per_t_score, i), cell(self.per_t_jacobi, i)])
        sq = "" if self.eps_score is None else f"{self.eps_score ** 2:.17g}"
        jac = "" if self.eps_jacobi is None else f"{self.eps_jacobi:.17g}"
        w.writerow(["aggregate", sq, jac])


def _spectral_norm(m):
    if m.shape[-1] == 1:
        return np.abs(m[:, 0, 0])
    return np.linalg.svd(m, compute_uv=False)[:, 0]


def marginal_draws(family, n, seed, tag=rng.SCORE_ERROR):
    """Coupled draws of ``(X_0, Z)`` reused across steps (common random numbers)."""
    x0 = family.base.sample(n, seed, key=(tag,))
    z = rng.standard_normal(seed, (tag, 0), n, family.d)
    return x0, z


def measure_errors(f, m=None, n_mc=1000, seed=0, *, score=True, jacobi=True):
    """Estimate ``eps_score`` and/or ``eps_jacobi`` with ``n_mc`` draws per step.

    The same base draws are pushed to every step, so per-sample step
    averages give a standard error for the aggregate.
    """
    m = f.family if m is None else m
    if isinstance(n_mc, bool) or int(n_mc) != n_mc or n_mc < 1:
        raise ValueError("n_mc must be an integer >= 1")
    n_mc = int(n_mc)
    if jacobi and m.d > MAX_DENSE_DIM:
        raise ValueError(f"dense spectral norms need d <= {MAX_DENSE_DIM}")
    T = m.T
    x0, z = marginal_draws(m, n_mc, seed)
    per_sq = np.zeros(T) if score else None
    per_op = np.zeros(T) if jacobi else None
    acc_sq = np.zeros(n_mc)
    acc_op = np.zeros(n_mc)
    for t in range(1, T + 1):
        x = math.sqrt(m.a_bar(t)) * x0 + math.sqrt(m.one_minus(t)) * z
        if score:
            p = f.perturbation(t, x)
            if p is not None:
                e = np.sum(p * p, axis=1)
                per_sq[t - 1] = e.mean()
                acc_sq += e
        if jacobi:
            pj = f.perturbation_jacobian(t, x)
            if pj is not None:
                e = _spectral_norm(pj)
                per_op[t - 1] = e.mean()
                acc_op += e
    out = dict(n_mc=n_mc, seed=int(seed))
    sd = (lambda a: float(np.std(a, ddof=1) / math.sqrt(n_mc)) if n_mc > 1 else 0.0)
    if score:
        eps_sq = math.fsum(per_sq) / T
        eps = math.sqrt(eps_sq)
        se_sq = sd(acc_sq / T)
        out.update(eps_score=eps, per_t_score=per_sq,
                   eps_score_se=(se_sq / (2 * eps) if eps > 0 else 0.0))
    if jacobi:
        out.update(eps_jacobi=math.fsum(per_op) / T, per_t_jacobi=per_op,
                   eps_jacobi_se=sd(acc_op / T))
    return ErrorReport(**out)


def measure_assumption1(f, m=None, n_mc=1000, seed=0):
    return measure_errors(f, m, n_mc, seed, score=True, jacobi=False)


def measure_assumption2(f, m=None, n_mc=1000, seed=0):
    return measure_errors(f, m, n_mc, seed, score=False, jacobi=True)


def product_factor_fields(f):
    """Per-factor kernel tuples for a product target (coordinate-wise fields only)."""
    base = f.family.base
    if not isinstance(base, ProductMixture):
        return [(base, slice(None), f.kernel_field())]
    if not f.is_product_form():
        raise ValueError(f"{f.kind} does not factor over a product target")
    return [(fac, sl, f.kernel_field(sl)) for fac, sl in zip(base.factors, base.slices())]
