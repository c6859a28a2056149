"""Deterministic reverse-time sampler with optional density transport.

Each step applies ``Phi_t(x) = (x + (1 - alpha_t)/2 * s_t(x)) / sqrt(alpha_t)``
for ``t = T, ..., 2``, starting from ``Y_T ~ N(0, I)``, and stops at ``Y_1``.
With transport on, the log-density of the sampler law at ``Y_1`` is
``log N(Y_T) - sum_t log det dPhi_t(Y_t)``.
"""
import csv
import hashlib
import math
from dataclasses import dataclass

import numpy as np

from . import kernels, rng
from .score_models import product_factor_fields

LOG_2PI = math.log(2.0 * math.pi)


class DegenerateJacobian(ArithmeticError):
    """A step Jacobian had a non-positive or non-finite determinant."""

    def __init__(self, index, t):
        super().__init__(f"degenerate Jacobian at trajectory {index}, step {t}")
        self.index = int(index)
        self.t = int(t)


def _check_compatible(f, s):
    if s.T != f.T:
        raise ValueError(f"schedule horizon {s.T} does not match score field horizon {f.T}")


def phi_map(f, s, t, x):
    if not 1 <= t <= s.T:
        raise ValueError(f"step {t} outside [1, {s.T}]")
    x = np.asarray(x, dtype=float)
    return (x + 0.5 * s.beta[t] * f.eval_score(t, x)) / math.sqrt(s.alpha[t])


def jac_phi(f, s, t, x):
    if not 1 <= t <= s.T:
        raise ValueError(f"step {t} outside [1, {s.T}]")
    J = f.eval_score_jacobian(t, x)
    eye = np.eye(f.d)
    return (eye + 0.5 * s.beta[t] * J) / math.sqrt(s.alpha[t])


def log_std_normal(y):
    y = np.asarray(y, dtype=float)
    return -0.5 * np.sum(y * y, axis=-1) - 0.5 * y.shape[-1] * LOG_2PI


@dataclass(frozen=True)
class Trajectory:
    points: np.ndarray  # rows y_T, ..., y_1
    step_logdets: np.ndarray = None  # log det for t = T, ..., 2
    log_p1: float = None

    @property
    def y1(self):
        return self.points[-1]


def run_trajectory(f, s, y_T, with_density=False):
    """Reference single-path implementation built on ``phi_map``/``jac_phi``."""
    _check_compatible(f, s)
    y = np.asarray(y_T, dtype=float).reshape(-1)
    if y.shape != (f.d,):
        raise ValueError(f"y_T must have dimension {f.d}")
    points = [y]
    logdets = []
    for t in range(s.T, 1, -1):
        if with_density:
            sign, la = np.linalg.slogdet(jac_phi(f, s, t, y))
            if not (sign > 0 and np.isfinite(la)):
                raise DegenerateJacobian(0, t)
            logdets.append(la)
        y = phi_map(f, s, t, y)
        points.append(y)
    if not with_density:
        return Trajectory(np.array(points))
    logdets = np.array(logdets)
    return Trajectory(np.array(points), logdets, float(log_std_normal(points[0]) - math.fsum(logdets)))


@dataclass(frozen=True)
class Batch:
    y1: np.ndarray
    log_p1: np.ndarray = None
    seed: int = 0

    def __len__(self):
        return len(self.y1)

    def checksums(self):
        """Per-row digest of the exact float64 bytes of ``y_1`` and ``log p_1``."""
        out = []
        for i in range(len(self.y1)):
            h = hashlib.blake2b(self.y1[i].tobytes(), digest_size=8)
            if self.log_p1 is not None:
                h.update(self.log_p1[i:i + 1].tobytes())
            out.append(h.hexdigest())
        return out

    def write_csv(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        d = self.y1.shape[1]
        head = ["index"] + [f"y1_{j}" for j in range(d)]
        if self.log_p1 is not None:
            head.append("log_p1")
        w.writerow(head + ["checksum"])
        for i, c in enumerate(self.checksums()):
            row = [i] + [f"{v:.17g}" for v in self.y1[i]]
            if self.log_p1 is not None:
                row.append(f"{self.log_p1[i]:.17g}")
            w.writerow(row + [c])


def flow(f, s, y, t_hi=None, t_lo=2, with_density=False):
    """Push a batch through steps ``t_hi .. t_lo``; returns ``(y, logdet_sum)``.

    Product targets run factor by factor; the log-determinants add.
    """
    _check_compatible(f, s)
    y = np.ascontiguousarray(y, dtype=float)
    t_hi = s.T if t_hi is None else int(t_hi)
    sched = s.kernel_arrays()
    out = np.empty_like(y)
    logdet = np.zeros(len(y))
    fail = np.zeros(len(y), dtype=np.int64)
    for fac, sl, field in product_factor_fields(f):
        yo, ld, fl = kernels.flow_batch(y[:, sl], t_hi, t_lo, sched, fac.log_weights, fac.means,
                                        fac.variances, field, with_density)
        out[:, sl] = yo
        logdet += ld
        # reverse time: the first failing step is the largest t
        fail = np.maximum(fail, fl)
    if with_density and np.any(fail):
        i = int(np.flatnonzero(fail)[0])
        raise DegenerateJacobian(i, fail[i])
    return out, (logdet if with_density else None)


def initial_draws(n, d, seed):
    return rng.standard_normal(seed, (rng.SAMPLER,), n, d)


def sample_batch(f, s, n, seed, with_density=False):
    """``n`` independent trajectories from ``Y_T ~ N(0, I)``; returns a ``Batch``.

    Row ``i`` depends only on ``(seed, i)``.
    """
    if isinstance(n, bool) or int(n) != n or n < 1:
        raise ValueError("n must be an integer >= 1")
    yT = initial_draws(int(n), f.d, seed)
    y1, logdet = flow(f, s, yT, with_density=with_density)
    logp = log_std_normal(yT) - logdet if with_density else None
    return Batch(y1, logp, int(seed))


def transport_grid(f, s, lo=-8.0, hi=8.0, n_points=20001):
    """Map a uniform ``y_T`` grid (1-D) to ``(y_T, y_1, log p_1(y_1))``."""
    if f.d != 1:
        raise ValueError("transport_grid needs d = 1")
    u = np.linspace(lo, hi, int(n_points)).reshape(-1, 1)
    y1, logdet = flow(f, s, u, with_density=True)
    return u[:, 0], y1[:, 0], log_std_normal(u) - logdet
