"""Two-phase learning-rate schedule and checks of its elementary properties."""
import csv
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True, eq=False)
class Schedule:
    """Learning rates for a horizon of ``T`` steps.

    Arrays are indexed by step and padded at index 0 with the empty
    product (``beta[0] = 0``, ``alpha_bar[0] = 1``) so ``beta[t]`` is
    beta_t for ``1 <= t <= T``.  ``one_minus_alpha_bar`` is computed from
    the log of alpha_bar and stays accurate when alpha_bar is near 1.
    """

    T: int
    c0: float
    c1: float
    beta: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    alpha_bar: np.ndarray = field(repr=False)
    log_alpha_bar: np.ndarray = field(repr=False)
    one_minus_alpha_bar: np.ndarray = field(repr=False)

    @property
    def rate(self):
        """The flat-phase level ``c1 ln T / T``."""
        return self.c1 * math.log(self.T) / self.T

    def kernel_arrays(self):
        return (np.sqrt(self.alpha_bar), self.alpha_bar, self.one_minus_alpha_bar,
                self.alpha, self.beta)


def _compensated_cumsum(values):
    # Neumaier summation keeps log alpha_bar within a few ulps for long horizons
    out = np.empty(len(values))
    total = 0.0
    comp = 0.0
    for i, v in enumerate(values.tolist()):
        t = total + v
        if abs(total) >= abs(v):
            comp += (total - t) + v
        else:
            comp += (v - t) + total
        total = t
        out[i] = total + comp
    return out


def build_schedule(T, c0=4.0, c1=4.0):
    """Build the schedule for horizon ``T``.

    beta_1 = T**-c0 and, for t >= 2,
    beta_t = r * min(beta_1 * (1 + r)**t, 1) with r = c1 ln T / T.
    """
    if isinstance(T, bool) or int(T) != T or T < 2:
        raise ValueError(f"T must be an integer >= 2, got {T!r}")
    T = int(T)
    c0, c1 = float(c0), float(c1)
    if not (c0 > 0 and c1 > 0):
        raise ValueError("c0 and c1 must be positive")
    r = c1 * math.log(T) / T
    if not r < 1:
        raise ValueError(f"c1 ln T / T = {r:.6g} must be < 1")
    beta1 = float(T) ** (-c0)
    t = np.arange(2, T + 1, dtype=float)
    with np.errstate(over="ignore"):
        growth = beta1 * np.power(1.0 + r, t)
    beta = np.empty(T + 1)
    beta[0] = 0.0
    beta[1] = beta1
    beta[2:] = r * np.minimum(growth, 1.0)
    if not np.all((beta[1:] > 0) & (beta[1:] < 1)):
        raise ValueError("parameters yield beta_t outside (0, 1)")
    alpha = 1.0 - beta
    log_ab = np.zeros(T + 1)
    log_ab[1:] = _compensated_cumsum(np.log1p(-beta[1:]))
    return Schedule(T=T, c0=c0, c1=c1, beta=beta, alpha=alpha,
                    alpha_bar=np.exp(log_ab), log_alpha_bar=log_ab,
                    one_minus_alpha_bar=-np.expm1(log_ab))


def saturation_step(s):
    """Smallest ``t`` with ``beta_1 (1 + r)**t >= 1``, or ``T + 1`` if none."""
    r = s.rate
    t = np.arange(1, s.T + 1, dtype=float)
    with np.errstate(over="ignore"):
        hit = np.nonzero(s.beta[1] * np.power(1.0 + r, t) >= 1.0)[0]
    return int(hit[0]) + 1 if hit.size else s.T + 1


@dataclass(frozen=True)
class PropertyResult:
    property_id: str
    passed: bool
    margin: float
    detail: str = ""


@dataclass(frozen=True)
class PropertyReport:
    T: int
    c0: float
    c1: float
    c2: float
    results: tuple

    @property
    def all_pass(self):
        return all(r.passed for r in self.results)

    def __getitem__(self, key):
        for r in self.results:
            if r.property_id == key:
                return r
        raise KeyError(key)

    def write_csv(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["property_id", "pass", "margin"])
        for r in self.results:
            w.writerow([r.property_id, int(r.passed), f"{r.margin:.17g}"])


def _min_or_inf(a):
    return float(np.min(a)) if np.size(a) else math.inf


def verify_properties(s, c2):
    """Check the five learning-rate properties; margins are slacks (>= 0 on pass).

    (a) alpha_t >= 1 - r >= 1/2
    (b) beta_t / (2 (1 - ab_t)) <= beta_t / (2 (alpha_t - ab_t)) <= beta_t / (1 - ab_{t-1}) <= 4 r, t >= 2
    (c) 1 <= (1 - ab_t) / (1 - ab_{t-1}) <= 1 + 4 r, t >= 2
    (d) ab_T <= T**-c2; margin is the achieved exponent minus c2
    (e) snr_{t+1} <= snr_t <= 4 snr_{t+1} with snr = ab / (1 - ab), 1 <= t < T
    """
    if not c2 > 0:
        raise ValueError("c2 must be positive")
    T, r = s.T, s.rate
    alpha, beta = s.alpha[1:], s.beta
    om = s.one_minus_alpha_bar
    results = []

    slack_a = min(_min_or_inf(alpha - (1.0 - r)), (1.0 - r) - 0.5)
    results.append(PropertyResult("a", bool(slack_a >= 0), slack_a, "alpha_t >= 1 - c1 lnT/T >= 1/2"))

    t = np.arange(2, T + 1)
    b = beta[t]
    lhs1 = 0.5 * b / om[t]
    # alpha_t - ab_t == alpha_t (1 - ab_{t-1}); the direct difference cancels near 1
    lhs2 = 0.5 * b / (s.alpha[t] * om[t - 1])
    mid = b / om[t - 1]
    slack_b = min(_min_or_inf(lhs2 - lhs1), _min_or_inf(mid - lhs2), _min_or_inf(4 * r - mid))
    results.append(PropertyResult("b", bool(slack_b >= 0), slack_b, "beta_t/(1-ab_{t-1}) <= 4 c1 lnT/T"))

    ratio = om[t] / om[t - 1]
    slack_c = min(_min_or_inf(ratio - 1.0), _min_or_inf(1.0 + 4 * r - ratio))
    results.append(PropertyResult("c", bool(slack_c >= 0), slack_c, "1 <= (1-ab_t)/(1-ab_{t-1}) <= 1 + 4 c1 lnT/T"))

    exponent = -s.log_alpha_bar[T] / math.log(T)
    results.append(PropertyResult("d", bool(exponent >= c2), exponent - c2,
                                  f"ab_T = T^-{exponent:.6g}, target T^-{c2:g}"))

    log_snr = s.log_alpha_bar[1:] - np.log(om[1:])
    lr = log_snr[:-1] - log_snr[1:]
    slack_e = min(_min_or_inf(lr), _min_or_inf(math.log(4.0) - lr))
    results.append(PropertyResult("e", bool(slack_e >= 0), slack_e, "snr_{t+1} <= snr_t <= 4 snr_{t+1} (log slack)"))
    return PropertyReport(T=T, c0=s.c0, c1=s.c1, c2=float(c2), results=tuple(results))
