"""Experiment drivers behind the command-line interface.

Each ``run_*`` function takes a resolved config (see ``config.resolve``)
and returns an ``Outcome`` holding the CSV table and the pass/fail status.
Nothing here touches the filesystem.
"""
import csv
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import config as config_mod
from .metrics import TvEstimate, tv_grid_1d, tv_histogram, tv_monte_carlo
from .sampler import DegenerateJacobian, flow, initial_draws, sample_batch
from .schedule import build_schedule, verify_properties
from .score_models import ScoreField, lattice_width, measure_errors
from .target import GaussianMixture, MarginalFamily, ProductMixture
from . import theory


class ValidationError(ValueError):
    """Inputs are inconsistent for the requested command."""


@dataclass
class Outcome:
    header: list
    rows: list
    ok: bool = True
    notes: list = field(default_factory=list)
    gnuplot: str = ""

    def to_csv(self, preamble):
        buf = io.StringIO()
        for line in preamble:
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        for r in self.rows:
            w.writerow([fmt(v) for v in r])
        return buf.getvalue()


def fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


# builders -------------------------------------------------------------------

def build_target(cfg, d=None):
    tg = cfg["target"]
    w = [c["weight"] for c in tg["components"]]
    mu = [c["mean"] for c in tg["components"]]
    v = [c["variance"] for c in tg["components"]]
    base = GaussianMixture(w, mu, v)
    d = tg["d"] if d is None else d
    if tg["product"] or base.d != d:
        if base.d != 1:
            raise ValidationError("replicating across d needs 1-D components")
        return base if d == 1 else ProductMixture.replicate(base, d)
    return base


def build_field(cfg, family, shift=None):
    sc = cfg["score"]
    p = sc["params"]
    kind = sc["kind"]
    if shift is not None:
        return ScoreField(family, "constant_shift", shift=shift)
    if kind == "constant_shift":
        return ScoreField(family, kind, shift=p["shift"])
    if kind == "smooth_additive":
        return ScoreField(family, kind, epsilon=p["epsilon"], omega=p["omega"], phases=p["phases"])
    if kind == "floor_lattice":
        t0 = p["t0"]
        L = p.get("L") or lattice_width(family.schedule, t0, p["score_error"])
        return ScoreField(family, kind, L=L, t0=t0)
    return ScoreField(family, "exact")


def _schedule(cfg, T=None):
    sc = cfg["schedule"]
    return build_schedule(sc["T"] if T is None else T, sc["c0"], sc["c1"])


# schedule-check ---------------------------------------------------------------

def run_schedule_check(cfg):
    sc = cfg["schedule"]
    rep = verify_properties(_schedule(cfg), sc["c2"])
    rows = [[r.property_id, r.passed, r.margin] for r in rep.results]
    gp = ("set style data histograms\nset style fill solid\nset ylabel 'margin'\n"
          "plot DATA using 3:xtic(1) title 'property margin'\n")
    return Outcome(["property_id", "pass", "margin"], rows, rep.all_pass, gnuplot=gp)


# tv ---------------------------------------------------------------------------

TV_HEADER = ["T", "d", "kind", "n_samples", "tv_mc", "tv_mc_stderr", "tv_grid", "tv_grid_tol",
             "tv_hist", "tv_hist_stderr", "eps_score", "eps_score_stderr", "eps_jacobi",
             "eps_jacobi_stderr", "note", "seed"]


def tv_point(cfg, T=None, d=None, shift=None, grid=True):
    """One TV measurement; returns a dict keyed like ``TV_HEADER``."""
    run = cfg["run"]
    s = _schedule(cfg, T)
    g = build_target(cfg, d)
    fam = MarginalFamily(g, s)
    f = build_field(cfg, fam, shift)
    seed = run["seed"]
    row = dict.fromkeys(TV_HEADER)
    row.update(T=s.T, d=g.d, kind=f.kind, n_samples=run["n_samples"], seed=seed, note="")
    singular = f.kind == "floor_lattice"
    if run["with_density"] and not singular:
        batch = sample_batch(f, s, run["n_samples"], seed, with_density=True)
        est = tv_monte_carlo(fam, batch)
        row.update(tv_mc=est.value, tv_mc_stderr=est.std_error)
        if grid and g.d == 1:
            ge = tv_grid_1d(fam, f, s, (-8.0, 8.0, run["grid_points"]))
            row.update(tv_grid=ge.value, tv_grid_tol=ge.tolerance)
    else:
        if g.d != 1:
            raise ValidationError("without density transport TV is only available for d = 1")
        batch = sample_batch(f, s, run["n_samples"], seed, with_density=False)
        if singular:
            he = tv_histogram(batch.y1[:, 0], fam, width=f.L / 4)
            row["note"] = "histogram_fallback"
        else:
            he = tv_histogram(batch.y1[:, 0], fam, bins=run["hist_bins"])
            row["note"] = "histogram_no_density"
        row.update(tv_hist=he.value, tv_hist_stderr=he.std_error)
    err = measure_errors(f, fam, run["n_error_mc"], seed)
    row.update(eps_score=err.eps_score, eps_score_stderr=err.eps_score_se,
               eps_jacobi=err.eps_jacobi, eps_jacobi_stderr=err.eps_jacobi_se)
    return row


def run_tv(cfg):
    row = tv_point(cfg)
    return Outcome(TV_HEADER, [[row[k] for k in TV_HEADER]], True)


# scan -------------------------------------------------------------------------

SCAN_HEADER = ["axis_value", "tv_value", "tv_stderr", "eps_score", "eps_jacobi",
               "runtime_seconds", "seed", "status"]


def fit_slope(axis_values, tv, se):
    """Weighted least squares of ln TV on ln axis.

    Weights are ``1 / stderr(ln TV)^2 = (TV / se)^2``.  Points with a
    non-positive axis value, a non-finite TV, zero stderr or TV below three
    stderr are dropped.  Returns ``(slope, slope_se, n_used)``.
    """
    x, y, w = [], [], []
    for a, t, e in zip(axis_values, tv, se):
        if not (a > 0 and np.isfinite(t) and np.isfinite(e) and e > 0 and t >= 3.0 * e):
            continue
        x.append(math.log(a))
        y.append(math.log(t))
        w.append((t / e) ** 2)
    if len(x) < 2:
        return math.nan, math.nan, len(x)
    x, y, w = map(np.asarray, (x, y, w))
    xb = np.sum(w * x) / np.sum(w)
    yb = np.sum(w * y) / np.sum(w)
    sxx = np.sum(w * (x - xb) ** 2)
    slope = float(np.sum(w * (x - xb) * (y - yb)) / sxx)
    return slope, float(math.sqrt(1.0 / sxx)), len(x)


def _shift_direction(cfg, d):
    p = cfg["score"]["params"]
    if cfg["score"]["kind"] == "constant_shift" and any(p["shift"]) and len(p["shift"]) == d:
        u = np.asarray(p["shift"], dtype=float)
        return u / np.linalg.norm(u)
    return np.full(d, 1.0 / math.sqrt(d))


def run_scan(cfg, record_runtime=False):
    scan = cfg["scan"]
    if scan is None:
        raise ValidationError("scan needs a [scan] block")
    axis = scan["axis"]
    rows = []
    for v in scan["values"]:
        t0 = time.perf_counter()
        try:
            if axis == "T":
                r = tv_point(cfg, T=v, grid=False)
            elif axis == "d":
                r = tv_point(cfg, d=v, grid=False)
            else:
                d = cfg["target"]["d"]
                r = tv_point(cfg, shift=v * _shift_direction(cfg, d), grid=False)
            tv, se = r["tv_mc"], r["tv_mc_stderr"]
            if tv is None:
                tv, se = r["tv_hist"], r["tv_hist_stderr"]
            status = "ok"
            eps_s, eps_j = r["eps_score"], r["eps_jacobi"]
        except (ArithmeticError, ValidationError, ValueError) as e:
            tv = se = eps_s = eps_j = math.nan
            status = f"failed: {e}"
        runtime = time.perf_counter() - t0 if record_runtime else math.nan
        rows.append([v, tv, se, eps_s, eps_j, runtime, cfg["run"]["seed"], status])
    slope, slope_se, used = fit_slope([r[0] for r in rows], [r[1] for r in rows], [r[2] for r in rows])
    rows.append(["slope", slope, slope_se, None, None, None, cfg["run"]["seed"], f"fit_points={used}"])
    logx = "set logscale x\n"
    gp = (f"set logscale y\n{logx}set xlabel '{axis}'\nset ylabel 'TV'\n"
          "plot DATA every ::0::{n} using 1:2:3 with yerrorbars title 'TV'\n").replace(
        "{n}", str(len(rows) - 2))
    ok = all(r[7] == "ok" for r in rows[:-1])
    return Outcome(SCAN_HEADER, rows, ok, gnuplot=gp)


def scan_summary(rows):
    """Slope and its stderr recomputed from scan data rows (summary row excluded)."""
    data = [r for r in rows if r[0] != "slope"]
    return fit_slope([float(r[0]) for r in data], [float(r[1]) for r in data],
                     [float(r[2]) for r in data])


# counterexample -----------------------------------------------------------------

CE_HEADER = ["T", "t0", "L", "n_samples", "lattice_fraction", "lattice_fraction_exact",
             "score_err_t0", "score_err_bound", "eps_score", "tv_hist", "tv_hist_stderr",
             "tv_hist_exact", "mean_displacement", "displacement_bound", "verdict"]


def on_lattice(y, L, rtol=1e-9):
    y = np.asarray(y, dtype=float)
    return np.abs(y - L * np.round(y / L)) <= rtol * np.maximum(1.0, np.abs(y))


def run_counterexample(cfg):
    if cfg["target"]["d"] != 1:
        raise ValidationError("counterexample needs d = 1")
    s = _schedule(cfg)
    g = build_target(cfg)
    fam = MarginalFamily(g, s)
    p = cfg["score"]["params"] if cfg["score"]["kind"] == "floor_lattice" else {}
    t0 = p.get("t0", math.ceil(s.T / 2))
    bound = p.get("score_error", 1e-3)
    L = p.get("L") or lattice_width(s, t0, bound)
    f = ScoreField(fam, "floor_lattice", L=L, t0=t0)
    exact = ScoreField(fam, "exact")
    run = cfg["run"]
    n, seed = run["n_samples"], run["seed"]
    yT = initial_draws(n, 1, seed)
    y_mid, _ = flow(f, s, yT, t_lo=t0)
    x_mid, _ = flow(exact, s, yT, t_lo=t0)
    frac = float(np.mean(on_lattice(y_mid[:, 0], L)))
    frac_exact = float(np.mean(on_lattice(x_mid[:, 0], L)))
    y1 = flow(f, s, y_mid, t_hi=t0 - 1)[0][:, 0] if t0 > 2 else y_mid[:, 0]
    x1 = flow(exact, s, x_mid, t_hi=t0 - 1)[0][:, 0] if t0 > 2 else x_mid[:, 0]
    err = measure_errors(f, fam, run["n_error_mc"], seed, jacobi=False)
    step_err = math.sqrt(err.per_t_score[t0 - 1])
    hist = tv_histogram(y1, fam, width=L / 4)
    hist_exact = tv_histogram(x1, fam, width=L / 4)
    disp = float(np.mean(np.abs(y1 - x1)))
    disp_bound = 2.0 * L * (1.0 + s.T * float(np.max(s.beta[1:])))
    ok = frac == 1.0 and step_err <= bound and hist.value >= 0.9 and disp <= disp_bound
    row = [s.T, t0, L, n, frac, frac_exact, step_err, bound, err.eps_score, hist.value,
           hist.std_error, hist_exact.value, disp, disp_bound, "PASS" if ok else "FAIL"]
    gp = "set style data histograms\nset style fill solid\nplot DATA using 5:xtic(1) title 'lattice fraction'\n"
    return Outcome(CE_HEADER, [row], ok, gnuplot=gp)


# theory-checks ------------------------------------------------------------------

def _closeness(check_id, s, d, mc, mc_se, exact):
    allow = 3.0 * mc_se + 1e-10 * abs(exact)
    return theory.TheoryEntry(check_id, s.T, d, mc, exact, abs(mc - exact) <= allow,
                              tolerance=allow, std_error=mc_se)


def theory_report(cfg):
    th = cfg["theory"]
    s = _schedule(cfg)
    g = build_target(cfg)
    seed, n_mc = cfg["run"]["seed"], th["n_mc"]
    c0, c1 = cfg["schedule"]["c0"], cfg["schedule"]["c1"]
    T = s.T
    rep = theory.TheoryReport()
    for t in sorted({2, T // 2, T}):
        probes = theory.default_probes(g, s, t, max(th["n_probes"], 20), seed)
        rep.add(theory.check_jacobian_identity(g, s, t, probes))
    rep.add(theory.check_covariance_sum(g, s, n_mc, seed))
    single = isinstance(g, GaussianMixture) and g.K == 1
    if single:
        mc = theory.check_covariance_sum(g, s, n_mc, seed, method="mc")
        rep.add(_closeness("covariance_sum_mc_vs_exact", s, g.d, mc.extras["S"], mc.extras["S_se"],
                           theory.covariance_sum_exact(g, s)))
        F, F_se = theory.frobenius_sum(g, s, n_mc, seed, method="mc")
        rep.add(_closeness("frobenius_sum_mc_vs_exact", s, g.d, F, F_se, theory.frobenius_sum_exact(g, s)))
    entries, scan = theory.check_frobenius_scan(g, th["scan_T"], c0, c1, n_mc, seed)
    for e in entries:
        rep.add(e)
    rep.add(scan)
    for t in sorted({max(T // 4, 1), T // 2, T}):
        probes = theory.default_probes(g, s, t, th["n_probes"], seed)
        for e in theory.check_posterior_moments(g, s, t, probes, n_mc, seed, th["c6"]):
            rep.add(e)
    for sv in th["s_values"]:
        rep.add(theory.check_localization_identity(g, sv, th["h_rel"] * sv, n_mc, seed))
    rep.add(theory.check_kl_terminal(g, s, n_mc, seed))
    rep.add(theory.check_kl_monotone(g, th["scan_T"], c0, c1, n_mc, seed))
    return rep


def run_theory_checks(cfg):
    rep = theory_report(cfg)
    rows = [[e.check_id, e.T, e.d, e.measured, e.bound, e.ratio, e.passed] for e in rep.entries]
    gp = ("set style data histograms\nset style fill solid\nset logscale y\nset xtics rotate\n"
          "plot DATA using (abs($6)):xtic(1) title 'measured / bound'\n")
    return Outcome(["check_id", "T", "d", "measured", "bound", "ratio", "pass"], rows, rep.all_pass,
                   notes=[e.check_id for e in rep.failures()], gnuplot=gp)


COMMANDS = {
    "schedule-check": run_schedule_check,
    "tv": run_tv,
    "scan": run_scan,
    "counterexample": run_counterexample,
    "theory-checks": run_theory_checks,
}


def preamble(command, cfg):
    return [f"pfode {command}",
            f"config_sha256={config_mod.config_hash(cfg)} seed={cfg['run']['seed']}",
            f"config={config_mod.canonical(cfg)}"]


__all__ = ["COMMANDS", "Outcome", "ValidationError", "DegenerateJacobian", "TvEstimate",
           "preamble", "fit_slope", "scan_summary", "tv_point", "on_lattice", "build_target",
           "build_field", "theory_report"]
