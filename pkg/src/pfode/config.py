"""Experiment configuration: TOML file -> validated, fully resolved dict.

Every key has a default except the ``schedule`` block, which must be
present.  Unknown keys are rejected.  Errors carry the file line of the
offending key when it can be located.
"""
import copy
import hashlib
import json
import math
import re
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .score_models import KINDS


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "schedule": {"T": 1000, "c0": 2.0, "c1": 4.0, "c2": None},
    "target": {
        "d": 1,
        "product": False,
        "components": [
            {"weight": 0.3, "mean": [-2.0], "variance": 0.25},
            {"weight": 0.7, "mean": [1.5], "variance": 0.5},
        ],
    },
    "score": {"kind": "exact", "params": {}},
    "run": {
        "n_samples": 20000,
        "seed": 0,
        "with_density": True,
        "output_path": None,
        "n_error_mc": 2000,
        "grid_points": 20001,
        "hist_bins": 200,
    },
    "scan": None,
    "theory": {
        "n_mc": 20000,
        "n_probes": 10,
        "c6": 10.0,
        "h_rel": 1e-4,
        "s_values": [0.5, 2.0],
        "scan_T": [250, 1000, 4000],
    },
}

SCORE_PARAMS = {
    "exact": set(),
    "constant_shift": {"shift"},
    "smooth_additive": {"epsilon", "omega", "phases"},
    "floor_lattice": {"L", "t0", "score_error"},
}
SCAN_AXES = ("T", "d", "epsilon")
COMPONENT_KEYS = {"weight", "mean", "variance"}


def _line_of(text, key):
    if text is None:
        return None
    pat = re.compile(rf"^\s*(\[\s*{re.escape(key)}\s*\]|{re.escape(key)}\s*=)", re.M)
    m = pat.search(text)
    return None if m is None else text.count("\n", 0, m.start()) + 1


def _fail(msg, text=None, key=None):
    line = _line_of(text, key) if key else None
    raise ConfigError(f"line {line}: {msg}" if line else msg)


def _check_keys(block, allowed, where, text):
    for k in block:
        if k not in allowed:
            _fail(f"unknown key {k!r} in [{where}]", text, k)


def _int(v, name, text, lo=None):
    if isinstance(v, bool) or not isinstance(v, int):
        _fail(f"{name} must be an integer, got {v!r}", text, name.split(".")[-1])
    if lo is not None and v < lo:
        _fail(f"{name} must be >= {lo}, got {v}", text, name.split(".")[-1])
    return v


def _real(v, name, text, positive=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        _fail(f"{name} must be a finite number, got {v!r}", text, name.split(".")[-1])
    if positive and not v > 0:
        _fail(f"{name} must be > 0, got {v}", text, name.split(".")[-1])
    return float(v)


def _vector(v, n, name, text):
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        v = [v]
    if not isinstance(v, list) or len(v) != n:
        _fail(f"{name} must be a list of {n} numbers", text, name.split(".")[-1])
    return [_real(x, name, text) for x in v]


def parse(text, require_schedule=True):
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"parse error: {e}") from None
    return resolve(raw, text, require_schedule)


def load(path, require_schedule=True):
    try:
        with open(path, "rb") as fh:
            text = fh.read().decode("utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return parse(text, require_schedule)


def resolve(raw, text=None, require_schedule=True):
    """Merge defaults, validate every block and return a new dict."""
    _check_keys(raw, DEFAULTS.keys(), "top level", text)
    if require_schedule and "schedule" not in raw:
        raise ConfigError("missing [schedule] block")
    cfg = copy.deepcopy(DEFAULTS)
    for name in ("schedule", "run", "theory"):
        block = raw.get(name, {})
        if not isinstance(block, dict):
            _fail(f"[{name}] must be a table", text, name)
        _check_keys(block, DEFAULTS[name].keys(), name, text)
        cfg[name].update(block)

    sc = cfg["schedule"]
    sc["T"] = _int(sc["T"], "schedule.T", text, lo=2)
    sc["c0"] = _real(sc["c0"], "schedule.c0", text, positive=True)
    sc["c1"] = _real(sc["c1"], "schedule.c1", text, positive=True)
    sc["c2"] = sc["c1"] / 2 if sc["c2"] is None else _real(sc["c2"], "schedule.c2", text, positive=True)
    if not sc["c1"] * math.log(sc["T"]) / sc["T"] < 1:
        _fail("schedule requires c1 ln T / T < 1", text, "c1")

    tg = raw.get("target", {})
    _check_keys(tg, DEFAULTS["target"].keys(), "target", text)
    cfg["target"].update(copy.deepcopy(tg))
    tg = cfg["target"]
    tg["d"] = _int(tg["d"], "target.d", text, lo=1)
    if not isinstance(tg["product"], bool):
        _fail("target.product must be true or false", text, "product")
    comps = tg["components"]
    if not isinstance(comps, list) or not comps:
        _fail("target.components must be a non-empty list", text, "components")
    cdim = 1 if tg["product"] else tg["d"]
    out = []
    for c in comps:
        if not isinstance(c, dict):
            _fail("each component must be a table {weight, mean, variance}", text, "components")
        _check_keys(c, COMPONENT_KEYS, "target.components", text)
        missing = COMPONENT_KEYS - c.keys()
        if missing:
            _fail(f"component missing {sorted(missing)}", text, "components")
        out.append({"weight": _real(c["weight"], "weight", text),
                    "mean": _vector(c["mean"], cdim, "mean", text),
                    "variance": _real(c["variance"], "variance", text, positive=True)})
    w = [c["weight"] for c in out]
    if min(w) < 0 or abs(sum(w) - 1.0) > 1e-12:
        _fail("component weights must be non-negative and sum to 1", text, "weight")
    tg["components"] = out

    scr = raw.get("score", {})
    _check_keys(scr, {"kind", "params"}, "score", text)
    kind = scr.get("kind", "exact")
    if kind not in KINDS:
        _fail(f"score.kind must be one of {KINDS}, got {kind!r}", text, "kind")
    params = dict(scr.get("params", {}))
    _check_keys(params, SCORE_PARAMS[kind], f"score.params ({kind})", text)
    d = tg["d"]
    if kind == "constant_shift":
        params["shift"] = _vector(params.get("shift", [0.0] * d), d, "shift", text)
    elif kind == "smooth_additive":
        params["epsilon"] = _real(params.get("epsilon", 0.0), "epsilon", text)
        params["omega"] = _real(params.get("omega", 1.0), "omega", text)
        params["phases"] = _vector(params.get("phases", [0.0] * d), d, "phases", text)
        if params["epsilon"] < 0:
            _fail("epsilon must be >= 0", text, "epsilon")
    elif kind == "floor_lattice":
        if d != 1:
            _fail("floor_lattice needs target.d = 1", text, "kind")
        t0 = params.get("t0", math.ceil(sc["T"] / 2))
        params["t0"] = _int(t0, "t0", text)
        if not 2 <= params["t0"] <= sc["T"]:
            _fail(f"t0 must lie in [2, {sc['T']}]", text, "t0")
        if "L" in params:
            params["L"] = _real(params["L"], "L", text, positive=True)
        params["score_error"] = _real(params.get("score_error", 1e-3), "score_error", text, positive=True)
    cfg["score"] = {"kind": kind, "params": params}

    run = cfg["run"]
    run["n_samples"] = _int(run["n_samples"], "run.n_samples", text, lo=1)
    run["seed"] = _int(run["seed"], "run.seed", text, lo=0)
    run["n_error_mc"] = _int(run["n_error_mc"], "run.n_error_mc", text, lo=1)
    run["grid_points"] = _int(run["grid_points"], "run.grid_points", text, lo=101)
    run["hist_bins"] = _int(run["hist_bins"], "run.hist_bins", text, lo=1)
    if not isinstance(run["with_density"], bool):
        _fail("run.with_density must be true or false", text, "with_density")
    if run["output_path"] is not None and not isinstance(run["output_path"], str):
        _fail("run.output_path must be a string", text, "output_path")

    if "scan" in raw:
        scan = raw["scan"]
        _check_keys(scan, {"axis", "values"}, "scan", text)
        if scan.get("axis") not in SCAN_AXES:
            _fail(f"scan.axis must be one of {SCAN_AXES}", text, "axis")
        vals = scan.get("values")
        if not isinstance(vals, list) or len(vals) < 4:
            _fail("scan.values needs at least 4 entries", text, "values")
        if scan["axis"] == "epsilon":
            vals = [_real(v, "scan.values", text) for v in vals]
            if min(vals) < 0:
                _fail("epsilon values must be >= 0", text, "values")
        else:
            vals = [_int(v, "scan.values", text, lo=2 if scan["axis"] == "T" else 1) for v in vals]
        if len(set(vals)) != len(vals):
            _fail("scan.values must be distinct", text, "values")
        cfg["scan"] = {"axis": scan["axis"], "values": sorted(vals)}

    th = cfg["theory"]
    th["n_mc"] = _int(th["n_mc"], "theory.n_mc", text, lo=1)
    th["n_probes"] = _int(th["n_probes"], "theory.n_probes", text, lo=1)
    th["c6"] = _real(th["c6"], "theory.c6", text, positive=True)
    th["h_rel"] = _real(th["h_rel"], "theory.h_rel", text, positive=True)
    if not isinstance(th["s_values"], list) or not th["s_values"]:
        _fail("theory.s_values must be a non-empty list", text, "s_values")
    th["s_values"] = [_real(v, "theory.s_values", text, positive=True) for v in th["s_values"]]
    if not isinstance(th["scan_T"], list) or len(th["scan_T"]) < 2:
        _fail("theory.scan_T needs at least 2 entries", text, "scan_T")
    th["scan_T"] = sorted(_int(v, "theory.scan_T", text, lo=2) for v in th["scan_T"])
    return cfg


def canonical(cfg):
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"))


def config_hash(cfg):
    return hashlib.sha256(canonical(cfg).encode()).hexdigest()
