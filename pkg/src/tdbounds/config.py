"""Run configuration and MDP document parsing.

Both parsers collect every problem they find and raise a single
:class:`ConfigError` whose ``errors`` list names each offending field by
its dotted path. Unknown keys are always rejected.
"""
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, TDBoundsError
from .mdp import MdpSpec, Problem
from .problems import BUILTIN, builtin

MDP_FIELDS = {"n_states", "gamma", "transition", "reward", "features", "raw_system"}
RAW_FIELDS = {"A", "b", "theta_ref"}


def _matrix(value, path, errors, rows=None, cols=None):
    try:
        m = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        errors.append(f"{path}: not a numeric array")
        return None
    if m.ndim != 2:
        errors.append(f"{path}: expected an array of rows")
        return None
    if not np.all(np.isfinite(m)):
        errors.append(f"{path}: entries must be finite")
        return None
    if rows is not None and m.shape[0] != rows:
        errors.append(f"{path}: expected {rows} rows, got {m.shape[0]}")
    if cols is not None and m.shape[1] != cols:
        errors.append(f"{path}: expected {cols} columns, got {m.shape[1]}")
    return m


def _vector(value, path, errors, length=None):
    try:
        v = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        errors.append(f"{path}: not a numeric array")
        return None
    if v.ndim != 1 or not np.all(np.isfinite(v)):
        errors.append(f"{path}: expected a flat list of finite numbers")
        return None
    if length is not None and v.shape[0] != length:
        errors.append(f"{path}: expected length {length}, got {v.shape[0]}")
    return v


def parse_mdp_document(doc, check_a2=True, prefix="", name=""):
    """Build a :class:`Problem` from an MDP JSON document.

    The document holds either the MDP fields (``n_states``, ``gamma``,
    ``transition``, ``reward``, ``features``) or a single ``raw_system``
    object ``{"A", "b", "theta_ref"}``.
    """
    errors = []
    p = (prefix + ".") if prefix else ""
    if not isinstance(doc, dict):
        raise ConfigError([f"{prefix or 'document'}: expected an object"])
    for key in sorted(set(doc) - MDP_FIELDS):
        errors.append(f"{p}{key}: unknown field")
    if "raw_system" in doc:
        others = sorted(set(doc) & (MDP_FIELDS - {"raw_system"}))
        if others:
            errors.append(f"{p}raw_system: cannot be combined with MDP fields {others}")
        raw = doc["raw_system"]
        if not isinstance(raw, dict):
            raise ConfigError(errors + [f"{p}raw_system: expected an object"])
        for key in sorted(set(raw) - RAW_FIELDS):
            errors.append(f"{p}raw_system.{key}: unknown field")
        for key in ("A", "b"):
            if key not in raw:
                errors.append(f"{p}raw_system.{key}: required")
        a = _matrix(raw["A"], f"{p}raw_system.A", errors) if "A" in raw else None
        d = a.shape[0] if a is not None else None
        if a is not None and a.shape[0] != a.shape[1]:
            errors.append(f"{p}raw_system.A: must be square")
        b = _vector(raw["b"], f"{p}raw_system.b", errors, d) if "b" in raw else None
        ref = None
        if raw.get("theta_ref") is not None:
            ref = _vector(raw["theta_ref"], f"{p}raw_system.theta_ref", errors, d)
        if errors:
            raise ConfigError(errors)
        return Problem.raw(a, b, theta_ref=ref, name=name or "raw")

    for key in ("n_states", "gamma", "transition", "reward", "features"):
        if key not in doc:
            errors.append(f"{p}{key}: required")
    n = doc.get("n_states")
    if "n_states" in doc and (not isinstance(n, int) or isinstance(n, bool) or n < 1):
        errors.append(f"{p}n_states: must be a positive integer")
        n = None
    g = doc.get("gamma")
    if "gamma" in doc:
        if not isinstance(g, (int, float)) or isinstance(g, bool) or not 0.0 <= g < 1.0:
            errors.append(f"{p}gamma: must be a number in [0, 1)")
    tr = _matrix(doc["transition"], f"{p}transition", errors, n, n) if "transition" in doc else None
    rw = _matrix(doc["reward"], f"{p}reward", errors, n, n) if "reward" in doc else None
    ft = _matrix(doc["features"], f"{p}features", errors, n) if "features" in doc else None
    if tr is not None and tr.shape[0] == tr.shape[1]:
        if np.any(tr < 0):
            errors.append(f"{p}transition: entries must be non-negative")
        bad = np.flatnonzero(np.abs(tr.sum(axis=1) - 1.0) > 1e-12)
        if bad.size:
            errors.append(f"{p}transition: rows {bad.tolist()} do not sum to 1")
    if errors:
        raise ConfigError(errors)
    try:
        return Problem.from_spec(MdpSpec(tr, rw, ft, g), name=name, check_a2=check_a2)
    except (TDBoundsError, ValueError) as exc:
        raise ConfigError([f"{prefix or 'document'}: {exc}"]) from None


def load_mdp(path, check_a2=True):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError([f"{path}: file not found"]) from None
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: invalid JSON ({exc})"]) from None
    return parse_mdp_document(doc, check_a2=check_a2, name=path.stem)


# --------------------------------------------------------------------------
# run configuration


def _num(lo=None, hi=None, lo_open=False, hi_open=False, integer=False, nullable=False):
    def check(v, path, errors):
        if v is None and nullable:
            return None
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            errors.append(f"{path}: must be a number")
            return None
        if integer and (not isinstance(v, int) and not float(v).is_integer()):
            errors.append(f"{path}: must be an integer")
            return None
        if not math.isfinite(v):
            errors.append(f"{path}: must be finite")
            return None
        bad_lo = lo is not None and (v <= lo if lo_open else v < lo)
        bad_hi = hi is not None and (v >= hi if hi_open else v > hi)
        if bad_lo or bad_hi:
            left = "(" if lo_open else "["
            right = ")" if hi_open else "]"
            errors.append(f"{path}: {v} outside {left}{lo}, {hi}{right}")
            return None
        return int(v) if integer else float(v)
    return check


def _list(item, nullable=True, min_len=1):
    def check(v, path, errors):
        if v is None and nullable:
            return None
        if not isinstance(v, list) or len(v) < min_len:
            errors.append(f"{path}: must be a list with at least {min_len} entries")
            return None
        out = [item(x, f"{path}[{i}]", errors) for i, x in enumerate(v)]
        return None if any(x is None for x in out) else out
    return check


def _choice(*options):
    def check(v, path, errors):
        if v not in options:
            errors.append(f"{path}: must be one of {list(options)}")
            return None
        return v
    return check


def _bool(v, path, errors):
    if not isinstance(v, bool):
        errors.append(f"{path}: must be true or false")
        return None
    return v


def _str(nullable=True):
    def check(v, path, errors):
        if v is None and nullable:
            return None
        if not isinstance(v, str) or not v:
            errors.append(f"{path}: must be a non-empty string")
            return None
        return v
    return check


def _any_number(v, path, errors):
    return _num()(v, path, errors)


SCHEMA = {
    "schedule": {
        "sigma": (_num(0.0, 1.0, lo_open=True), 0.5),
        "sigmas": (_list(_num(0.0, 1.0, lo_open=True, hi_open=True), nullable=False),
                   [0.25, 0.5, 0.75]),
    },
    "experiment": {
        "n_max": (_num(1, None, integer=True), 10000),
        "trials": (_num(2, None, integer=True), 200),
        "seed": (_num(0, 2 ** 64 - 1, integer=True), 0),
        "checkpoints": (_list(_num(1, None, integer=True)), None),
        "theta0": (_list(_any_number), None),
        "full": (_bool, False),
        "seeds": (_list(_num(0, 2 ** 64 - 1, integer=True), min_len=2), None),
        "fit_window": (_list(_num(1, None, integer=True), min_len=2), None),
    },
    "concentration": {
        "epsilon": (_num(0.0, None, lo_open=True), 0.5),
        "delta": (_num(0.0, 1.0, lo_open=True, hi_open=True), 0.05),
        "n0": (_num(1, None, integer=True), 1000),
        "n1": (_num(1, None, integer=True), 10000),
        "horizon": (_num(2, None, integer=True, nullable=True), None),
        "step_trials": (_num(1, None, integer=True), 100),
        "step_n_max": (_num(1, None, integer=True), 10000),
    },
    "constants": {
        "lambda_exp_fraction": (_num(0.0, 1.0, lo_open=True, hi_open=True), 0.9),
        "lambda_hp_fraction": (_num(0.0, 1.0, lo_open=True, hi_open=True), 0.9),
        "k_s_mode": (_choice("bound", "exact"), "bound"),
    },
    "output": {
        "json": (_str(), None),
        "csv": (_str(), None),
        "ode_csv": (_str(), None),
    },
}
TOP_LEVEL = {"problem", "validate_a2", "workers", *SCHEMA}


@dataclass
class RunConfig:
    """Validated settings for one CLI invocation (documented defaults filled)."""

    problem: Problem = None
    problem_source: str = None
    validate_a2: bool = True
    workers: int = None
    sigma: float = 0.5
    sigmas: list = field(default_factory=lambda: [0.25, 0.5, 0.75])
    n_max: int = 10000
    trials: int = 200
    seed: int = 0
    checkpoints: list = None
    theta0: list = None
    full: bool = False
    seeds: list = None
    fit_window: list = None
    epsilon: float = 0.5
    delta: float = 0.05
    n0: int = 1000
    n1: int = 10000
    horizon: int = None
    step_trials: int = 100
    step_n_max: int = 10000
    lambda_exp_fraction: float = 0.9
    lambda_hp_fraction: float = 0.9
    k_s_mode: str = "bound"
    json: str = None
    csv: str = None
    ode_csv: str = None


def _resolve_problem(spec, validate, base, errors):
    """``spec`` is a built-in name, a path, or ``{"builtin"|"file"|"mdp": ...}``."""
    if isinstance(spec, str):
        spec = {"builtin": spec} if spec in BUILTIN else {"file": spec}
    if not isinstance(spec, dict) or len(spec) != 1:
        errors.append("problem: must be a built-in name, a file path, or an object with "
                      "exactly one of 'builtin', 'file', 'mdp'")
        return None, None
    (kind, value), = spec.items()
    try:
        if kind == "builtin":
            if value not in BUILTIN:
                errors.append(f"problem.builtin: unknown problem {value!r}; choose from "
                              f"{sorted(BUILTIN)}")
                return None, None
            return builtin(value), f"builtin:{value}"
        if kind == "file":
            path = Path(value)
            if not path.is_absolute() and base is not None:
                path = base / path
            if not path.exists():
                errors.append(f"problem.file: {value} does not exist")
                return None, None
            return load_mdp(path, check_a2=validate), f"file:{value}"
        if kind == "mdp":
            return parse_mdp_document(value, validate, prefix="problem.mdp", name="inline"), "inline"
    except ConfigError as exc:
        errors.extend(exc.errors)
        return None, None
    errors.append(f"problem.{kind}: unknown problem source")
    return None, None


def parse_config(source, overrides=None):
    """Validate a config file path or dict; ``overrides`` (flat dict) win.

    Raises :class:`ConfigError` listing every problem found.
    """
    base = None
    if isinstance(source, (str, Path)):
        path = Path(source)
        try:
            doc = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError([f"{path}: file not found"]) from None
        except json.JSONDecodeError as exc:
            raise ConfigError([f"{path}: invalid JSON ({exc})"]) from None
        base = path.parent
    elif source is None:
        doc = {}
    else:
        doc = source
    errors = []
    if not isinstance(doc, dict):
        raise ConfigError(["config: top level must be an object"])
    for key in sorted(set(doc) - TOP_LEVEL):
        errors.append(f"{key}: unknown key")
    cfg = RunConfig()
    flat = {}
    for section, fields in SCHEMA.items():
        sec = doc.get(section, {})
        if not isinstance(sec, dict):
            errors.append(f"{section}: must be an object")
            continue
        for key in sorted(set(sec) - set(fields)):
            errors.append(f"{section}.{key}: unknown key")
        for key, (check, _default) in fields.items():
            if key in sec:
                flat[key] = (f"{section}.{key}", sec[key], check)
    if "validate_a2" in doc:
        flat["validate_a2"] = ("validate_a2", doc["validate_a2"], _bool)
    if "workers" in doc:
        flat["workers"] = ("workers", doc["workers"], _num(1, None, integer=True, nullable=True))

    checks = {k: (f"{s}.{k}", c) for s, fs in SCHEMA.items() for k, (c, _) in fs.items()}
    checks["validate_a2"] = ("validate_a2", _bool)
    checks["workers"] = ("workers", _num(1, None, integer=True, nullable=True))
    problem_spec = doc.get("problem")
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "problem":
            problem_spec = value
            continue
        if key not in checks:
            errors.append(f"{key}: unknown override")
            continue
        path, check = checks[key]
        flat[key] = (path, value, check)

    for key, (path, value, check) in flat.items():
        out = check(value, path, errors)
        if out is not None or value is None:
            setattr(cfg, key, out)

    if cfg.fit_window is not None and (len(cfg.fit_window) != 2
                                       or cfg.fit_window[0] >= cfg.fit_window[1]):
        errors.append("experiment.fit_window: must be [lo, hi] with lo < hi")
    if problem_spec is not None:
        cfg.problem, cfg.problem_source = _resolve_problem(problem_spec, cfg.validate_a2, base,
                                                           errors)
    if cfg.problem is not None and cfg.theta0 is not None and len(cfg.theta0) != cfg.problem.dim:
        errors.append(f"experiment.theta0: expected length {cfg.problem.dim}, "
                      f"got {len(cfg.theta0)}")
    if errors:
        raise ConfigError(errors)
    return cfg
