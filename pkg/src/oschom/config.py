"""Experiment configuration: TOML files checked against a fixed schema."""
from __future__ import annotations

import copy
import hashlib
import json
import math
import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from .lattice import Zero, descriptor_from_dict
from .potential import BumpSpec, PeriodicPart, PotentialAssembly, make_compatible

KINDS = ("assumption_audit", "corrector_ladder", "m_crossval", "homogenize", "spectrum", "oracle_1d")

ANY = object()

# section -> key -> (type, default); ``dict`` sections are free-form tables
SCHEMA = {
    "experiment": {"kind": (str, None), "name": (str, "")},
    "assembly": {
        "dim": (int, 1),
        "compat": (str, "shift"),
        "bump": {"support_radius": (float, 0.45), "amplitude": (float, 1.0), "kind": (str, "mollifier")},
        "periodic": {"s": (float, 1.0), "modes": (list, None), "mean": (float, None)},
        "sequence": (dict, {"kind": "zero"}),
    },
    "ladder": {"inverse_eps": (list, [64, 128, 256, 512]), "beta_exponent": (float, 1.5)},
    "domain": {"per_eps": (int, 32), "memory_mb": (float, 4000.0)},
    "solver": {"nu": (float, 0.0), "L": (int, 3), "fredholm": (bool, False), "method": (str, "direct"),
               "margin": (float, 1e-3)},
    "corrector": {"checks": (list, ["residual", "weak", "pairing"]), "residual_inverse_eps": (int, 16),
                  "residual_levels": (list, [32, 64, 128]), "residual_box": (list, [0.0, 1.0]),
                  "method": (str, "closed")},
    "audit": {"window_radius": (float, 512.0), "L_max": (float, 8.0), "average_radius": (int, 1024),
              "rate_inverse_eps": (list, [64, 128, 256]), "decay": (bool, True)},
    "gates": {"virial": (float, 1e-6), "oracle_rel": (float, 5e-3), "residual_lo": (float, 3.5),
              "residual_hi": (float, 4.5), "weak_frac": (float, 0.05), "m_rel": (float, 0.02),
              "m_exact": (float, 1e-4), "rate_min": (float, 0.8), "h1_ratio": (float, 0.75),
              "l2_frac": (float, 0.02), "pairing_frac": (float, 0.05), "corr_factor": (float, 5.0),
              "decay_tol": (float, 0.15)},
    "output": {"fields": (bool, False)},
}


class ConfigError(ValueError):
    """Invalid configuration (unknown key, wrong type, unsatisfiable constraint)."""


def _coerce(value, typ, where):
    if typ is ANY or value is None:
        return value
    if typ is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if typ is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if typ is bool and isinstance(value, bool):
        return value
    if typ is str and isinstance(value, str):
        return value
    if typ is list and isinstance(value, list):
        return value
    if typ is dict and isinstance(value, dict):
        return value
    raise ConfigError(f"{where}: expected {typ.__name__}, got {type(value).__name__} ({value!r})")


def _resolve(schema, data, path):
    out = {}
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a table")
    for key in data:
        if key not in schema:
            raise ConfigError(f"unknown key '{'.'.join(path + [key])}'")
    for key, spec in schema.items():
        where = ".".join(path + [key])
        if isinstance(spec, dict):
            out[key] = _resolve(spec, data.get(key), path + [key])
        else:
            typ, default = spec
            out[key] = _coerce(data[key], typ, where) if key in data else copy.deepcopy(default)
    return out


def _schema_type(key):
    node = SCHEMA
    for part in key.split("."):
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"unknown key '{key}'")
        node = node[part]
    return node


def parse_override(text):
    """``section.key=value`` with the value parsed as a TOML literal (bare words as strings)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    spec = _schema_type(key)
    if isinstance(spec, dict):
        raise ConfigError(f"override target '{key}' is a table")
    return key, _coerce(value, spec[0], key)


def _set(data, key, value):
    parts = key.split(".")
    node = data
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value


def load_config(path=None, overrides=(), kind=None, text=None) -> dict:
    """Read, override and validate a config; returns the resolved dictionary."""
    if text is None and path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        text = p.read_text()
    try:
        raw = tomllib.loads(text or "")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    for ov in overrides:
        k, v = parse_override(ov)
        _set(raw, k, v)
    cfg = _resolve(SCHEMA, raw, [])
    if kind is not None:
        cfg["experiment"]["kind"] = kind
    validate(cfg)
    return cfg


def validate(cfg):
    kind = cfg["experiment"]["kind"]
    if kind not in KINDS:
        raise ConfigError(f"experiment.kind must be one of {KINDS}, got {kind!r}")
    inv = cfg["ladder"]["inverse_eps"]
    if not all(isinstance(v, int) and v > 0 for v in inv):
        raise ConfigError("ladder.inverse_eps must be positive integers")
    if any(b <= a for a, b in zip(inv, inv[1:])):
        raise ConfigError("eps ladder must be strictly decreasing")
    if kind in ("corrector_ladder", "m_crossval", "homogenize", "spectrum") and len(inv) < 3:
        raise ConfigError(f"{kind} needs a ladder of at least 3 eps values")
    dim = cfg["assembly"]["dim"]
    if dim not in (1, 2):
        raise ConfigError("experiments are limited to dim 1 and 2")
    if kind in ("oracle_1d", "m_crossval") and dim != 1:
        raise ConfigError(f"{kind} requires dim 1")
    if cfg["domain"]["per_eps"] < 16:
        raise ConfigError("domain.per_eps must be at least 16 (h <= eps/16)")
    nodes = (cfg["domain"]["per_eps"] * max(inv)) ** dim
    if kind != "assumption_audit" and nodes * 8 * 48 / 2**20 > cfg["domain"]["memory_mb"]:
        raise ConfigError(f"finest grid with {nodes} nodes exceeds the memory cap "
                          f"{cfg['domain']['memory_mb']:g} MB")
    if cfg["assembly"]["compat"] not in ("strict", "scale", "shift"):
        raise ConfigError("assembly.compat must be strict, scale or shift")
    build_assembly(cfg)


def build_assembly(cfg) -> PotentialAssembly:
    a = cfg["assembly"]
    dim = a["dim"]
    try:
        bump = BumpSpec(dim=dim, **a["bump"])
        per_cfg = a["periodic"]
        if per_cfg["modes"] is not None:
            per = PeriodicPart.from_dict(dim, {"modes": per_cfg["modes"], "mean": per_cfg["mean"] or 0.0})
        else:
            per = PeriodicPart.product_cos(dim, per_cfg["s"], per_cfg["mean"] or 0.0)
        seq = descriptor_from_dict(a["sequence"]) if a["sequence"] else Zero()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"assembly: {exc}") from exc
    mode = a["compat"]
    if mode != "strict" and not (mode == "shift" and per_cfg["mean"] is not None):
        bump, per = make_compatible(bump, per, mode)
    try:
        return PotentialAssembly(bump, per, seq)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def eps_ladder(cfg):
    return [1.0 / v for v in cfg["ladder"]["inverse_eps"]]


def config_hash(cfg) -> str:
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def is_periodic_case(cfg) -> bool:
    return cfg["assembly"]["sequence"].get("kind", "zero") == "zero"


def trig_only(cfg) -> bool:
    return math.isclose(cfg["assembly"]["bump"]["amplitude"], 0.0)
