"""Run configuration: a single JSON document with dotted-path overrides."""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

__all__ = ["ConfigError", "DEFAULTS", "METHODS", "load_config", "apply_override", "config_digest"]

METHODS = ("lsqr", "tikhonov", "tvl1", "a2tv")

DEFAULTS: dict = {
    "grid": {"nx": 256, "ny": 256, "pixel_mm": 0.1},
    "geometry": {
        "radius_mm": 40.0,
        "arc_deg": 270.0,
        "n_detectors": 256,
        "sound_speed_mm_per_us": 1.5,
        "grueneisen": 1.0,
        "arc_step_frac": 0.25,
    },
    "phantom": {
        "kind": "vessels",
        "seed": 0,
        "n_vessels": 6,
        "width_range": [1.0, 3.0],
        "curvature": 0.15,
        "radius_frac": 0.25,
        "height": 1.0,
        "step_position": 0.5,
    },
    "degrade": {"rel_std": 0.6, "seed": 0, "n_keep": None},
    "method": {
        "name": "a2tv",
        "lsqr": {"iters": 50, "atol": 0.0},
        "tikhonov": {"lam": 1.0, "iters": 50, "atol": 0.0},
        "tvl1": {"alpha": 11.0, "mu": 0.5, "iters": 3000, "haar_levels": 3, "extrapolation": False, "trace_stride": 10},
        "a2tv": {
            "lam": 0.01,
            "k": 0.3,
            "sigma_px": 1.5,
            "rho_px": 3.0,
            "iters": 3000,
            "tensor_update_stride": 1,
            "extrapolation": False,
            "trace_stride": 10,
        },
    },
    "scan": {"method": "a2tv", "params": {"lam": [1e-4, 0.01, 0.5], "k": [0.01, 0.3, 1.0]}},
    "evaluate": {"axis": "col", "index": None, "normalize": False, "window": None},
}


class ConfigError(ValueError):
    """Invalid configuration document or override (usage error)."""


def _merge(base: dict, update: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in update.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key '{where}'")
        if isinstance(base[key], dict) and key != "params":
            if not isinstance(val, dict):
                raise ConfigError(f"config key '{where}' must be an object")
            out[key] = _merge(base[key], val, where)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg: dict, assignment: str) -> dict:
    """Apply ``a.b.c=value``; the value is parsed as JSON when possible."""
    if "=" not in assignment:
        raise ConfigError(f"override '{assignment}' is not of the form key=value")
    key, raw = assignment.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"override '{assignment}' has an empty key")
    update: dict = {}
    node = update
    for p in parts[:-1]:
        node[p] = {}
        node = node[p]
    node[parts[-1]] = _parse_value(raw)
    if parts[0] == "scan" and len(parts) >= 3 and parts[1] == "params":
        # scan axes are free-form parameter names
        out = copy.deepcopy(cfg)
        out["scan"]["params"][parts[2]] = node[parts[-1]] if len(parts) == 3 else update
        return out
    return _merge(cfg, update)


def load_config(path=None, overrides=()) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a JSON object")
        if "scan" in doc and "params" in doc["scan"]:
            # replace rather than merge the scan axes
            doc = copy.deepcopy(doc)
            params = doc["scan"].pop("params")
            cfg = _merge(cfg, doc)
            cfg["scan"]["params"] = params
        else:
            cfg = _merge(cfg, doc)
    for item in overrides:
        cfg = apply_override(cfg, item)
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    name = cfg["method"]["name"]
    if name not in METHODS:
        raise ConfigError(f"unknown method '{name}'")
    scan = cfg["scan"]
    if scan["method"] not in METHODS:
        raise ConfigError(f"unknown method '{scan['method']}'")
    params = scan["params"]
    if not isinstance(params, dict) or not 1 <= len(params) <= 2:
        raise ConfigError("scan.params must map one or two parameter names to value lists")
    for key, vals in params.items():
        if not isinstance(vals, list) or not vals:
            raise ConfigError(f"scan.params.{key} must be a non-empty list")
    n_keep = cfg["degrade"]["n_keep"]
    if n_keep is not None and (not isinstance(n_keep, int) or n_keep < 1):
        raise ConfigError("degrade.n_keep must be a positive integer or null")
    if cfg["evaluate"]["axis"] not in ("row", "col"):
        raise ConfigError("evaluate.axis must be 'row' or 'col'")


def config_digest(cfg: dict) -> str:
    """SHA-256 of the canonical JSON encoding."""
    text = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
