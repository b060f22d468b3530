"""Experiment configuration: one strict, versioned JSON document."""

from __future__ import annotations

import hashlib
import json

import jsonschema

from .ensembles import marchenko_pastur_measure, row_orthogonal_measure
from .errors import ConfigError
from .models import build_model_pair

SCHEMA_VERSION = 1

_MODEL_SECTION = {
    "type": "object",
    "required": ["name"],
    "properties": {"name": {"type": "string"}},
    # per-name numeric parameters are validated by the model registry
    "additionalProperties": {"type": "number"},
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "model", "ensemble", "run", "output"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["prior", "channel", "postulated_prior", "postulated_channel"],
            "properties": {
                "prior": _MODEL_SECTION,
                "channel": _MODEL_SECTION,
                "postulated_prior": _MODEL_SECTION,
                "postulated_channel": _MODEL_SECTION,
                "beta_mode": {"enum": ["mmse", "map"]},
            },
        },
        "ensemble": {
            "type": "object",
            "additionalProperties": False,
            "required": ["matrix", "N", "deltas", "trials", "master_seed"],
            "properties": {
                "matrix": {"enum": ["row_orthogonal", "iid_gaussian"]},
                "N": {"type": "array", "items": {"type": "integer", "minimum": 2},
                      "minItems": 1},
                "deltas": {"type": "array",
                           "items": {"type": "number", "exclusiveMinimum": 0},
                           "minItems": 1},
                "trials": {"type": "integer", "minimum": 1},
                "master_seed": {"type": "integer", "minimum": 0},
                "scale": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "run": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "T_iter": {"type": "integer", "minimum": 1},
                "conv_tol": {"type": "number", "minimum": 0},
                "damping": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "init": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "h1x_std": {"type": "number", "minimum": 0},
                        "h1z_std": {"type": "number", "minimum": 0},
                        "Qh1x": {"type": "number", "exclusiveMinimum": 0},
                        "Qh1z": {"type": "number", "exclusiveMinimum": 0},
                    },
                },
                "se_fixed_point": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "damping": {"type": "number", "exclusiveMinimum": 0,
                                    "maximum": 1},
                        "tol": {"type": "number", "exclusiveMinimum": 0},
                        "max_iter": {"type": "integer", "minimum": 1},
                    },
                },
                "quadrature_nodes": {"type": "integer", "minimum": 21},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "required": ["dir"],
            "properties": {"dir": {"type": "string"}},
        },
    },
}

RUN_DEFAULTS = {"T_iter": 10000, "conv_tol": 1e-15, "damping": 1.0,
                "quadrature_nodes": 121}
INIT_DEFAULTS = {"h1x_std": 1.0, "h1z_std": 1.0, "Qh1x": 1.0, "Qh1z": 1.0}
SE_FP_DEFAULTS = {"damping": 0.5, "tol": 1e-11, "max_iter": 20000}


def validate_config(doc: dict) -> dict:
    """Schema-validate, fill run defaults, and resolve the model pair once.

    Returns a normalized copy; raises ConfigError on any violation so no
    compute starts on a malformed document.
    """
    try:
        jsonschema.validate(doc, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path)
        raise ConfigError(f"config invalid at '{path}': {exc.message}") from exc
    cfg = json.loads(json.dumps(doc))  # deep copy, JSON-clean
    run = {**RUN_DEFAULTS, **cfg.get("run", {})}
    run["init"] = {**INIT_DEFAULTS, **run.get("init", {})}
    run["se_fixed_point"] = {**SE_FP_DEFAULTS, **run.get("se_fixed_point", {})}
    cfg["run"] = run
    if cfg["ensemble"]["matrix"] == "row_orthogonal":
        bad = [d for d in cfg["ensemble"]["deltas"] if d > 1]
        if bad:
            raise ConfigError(f"row_orthogonal requires deltas <= 1, got {bad}")
    build_model_pair(cfg["model"])  # raises ConfigError on unknown names/params
    return cfg


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return validate_config(doc)


def config_hash(cfg: dict) -> str:
    """sha256 of the canonical JSON encoding (sorted keys, compact)."""
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def limiting_measure(cfg: dict, delta: float):
    """The limiting eigenvalue law implied by the configured matrix ensemble."""
    if cfg["ensemble"]["matrix"] == "row_orthogonal":
        return row_orthogonal_measure(delta, cfg["ensemble"].get("scale", 1.0))
    return marchenko_pastur_measure(delta)
