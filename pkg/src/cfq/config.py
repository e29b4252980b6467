"""Experiment configuration: JSON files validated against per-experiment schemas.

Errors carry the file name and line of the offending key, e.g.
``run.json:4: unknown key 'cutof'``.
"""

from __future__ import annotations

import copy
import hashlib
import json
import re
from pathlib import Path

import jsonschema

EXPERIMENTS = (
    "quantize",
    "resolution",
    "propagate",
    "nu-sweep",
    "project",
    "gauge-check",
    "classical-flow",
    "stochastic-check",
)


class ConfigError(ValueError):
    pass


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_posint = {"type": "integer", "minimum": 1}
_vec = {"type": "array", "items": _num, "minItems": 1}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


DEFS = {
    "space": _obj({"cutoff": {"type": "integer", "minimum": 2}, "dof": _posint}, ["cutoff"]),
    "point": _obj({"p": _vec, "q": _vec}, ["p", "q"]),
    "symbol": {
        "oneOf": [
            _obj(
                {
                    "preset": {"enum": ["oscillator", "anharmonic", "free"]},
                    "dof": _posint,
                    "quartic": _num,
                },
                ["preset"],
            ),
            _obj(
                {
                    "dof": _posint,
                    "terms": {
                        "type": "array",
                        "items": {
                            "type": "array",
                            "prefixItems": [_num, {"type": "array", "items": {"type": "integer", "minimum": 0}}],
                            "minItems": 2,
                            "maxItems": 2,
                        },
                    },
                },
                ["dof", "terms"],
            ),
        ]
    },
    "constraint": {
        "oneOf": [
            _obj({"preset": {"enum": ["rotation"]}}, ["preset"]),
            _obj(
                {
                    "coupling": {"type": "array", "items": {"type": "array", "items": _vec}},
                    "shift": {"type": "array", "items": _vec},
                },
                ["coupling"],
            ),
        ]
    },
    "policy": _obj({"c": _pos, "spacing_ratio": _pos, "margin": _pos}),
}

_ref = {k: {"$ref": f"#/$defs/{k}"} for k in DEFS}
_common = {
    "experiment": {"enum": list(EXPERIMENTS)},
    "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
    "workers": _posint,
    "tolerance": _pos,
    "label": {"type": "string"},
}

SCHEMAS = {
    "quantize": (
        {
            "space": _ref["space"],
            "hamiltonian": _ref["symbol"],
            "backend": {"enum": ["combinatorial", "quadrature", "both"]},
            "radial_order": _posint,
            "angular_points": _posint,
        },
        ["space", "hamiltonian"],
    ),
    "resolution": (
        {
            "space": _ref["space"],
            "radial_orders": {"type": "array", "items": _posint, "minItems": 1},
            "angular_points": _posint,
        },
        ["space", "radial_orders"],
    ),
    "propagate": (
        {
            "hamiltonian": _ref["symbol"],
            "initial": _ref["point"],
            "final": _ref["point"],
            "T": _pos,
            "nu": _pos,
            "method": {"enum": ["lattice", "mc", "both"]},
            "policy": _ref["policy"],
            "n_paths": _posint,
            "steps": _posint,
            "cutoff": {"type": "integer", "minimum": 2},
            "prefactor": {"enum": ["lattice", "continuum"]},
        },
        ["hamiltonian", "initial", "final", "T", "nu"],
    ),
    "nu-sweep": (
        {
            "hamiltonian": _ref["symbol"],
            "initial": _ref["point"],
            "final": _ref["point"],
            "T": _pos,
            "nu": {"type": "array", "items": _pos, "minItems": 1},
            "policy": _ref["policy"],
            "cutoff": {"type": "integer", "minimum": 2},
            "prefactor": {"enum": ["lattice", "continuum"]},
        },
        ["hamiltonian", "initial", "final", "T", "nu"],
    ),
    "project": (
        {
            "space": _ref["space"],
            "constraint": _ref["constraint"],
            "hamiltonian": _ref["symbol"],
            "nodes": _posint,
            "T": {"type": "number", "minimum": 0},
            "initial": _ref["point"],
            "final": _ref["point"],
            "averaging": _obj(
                {
                    "modes": {"type": "array", "items": {"enum": ["quadrature", "labels", "multiplier"]}, "minItems": 1},
                    "n_samples": _posint,
                    "diffusion": {"type": "number", "minimum": 0},
                    "steps": _posint,
                }
            ),
        },
        ["space", "constraint", "nodes"],
    ),
    "gauge-check": (
        {
            "space": _ref["space"],
            "constraint": _ref["constraint"],
            "hamiltonian": _ref["symbol"],
            "nodes": _posint,
            "T": {"type": "number", "minimum": 0},
            "initial": _ref["point"],
            "final": _ref["point"],
            "shifts": _posint,
            "transport": _obj(
                {
                    "cutoff": {"type": "integer", "minimum": 2},
                    "omega": {"type": "array", "items": _num, "minItems": 1},
                    "labels": {"type": "array", "items": _ref["point"], "minItems": 1},
                },
                ["omega", "labels"],
            ),
        },
        ["space", "constraint", "nodes", "initial", "final"],
    ),
    "classical-flow": (
        {
            "hamiltonian": _ref["symbol"],
            "constraint": _ref["constraint"],
            "initial": _ref["point"],
            "T": _pos,
            "dt": _pos,
            "schedules": _posint,
            "multiplier_scale": _pos,
        },
        ["hamiltonian", "constraint", "initial", "T", "dt"],
    ),
    "stochastic-check": (
        {
            "nu": _pos,
            "T": _pos,
            "initial": _ref["point"],
            "final": _ref["point"],
            "steps": {"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 1},
            "n_paths": _posint,
            "n_bridges": _posint,
            "sigmas": _pos,
        },
        ["nu", "T", "initial", "final", "steps"],
    ),
}


def schema_for(experiment: str) -> dict:
    if experiment not in SCHEMAS:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from {', '.join(EXPERIMENTS)}")
    props, required = SCHEMAS[experiment]
    return {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "$defs": DEFS,
        **_obj({**_common, **props}, required),
    }


def _line_of(text: str, path) -> int:
    """Best-effort line of the JSON node at ``path`` (keys and list indices)."""
    pos = 0
    for key in path:
        if isinstance(key, str):
            m = re.compile(r'"' + re.escape(key) + r'"\s*:').search(text, pos)
            if not m:
                break
            pos = m.start()
        else:
            # step into the list: skip to its opening bracket, then over `key` items
            depth, count, i = 0, 0, text.find("[", pos)
            if i < 0:
                break
            start = i + 1
            for j in range(start, len(text)):
                ch = text[j]
                if ch in "[{":
                    depth += 1
                elif ch in "]}":
                    if depth == 0:
                        break
                    depth -= 1
                elif ch == "," and depth == 0:
                    count += 1
                    if count == key:
                        start = j + 1
                        break
            pos = start
    return text.count("\n", 0, pos) + 1


def _describe(err: jsonschema.ValidationError) -> str:
    if err.validator == "additionalProperties":
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        return "unknown key" + ("s " if len(extra) > 1 else " ") + ", ".join(repr(k) for k in extra)
    if err.validator == "required":
        return f"missing required field {err.message.split(' is a required')[0]}"
    if err.validator == "oneOf":
        return f"{'/'.join(map(str, err.absolute_path)) or 'value'} does not match any accepted form"
    where = "/".join(map(str, err.absolute_path))
    return f"{where}: {err.message}" if where else err.message


def validate(cfg: dict, experiment: str, text: str = "", name: str = "<config>") -> None:
    validator = jsonschema.Draft202012Validator(schema_for(experiment))
    errors = sorted(validator.iter_errors(cfg), key=lambda e: (list(map(str, e.absolute_path)), e.validator))
    if not errors:
        return
    err = errors[0]
    path = list(err.absolute_path)
    if err.validator == "additionalProperties":
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        path = path + extra[:1]
    line = _line_of(text, path) if text else 1
    raise ConfigError(f"{name}:{line}: {_describe(err)}")


def load(path, experiment: str) -> dict:
    """Read, parse and validate a config file. Empty files count as ``{}``."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    if not text.strip():
        cfg = {}
    else:
        try:
            cfg = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path.name}:{exc.lineno}: invalid JSON ({exc.msg}, column {exc.colno})") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path.name}:1: top level must be an object")
    if "experiment" in cfg and cfg["experiment"] != experiment:
        raise ConfigError(f"{path.name}:{_line_of(text, ['experiment'])}: config is for {cfg['experiment']!r}, not {experiment!r}")
    validate(cfg, experiment, text, path.name)
    return cfg


def config_hash(cfg: dict) -> str:
    """SHA-256 of the canonical JSON form; ``workers`` does not affect results and is left out."""
    c = copy.deepcopy(cfg)
    c.pop("workers", None)
    blob = json.dumps(c, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
