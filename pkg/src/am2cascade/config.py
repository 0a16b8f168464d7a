"""Run configuration: a versioned JSON document validated against a schema."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from .growth import Haldane, Monod
from .model import ModelParams, ParameterError

SCHEMA_VERSION = 1

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}

_axis = {
    "type": "object",
    "additionalProperties": False,
    "required": ["name", "lo", "hi", "n"],
    "properties": {
        "name": {"enum": ["D", "S1in", "S2in", "r"]},
        "lo": _num,
        "hi": _num,
        "n": {"type": "integer", "minimum": 2},
        "anchor": {"enum": ["center", "upper"]},
    },
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "model"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["mu1", "mu2", "k1", "k2", "k3", "alpha", "D", "r", "s1_in", "s2_in"],
            "properties": {
                "mu1": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind", "m", "K"],
                    "properties": {"kind": {"const": "monod"}, "m": _pos, "K": _pos},
                },
                "mu2": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind", "m", "K", "KI"],
                    "properties": {"kind": {"const": "haldane"}, "m": _pos, "K": _pos, "KI": _pos},
                },
                **{k: _num for k in ("k1", "k2", "k3", "alpha", "D", "r", "s1_in", "s2_in")},
            },
        },
        "simulate": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "x0": {
                    "oneOf": [
                        {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 8, "maxItems": 8},
                        {"enum": ["washout", "random"]},
                    ]
                },
                "t_end": _pos,
                "rtol": _pos,
                "atol": _pos,
                "n_samples": {"type": "integer", "minimum": 2},
                "attribution_tol": _pos,
            },
        },
        "diagram": {
            "type": "object",
            "additionalProperties": False,
            "required": ["axis1", "axis2"],
            "properties": {
                "axis1": _axis,
                "axis2": _axis,
                "overlay": {"type": "boolean"},
                "traced": {"type": "boolean"},
            },
        },
        "verify": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "draws": {"type": "integer", "minimum": 0},
                "states": {"type": "integer", "minimum": 0},
                "trajectories": {"type": "integer", "minimum": 0},
                "properties": {
                    "type": "array",
                    "items": {"type": "string"},
                    "uniqueItems": True,
                },
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": "string"},
                "formats": {
                    "type": "array",
                    "items": {"enum": ["csv", "json", "svg"]},
                    "uniqueItems": True,
                },
            },
        },
    },
}


class ConfigError(ValueError):
    """Unreadable, schema-invalid or out-of-domain configuration."""


@dataclass
class RunConfig:
    params: ModelParams
    seed: int = 0
    simulate: dict = field(default_factory=dict)
    diagram: dict = field(default_factory=dict)
    verify: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    @property
    def formats(self) -> tuple[str, ...]:
        return tuple(self.output.get("formats", ("csv", "json", "svg")))


def params_from_dict(model: dict) -> ModelParams:
    m1, m2 = model["mu1"], model["mu2"]
    try:
        return ModelParams(
            mu1=Monod(m=m1["m"], K=m1["K"]),
            mu2=Haldane(m=m2["m"], K=m2["K"], KI=m2["KI"]),
            **{k: model[k] for k in ("k1", "k2", "k3", "alpha", "D", "r", "s1_in", "s2_in")},
        )
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from exc


def params_to_dict(p: ModelParams) -> dict:
    return {
        "mu1": {"kind": "monod", **p.mu1.params},
        "mu2": {"kind": "haldane", **p.mu2.params},
        **{k: getattr(p, k) for k in ("k1", "k2", "k3", "alpha", "D", "r", "s1_in", "s2_in")},
    }


def validate(doc) -> None:
    v = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(v.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        where = "/".join(str(s) for s in e.absolute_path) or "(root)"
        raise ConfigError(f"{where}: {e.message}")


def from_dict(doc: dict) -> RunConfig:
    validate(doc)
    params = params_from_dict(doc["model"])
    return RunConfig(
        params=params,
        seed=doc.get("seed", 0),
        simulate=dict(doc.get("simulate", {})),
        diagram=dict(doc.get("diagram", {})),
        verify=dict(doc.get("verify", {})),
        output=dict(doc.get("output", {})),
        raw=doc,
    )


def load(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return from_dict(doc)


def default_document() -> dict:
    """A complete example configuration at the reference parameters."""
    from .model import reference_params

    return {
        "schema_version": SCHEMA_VERSION,
        "seed": 42,
        "model": params_to_dict(reference_params()),
        "simulate": {"x0": "random", "rtol": 1e-8, "atol": 1e-10, "n_samples": 1001},
        "diagram": {
            "axis1": {"name": "S1in", "lo": 0.0, "hi": 10.0, "n": 64},
            "axis2": {"name": "S2in", "lo": 0.0, "hi": 10.0, "n": 64},
            "overlay": True,
            "traced": True,
        },
        "verify": {"draws": 100, "states": 100, "trajectories": 5},
        "output": {"dir": "out", "formats": ["csv", "json", "svg"]},
    }


__all__ = ["ConfigError", "ParameterError", "RunConfig", "SCHEMA", "SCHEMA_VERSION", "load", "from_dict"]
