"""Project files: a single JSON document describing a network, its
certificates, and the settings for each pipeline stage.

Schema validation happens before any computation; unknown keys are rejected
with their JSON path so typos surface immediately.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import jsonschema

from .certify import (CbcCertificate, CertConstants, PowerLawFn, ZERO_GAIN)
from .errors import InputError
from .model import NetworkSpec, VariableSpace, network_from_json, network_to_json
from .polyalg import parse_polynomial

SCHEMA_VERSION = 1

_POWER_LAW = {
    "type": "object",
    "properties": {"coef": {"type": "number"}, "exp": {"type": "number"}},
    "required": ["coef"],
    "additionalProperties": False,
}

_MODE_CERT = {
    "type": "object",
    "properties": {
        "barrier": {"type": "string"},
        "kappa": {"type": "number"},
        "gamma": {"type": "number"},
        "lambda": {"type": "number"},
        "psi": {"type": "number"},
        "alpha": _POWER_LAW,
        "rho": _POWER_LAW,
    },
    "required": ["barrier", "kappa", "gamma", "lambda", "psi", "alpha"],
    "additionalProperties": False,
}

PROJECT_SCHEMA = {
    "type": "object",
    "properties": {
        "schema_version": {"type": "integer", "const": SCHEMA_VERSION},
        "network": {"type": "object"},
        "certificates": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "properties": {
                    "modes": {"type": "object",
                              "additionalProperties": _MODE_CERT},
                },
                "required": ["modes"],
                "additionalProperties": False,
            },
        },
        "dwell": {
            "type": "object",
            "properties": {
                "epsilon": {"type": "number"},
                "mu": {"type": "number"},
                "k_d": {"type": "integer"},
                "method": {"enum": ["auto", "lift", "common"]},
            },
            "additionalProperties": False,
        },
        "composition": {
            "type": "object",
            "properties": {
                "semantics": {"enum": ["auto", "product", "union"]},
                "scalings": {
                    "anyOf": [{"type": "null"},
                              {"type": "array", "items": {"type": "number"}}]},
            },
            "additionalProperties": False,
        },
        "bound": {
            "type": "object",
            "properties": {"horizon": {"type": "integer", "minimum": 0}},
            "required": ["horizon"],
            "additionalProperties": False,
        },
        "synthesis": {
            "type": "object",
            "properties": {
                "subsystem": {"type": "string"},
                "mode": {"type": "integer"},
                "degree": {"type": "integer", "minimum": 0},
                "budget": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer"},
                "kappa_grid": {"type": "array", "items": {"type": "number"}},
                "lambda_grid": {
                    "anyOf": [{"type": "null"},
                              {"type": "array", "items": {"type": "number"}}]},
            },
            "additionalProperties": False,
        },
        "simulation": {
            "type": "object",
            "properties": {
                "trajectories": {"type": "integer", "minimum": 0},
                "horizon": {"type": "integer", "minimum": 0},
                "seed": {"type": "integer"},
                "retain": {"type": "integer", "minimum": 0},
                "initial_mode": {
                    "anyOf": [{"type": "integer"},
                              {"type": "array", "items": {"type": "integer"}}]},
                "allow_unverified": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "check": {
            "type": "object",
            "properties": {
                "resolution": {"anyOf": [{"type": "null"},
                                         {"type": "number",
                                          "exclusiveMinimum": 0}]},
                "points_per_dim": {"type": "integer", "minimum": 2},
            },
            "additionalProperties": False,
        },
    },
    "required": ["schema_version", "network"],
    "additionalProperties": False,
}


@dataclass
class Project:
    network: NetworkSpec
    certificates: dict[str, dict[int, CbcCertificate]]
    dwell: dict[str, Any] = field(default_factory=dict)
    composition: dict[str, Any] = field(default_factory=dict)
    bound: dict[str, Any] = field(default_factory=dict)
    synthesis: dict[str, Any] = field(default_factory=dict)
    simulation: dict[str, Any] = field(default_factory=dict)
    check: dict[str, Any] = field(default_factory=dict)


def cbc_to_json(cert: CbcCertificate) -> dict:
    c = cert.constants
    out = {"barrier": cert.barrier.to_string(), "kappa": c.kappa,
           "gamma": c.gamma, "lambda": c.lam, "psi": c.psi,
           "alpha": c.alpha.to_json()}
    if not c.rho.is_zero():
        out["rho"] = c.rho.to_json()
    return out


def cbc_from_json(obj: dict, mode: int, state_names: list[str]) -> CbcCertificate:
    space = VariableSpace.make(states=state_names)
    barrier = parse_polynomial(obj["barrier"], space)
    rho = obj.get("rho")
    constants = CertConstants(
        kappa=float(obj["kappa"]), gamma=float(obj["gamma"]),
        lam=float(obj["lambda"]), psi=float(obj["psi"]),
        alpha=PowerLawFn.from_json(obj["alpha"]),
        rho=ZERO_GAIN if rho is None else PowerLawFn.from_json(rho))
    return CbcCertificate(mode=mode, barrier=barrier, constants=constants)


def project_to_json(p: Project) -> dict:
    out: dict[str, Any] = {"schema_version": SCHEMA_VERSION,
                           "network": network_to_json(p.network)}
    if p.certificates:
        certs: dict[str, Any] = {}
        for sid, modes in p.certificates.items():
            certs[sid] = {"modes": {str(m): cbc_to_json(c)
                                    for m, c in sorted(modes.items())}}
        out["certificates"] = certs
    for name in ("dwell", "composition", "bound", "synthesis", "simulation",
                 "check"):
        val = getattr(p, name)
        if val:
            out[name] = val
    return out


def project_from_json(obj: dict) -> Project:
    try:
        jsonschema.validate(obj, PROJECT_SCHEMA)
    except jsonschema.ValidationError as e:
        raise InputError(f"project file invalid at {e.json_path}: {e.message}")
    net = network_from_json(obj["network"])
    ids = set(net.ids)
    certificates: dict[str, dict[int, CbcCertificate]] = {}
    for sid, block in obj.get("certificates", {}).items():
        if sid not in ids:
            raise InputError(f"certificates reference unknown subsystem {sid!r}")
        sub = net.subsystem(sid)
        state_names = list(sub.state_names)
        modes: dict[int, CbcCertificate] = {}
        for mode_str, cert_obj in block["modes"].items():
            try:
                mode = int(mode_str)
            except ValueError:
                raise InputError(f"certificate mode key {mode_str!r} for "
                                 f"{sid!r} is not an integer")
            if mode not in sub.dynamics:
                raise InputError(f"certificate for {sid!r} names mode {mode} "
                                 "missing from the subsystem")
            modes[mode] = cbc_from_json(cert_obj, mode, state_names)
        certificates[sid] = modes
    return Project(network=net, certificates=certificates,
                   dwell=dict(obj.get("dwell", {})),
                   composition=dict(obj.get("composition", {})),
                   bound=dict(obj.get("bound", {})),
                   synthesis=dict(obj.get("synthesis", {})),
                   simulation=dict(obj.get("simulation", {})),
                   check=dict(obj.get("check", {})))


def load_project(path) -> Project:
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except FileNotFoundError:
        raise InputError(f"project file not found: {path}")
    except json.JSONDecodeError as e:
        raise InputError(f"project file is not valid JSON: {e}")
    return project_from_json(obj)


def save_project(p: Project, path) -> None:
    with open(path, "w") as fh:
        json.dump(project_to_json(p), fh, indent=2, sort_keys=True)
        fh.write("\n")
