"""Run configuration: JSON schema, parsing and construction of model objects."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import jsonschema
import numpy as np

from .errors import MomentFieldError, ValidationError
from .noise import NoiseCovariance, diagonal_profile, validate_covariance
from .polynomial import TimePolynomial
from .random_pde import RandomDataModel, kron_covariance
from .simulator import InitialLaw
from .spectral import SpectralOperator, TimeGrid, make_dirichlet_laplacian


class ConfigError(MomentFieldError, ValueError):
    """Config document does not match the schema; ``pointer`` locates the problem."""

    def __init__(self, pointer: str, message: str):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer


_number = {"type": "number"}
_vector = {"type": "array", "items": _number}
_matrix = {"type": "array", "items": _vector}
_test_function = {
    "type": "object",
    "required": ["coef", "mode"],
    "properties": {"coef": _vector, "mode": {"type": "integer", "minimum": 0}},
    "additionalProperties": False,
}

SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["operator", "noise", "grid"],
    "properties": {
        "operator": {
            "oneOf": [
                {"type": "object", "required": ["kind", "K"],
                 "properties": {"kind": {"const": "dirichlet_laplacian"},
                                "K": {"type": "integer", "minimum": 1}},
                 "additionalProperties": False},
                {"type": "object", "required": ["kind", "values"],
                 "properties": {"kind": {"const": "eigenvalues"}, "values": _vector},
                 "additionalProperties": False},
            ]
        },
        "noise": {
            "oneOf": [
                {"type": "object", "required": ["kind", "matrix"],
                 "properties": {"kind": {"const": "dense"}, "matrix": _matrix},
                 "additionalProperties": False},
                {"type": "object", "required": ["kind", "c", "p"],
                 "properties": {"kind": {"const": "profile"}, "c": _number, "p": _number},
                 "additionalProperties": False},
                {"type": "object", "required": ["kind"],
                 "properties": {"kind": {"const": "zero"}}, "additionalProperties": False},
            ]
        },
        "initial": {
            "oneOf": [
                {"type": "object", "required": ["kind"],
                 "properties": {"kind": {"const": "zero"}}, "additionalProperties": False},
                {"type": "object", "required": ["kind", "vector"],
                 "properties": {"kind": {"const": "deterministic"}, "vector": _vector},
                 "additionalProperties": False},
                {"type": "object", "required": ["kind", "cov"],
                 "properties": {"kind": {"const": "gaussian"}, "mean": _vector, "cov": _matrix},
                 "additionalProperties": False},
            ]
        },
        "grid": {
            "type": "object",
            "required": ["T", "N"],
            "properties": {"T": {"type": "number", "exclusiveMinimum": 0},
                           "N": {"type": "integer", "minimum": 1}},
            "additionalProperties": False,
        },
        "mc": {
            "type": "object",
            "properties": {"M": {"type": "integer", "minimum": 1},
                           "master_seed": {"type": "integer", "minimum": 0,
                                           "maximum": 2**64 - 1},
                           "threads": {"type": "integer", "minimum": 1}},
            "additionalProperties": False,
        },
        "tolerances": {
            "type": "object",
            "properties": {
                "variational": {"type": "number", "exclusiveMinimum": 0},
                "se_multiplier": {"type": "number", "exclusiveMinimum": 0},
                "se_fraction_multiplier": {"type": "number", "exclusiveMinimum": 0},
                "se_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "boundary_order": {"type": "number", "exclusiveMinimum": 0},
                "psd": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "caps": {
            "type": "object",
            "properties": {"max_cells": {"type": "integer", "minimum": 1}},
            "additionalProperties": False,
        },
        "verify": {
            "type": "object",
            "properties": {"max_power": {"type": "integer", "minimum": 0, "maximum": 5}},
            "additionalProperties": False,
        },
        "isometry": {
            "type": "object",
            "properties": {
                "pairs": {"type": "array", "items": {
                    "type": "object", "required": ["v1", "v2"],
                    "properties": {"v1": _test_function, "v2": _test_function},
                    "additionalProperties": False}},
            },
            "additionalProperties": False,
        },
        "output": {
            "type": "object",
            "properties": {"out_dir": {"type": "string"}},
            "additionalProperties": False,
        },
        "random_pde": {
            "type": "object",
            "properties": {
                "U0": {"type": "object",
                       "properties": {"mean": _vector, "cov": _matrix},
                       "additionalProperties": False},
                "F": {"type": "object",
                      "properties": {
                          "mean": _matrix,
                          "cov": {"oneOf": [
                              _matrix,
                              {"type": "object", "required": ["time_block", "mode_block"],
                               "properties": {"time_block": _matrix, "mode_block": _matrix},
                               "additionalProperties": False}]},
                      },
                      "additionalProperties": False},
                "cross_cov": _matrix,
                "tests": {"type": "array", "items": {
                    "type": "object", "required": ["v1", "v2"],
                    "properties": {"v1": _test_function, "v2": _test_function},
                    "additionalProperties": False}},
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}

DEFAULT_TOLERANCES = {
    "variational": 1e-8,
    "se_multiplier": 4.0,
    "se_fraction_multiplier": 3.0,
    "se_fraction": 0.99,
    "boundary_order": 1.9,
    "psd": 1e-10,
}


def _pointer(path) -> str:
    return "".join(f"/{p}" for p in path)


def validate_document(doc: Any) -> None:
    """Raise :class:`ConfigError` for the first schema violation, located by JSON pointer."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (len(e.absolute_path), e.message))
    if not errors:
        return
    err = errors[0]
    if err.validator == "oneOf" and err.context:
        # report the branch whose kind matched, if any
        ctx = [e for e in err.context if e.validator != "const"] or err.context
        err = sorted(ctx, key=lambda e: -len(e.absolute_path))[0]
    path = list(err.absolute_path)
    if err.validator == "required":
        missing = [k for k in err.validator_value if k not in err.instance]
        return_ptr = _pointer(path + missing[:1])
        raise ConfigError(return_ptr, f"missing required key {missing[0]!r}")
    raise ConfigError(_pointer(path), err.message)


def _test_fn(d) -> tuple:
    return TimePolynomial(tuple(d["coef"])), int(d["mode"])


@dataclass
class RunConfig:
    op: SpectralOperator
    cov: NoiseCovariance
    init: InitialLaw
    grid: TimeGrid
    M: int = 10_000
    master_seed: int = 0
    threads: int = 1
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    max_cells: Optional[int] = None
    max_power: int = 3
    noise_profile: Optional[tuple] = None
    isometry_pairs: list = field(default_factory=list)
    random_model: Optional[RandomDataModel] = None
    random_tests: list = field(default_factory=list)
    out_dir: Optional[str] = None
    document: dict = field(default_factory=dict)


def _at(pointer: str, fn, *args):
    try:
        return fn(*args)
    except ValidationError as exc:
        raise ConfigError(pointer, str(exc)) from exc
    except (ValueError, TypeError) as exc:
        raise ConfigError(pointer, str(exc)) from exc


def build_config(doc: dict) -> RunConfig:
    """Validate ``doc`` against the schema and build the model objects it describes."""
    validate_document(doc)
    o = doc["operator"]
    if o["kind"] == "dirichlet_laplacian":
        op = _at("/operator/K", make_dirichlet_laplacian, o["K"])
    else:
        op = _at("/operator/values", SpectralOperator, o["values"])
    K = op.K

    n = doc["noise"]
    profile = None
    if n["kind"] == "dense":
        cov = _at("/noise/matrix", validate_covariance, n["matrix"], op)
    elif n["kind"] == "profile":
        profile = (float(n["c"]), float(n["p"]))
        cov = _at("/noise", diagonal_profile, op, *profile)
    else:
        cov = validate_covariance(np.zeros((K, K)), op)

    ini = doc.get("initial", {"kind": "zero"})
    if ini["kind"] == "zero":
        init = InitialLaw.deterministic(op, np.zeros(K))
    elif ini["kind"] == "deterministic":
        init = _at("/initial/vector", InitialLaw.deterministic, op, ini["vector"])
    else:
        mean = ini.get("mean", [0.0] * K)
        init = _at("/initial", InitialLaw.gaussian, op, mean, ini["cov"])

    grid = TimeGrid(doc["grid"]["T"], doc["grid"]["N"])
    mc = doc.get("mc", {})
    tol = dict(DEFAULT_TOLERANCES)
    tol.update(doc.get("tolerances", {}))

    pairs = [(_test_fn(p["v1"]), _test_fn(p["v2"]))
             for p in doc.get("isometry", {}).get("pairs", [])]
    _check_modes(pairs, K, "/isometry/pairs")

    model, tests = None, []
    if "random_pde" in doc:
        model, tests = _random_model(doc["random_pde"], op, grid)

    return RunConfig(
        op=op, cov=cov, init=init, grid=grid,
        M=int(mc.get("M", 10_000)), master_seed=int(mc.get("master_seed", 0)),
        threads=int(mc.get("threads", 1)), tolerances=tol,
        max_cells=doc.get("caps", {}).get("max_cells"),
        max_power=int(doc.get("verify", {}).get("max_power", 3)),
        noise_profile=profile, isometry_pairs=pairs, random_model=model,
        random_tests=tests, out_dir=doc.get("output", {}).get("out_dir"), document=doc,
    )


def _random_model(d: dict, op: SpectralOperator, grid: TimeGrid):
    U0 = d.get("U0", {})
    F = d.get("F", {})
    fcov = F.get("cov")
    if isinstance(fcov, dict):
        fcov = kron_covariance(fcov["time_block"], fcov["mode_block"])
    model = _at("/random_pde", RandomDataModel.build, op, grid, U0.get("mean"), U0.get("cov"),
                F.get("mean"), fcov, d.get("cross_cov"))
    tests = [(_test_fn(t["v1"]), _test_fn(t["v2"])) for t in d.get("tests", [])]
    _check_modes(tests, op.K, "/random_pde/tests")
    return model, tests


def _check_modes(pairs, K: int, base: str) -> None:
    for a, (v1, v2) in enumerate(pairs):
        for name, v in (("v1", v1), ("v2", v2)):
            if v[1] >= K:
                raise ConfigError(f"{base}/{a}/{name}/mode", f"mode index must be < {K}")


def load_config(path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON: {exc}") from exc
    return build_config(doc)
