"""Versioned YAML run configuration.

A run configuration describes one experiment grid: an outcome model, a
design ``(n, n_c)``, a list of mechanisms and a list of privacy targets.
Unknown keys are rejected with the dotted path of the offending field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import yaml

from dpate.errors import ConfigurationError
from dpate.simulation import ConstantEffect, OutcomeModel, TruncatedGaussian

SCHEMA_VERSION = 1

_MODEL_KEYS = {
    "truncated_gaussian": ("mu_c", "mu_t", "sigma", "R"),
    "constant_effect": ("a", "b", "shift", "R"),
}
_MECHANISM_KINDS = ("pbm", "central_gaussian", "none")


def _reject_unknown(data: Dict[str, Any], allowed, path: str) -> None:
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path or '<root>'}: expected a mapping")
    extra = sorted(set(data) - set(allowed))
    if extra:
        where = f"{path}." if path else ""
        raise ConfigurationError(f"unknown field(s): {', '.join(where + k for k in extra)}")


def _require(data: Dict[str, Any], key: str, path: str):
    if key not in data:
        raise ConfigurationError(f"missing field: {path}.{key}" if path else f"missing field: {key}")
    return data[key]


def _number(value, path: str, kind=float):
    if isinstance(value, bool):
        raise ConfigurationError(f"{path}: expected a number, got {value!r}")
    try:
        out = kind(value)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{path}: expected a number, got {value!r}") from None
    if kind is int and out != value:
        raise ConfigurationError(f"{path}: expected an integer, got {value!r}")
    return out


@dataclass(frozen=True)
class MechanismSpec:
    kind: str
    m1: Optional[int] = None
    m2: Optional[int] = None
    # Explicit per-group (theta1, theta2); when absent they are calibrated.
    thetas: Optional[Dict[str, Tuple[float, float]]] = None

    @classmethod
    def from_dict(cls, data: Dict[str, Any], path: str) -> "MechanismSpec":
        _reject_unknown(data, ("kind", "m1", "m2", "thetas"), path)
        kind = _require(data, "kind", path)
        if kind not in _MECHANISM_KINDS:
            raise ConfigurationError(f"{path}.kind: expected one of {_MECHANISM_KINDS}, got {kind!r}")
        if kind != "pbm":
            _reject_unknown(data, ("kind",), path)
            return cls(kind)
        m1 = _number(_require(data, "m1", path), f"{path}.m1", int)
        m2 = _number(data.get("m2", m1), f"{path}.m2", int)
        if m1 < 1 or m2 < 1:
            raise ConfigurationError(f"{path}: m1 and m2 must be positive")
        thetas = None
        if "thetas" in data:
            raw = data["thetas"]
            _reject_unknown(raw, ("control", "test"), f"{path}.thetas")
            thetas = {}
            for group in ("control", "test"):
                pair = _require(raw, group, f"{path}.thetas")
                if not isinstance(pair, (list, tuple)) or len(pair) != 2:
                    raise ConfigurationError(f"{path}.thetas.{group}: expected [theta1, theta2]")
                th = tuple(_number(v, f"{path}.thetas.{group}") for v in pair)
                if not all(0 < t <= 0.25 for t in th):
                    raise ConfigurationError(f"{path}.thetas.{group}: theta must lie in (0, 1/4]")
                thetas[group] = th
        return cls(kind, m1, m2, thetas)

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"kind": self.kind}
        if self.kind == "pbm":
            out.update(m1=self.m1, m2=self.m2)
            if self.thetas is not None:
                out["thetas"] = {g: list(v) for g, v in self.thetas.items()}
        return out

    @property
    def label(self) -> str:
        return f"pbm(m={self.m1})" if self.kind == "pbm" else self.kind


@dataclass(frozen=True)
class RunConfig:
    model: OutcomeModel
    n: int
    n_c: int
    mechanisms: List[MechanismSpec]
    epsilons: List[float] = field(default_factory=lambda: [1.0])
    delta: float = 1e-5
    fraction_first: float = 0.99
    estimand: str = "PATE"
    ci_kind: str = "asymptotic"
    confidence: float = 0.9
    additive: bool = False
    N: int = 1000
    base_seed: int = 0
    output: Optional[str] = None
    version: int = SCHEMA_VERSION

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        allowed = (
            "version", "model", "n", "n_c", "mechanisms", "privacy", "estimand",
            "ci_kind", "confidence", "additive", "N", "base_seed", "output",
        )
        _reject_unknown(data, allowed, "")
        version = _number(_require(data, "version", ""), "version", int)
        if version != SCHEMA_VERSION:
            raise ConfigurationError(f"version: unsupported schema version {version}")

        model_raw = _require(data, "model", "")
        kind = _require(model_raw, "kind", "model")
        if kind not in _MODEL_KEYS:
            raise ConfigurationError(f"model.kind: expected one of {tuple(_MODEL_KEYS)}, got {kind!r}")
        _reject_unknown(model_raw, ("kind",) + _MODEL_KEYS[kind], "model")
        params = {k: _number(v, f"model.{k}") for k, v in model_raw.items() if k != "kind"}
        model = (TruncatedGaussian if kind == "truncated_gaussian" else ConstantEffect)(**params)

        mechs_raw = _require(data, "mechanisms", "")
        if not isinstance(mechs_raw, list) or not mechs_raw:
            raise ConfigurationError("mechanisms: expected a non-empty list")
        mechanisms = [MechanismSpec.from_dict(m, f"mechanisms[{i}]") for i, m in enumerate(mechs_raw)]

        privacy = data.get("privacy", {})
        _reject_unknown(privacy, ("epsilons", "delta", "fraction_first"), "privacy")
        epsilons = privacy.get("epsilons", [1.0])
        if not isinstance(epsilons, list) or not epsilons:
            raise ConfigurationError("privacy.epsilons: expected a non-empty list")
        epsilons = [_number(e, f"privacy.epsilons[{i}]") for i, e in enumerate(epsilons)]
        if any(not e > 0 for e in epsilons):
            raise ConfigurationError("privacy.epsilons: every target must be positive")
        delta = _number(privacy.get("delta", 1e-5), "privacy.delta")
        fraction = _number(privacy.get("fraction_first", 0.99), "privacy.fraction_first")
        if not 0 < delta < 1:
            raise ConfigurationError("privacy.delta: must lie in (0, 1)")
        if not 0 < fraction < 1:
            raise ConfigurationError("privacy.fraction_first: must lie in (0, 1)")

        n = _number(_require(data, "n", ""), "n", int)
        n_c = _number(_require(data, "n_c", ""), "n_c", int)
        if not (2 <= n_c <= n - 2):
            raise ConfigurationError("n_c: each group needs at least 2 units")
        estimand = data.get("estimand", "PATE")
        if estimand not in ("SATE", "PATE"):
            raise ConfigurationError(f"estimand: expected SATE or PATE, got {estimand!r}")
        ci_kind = data.get("ci_kind", "asymptotic")
        if ci_kind not in ("asymptotic", "nonasymptotic"):
            raise ConfigurationError(f"ci_kind: expected asymptotic or nonasymptotic, got {ci_kind!r}")
        confidence = _number(data.get("confidence", 0.9), "confidence")
        if not 0 < confidence < 1:
            raise ConfigurationError("confidence: must lie in (0, 1)")
        additive = data.get("additive", False)
        if not isinstance(additive, bool):
            raise ConfigurationError("additive: expected true or false")
        N = _number(data.get("N", 1000), "N", int)
        if N < 1:
            raise ConfigurationError("N: must be >= 1")
        base_seed = _number(data.get("base_seed", 0), "base_seed", int)
        if base_seed < 0:
            raise ConfigurationError("base_seed: must be non-negative")
        output = data.get("output")
        if output is not None and not isinstance(output, str):
            raise ConfigurationError("output: expected a path string")
        return cls(
            model=model, n=n, n_c=n_c, mechanisms=mechanisms, epsilons=epsilons, delta=delta,
            fraction_first=fraction, estimand=estimand, ci_kind=ci_kind, confidence=confidence,
            additive=additive, N=N, base_seed=base_seed, output=output, version=version,
        )

    def to_dict(self) -> Dict[str, Any]:
        if isinstance(self.model, TruncatedGaussian):
            model = {"kind": "truncated_gaussian"}
        else:
            model = {"kind": "constant_effect"}
        model.update({k: getattr(self.model, k) for k in _MODEL_KEYS[model["kind"]]})
        out = {
            "version": self.version,
            "model": model,
            "n": self.n,
            "n_c": self.n_c,
            "mechanisms": [m.to_dict() for m in self.mechanisms],
            "privacy": {
                "epsilons": list(self.epsilons),
                "delta": self.delta,
                "fraction_first": self.fraction_first,
            },
            "estimand": self.estimand,
            "ci_kind": self.ci_kind,
            "confidence": self.confidence,
            "additive": self.additive,
            "N": self.N,
            "base_seed": self.base_seed,
        }
        if self.output is not None:
            out["output"] = self.output
        return out


def loads(text: str) -> RunConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"invalid YAML: {exc}") from None
    return RunConfig.from_dict(data if data is not None else {})


def load(path: str) -> RunConfig:
    try:
        with open(path) as fh:
            return loads(fh.read())
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None


def dumps(config: RunConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=False)


def format_epsilon(eps: float) -> str:
    return "inf" if math.isinf(eps) else repr(float(eps))
