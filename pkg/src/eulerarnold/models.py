"""Built-in models and the model definition file format.

A model file is YAML (JSON is accepted too, being a subset)::

    name: tilted-halfplane
    dim: 2
    f: [[0, 1, 1, -1.0]]        # antisymmetric completion is automatic
    G: [[1, 0], [0, 1]]         # row-major; a scalar or a diagonal also works
    Gamma: 0.5
    D: 0.25
    measure: halfplane          # constant | halfplane | {powers: [...], coefficient: 1, offset: 0}
    domain: [[null, null], [0, null]]
"""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np
import yaml

from . import algebra
from .algebra import InvariantMeasure, ModelSpec, StructureConstants
from .errors import ConfigError

BUILTIN_NAMES = ("so3", "halfplane", "abelian1", "heisenberg")

_MODEL_KEYS = {"name", "dim", "f", "G", "Gamma", "D", "measure", "domain"}


def builtin(name: str, G=None, Gamma=None, D=None, gamma=None, beta=None) -> ModelSpec:
    """Return a built-in model, optionally overriding its tensors.

    ``gamma`` sets an isotropic ``Gamma = gamma * I``. If ``beta`` is given and
    ``D`` is not, ``D`` is chosen to satisfy the Einstein relation
    ``beta * D = Gamma``.

    Defaults: ``so3`` uses ``G = diag(1, 2, 3)``; every other model uses the
    identity metric. Dissipation and noise default to zero.
    """
    match = re.fullmatch(r"abelian(\d+)", name)
    if name == "so3":
        f, G0, measure, domain = algebra.so3(), np.diag([1.0, 2.0, 3.0]), InvariantMeasure(), None
    elif name == "halfplane":
        f, G0 = algebra.halfplane(), np.eye(2)
        measure, domain = InvariantMeasure("halfplane"), ((None, None), (0.0, None))
    elif name == "heisenberg":
        f, G0, measure, domain = algebra.heisenberg(), np.eye(3), InvariantMeasure(), None
    elif match and int(match.group(1)) >= 1:
        n = int(match.group(1))
        f, G0, measure, domain = algebra.abelian(n), np.eye(n), InvariantMeasure(), None
    else:
        raise ConfigError(f"unknown built-in model {name!r}; known: {', '.join(BUILTIN_NAMES)}")
    if Gamma is not None and gamma is not None:
        raise ConfigError("give either Gamma or gamma, not both")
    Gamma = gamma if Gamma is None else Gamma
    Gamma = 0.0 if Gamma is None else Gamma
    model = ModelSpec(name, f, G=G0 if G is None else G, Gamma=Gamma, D=0.0,
                      measure=measure, domain=domain)
    return with_noise(model, D=D, beta=beta)


def with_noise(model: ModelSpec, D=None, beta=None) -> ModelSpec:
    """Set ``D`` explicitly, or from the Einstein relation when only ``beta`` is given."""
    if D is not None and beta is not None:
        raise ConfigError("give either D or beta, not both")
    if beta is not None:
        if not beta > 0:
            raise ConfigError("beta must be positive")
        return model.replace(D=np.asarray(model.Gamma) / beta)
    if D is not None:
        return model.replace(D=D)
    return model


def parse_measure(spec, dim: int) -> InvariantMeasure:
    if spec is None or spec == "constant":
        return InvariantMeasure()
    if spec == "halfplane":
        if dim != 2:
            raise ConfigError("halfplane measure requires dim = 2")
        return InvariantMeasure("halfplane")
    if isinstance(spec, dict):
        unknown = set(spec) - {"powers", "coefficient", "offset"}
        if unknown:
            raise ConfigError(f"unknown measure keys: {sorted(unknown)}")
        if "powers" not in spec:
            raise ConfigError("power-law measure requires 'powers'")
        return InvariantMeasure("custom", tuple(spec["powers"]),
                                float(spec.get("coefficient", 1.0)), float(spec.get("offset", 0.0)))
    raise ConfigError(f"unrecognised measure specification {spec!r}")


def model_from_mapping(data: dict) -> ModelSpec:
    """Build a :class:`ModelSpec` from a parsed model definition."""
    if not isinstance(data, dict):
        raise ConfigError("model definition must be a mapping")
    unknown = set(data) - _MODEL_KEYS
    if unknown:
        raise ConfigError(f"unknown model keys: {sorted(unknown)}")
    for key in ("name", "dim"):
        if key not in data:
            raise ConfigError(f"model definition is missing {key!r}")
    try:
        n = int(data["dim"])
    except (TypeError, ValueError):
        raise ConfigError("dim must be an integer") from None
    if n < 1:
        raise ConfigError("dim must be positive")
    try:
        f = StructureConstants.from_triples(n, data.get("f") or [])
        domain = data.get("domain")
        return ModelSpec(
            name=str(data["name"]),
            algebra=f,
            G=data.get("G"),
            Gamma=data.get("Gamma", 0.0),
            D=data.get("D", 0.0),
            measure=parse_measure(data.get("measure"), n),
            domain=None if domain is None else tuple(tuple(b) if b is not None else None for b in domain),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"malformed model definition: {exc}") from None


def load_model(path) -> ModelSpec:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read model file {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse model file {path}: {exc}") from None
    return model_from_mapping(data)


def resolve_model(ref: str, **overrides) -> ModelSpec:
    """Look up ``ref`` as a built-in name first, then as a model file path."""
    if re.fullmatch(r"so3|halfplane|heisenberg|abelian\d+", ref):
        return builtin(ref, **overrides)
    model = load_model(ref)
    G, Gamma, D = overrides.get("G"), overrides.get("Gamma"), overrides.get("D")
    gamma, beta = overrides.get("gamma"), overrides.get("beta")
    if Gamma is not None and gamma is not None:
        raise ConfigError("give either Gamma or gamma, not both")
    changes = {}
    if G is not None:
        changes["G"] = G
    if Gamma is not None or gamma is not None:
        changes["Gamma"] = Gamma if Gamma is not None else gamma
    if changes:
        model = model.replace(**changes)
    return with_noise(model, D=D, beta=beta)
