"""Experiment configuration: TOML files in, validated model objects out.

A config file names an experiment ``kind``, a ``seed``, optional
``replicas``/``out``, a ``[params]`` table of kind-specific knobs and,
for the simulation kinds, a ``[model]`` table (or a path to a separate
model file).  Every coefficient function, kernel and jump measure is
declared as a small table with a ``kind`` field::

    kind = "moment-check"
    seed = 7

    [model]
    x0 = 1.0
    horizon = 4.0

    [model.law]
    g = { kind = "linear", slope = 0.5 }
    sigma2 = { kind = "power", coeff = 0.1, exponent = 2.0 }

    [model.policy]
    kind = "constant"
    r = 1.0
    q = 0.3
    kernel = { kind = "uniform" }

Bare numbers are accepted wherever a function is expected and mean the
constant function.  Errors carry the dotted path of the offending field.

JSON manifests written by the runner embed the fully resolved config
under a ``config`` key; ``load_config`` accepts them directly, which is
what makes a manifest re-runnable.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from . import kernels, model

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "EXPERIMENT_KINDS",
    "load_config",
    "parse_config",
    "build_function",
    "build_kernel",
    "build_jumps",
    "build_stable",
    "build_policy",
    "build_law",
    "build_model_spec",
    "build_grid",
    "get_number",
    "get_int",
    "get_str",
    "get_table",
]

EXPERIMENT_KINDS = (
    "mean-cells-regime",
    "sharing-comparison",
    "regime-map",
    "infected-proportion",
    "many-to-one-check",
    "moment-check",
    "ga-classify",
    "assumption-probe",
)


class ConfigError(ValueError):
    """Malformed or inconsistent configuration; message starts with the field path."""


_MISSING = object()


def _is_number(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def get_number(d: Dict, key: str, path: str, default: Any = _MISSING) -> float:
    if key not in d:
        if default is _MISSING:
            raise ConfigError(f"{path}.{key}: missing required field")
        return default
    v = d[key]
    if not _is_number(v):
        raise ConfigError(f"{path}.{key}: expected a number, got {type(v).__name__}")
    return float(v)


def get_int(d: Dict, key: str, path: str, default: Any = _MISSING) -> int:
    if key not in d:
        if default is _MISSING:
            raise ConfigError(f"{path}.{key}: missing required field")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{path}.{key}: expected an integer, got {type(v).__name__}")
    return v


def get_str(d: Dict, key: str, path: str, default: Any = _MISSING) -> str:
    if key not in d:
        if default is _MISSING:
            raise ConfigError(f"{path}.{key}: missing required field")
        return default
    v = d[key]
    if not isinstance(v, str):
        raise ConfigError(f"{path}.{key}: expected a string, got {type(v).__name__}")
    return v


def get_table(d: Dict, key: str, path: str, default: Any = _MISSING) -> Dict:
    if key not in d:
        if default is _MISSING:
            raise ConfigError(f"{path}.{key}: missing required field")
        return default
    v = d[key]
    if not isinstance(v, dict):
        raise ConfigError(f"{path}.{key}: expected a table, got {type(v).__name__}")
    return v


def _no_extras(d: Dict, path: str, allowed: Sequence[str]) -> None:
    extras = sorted(set(d) - set(allowed))
    if extras:
        raise ConfigError(f"{path}: unknown field(s) {', '.join(extras)}")


# ---------------------------------------------------------------------------
# component builders
# ---------------------------------------------------------------------------


def build_function(v: Any, path: str):
    """Coefficient function from a number (constant) or a {kind, ...} table."""
    if _is_number(v):
        return model.ZeroFn() if v == 0.0 else model.ConstantFn(float(v))
    if not isinstance(v, dict):
        raise ConfigError(f"{path}: expected a number or a function table")
    kind = get_str(v, "kind", path)
    if kind not in ("zero", "constant", "linear", "affine", "power", "power-sum"):
        raise ConfigError(
            f"{path}.kind: unknown function kind {kind!r}; expected one of "
            "affine, constant, linear, power, power-sum, zero"
        )
    if kind == "zero":
        _no_extras(v, path, ("kind",))
        return model.ZeroFn()
    if kind == "constant":
        _no_extras(v, path, ("kind", "value"))
        value = get_number(v, "value", path)
        return model.ZeroFn() if value == 0.0 else model.ConstantFn(value)
    if kind == "linear":
        _no_extras(v, path, ("kind", "slope"))
        return model.LinearFn(get_number(v, "slope", path))
    if kind == "affine":
        _no_extras(v, path, ("kind", "slope", "intercept"))
        return model.AffineFn(get_number(v, "slope", path), get_number(v, "intercept", path))
    if kind == "power":
        _no_extras(v, path, ("kind", "coeff", "exponent"))
        return model.PowerFn(get_number(v, "coeff", path), get_number(v, "exponent", path))
    _no_extras(v, path, ("kind", "terms"))
    terms = v.get("terms")
    if not isinstance(terms, list) or not terms:
        raise ConfigError(f"{path}.terms: expected a non-empty list of [coeff, exponent] pairs")
    pairs = []
    for i, term in enumerate(terms):
        if not isinstance(term, (list, tuple)) or len(term) != 2 or not all(map(_is_number, term)):
            raise ConfigError(f"{path}.terms[{i}]: expected a [coeff, exponent] pair")
        pairs.append((float(term[0]), float(term[1])))
    return model.PowerSumFn(pairs)


def build_kernel(d: Any, path: str) -> kernels.SharingKernel:
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected a kernel table")
    kind = get_str(d, "kind", path)
    try:
        if kind == "uniform":
            _no_extras(d, path, ("kind",))
            return kernels.UniformKernel()
        if kind == "dirac-half":
            _no_extras(d, path, ("kind",))
            return kernels.DiracHalfKernel()
        if kind == "two-point":
            _no_extras(d, path, ("kind", "theta0"))
            return kernels.TwoPointKernel(get_number(d, "theta0", path))
        if kind == "table":
            _no_extras(d, path, ("kind", "atoms", "weights"))
            return kernels.TableKernel(d.get("atoms", ()), d.get("weights", ()))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    raise ConfigError(
        f"{path}.kind: unknown kernel kind {kind!r}; expected one of "
        "dirac-half, table, two-point, uniform"
    )


def build_jumps(d: Any, path: str) -> model.JumpMeasure:
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected a jump-measure table")
    kind = get_str(d, "kind", path)
    try:
        if kind == "fixed":
            _no_extras(d, path, ("kind", "rate", "size"))
            return model.FixedJumps(get_number(d, "rate", path), get_number(d, "size", path))
        if kind == "uniform":
            _no_extras(d, path, ("kind", "rate", "lo", "hi"))
            return model.UniformJumps(
                get_number(d, "rate", path), get_number(d, "lo", path), get_number(d, "hi", path)
            )
        if kind == "exponential":
            _no_extras(d, path, ("kind", "rate", "scale", "cap"))
            return model.ExponentialJumps(
                get_number(d, "rate", path),
                get_number(d, "scale", path),
                cap=get_number(d, "cap", path, None),
            )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    raise ConfigError(
        f"{path}.kind: unknown jump kind {kind!r}; expected one of exponential, fixed, uniform"
    )


def build_stable(d: Any, path: str) -> model.StableJumps:
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected a stable-jump table")
    _no_extras(d, path, ("coeff", "b", "normalization", "eps"))
    try:
        return model.StableJumps(
            coeff=get_number(d, "coeff", path),
            b=get_number(d, "b", path),
            normalization=get_number(d, "normalization", path, None),
            eps=get_number(d, "eps", path, None),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def build_policy(d: Any, path: str) -> model.CellPolicy:
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected a policy table")
    kind = get_str(d, "kind", path)
    kernel = build_kernel(get_table(d, "kernel", path), f"{path}.kernel")
    try:
        if kind == "constant":
            _no_extras(d, path, ("kind", "r", "q", "kernel"))
            return model.constant_rates(
                get_number(d, "r", path), get_number(d, "q", path), kernel
            )
        if kind == "linear-division":
            _no_extras(d, path, ("kind", "alpha", "beta", "q", "kernel"))
            return model.linear_division(
                get_number(d, "alpha", path),
                get_number(d, "beta", path),
                get_number(d, "q", path),
                kernel,
            )
        if kind == "general":
            _no_extras(d, path, ("kind", "r", "q", "kernel"))
            r = build_function(d.get("r", 0.0), f"{path}.r")
            q = build_function(d.get("q", 0.0), f"{path}.q")
            return model.general_policy(r, q, kernel)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    raise ConfigError(
        f"{path}.kind: unknown policy kind {kind!r}; expected one of "
        "constant, general, linear-division"
    )


def build_law(d: Any, path: str) -> model.ParasiteLaw:
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected a law table")
    _no_extras(d, path, ("g", "sigma2", "p", "pi", "stable"))
    pi = None
    if "pi" in d:
        pi = build_jumps(get_table(d, "pi", path), f"{path}.pi")
    stable = None
    if "stable" in d:
        stable = build_stable(get_table(d, "stable", path), f"{path}.stable")
    return model.ParasiteLaw(
        g=build_function(d.get("g", 0.0), f"{path}.g"),
        sigma2=build_function(d.get("sigma2", 0.0), f"{path}.sigma2"),
        p=build_function(d.get("p", 0.0), f"{path}.p"),
        pi=pi,
        stable=stable,
    )


def build_model_spec(d: Any, path: str = "model") -> model.ModelSpec:
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected a model table")
    _no_extras(d, path, ("law", "policy", "x0", "x_max", "dt", "horizon", "population_cap"))
    law = build_law(get_table(d, "law", path, {}), f"{path}.law")
    policy = build_policy(get_table(d, "policy", path), f"{path}.policy")
    try:
        return model.ModelSpec(
            law=law,
            policy=policy,
            x0=get_number(d, "x0", path),
            x_max=get_number(d, "x_max", path, model._DEFAULT_X_MAX),
            dt=get_number(d, "dt", path, 0.01),
            horizon=get_number(d, "horizon", path, 1.0),
            population_cap=get_int(d, "population_cap", path, model._DEFAULT_POPULATION_CAP),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def build_grid(v: Any, path: str) -> np.ndarray:
    """Evaluation grid from an explicit list or a {start, stop, num[, log]} table."""
    if isinstance(v, list):
        if not v or not all(map(_is_number, v)):
            raise ConfigError(f"{path}: expected a non-empty list of numbers")
        return np.asarray(v, dtype=float)
    if isinstance(v, dict):
        _no_extras(v, path, ("start", "stop", "num", "log"))
        num = get_int(v, "num", path)
        if num < 2:
            raise ConfigError(f"{path}.num: need at least two grid points")
        start = get_number(v, "start", path)
        stop = get_number(v, "stop", path)
        log = v.get("log", False)
        if not isinstance(log, bool):
            raise ConfigError(f"{path}.log: expected a boolean")
        if log:
            if start <= 0.0 or stop <= 0.0:
                raise ConfigError(f"{path}: log-spaced grid needs positive endpoints")
            return np.geomspace(start, stop, num)
        return np.linspace(start, stop, num)
    raise ConfigError(f"{path}: expected a list or a {{start, stop, num}} table")


# ---------------------------------------------------------------------------
# whole-file parsing
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    """Parsed experiment: resolved scalars plus the built model (when given).

    ``raw`` is the fully resolved config table (model inlined) and is what
    the manifest embeds, so a manifest re-run sees exactly this object.
    """

    kind: str
    seed: int
    replicas: Optional[int]
    out: Optional[str]
    params: Dict[str, Any] = field(default_factory=dict)
    model_data: Optional[Dict[str, Any]] = None
    spec: Optional[model.ModelSpec] = None
    raw: Dict[str, Any] = field(default_factory=dict)

    def require_spec(self) -> model.ModelSpec:
        if self.spec is None:
            raise ConfigError(f"model: required for kind {self.kind!r}")
        return self.spec


def parse_config(data: Dict[str, Any], base_dir: Optional[Path] = None) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be a table")
    _no_extras(data, "config", ("kind", "seed", "replicas", "out", "params", "model"))
    kind = get_str(data, "kind", "config")
    if kind not in EXPERIMENT_KINDS:
        raise ConfigError(
            f"config.kind: unknown experiment kind {kind!r}; expected one of "
            + ", ".join(EXPERIMENT_KINDS)
        )
    seed = get_int(data, "seed", "config", 0)
    if seed < 0:
        raise ConfigError("config.seed: must be nonnegative")
    replicas = get_int(data, "replicas", "config", None)
    if replicas is not None and replicas < 2:
        raise ConfigError("config.replicas: need at least two replicas")
    out = get_str(data, "out", "config", None)
    params = get_table(data, "params", "config", {})

    model_data = data.get("model")
    if isinstance(model_data, str):
        ref = Path(model_data)
        if not ref.is_absolute() and base_dir is not None:
            ref = base_dir / ref
        try:
            loaded = tomllib.loads(ref.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config.model: referenced model file not found: {model_data}")
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config.model: {model_data}: {exc}") from exc
        model_data = loaded.get("model", loaded)

    spec = None
    if model_data is not None:
        spec = build_model_spec(model_data, "model")

    raw: Dict[str, Any] = {"kind": kind, "seed": seed}
    if replicas is not None:
        raw["replicas"] = replicas
    if params:
        raw["params"] = params
    if model_data is not None:
        raw["model"] = model_data

    return ExperimentConfig(
        kind=kind,
        seed=seed,
        replicas=replicas,
        out=out,
        params=params,
        model_data=model_data,
        spec=spec,
        raw=raw,
    )


def load_config(path) -> ExperimentConfig:
    """Parse a TOML config file or a JSON manifest emitted by a previous run."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror or exc}") from exc
    if path.suffix == ".json" or text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: {path.name}: invalid JSON: {exc}") from exc
        if isinstance(data, dict) and "config" in data and "schema" in data:
            data = data["config"]  # manifest wraps the resolved config
    else:
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config: {path.name}: invalid TOML: {exc}") from exc
    return parse_config(data, base_dir=path.parent)
